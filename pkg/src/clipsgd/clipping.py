"""Clipping operator, parameter schedules and single-step update rules.

Two update rules are provided:

* clipped SGD::

      d_k     = clip_{gamma_k}(g_k)
      x_{k+1} = x_k - alpha_k * d_k

* clipped stochastic heavy ball (SHB)::

      x_{k+1} = x_k - alpha_k * d_k
      d_{k+1} = clip_gamma((1 - beta_k) * d_k + beta_k * g_{k+1})

  with ``d_0 = clip_gamma(g_0)`` and ``g_{k+1}`` evaluated at the *new*
  iterate ``x_{k+1}``.

Passing ``gamma=None`` disables clipping, which gives vanilla SGD / SHB.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DomainError

# |x_i| above this (or any non-finite coordinate) marks a run as diverged.
DIVERGENCE_CUTOFF = 1e15


def clip_vec(g, gamma: float) -> np.ndarray:
    """Project ``g`` onto the Euclidean ball of radius ``gamma``.

    Returns ``min(1, gamma / ||g||) * g``. The zero vector is returned as is.
    """
    g = np.asarray(g, dtype=np.float64)
    if not gamma > 0:
        raise DomainError(f"clipping threshold must be positive, got {gamma}")
    if not np.all(np.isfinite(g)):
        raise DomainError("cannot clip a vector with non-finite coordinates")
    norm = float(np.linalg.norm(g))
    if norm <= gamma:
        return g.copy()
    return g * (gamma / norm)


def clip_rows(G: np.ndarray, gamma) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise clipping of a ``(T, n)`` array.

    ``gamma`` may be a scalar or a length-``T`` array. Returns the clipped rows
    and the scale factors ``min(1, gamma / ||g||)`` (1 for zero rows).
    Non-finite rows come back as NaN; callers flag them as diverged.
    """
    norms = np.sqrt(np.einsum("ij,ij->i", G, G))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > gamma, gamma / norms, 1.0)
    return G * scale[:, None], scale


def is_diverged(x) -> bool:
    x = np.asarray(x)
    return bool(not np.all(np.isfinite(x)) or np.any(np.abs(x) > DIVERGENCE_CUTOFF))


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class StepSchedule:
    """Stepsize ``alpha_k``.

    ``polynomial``: ``alpha0 * (k + 1) ** (-tau)``; ``constant``: ``alpha0``.
    """

    kind: str = "polynomial"
    alpha0: float = 1.0
    tau: float = 0.5

    def __post_init__(self):
        if self.kind not in ("polynomial", "constant"):
            raise ConfigError(f"unknown step schedule kind {self.kind!r}")
        if not self.alpha0 > 0:
            raise ConfigError(f"alpha0 must be positive, got {self.alpha0}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")

    def value(self, k: int) -> float:
        # same array path as values(), so single steps match the vectorised engine bitwise
        return float(self.values(np.array([k]))[0])

    def values(self, ks) -> np.ndarray:
        ks = np.asarray(ks, dtype=np.float64)
        if self.kind == "constant":
            return np.full(ks.shape, float(self.alpha0))
        return self.alpha0 * (ks + 1.0) ** (-self.tau)


@dataclass(frozen=True)
class ClipSchedule:
    """Clipping threshold ``gamma_k``: ``gamma`` or ``gamma / sqrt(alpha_k)``."""

    kind: str = "constant"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "coupled"):
            raise ConfigError(f"unknown clip schedule kind {self.kind!r}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")

    def value(self, alpha_k):
        if self.kind == "constant":
            return np.full(np.shape(alpha_k), float(self.gamma)) if np.ndim(alpha_k) else float(self.gamma)
        out = self.gamma / np.sqrt(alpha_k)
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class MomentumSchedule:
    """Momentum ``beta_k``.

    ``coupled``: ``beta_k = nu * alpha_k`` (optionally clamped into (0, 1]);
    ``constant``: ``beta_k = beta``.
    """

    kind: str = "coupled"
    nu: float = 1.0
    beta: float = 0.1
    clamp: bool = False

    def __post_init__(self):
        if self.kind not in ("coupled", "constant"):
            raise ConfigError(f"unknown momentum schedule kind {self.kind!r}")
        if self.kind == "coupled" and not self.nu > 0:
            raise ConfigError(f"nu must be positive, got {self.nu}")
        if self.kind == "constant" and not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")

    @classmethod
    def shb_preset(cls, one_minus_beta: float = 0.9) -> "MomentumSchedule":
        """Constant momentum from ``1 - beta``; the experiments use 0.9 and 0.99."""
        return cls("constant", beta=round(1.0 - one_minus_beta, 12))

    def value(self, alpha_k):
        if self.kind == "constant":
            return np.full(np.shape(alpha_k), float(self.beta)) if np.ndim(alpha_k) else float(self.beta)
        beta = self.nu * np.asarray(alpha_k, dtype=np.float64)
        if self.clamp:
            beta = np.minimum(beta, 1.0)
        return beta if np.ndim(beta) else float(beta)


@dataclass(frozen=True)
class BatchSchedule:
    """Mini-batch size ``m_k``: 1, ``m0``, or ``ceil(1 / alpha_k)``."""

    kind: str = "unit"
    m0: int = 1

    def __post_init__(self):
        if self.kind not in ("unit", "fixed", "inverse-step"):
            raise ConfigError(f"unknown batch schedule kind {self.kind!r}")
        if self.kind == "fixed" and (int(self.m0) != self.m0 or self.m0 < 1):
            raise ConfigError(f"m0 must be a positive integer, got {self.m0}")

    def value(self, alpha_k):
        if self.kind == "unit":
            out = np.ones(np.shape(alpha_k), dtype=np.int64)
        elif self.kind == "fixed":
            out = np.full(np.shape(alpha_k), int(self.m0), dtype=np.int64)
        else:
            out = np.maximum(np.ceil(1.0 / np.asarray(alpha_k, dtype=np.float64)), 1).astype(np.int64)
        return out if np.ndim(out) else int(out)


class ScheduleValues(NamedTuple):
    alpha: float
    gamma: Optional[float]
    beta: Optional[float]
    batch: int


@dataclass(frozen=True)
class ScheduleSet:
    step: StepSchedule = field(default_factory=StepSchedule)
    clip: Optional[ClipSchedule] = None
    momentum: Optional[MomentumSchedule] = None
    batch: BatchSchedule = field(default_factory=BatchSchedule)

    def __post_init__(self):
        m = self.momentum
        # alpha_k is non-increasing, so alpha_0 is the worst case.
        if m is not None and m.kind == "coupled" and not m.clamp:
            beta0 = m.nu * self.step.value(0)
            if beta0 > 1.0:
                raise ConfigError(
                    f"nu * alpha0 = {beta0:g} > 1 puts beta_k outside (0, 1]; "
                    "lower nu or enable clamp"
                )

    def values(self, k: int) -> ScheduleValues:
        return schedule_values(self, k)

    def table(self, K: int) -> dict[str, np.ndarray]:
        """Vectorised schedule values for ``k = 0, ..., K - 1``."""
        ks = np.arange(K)
        alpha = self.step.values(ks)
        out = {"alpha": alpha, "batch": self.batch.value(alpha)}
        out["gamma"] = None if self.clip is None else np.asarray(self.clip.value(alpha), dtype=np.float64)
        out["beta"] = None if self.momentum is None else np.asarray(self.momentum.value(alpha), dtype=np.float64)
        return out


def schedule_values(schedules: ScheduleSet, k: int) -> ScheduleValues:
    """Return ``(alpha_k, gamma_k, beta_k, m_k)``; absent schedules give ``None``."""
    if k < 0:
        raise DomainError(f"iteration index must be non-negative, got {k}")
    alpha = schedules.step.value(k)
    gamma = None if schedules.clip is None else float(schedules.clip.value(alpha))
    beta = None if schedules.momentum is None else float(schedules.momentum.value(alpha))
    return ScheduleValues(alpha, gamma, beta, int(schedules.batch.value(alpha)))


# ---------------------------------------------------------------------------
# single-trajectory state and steps


@dataclass(frozen=True)
class IterState:
    x: np.ndarray
    d: np.ndarray
    k: int = 0
    diverged: bool = False

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        d = np.atleast_1d(np.asarray(self.d, dtype=np.float64))
        if x.shape != d.shape or x.ndim != 1:
            raise DomainError(f"x and d must be vectors of equal length, got {x.shape} and {d.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", d)

    @classmethod
    def start(cls, x0) -> "IterState":
        x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
        return cls(x0, np.zeros_like(x0), 0)


def _check_dims(state: IterState, g: np.ndarray):
    if g.shape != state.x.shape:
        raise DomainError(f"subgradient has shape {g.shape}, iterate has {state.x.shape}")


def sgd_step(state: IterState, g, alpha_k: float, gamma_k: Optional[float] = None) -> IterState:
    """One (clipped) SGD step. The returned ``d`` is the direction used."""
    g = np.atleast_1d(np.asarray(g, dtype=np.float64))
    _check_dims(state, g)
    if state.diverged:
        return state
    if gamma_k is None:
        if not np.all(np.isfinite(g)):
            return replace(state, d=g, k=state.k + 1, diverged=True)
        d = g
    else:
        d = clip_vec(g, gamma_k)
    with np.errstate(over="ignore", invalid="ignore"):
        x = state.x - alpha_k * d
    return IterState(x, d, state.k + 1, is_diverged(x))


def shb_init(g0, gamma: Optional[float]) -> np.ndarray:
    """Initial SHB direction ``d_0 = clip(g_0)``."""
    g0 = np.atleast_1d(np.asarray(g0, dtype=np.float64))
    return g0.copy() if gamma is None else clip_vec(g0, gamma)


def shb_step(state: IterState, g_next, alpha_k: float, beta_k: float, gamma: Optional[float]) -> IterState:
    """One (clipped) SHB step.

    ``g_next`` must be the stochastic subgradient at ``state.x - alpha_k * state.d``,
    i.e. at the iterate this step produces.
    """
    if not 0.0 < beta_k <= 1.0:
        raise DomainError(f"beta_k must lie in (0, 1], got {beta_k}")
    g_next = np.atleast_1d(np.asarray(g_next, dtype=np.float64))
    _check_dims(state, g_next)
    if state.diverged:
        return state
    with np.errstate(over="ignore", invalid="ignore"):
        x = state.x - alpha_k * state.d
        z = (1.0 - beta_k) * state.d + beta_k * g_next
    if not np.all(np.isfinite(z)):
        return IterState(x, z, state.k + 1, True)
    d = z if gamma is None else clip_vec(z, gamma)
    return IterState(x, d, state.k + 1, is_diverged(x) or is_diverged(d))
