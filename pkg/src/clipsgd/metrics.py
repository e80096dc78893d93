"""Trajectory instrumentation.

The Moreau envelope ``f_lam(x) = min_y f(y) + ||x - y||^2 / (2 lam)`` is the
stationarity measure used for weakly convex objectives. Its proximal point is
found by two deterministic tracks on the strongly convex subproblem: averaged
projected subgradient steps, which handle kinks, and projected gradient steps
with backtracking, which converge fast where the objective is smooth. Each
answer comes with a certified distance bound to the exact proximal point.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .clipping import IterState, ScheduleSet
from .errors import ConfigError, DomainError, OutputError

CHECK_EVERY = 25


@dataclass(frozen=True)
class MoreauConfig:
    lam: float
    rho: float = 0.0
    tol_prox: float = 1e-6
    max_inner: int = 100_000

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lam must be positive, got {self.lam}")
        if not self.rho >= 0:
            raise ConfigError(f"rho must be non-negative, got {self.rho}")
        # relative slack so that lam = 1 / (2 rho) is accepted after rounding
        if 1.0 / self.lam < 2.0 * self.rho * (1.0 - 1e-12):
            raise ConfigError(f"1/lam = {1.0 / self.lam:g} is below 2 rho = {2.0 * self.rho:g}")
        if not self.tol_prox > 0:
            raise ConfigError("tol_prox must be positive")
        if self.max_inner < 1:
            raise ConfigError("max_inner must be at least 1")

    @classmethod
    def for_problem(cls, inst, lam: Optional[float] = None, **kw) -> "MoreauConfig":
        """Config with ``rho`` from the instance; ``lam`` defaults to ``1 / (2 rho)``."""
        rho = inst.constants.rho or 0.0
        if lam is None:
            if rho == 0:
                raise ConfigError("lam has no default for a convex instance (rho = 0)")
            lam = 1.0 / (2.0 * rho)
        return cls(lam=lam, rho=rho, **kw)

    @property
    def strong_convexity(self) -> float:
        return 1.0 / self.lam - self.rho


class ProxResult(NamedTuple):
    y: np.ndarray
    cert: np.ndarray
    accurate: np.ndarray
    iters: int


class Estimate(NamedTuple):
    value: object
    accurate: bool


def _project(u: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Rows of ``u`` projected onto the balls of radii ``r``."""
    nu = np.linalg.norm(u, axis=1)
    shrink = np.where(nu > r, r / np.where(nu > 0, nu, 1.0), 1.0)
    return u * shrink[:, None]


def prox_batch(inst, cfg: MoreauConfig, X, tol: Optional[float] = None) -> ProxResult:
    """Proximal points of ``lam * f`` at every row of ``X``.

    ``cert[i]`` bounds ``||y[i] - prox(X[i])||``. Rows stop as soon as their
    certificate drops below ``tol`` (default ``cfg.tol_prox``); ``accurate``
    is False for rows that hit ``cfg.max_inner`` first.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    tol = cfg.tol_prox if tol is None else tol
    lam, mu = cfg.lam, cfg.strong_convexity
    P = X.shape[0]

    y_out = X.copy()
    cert_out = np.zeros(P)
    f0, g0 = inst.value_and_subgrad(X)
    radius = np.linalg.norm(g0, axis=1) / mu
    active = np.flatnonzero(radius > tol)
    cert_out[:] = radius
    if active.size == 0:
        return ProxResult(y_out, cert_out, np.ones(P, bool), 0)

    x = X[active]
    r = radius[active]
    u = np.zeros_like(x)  # y - x
    a = np.zeros(active.size)
    b = np.zeros_like(x)
    wsum = 0.0
    ubar = np.zeros_like(x)
    best_u = u.copy()
    best_pt = r.copy()  # ||v|| / mu at y = x
    # backtracking track: iterate w, objective phi_w, subgradient v_w, step s
    w = np.zeros_like(x)
    phi_w = np.asarray(f0, dtype=np.float64)[active]
    v_w = g0[active].copy()
    s = np.full(active.size, lam)
    t = 0
    while active.size and t < cfg.max_inner:
        fy, gf = inst.value_and_subgrad(x + u)
        v = gf + u / lam
        phi = fy + np.einsum("ij,ij->i", u, u) / (2 * lam)
        wt = t + 1.0
        a += wt * (phi - np.einsum("ij,ij->i", v, u) + 0.5 * mu * np.einsum("ij,ij->i", u, u))
        b += wt * (v - mu * u)
        ubar += (wt / (wsum + wt)) * (u - ubar)
        wsum += wt

        pt = np.linalg.norm(v, axis=1) / mu
        better = pt < best_pt
        best_pt = np.where(better, pt, best_pt)
        best_u[better] = u[better]

        step = 2.0 / (mu * (t + 2.0))
        u = _project(u - step * v, r)

        # sufficient decrease against the quadratic upper model
        trial = _project(w - s[:, None] * v_w, r)
        f_tr, g_tr = inst.value_and_subgrad(x + trial)
        phi_tr = f_tr + np.einsum("ij,ij->i", trial, trial) / (2 * lam)
        dw = trial - w
        model = phi_w + np.einsum("ij,ij->i", v_w, dw) + np.einsum("ij,ij->i", dw, dw) / (2 * s)
        ok = phi_tr <= model
        w[ok], phi_w[ok], v_w[ok] = trial[ok], phi_tr[ok], g_tr[ok] + trial[ok] / lam
        s = np.where(ok, np.minimum(2.0 * s, 1e12 * lam), 0.5 * s)
        pt = np.linalg.norm(v_w, axis=1) / mu
        better = pt < best_pt
        best_pt = np.where(better, pt, best_pt)
        best_u[better] = w[better]
        t += 1

        if t % CHECK_EVERY == 0 or t == cfg.max_inner:
            lower = a / wsum - np.einsum("ij,ij->i", b, b) / (wsum * wsum * 2 * mu)
            fbar = inst.value(x + ubar)
            phibar = fbar + np.einsum("ij,ij->i", ubar, ubar) / (2 * lam)
            gap_cert = np.sqrt(np.maximum(2.0 * (phibar - lower) / mu, 0.0))
            use_bar = gap_cert < best_pt
            cert = np.minimum(gap_cert, best_pt)
            u_cand = np.where(use_bar[:, None], ubar, best_u)
            y_out[active] = x + u_cand
            cert_out[active] = cert
            done = cert <= tol
            if done.any():
                keep = ~done
                active, x, r, u, a, b, ubar, best_u, best_pt, w, phi_w, v_w, s = (
                    arr[keep] for arr in (active, x, r, u, a, b, ubar, best_u, best_pt, w, phi_w, v_w, s)
                )
    return ProxResult(y_out, cert_out, cert_out <= tol, t)


def prox_point(inst, cfg: MoreauConfig, x) -> Estimate:
    """``prox_{lam f}(x)`` with an accuracy flag."""
    res = prox_batch(inst, cfg, np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :])
    return Estimate(res.y[0], bool(res.accurate[0]))


def moreau_grad(inst, cfg: MoreauConfig, x) -> Estimate:
    """``(x - prox(x)) / lam``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y, ok = prox_point(inst, cfg, x)
    return Estimate((x - y) / cfg.lam, ok)


def moreau_value(inst, cfg: MoreauConfig, x) -> Estimate:
    """``f(y) + ||x - y||^2 / (2 lam)`` at the computed proximal point ``y``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y, ok = prox_point(inst, cfg, x)
    return Estimate(float(inst.value(y)) + float(np.sum((x - y) ** 2)) / (2 * cfg.lam), ok)


def _W(fx, d, grad, nu):
    return (np.sum((d - grad) ** 2) - np.sum(grad**2)) / (2 * nu) + fx


def lyapunov_W(inst, cfg: MoreauConfig, state: IterState, nu: float) -> Estimate:
    if not nu > 0:
        raise DomainError(f"nu must be positive, got {nu}")
    grad, ok = moreau_grad(inst, cfg, state.x)
    return Estimate(float(_W(float(inst.value(state.x)), state.d, grad, nu)), ok)


def lyapunov_V(inst, cfg: MoreauConfig, state: IterState, schedules: ScheduleSet, k: int) -> Estimate:
    """Momentum Lyapunov function at iteration ``k`` (coupled momentum only)."""
    mom = schedules.momentum
    if mom is None or mom.kind != "coupled":
        raise ConfigError("the Lyapunov function V needs a coupled momentum schedule")
    nu, lam = mom.nu, cfg.lam
    alpha, _, beta, _ = schedules.values(k)
    y, ok = prox_point(inst, cfg, state.x)
    fx = float(inst.value(state.x))
    f_lam = float(inst.value(y)) + float(np.sum((state.x - y) ** 2)) / (2 * lam)
    grad = (state.x - y) / lam
    d_sq = float(np.sum(state.d**2))
    value = (f_lam + _W(fx, state.d, grad, nu) + fx / (lam * nu)
             + ((1 - beta) / (2 * lam * nu**2) + alpha / (lam * nu)) * d_sq)
    return Estimate(float(value), ok)


# ---------------------------------------------------------------------------
# traces

TRACE_COLUMNS = ("k", "fgap", "dist", "dnorm", "alpha", "gamma", "batch", "Wk", "Vk", "moreau_gradsq", "diverged")
_OPTIONAL = ("dist", "gamma", "Wk", "Vk", "moreau_gradsq")


def fmt_float(v) -> str:
    """17 significant digits; empty for absent (NaN) values."""
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


@dataclass
class Trace:
    """Per-iteration records. Absent optional values are stored as NaN."""

    k: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fgap: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dist: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dnorm: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    batch: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    Wk: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Vk: np.ndarray = field(default_factory=lambda: np.zeros(0))
    moreau_gradsq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diverged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        self.batch = np.asarray(self.batch, dtype=np.int64)
        self.diverged = np.asarray(self.diverged, dtype=bool)
        for name in ("fgap", "dist", "dnorm", "alpha", "gamma", "Wk", "Vk", "moreau_gradsq"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.k.size
        for name in TRACE_COLUMNS:
            col = getattr(self, name)
            if col.size == 0 and n and name in _OPTIONAL:
                setattr(self, name, np.full(n, np.nan))
            elif col.shape != (n,):
                raise DomainError(f"trace column {name} has length {col.size}, expected {n}")
        if n > 1 and np.any(np.diff(self.k) <= 0):
            raise DomainError("trace iteration indices must be strictly increasing")
        if n and np.any(self.diverged[:-1]):
            raise DomainError("a diverged record must be the last one")

    def __len__(self) -> int:
        return int(self.k.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c), equal_nan=c not in ("k", "batch", "diverged"))
                   for c in TRACE_COLUMNS)

    @property
    def is_diverged(self) -> bool:
        return bool(self.diverged.size and self.diverged[-1])

    def gap_at(self, k: int) -> Optional[float]:
        i = np.searchsorted(self.k, k)
        if i < self.k.size and self.k[i] == k:
            return float(self.fgap[i])
        return None

    def write_csv(self, fh) -> None:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_COLUMNS)
        for i in range(len(self)):
            out.writerow([
                int(self.k[i]), fmt_float(self.fgap[i]), fmt_float(self.dist[i]), fmt_float(self.dnorm[i]),
                fmt_float(self.alpha[i]), fmt_float(self.gamma[i]), int(self.batch[i]),
                fmt_float(self.Wk[i]), fmt_float(self.Vk[i]), fmt_float(self.moreau_gradsq[i]),
                int(self.diverged[i]),
            ])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        text = buf.getvalue()
        if path is not None:
            try:
                Path(path).write_text(text)
            except OSError as exc:
                raise OutputError(f"{path}: {exc}") from exc
        return text

    @classmethod
    def from_csv(cls, source) -> "Trace":
        """Parse CSV text, a path, or an open file."""
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            try:
                source = Path(source).read_text()
            except OSError as exc:
                raise OutputError(f"{source}: {exc}") from exc
        if isinstance(source, str):
            source = io.StringIO(source)
        reader = csv.reader(source)
        header = tuple(next(reader))
        if header != TRACE_COLUMNS:
            raise DomainError(f"unexpected trace header {header}")
        cols: dict[str, list] = {c: [] for c in TRACE_COLUMNS}
        for row in reader:
            for name, cell in zip(TRACE_COLUMNS, row):
                if name in ("k", "batch", "diverged"):
                    cols[name].append(int(cell))
                else:
                    cols[name].append(float(cell) if cell else math.nan)
        return cls(**cols)


def epoch_to_eps_from_gaps(gaps, eps: float) -> Optional[int]:
    """Smallest ``q >= 1`` with ``gaps[q - 1] <= eps``; ``gaps[q - 1]`` is the gap after epoch ``q``."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    hits = np.flatnonzero(np.asarray(gaps, dtype=np.float64) <= eps)
    return int(hits[0]) + 1 if hits.size else None


def epoch_to_eps(trace: Trace, eps: float, m: int) -> Optional[int]:
    """Smallest ``q >= 1`` with gap at iteration ``m * q`` at most ``eps``; None if never."""
    if m < 1:
        raise DomainError(f"epoch length must be >= 1, got {m}")
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    sel = (trace.k >= m) & (trace.k % m == 0) & ~trace.diverged
    ks, gaps = trace.k[sel], trace.fgap[sel]
    hits = np.flatnonzero(gaps <= eps)
    return int(ks[hits[0]] // m) if hits.size else None
