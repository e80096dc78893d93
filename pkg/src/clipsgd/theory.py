"""Closed-form convergence constants and bounds.

All calculators are pure functions of their arguments. Iteration indices
follow the library convention: ``x_0`` is the starting point and ``alpha_k``
is the stepsize used to move from ``x_k`` to ``x_{k+1}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clipping import StepSchedule
from .errors import DomainError, OutputError, PreconditionError

SATISFIED, VIOLATED, NOT_APPLICABLE = "satisfied", "violated", "not-applicable"


def _positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise DomainError(f"{name} must be positive, got {v}")


def _tau_open(tau):
    if not 0.5 < tau < 1.0:
        raise DomainError(f"tau must lie in (1/2, 1), got {tau}")


# ---------------------------------------------------------------------------
# unclipped divergence


def example1_lower_bound(alpha1: float, x1: float, K: int) -> np.ndarray:
    """``log|x1| + log(k!)`` for ``k = 1..K``.

    Lower bound on ``log|x_k|`` for plain SGD on the noiseless quartic with
    ``alpha_k = alpha1 / k`` started at ``x_1`` (one-based indexing).
    """
    _positive(alpha1=alpha1)
    if abs(x1) < math.sqrt(3.0 / alpha1):
        raise PreconditionError(f"|x1| = {abs(x1):g} is below sqrt(3 / alpha1) = {math.sqrt(3.0 / alpha1):g}")
    ks = np.arange(1, K + 1, dtype=np.float64)
    return math.log(abs(x1)) + np.array([math.lgamma(k + 1.0) for k in ks])


# ---------------------------------------------------------------------------
# strongly convex setting


def prop1_constant(mu: float, sigma: float, gamma: float) -> float:
    _positive(mu=mu, gamma=gamma)
    return sigma**2 / (2.0 * mu) + gamma**2


def prop1_bound(mu: float, sigma: float, gamma: float, e0_sq: float, step: StepSchedule, K: int) -> np.ndarray:
    """``e0_sq + C * sum_{i<k} alpha_i`` for ``k = 1..K``."""
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    C = prop1_constant(mu, sigma, gamma)
    return e0_sq + C * np.cumsum(step.values(np.arange(K)))


def thm1_recursion_rhs(e_sq, mu, sigma, gamma, alpha, m, rho_mean):
    """One-step bound on ``E[e_{k+1}^2 | F_k]`` with constant clipping.

    ``rho_mean`` is the conditional mean of ``min(1, gamma / ||g_k||)``.
    Vectorised over array arguments.
    """
    e_sq, alpha, m, rho_mean = (np.asarray(v, dtype=np.float64) for v in (e_sq, alpha, m, rho_mean))
    out = (1.0 - mu * alpha * rho_mean) * e_sq + sigma**2 * alpha / (mu * m) + alpha**2 * gamma**2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Thm2Result:
    varrho: float
    eta: float
    condition_holds: bool
    radius: float
    probability: float
    c0: Optional[float] = None


def _thm2_parts(e0_sq, mu, sigma, gamma, G_big, alpha0, delta):
    _positive(mu=mu, gamma=gamma, alpha0=alpha0, e0_sq=e0_sq)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if G_big < 0:
        raise DomainError("G_big must be non-negative")
    varrho = gamma / (gamma + math.sqrt(G_big))
    if alpha0 > 1.0 / (mu * varrho):
        raise PreconditionError(f"alpha0 = {alpha0:g} exceeds 1/(mu varrho) = {1.0 / (mu * varrho):g}")
    eta = (sigma**2 / mu + gamma**2) / (mu * varrho)
    return varrho, eta


def thm2_condition(K, e0_sq, mu, varrho, eta, alpha0, tau):
    """``mu varrho alpha0 K^(1-tau) >= log(e0^2 K^tau / (eta alpha0))``, vectorised in ``K``."""
    K = np.asarray(K, dtype=np.float64)
    lhs = mu * varrho * alpha0 * K ** (1.0 - tau)
    rhs = np.log(e0_sq / (eta * alpha0)) + tau * np.log(K)
    return lhs >= rhs


def thm2_bounds(e0_sq, mu, sigma, gamma, G_big, alpha0, tau, delta, K, c0=None) -> Thm2Result:
    """High-probability bound for constant stepsize ``alpha0 K^-tau`` and batch ``K^tau``.

    ``G_big`` is the growth function evaluated at ``dist(x0, X*) / delta``.
    ``c0`` belongs to a separate claim with an unspecified constant; it is
    only carried through.
    """
    _tau_open(tau)
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    varrho, eta = _thm2_parts(e0_sq, mu, sigma, gamma, G_big, alpha0, delta)
    holds = bool(thm2_condition(K, e0_sq, mu, varrho, eta, alpha0, tau))
    radius = 2.0 * eta * alpha0 / (delta * K**tau)
    prob = 1.0 - 2.0 * delta - delta * (sigma**2 / mu + gamma**2) * alpha0**2 / (e0_sq * K ** (2.0 * tau - 1.0))
    return Thm2Result(varrho, eta, holds, radius, prob, c0)


def thm2_min_K(e0_sq, mu, sigma, gamma, G_big, alpha0, tau, delta, K_max=10**7, chunk=1 << 20) -> Optional[int]:
    """Smallest ``K <= K_max`` meeting the iteration condition, by direct scan."""
    _tau_open(tau)
    varrho, eta = _thm2_parts(e0_sq, mu, sigma, gamma, G_big, alpha0, delta)
    for start in range(1, K_max + 1, chunk):
        ks = np.arange(start, min(start + chunk, K_max + 1))
        hit = np.flatnonzero(thm2_condition(ks, e0_sq, mu, varrho, eta, alpha0, tau))
        if hit.size:
            return int(ks[hit[0]])
    return None


# ---------------------------------------------------------------------------
# polynomial growth


@dataclass(frozen=True)
class MomentBounds:
    """Moment constants; ``P0``/``P1`` keyed by the exponent ``q``."""

    P0: dict
    P1: dict
    G0: Optional[float]
    G1: Optional[float]
    D0: float
    D1: float


def _P0(q, dist0):
    return 2.0 ** (q / 2.0) * dist0**q


def _P1(q, gamma, mu, sigma, alpha0, tau):
    return ((2.0 * gamma) ** q + mu ** (-q / 2.0) * sigma ** (q / 4.0 + 1.0)) * (2.0 * alpha0 / (1.0 - tau)) ** (q / 2.0)


def lemma1_constants(dist0, gamma, mu, sigma, alpha0, tau, p, L0=None, L1=None) -> MomentBounds:
    """Moment bounds for clipped SGD with polynomial stepsizes under polynomial growth.

    ``sigma`` is the central-moment constant. ``G0``/``G1`` need ``L0``/``L1``.
    """
    _tau_open(tau)
    if p < 2:
        raise DomainError(f"p must be >= 2, got {p}")
    _positive(gamma=gamma, mu=mu, alpha0=alpha0)
    qs = (2 * (p - 1), 4 * (p - 1))
    P0 = {q: _P0(q, dist0) for q in qs}
    P1 = {q: _P1(q, gamma, mu, sigma, alpha0, tau) for q in qs}
    G0 = G1 = None
    if L0 is not None and L1 is not None:
        G0 = L0 + L1 * P0[qs[0]]
        G1 = L1 * P1[qs[0]]
    return MomentBounds(P0, P1, G0, G1, P0[qs[1]], P1[qs[1]])


@dataclass(frozen=True)
class Thm3Result:
    C: float
    recursion_exponent: float
    rate_exponent: float
    applicable: bool
    envelope: np.ndarray
    mu: float
    alpha0: float
    tau: float

    def recursion_rhs(self, e_sq, k):
        """Bound on ``E dist(x_{k+1})^2`` from ``E dist(x_k)^2 = e_sq``."""
        k = np.asarray(k, dtype=np.float64)
        out = (1.0 - self.mu * self.alpha0 / (k + 1.0) ** self.tau) * np.asarray(e_sq) \
            + self.C / (k + 1.0) ** self.recursion_exponent
        return float(out) if np.ndim(out) == 0 else out


def thm3_constant(mu, L0, L1, gamma, bounds: MomentBounds) -> float:
    if bounds.G0 is None:
        raise DomainError("moment bounds were computed without L0, L1")
    return (2.0 * gamma**2 / mu) * (L0**2 + L1**2 * (bounds.D0 + bounds.D1)) + bounds.G0 + bounds.G1


def thm3_bound(mu, L0, L1, p, sigma, dist0, gamma, alpha0, tau, K) -> Thm3Result:
    """Recursion and rate envelope for clipped SGD with ``gamma_k = gamma / sqrt(alpha_k)``.

    The envelope ``C / (mu alpha0) * k^-(1 + eps (1 - 2p))`` with ``eps = 1 - tau``
    is tabulated for ``k = 1..K``. ``applicable`` is False when the noise term
    of the recursion does not decay faster than the stepsize.
    """
    bounds = lemma1_constants(dist0, gamma, mu, sigma, alpha0, tau, p, L0, L1)
    C = thm3_constant(mu, L0, L1, gamma, bounds)
    rec = 2.0 * (1.0 - p * (1.0 - tau))
    rate = 1.0 + (1.0 - tau) * (1.0 - 2.0 * p)
    ks = np.arange(1, K + 1, dtype=np.float64)
    envelope = C / (mu * alpha0) * ks ** (-rate)
    return Thm3Result(C, rec, rate, bool(rec > tau and rate > 0), envelope, mu, alpha0, tau)


# ---------------------------------------------------------------------------
# weakly convex setting


def lemma5_constant(lam, gamma, rho, nu, L, beta0) -> float:
    _positive(lam=lam, nu=nu)
    if not 0.0 < beta0 < 1.0:
        raise DomainError(f"beta0 must lie in (0, 1) here, got {beta0}")
    return gamma**2 / lam * (1.0 + rho / (2.0 * nu)) + nu * L**2 * (1.0 + 1.0 / (2.0 * lam * nu * (1.0 - beta0)))


@dataclass(frozen=True)
class Thm5Result:
    general: float
    simplified: Optional[float]
    C: float
    xi: float
    weights: np.ndarray  # weights[j] = P(k* = j + 1)


def thm5_bound(rho, Delta, gamma, L, nu, lam, alpha0, K, alphas: Optional[Sequence[float]] = None) -> Thm5Result:
    """Bound on ``E ||grad f_lam(x_{k*})||^2`` for clipped SHB.

    Stepsizes default to the constant ``alpha0 / sqrt(K)``; ``beta_0 = nu alpha_0``.
    ``k*`` takes values ``1..K`` with probability proportional to ``alpha_{k*-1}``.
    The simplified value ``8 (rho Delta + gamma^2) / sqrt(K)`` is reported for
    ``K >= 2``; it presumes ``alpha0 = 1/rho``, ``nu = 1/alpha0`` and ``lam = 1/(2 rho)``.
    """
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    if gamma < 2.0 * L:
        raise PreconditionError(f"gamma = {gamma:g} is below 2L = {2.0 * L:g}")
    if 1.0 / lam < 2.0 * rho * (1.0 - 1e-12):
        raise PreconditionError(f"1/lam = {1.0 / lam:g} is below 2 rho = {2.0 * rho:g}")
    a = np.full(K, alpha0 / math.sqrt(K)) if alphas is None else np.asarray(alphas, dtype=np.float64)
    if a.shape != (K,) or np.any(a <= 0):
        raise DomainError("alphas must hold K positive stepsizes")
    beta0 = nu * a[0]
    C = lemma5_constant(lam, gamma, rho, nu, L, beta0)
    xi = 2.0 + 1.0 / (lam * nu)
    general = 2.0 * (xi * Delta + 2.0 * L**2 / nu + C * np.sum(a**2)) / np.sum(a)
    simplified = 8.0 * (rho * Delta + gamma**2) / math.sqrt(K) if K >= 2 else None
    return Thm5Result(float(general), simplified, float(C), xi, a / a.sum())


# ---------------------------------------------------------------------------
# reports


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class BoundReport:
    """Theoretical values paired with their empirical counterparts.

    ``theory["bound"]`` and ``empirical["value"]`` are aligned with
    ``checkpoints``. ``kind`` is ``"upper"`` when the empirical value must stay
    below the bound and ``"lower"`` when it must stay above. The report passes
    when the satisfied fraction of applicable checkpoints reaches
    ``required_fraction`` and every entry of ``checks`` holds.
    """

    name: str
    inputs: dict
    checkpoints: list = field(default_factory=list)
    theory: dict = field(default_factory=dict)
    empirical: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    kind: str = "upper"
    required_fraction: float = 1.0
    checks: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def slack(self) -> dict:
        """Min / median / max of the margin (positive means satisfied) over applicable checkpoints."""
        if "bound" not in self.theory or "value" not in self.empirical:
            return {}
        b = np.asarray(self.theory["bound"], dtype=np.float64)
        e = np.asarray(self.empirical["value"], dtype=np.float64)
        margin = b - e if self.kind == "upper" else e - b
        mask = np.array([v != NOT_APPLICABLE for v in self.verdicts], dtype=bool)
        with np.errstate(invalid="ignore"):
            s = margin[mask & np.isfinite(margin)] if mask.size == margin.size else margin[np.isfinite(margin)]
        if not s.size:
            return {}
        return {"min": float(s.min()), "median": float(np.median(s)), "max": float(s.max())}

    @property
    def counts(self) -> dict:
        return {v: self.verdicts.count(v) for v in (SATISFIED, VIOLATED, NOT_APPLICABLE)}

    @property
    def satisfied_fraction(self) -> float:
        c = self.counts
        applicable = c[SATISFIED] + c[VIOLATED]
        return c[SATISFIED] / applicable if applicable else math.nan

    @property
    def applicable(self) -> bool:
        return self.counts[SATISFIED] + self.counts[VIOLATED] > 0

    @property
    def passed(self) -> bool:
        return self.applicable and self.satisfied_fraction >= self.required_fraction and all(self.checks.values())

    def to_dict(self) -> dict:
        from . import __version__

        return {
            "name": self.name,
            "version": __version__,
            "kind": self.kind,
            "inputs": _jsonable(self.inputs),
            "checkpoints": _jsonable(self.checkpoints),
            "theory": _jsonable(self.theory),
            "empirical": _jsonable(self.empirical),
            "verdicts": list(self.verdicts),
            "counts": self.counts,
            "required_fraction": self.required_fraction,
            "checks": _jsonable(self.checks),
            "summary": _jsonable(self.summary),
            "slack": self.slack,
            "passed": self.passed,
            "notes": list(self.notes),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            try:
                Path(path).write_text(text)
            except OSError as exc:
                raise OutputError(f"{path}: {exc}") from exc
        return text

    @classmethod
    def from_json(cls, text: str) -> "BoundReport":
        d = json.loads(text)
        return cls(d["name"], d["inputs"], d["checkpoints"], d["theory"], d["empirical"], d["verdicts"],
                   d["kind"], d["required_fraction"], d["checks"], d["summary"], d["notes"])


def verdicts_leq(empirical, bound, slack=None) -> list:
    """``satisfied`` where ``empirical <= bound + slack``; NaN entries are not applicable."""
    e = np.asarray(empirical, dtype=np.float64)
    b = np.asarray(bound, dtype=np.float64)
    s = np.zeros_like(b) if slack is None else np.broadcast_to(np.asarray(slack, dtype=np.float64), b.shape)
    out = []
    for ei, bi, si in zip(e, b, s):
        if math.isnan(bi) or math.isnan(ei):
            out.append(NOT_APPLICABLE)
        else:
            out.append(SATISFIED if ei <= bi + si else VIOLATED)
    return out


def verdicts_geq(empirical, bound) -> list:
    """``satisfied`` where ``empirical >= bound``; NaN entries are not applicable."""
    return verdicts_leq(-np.asarray(empirical, dtype=np.float64), -np.asarray(bound, dtype=np.float64))
