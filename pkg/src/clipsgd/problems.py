"""Stochastic test problems.

Three objectives are provided, each with a full (deterministic) objective and
subgradient, a mini-batch stochastic oracle and metadata about the solution
set and the growth / regularity constants the instance certifiably satisfies.

``quartic``
    ``f(x) = x**4 / 4 + eps * x**2 / 2`` on the real line, with additive
    Gaussian noise on the derivative. SGD diverges on it super-exponentially
    from large starting points.
``phase retrieval``
    ``f(x) = mean_i |<a_i, x>**2 - b_i|`` with a fraction of grossly corrupted
    measurements. Weakly convex, non-smooth, subgradients grow linearly.
``absolute regression``
    ``f(x) = mean_i |<a_i, x> - b_i|``. Convex and Lipschitz.

Per-sample subgradients use the selection ``sign(0) = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DivergedError, DomainError, OutputError, UnsupportedMetricError


@dataclass(frozen=True)
class Constants:
    """Growth and regularity constants with the assumptions they certify.

    ``assumptions`` maps an assumption name to ``"global"``, ``"region"`` (holds
    on a bounded set only) or ``False``. Names: ``unbiased``,
    ``quadratic_growth`` (mu), ``finite_variance`` (sigma), ``polynomial_growth``
    (L0, L1, p, sigma_moment), ``bounded_second_moment`` (L), ``weakly_convex``
    (rho), ``convex``.
    """

    mu: Optional[float] = None
    sigma: Optional[float] = None
    sigma_moment: Optional[float] = None
    L0: Optional[float] = None
    L1: Optional[float] = None
    p: Optional[float] = None
    L: Optional[float] = None
    rho: Optional[float] = None
    assumptions: dict = field(default_factory=dict)

    def holds(self, name: str) -> bool:
        return self.assumptions.get(name) == "global"


def _as_rows(X) -> tuple[np.ndarray, bool]:
    X = np.atleast_1d(np.asarray(X, dtype=np.float64))
    if X.ndim == 1:
        return X[None, :], True
    return X, False


def _sign(r: np.ndarray) -> np.ndarray:
    # np.sign already maps 0 to 0
    return np.sign(r)


class Problem:
    """Common interface. Batched methods take ``(T, n)`` arrays (or a vector)."""

    name = "problem"
    n: int
    m: Optional[int] = None
    f_star: float = 0.0
    constants: Constants
    sample_kind = "index"

    @property
    def epoch_size(self) -> int:
        """Oracle draws per epoch: one full pass for finite sums, 1 otherwise."""
        return self.m if self.m is not None else 1

    def value(self, X) -> np.ndarray:
        raise NotImplementedError

    def subgrad(self, X) -> np.ndarray:
        raise NotImplementedError

    def value_and_subgrad(self, X) -> tuple[np.ndarray, np.ndarray]:
        return self.value(X), self.subgrad(X)

    def sample_subgrad(self, X, draws) -> np.ndarray:
        """Mini-batch subgradient. ``draws`` has shape ``(T, m_k)``."""
        raise NotImplementedError

    def dist_to_opt(self, X) -> np.ndarray:
        raise UnsupportedMetricError(f"{self.name} has no solution-set metadata")

    def gap(self, X) -> np.ndarray:
        return self.value(X) - self.f_star

    def minimizers(self) -> list[np.ndarray]:
        raise UnsupportedMetricError(f"{self.name} has no solution-set metadata")

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# quartic


@dataclass(frozen=True)
class QuarticSpec:
    eps: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError(f"eps must be positive, got {self.eps}")
        if not self.noise >= 0:
            raise DomainError(f"noise scale must be non-negative, got {self.noise}")


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


class Quartic(Problem):
    """``f(x) = x**4/4 + eps*x**2/2``; oracle ``f'(x) + noise * N(0, 1)``."""

    name = "quartic"
    sample_kind = "normal"

    def __init__(self, spec: QuarticSpec):
        self.spec = spec
        self.n = 1
        self.f_star = 0.0
        eps, s = spec.eps, spec.noise
        c_noise = 2.0 * s**2
        # |f'(x)|^2 = x^2 (x^2 + eps)^2 <= L + L x^6 with L = max(2(1+eps), (1+eps)^2)
        growth = max(2.0 * (1.0 + eps), (1.0 + eps) ** 2)
        p = 4
        # E|xi|^{2(p-1)} <= sigma_moment^p for xi ~ N(0, s^2)
        moment = _double_factorial(2 * (p - 1) - 1) * s ** (2 * (p - 1))
        self.constants = Constants(
            mu=eps / 2.0,
            sigma=s,
            sigma_moment=moment ** (1.0 / p),
            L0=growth + c_noise,
            L1=growth + c_noise,
            p=p,
            L=None,
            rho=0.0,
            assumptions={
                "unbiased": "global",
                "quadratic_growth": "global",
                "finite_variance": "global",
                "polynomial_growth": "global",
                "bounded_second_moment": False,
                "weakly_convex": "global",
                "convex": "global",
            },
        )

    def value(self, X):
        X, flat = _as_rows(X)
        x = X[:, 0]
        with np.errstate(over="ignore", invalid="ignore"):
            out = x**4 / 4.0 + self.spec.eps * x**2 / 2.0
        return out[0] if flat else out

    def subgrad(self, X):
        X, flat = _as_rows(X)
        with np.errstate(over="ignore", invalid="ignore"):
            out = X**3 + self.spec.eps * X
        return out[0] if flat else out

    def sample_subgrad(self, X, draws):
        X, flat = _as_rows(X)
        draws = np.asarray(draws, dtype=np.float64).reshape(X.shape[0], -1)
        with np.errstate(over="ignore", invalid="ignore"):
            g = X**3 + self.spec.eps * X
        if self.spec.noise > 0:
            g = g + self.spec.noise * draws.mean(axis=1)[:, None]
        return g[0] if flat else g

    def dist_to_opt(self, X):
        X, flat = _as_rows(X)
        out = np.abs(X[:, 0])
        return out[0] if flat else out

    def minimizers(self):
        return [np.zeros(1)]

    def arrays(self):
        return {"eps": np.array([self.spec.eps]), "noise": np.array([self.spec.noise]), "x_star": np.zeros(1)}


def make_quartic(spec: QuarticSpec) -> Quartic:
    return Quartic(spec)


# ---------------------------------------------------------------------------
# finite-sum problems built on A = Q D


@dataclass(frozen=True)
class ConditionedMatrix:
    A: np.ndarray
    kappa: float
    scales: np.ndarray


def _qd(m: int, n: int, kappa: float, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if not kappa >= 1:
        raise DomainError(f"kappa must be >= 1, got {kappa}")
    # column-major fill: column j takes draws j*m .. (j+1)*m - 1
    Q = gen.standard_normal(m * n).reshape(n, m).T
    scales = np.ones(1) if n == 1 else np.linspace(1.0 / kappa, 1.0, n)
    return np.ascontiguousarray(Q * scales), scales


def gen_conditioned_matrix(m: int, n: int, kappa: float, seed) -> ConditionedMatrix:
    """``A = Q D`` with standard normal ``Q`` and ``D = diag(linspace(1/kappa, 1, n))``."""
    if n < 1 or m < n:
        raise DomainError(f"need m >= n >= 1, got m={m}, n={n}")
    A, scales = _qd(m, n, kappa, rngmod.generator(seed))
    return ConditionedMatrix(A, float(kappa), scales)


def _inner(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    # the oracles' inner-product path, so b is exact at x* (zero residuals stay zero)
    return np.einsum("tn,mn->tm", np.asarray(x, dtype=np.float64)[None, :], A)[0]


def _unit_sphere(n: int, gen: np.random.Generator) -> np.ndarray:
    v = gen.standard_normal(n)
    return v / np.linalg.norm(v)


class FiniteSum(Problem):
    sample_kind = "index"

    def __init__(self, A: np.ndarray, b: np.ndarray, x_star: np.ndarray):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.x_star = np.asarray(x_star, dtype=np.float64)
        self.m, self.n = self.A.shape
        self.row_norm_sq = np.einsum("ij,ij->i", self.A, self.A)

    def _residual(self, inner, b):
        raise NotImplementedError

    def _weights(self, inner, b):
        """Scalar multipliers ``w`` so that the per-sample subgradient is ``w * a_i``."""
        raise NotImplementedError

    # einsum rather than BLAS: each row's result is independent of the other
    # rows in the batch, and residuals that are zero at x* stay exactly zero.

    def value(self, X):
        X, flat = _as_rows(X)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.abs(self._residual(np.einsum("tn,mn->tm", X, self.A), self.b)).mean(axis=1)
        return out[0] if flat else out

    def subgrad(self, X):
        X, flat = _as_rows(X)
        with np.errstate(over="ignore", invalid="ignore"):
            w = self._weights(np.einsum("tn,mn->tm", X, self.A), self.b)
            out = np.einsum("tm,mn->tn", w, self.A) / self.m
        return out[0] if flat else out

    def value_and_subgrad(self, X):
        X, flat = _as_rows(X)
        with np.errstate(over="ignore", invalid="ignore"):
            inner = np.einsum("tn,mn->tm", X, self.A)
            val = np.abs(self._residual(inner, self.b)).mean(axis=1)
            g = np.einsum("tm,mn->tn", self._weights(inner, self.b), self.A) / self.m
        return (val[0], g[0]) if flat else (val, g)

    def sample_subgrad(self, X, draws):
        X, flat = _as_rows(X)
        idx = np.asarray(draws, dtype=np.int64).reshape(X.shape[0], -1)
        rows = self.A[idx]  # (T, m_k, n)
        with np.errstate(over="ignore", invalid="ignore"):
            inner = np.einsum("tjn,tn->tj", rows, X)
            w = self._weights(inner, self.b[idx])
            g = np.einsum("tj,tjn->tn", w, rows) / idx.shape[1]
        return g[0] if flat else g

    def per_sample_subgrad(self, x, i: int) -> np.ndarray:
        a = self.A[i]
        return self._weights(_inner(a[None, :], x), self.b[i:i + 1])[0] * a

    def minimizers(self):
        return [self.x_star.copy()]


@dataclass(frozen=True)
class PhaseRetrievalSpec:
    m: int = 500
    n: int = 50
    kappa: float = 10.0
    p_fail: float = 0.1
    corruption_var: float = 25.0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise DomainError("m and n must be positive")
        if not 0.0 <= self.p_fail <= 1.0:
            raise DomainError(f"p_fail must lie in [0, 1], got {self.p_fail}")
        if not self.corruption_var >= 0:
            raise DomainError("corruption variance must be non-negative")


class PhaseRetrieval(FiniteSum):
    """Robust phase retrieval ``mean_i |<a_i, x>^2 - b_i|``."""

    name = "phase_retrieval"

    def __init__(self, A, b, x_star, corrupted, zeta, spec: Optional[PhaseRetrievalSpec] = None):
        super().__init__(A, b, x_star)
        self.spec = spec
        self.corrupted = np.asarray(corrupted, dtype=bool)
        self.zeta = np.asarray(zeta, dtype=np.float64)
        self.f_star = float(self.value(self.x_star))
        # composition |.| o (quadratic): each term is 2||a_i||^2-weakly convex
        rho = 2.0 * float(self.row_norm_sq.max())
        self.constants = Constants(
            rho=rho,
            assumptions={
                "unbiased": "global",
                "weakly_convex": "global",
                "bounded_second_moment": "region",
                "quadratic_growth": False,
                "convex": False,
            },
        )

    def lipschitz_on_ball(self, radius: float) -> float:
        """``L`` with ``E||g(x, S)||^2 <= L^2`` for all ``||x|| <= radius``."""
        return 2.0 * radius * math.sqrt(float(np.mean(self.row_norm_sq**2)))

    def _residual(self, inner, b):
        return inner**2 - b

    def _weights(self, inner, b):
        return 2.0 * _sign(inner**2 - b) * inner

    def dist_to_opt(self, X):
        X, flat = _as_rows(X)
        out = np.minimum(np.linalg.norm(X - self.x_star, axis=1), np.linalg.norm(X + self.x_star, axis=1))
        return out[0] if flat else out

    def minimizers(self):
        return [self.x_star.copy(), -self.x_star]

    def arrays(self):
        return {"A": self.A, "b": self.b, "x_star": self.x_star,
                "corrupted": self.corrupted.astype(np.int64), "zeta": self.zeta}


def gen_phase_retrieval(spec: PhaseRetrievalSpec, seed) -> PhaseRetrieval:
    """Draw ``A``, a unit-norm ``x*``, the corruption mask and the corruptions."""
    gen = rngmod.generator(seed)
    A, _ = _qd(spec.m, spec.n, spec.kappa, gen)
    x_star = _unit_sphere(spec.n, gen)
    corrupted = gen.random(spec.m) < spec.p_fail
    zeta = gen.standard_normal(spec.m) * math.sqrt(spec.corruption_var)
    b = _inner(A, x_star) ** 2 + np.where(corrupted, zeta, 0.0)
    return PhaseRetrieval(A, b, x_star, corrupted, zeta, spec)


@dataclass(frozen=True)
class AbsRegressionSpec:
    m: int = 500
    n: int = 50
    kappa: float = 10.0
    sigma: float = 0.01

    def __post_init__(self):
        if self.n < 1 or self.m < self.n:
            raise DomainError(f"need m >= n >= 1, got m={self.m}, n={self.n}")
        if not self.sigma >= 0:
            raise DomainError("noise scale must be non-negative")


class AbsRegression(FiniteSum):
    """Least absolute deviations ``mean_i |<a_i, x> - b_i|``.

    ``x_star`` is the generating vector; with noise the empirical minimiser can
    differ slightly, so reported gaps may be negative.
    """

    name = "abs_regression"

    def __init__(self, A, b, x_star, w, spec: Optional[AbsRegressionSpec] = None):
        super().__init__(A, b, x_star)
        self.spec = spec
        self.w = np.asarray(w, dtype=np.float64)
        self.f_star = float(self.value(self.x_star))
        self.constants = Constants(
            L=math.sqrt(float(self.row_norm_sq.max())),
            rho=0.0,
            assumptions={
                "unbiased": "global",
                "bounded_second_moment": "global",
                "weakly_convex": "global",
                "convex": "global",
                "quadratic_growth": False,
            },
        )

    def _residual(self, inner, b):
        return inner - b

    def _weights(self, inner, b):
        return _sign(inner - b)

    def dist_to_opt(self, X):
        X, flat = _as_rows(X)
        out = np.linalg.norm(X - self.x_star, axis=1)
        return out[0] if flat else out

    def arrays(self):
        return {"A": self.A, "b": self.b, "x_star": self.x_star, "w": self.w}


def gen_abs_regression(spec: AbsRegressionSpec, seed) -> AbsRegression:
    gen = rngmod.generator(seed)
    A, _ = _qd(spec.m, spec.n, spec.kappa, gen)
    x_star = _unit_sphere(spec.n, gen)
    w = gen.standard_normal(spec.m)
    return AbsRegression(A, _inner(A, x_star) + spec.sigma * w, x_star, w, spec)


# ---------------------------------------------------------------------------
# generic helpers


def build_problem(spec, seed=0) -> Problem:
    if isinstance(spec, QuarticSpec):
        return make_quartic(spec)
    if isinstance(spec, PhaseRetrievalSpec):
        return gen_phase_retrieval(spec, seed)
    if isinstance(spec, AbsRegressionSpec):
        return gen_abs_regression(spec, seed)
    raise ConfigError(f"unknown problem spec {type(spec).__name__}")


def stochastic_subgrad(inst: Problem, x, m_k: int, stream: Optional[rngmod.SampleStream] = None,
                       full_pass: bool = False) -> np.ndarray:
    """Average of ``m_k`` independent per-sample subgradients at ``x``.

    Finite sums draw indices uniformly with replacement. With ``full_pass`` the
    batch is every sample once, which reproduces the full subgradient.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise DivergedError("oracle called at a non-finite point")
    if m_k < 1:
        raise DomainError(f"batch size must be >= 1, got {m_k}")
    if full_pass:
        if inst.m is None:
            return inst.subgrad(x)
        return inst.sample_subgrad(x, np.arange(inst.m)[None, :])
    if stream is None:
        raise DomainError("a sample stream is required unless full_pass is set")
    if inst.sample_kind == "normal":
        draws = stream.normals(m_k)
    else:
        draws = stream.indices(m_k)
    return inst.sample_subgrad(x, draws[None, :])


def sample_stream(inst: Problem, master_seed: int, trial: int) -> rngmod.SampleStream:
    return rngmod.SampleStream(rngmod.seed_sequence(master_seed, rngmod.SAMPLE, trial), high=inst.m)


def initial_point(inst: Problem, master_seed: int, trial: int) -> np.ndarray:
    """``x0 ~ N(0, I_n)`` from the trial's dedicated stream."""
    return rngmod.generator(rngmod.seed_sequence(master_seed, rngmod.X0, trial)).standard_normal(inst.n)


def dist_to_opt(inst: Problem, x) -> float:
    return float(inst.dist_to_opt(np.atleast_1d(np.asarray(x, dtype=np.float64))))


# ---------------------------------------------------------------------------
# serialization


def save_instance(inst: Problem, path) -> Path:
    """Write problem data to ``.npz`` or long-format ``.csv`` (array,row,col,value)."""
    path = Path(path)
    arrays = {"kind": np.array([inst.name])}
    arrays.update(inst.arrays())
    try:
        if path.suffix == ".npz":
            np.savez(path, **arrays)
        elif path.suffix == ".csv":
            with open(path, "w", newline="") as fh:
                out = csv.writer(fh)
                out.writerow(["array", "row", "col", "value"])
                out.writerow(["kind", 0, 0, inst.name])
                for name, arr in inst.arrays().items():
                    a2 = arr[:, None] if arr.ndim == 1 else arr
                    for (i, j), v in np.ndenumerate(a2):
                        out.writerow([name, i, j, repr(float(v))])
        else:
            raise OutputError(f"{path}: unsupported instance format (use .npz or .csv)")
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
    return path


def _read_csv_arrays(path: Path) -> dict:
    cells: dict[str, dict] = {}
    kind = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for name, i, j, v in reader:
            if name == "kind":
                kind = v
                continue
            cells.setdefault(name, {})[(int(i), int(j))] = float(v)
    out = {"kind": kind}
    for name, vals in cells.items():
        rows = 1 + max(i for i, _ in vals)
        cols = 1 + max(j for _, j in vals)
        arr = np.empty((rows, cols))
        for (i, j), v in vals.items():
            arr[i, j] = v
        out[name] = arr[:, 0] if cols == 1 else arr
    return out


def load_instance(path) -> Problem:
    path = Path(path)
    try:
        if path.suffix == ".npz":
            with np.load(path) as z:
                data = {k: z[k] for k in z.files}
            kind = str(data.pop("kind")[0])
        else:
            data = _read_csv_arrays(path)
            kind = data.pop("kind")
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
    if kind == "quartic":
        return make_quartic(QuarticSpec(float(data["eps"][0]), float(data["noise"][0])))
    if kind == "phase_retrieval":
        return PhaseRetrieval(data["A"], data["b"], data["x_star"], data["corrupted"].astype(bool), data["zeta"])
    if kind == "abs_regression":
        return AbsRegression(data["A"], data["b"], data["x_star"], data["w"])
    raise OutputError(f"{path}: unknown instance kind {kind!r}")
