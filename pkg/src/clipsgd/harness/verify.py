"""Bound verification: theoretical calculators against Monte Carlo traces."""

from __future__ import annotations

import logging
import math
from dataclasses import replace

import numpy as np

from .. import rng as rngmod
from .. import theory
from ..clipping import BatchSchedule, ClipSchedule, MomentumSchedule, ScheduleSet, StepSchedule
from ..errors import ConfigError, DomainError, PreconditionError
from ..metrics import MoreauConfig, prox_batch
from ..problems import PhaseRetrieval, Quartic
from ..theory import NOT_APPLICABLE, BoundReport
from .config import ExperimentConfig, MoreauSettings
from .engine import horizon
from .experiments import problem_for_trial, simulate, start_point

log = logging.getLogger(__name__)

BOUNDS = ("example1", "prop1", "thm1", "thm3", "thm5")


def _na(name: str, inputs: dict, reason: str) -> BoundReport:
    return BoundReport(name, inputs, verdicts=[NOT_APPLICABLE], notes=[reason])


def _mean_se(D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and standard errors of a ``(T, R)`` array."""
    T = D.shape[0]
    mean = D.mean(axis=0)
    se = D.std(axis=0, ddof=1) / math.sqrt(T) if T > 1 else np.zeros_like(mean)
    return mean, se


def _stat_verdicts(D: np.ndarray) -> tuple[list, np.ndarray, np.ndarray]:
    """Per-column verdict for ``E[D] <= 0`` at the two-standard-error level."""
    mean, se = _mean_se(D)
    return theory.verdicts_leq(mean, np.zeros_like(mean), 2.0 * se), mean, se


def _stride(cfg: ExperimentConfig, stride, span: int) -> int:
    """Checkpoint spacing: explicit, else ``record_stride``, else about 100 checkpoints."""
    if stride is not None:
        return int(stride)
    return cfg.record_stride if cfg.record_stride > 1 else max(1, span // 100)


def _base_inputs(cfg: ExperimentConfig) -> dict:
    return {"config": cfg.to_dict()}


def _quartic_only(cfg, name, inputs):
    inst = problem_for_trial(cfg, 0)
    if not isinstance(inst, Quartic):
        return inst, _na(name, inputs, "bound is calibrated for the quartic, whose constants are certified globally")
    return inst, None


def verify_example1(cfg: ExperimentConfig, **_) -> BoundReport:
    inputs = _base_inputs(cfg)
    inst, na = _quartic_only(cfg, "example1", inputs)
    if na:
        return na
    s = cfg.schedules
    if cfg.algorithm != "sgd" or s.step.kind != "polynomial" or s.step.tau != 1.0 or s.batch.kind != "unit":
        return _na("example1", inputs, "needs plain SGD with alpha_k = alpha0 / (k + 1) and unit batches")
    if inst.spec.noise != 0:
        return _na("example1", inputs, "needs the noiseless quartic")
    sim = simulate(cfg, [0], np.arange(0, horizon(s, 1, cfg.max_epochs, cfg.max_iters) + 1))
    res = sim.result
    x0 = float(res.x0[0, 0])
    d = int(res.diverged_at[0])
    ks = res.record_ks if d < 0 else res.record_ks[res.record_ks < d]
    absx = res.dist[0, : ks.size]
    if d >= 0:
        ks = np.append(ks, d)
        absx = np.append(absx, res.divergence["dist"][0])
    try:
        # one-based index j = k + 1
        bound = theory.example1_lower_bound(s.step.alpha0, x0, int(ks[-1]) + 1)[ks]
    except PreconditionError as exc:
        return _na("example1", inputs, str(exc))
    with np.errstate(divide="ignore"):
        emp = np.log(absx)
    inputs.update(alpha1=s.step.alpha0, x1=x0)
    return BoundReport(
        "example1", inputs, [int(k) for k in ks], {"bound": bound}, {"value": emp},
        theory.verdicts_geq(emp, bound), kind="lower",
        checks={"diverged": d >= 0},
        summary={"diverged_at": d if d >= 0 else None},
        notes=["value is log|x_k|; bound is log|x_0| + log((k+1)!)"],
    )


def verify_prop1(cfg: ExperimentConfig, stride=None, **_) -> BoundReport:
    inputs = _base_inputs(cfg)
    inst, na = _quartic_only(cfg, "prop1", inputs)
    if na:
        return na
    s = cfg.schedules
    if cfg.algorithm != "clipped-sgd":
        return _na("prop1", inputs, "needs clipped SGD")
    if s.clip.kind == "constant" and s.step.alpha0 > 1:
        return _na("prop1", inputs, "constant clipping needs alpha_k <= 1 so that gamma_k <= gamma / sqrt(alpha_k)")
    K = horizon(s, inst.epoch_size, cfg.max_epochs, cfg.max_iters)
    ks = np.arange(0, K + 1, _stride(cfg, stride, K))
    sim = simulate(cfg, None, ks)
    res = sim.result
    cols = np.searchsorted(res.record_ks, ks)
    e_sq = res.dist[:, cols] ** 2
    e_sq[res.mask_diverged()[:, cols]] = np.inf
    e0_sq = float(np.mean(e_sq[:, 0]))
    c = inst.constants
    bound_all = theory.prop1_bound(c.mu, c.sigma, s.clip.gamma, e0_sq, s.step, K)
    ks_chk = ks[1:]
    bound = bound_all[ks_chk - 1]
    emp = e_sq[:, 1:].mean(axis=0)
    inputs.update(mu=c.mu, sigma=c.sigma, gamma=s.clip.gamma, e0_sq=e0_sq, C=theory.prop1_constant(c.mu, c.sigma, s.clip.gamma))
    return BoundReport("prop1", inputs, [int(k) for k in ks_chk], {"bound": bound}, {"value": emp},
                       theory.verdicts_leq(emp, bound), summary={"trials": res.trials},
                       notes=["value is the trial mean of dist(x_k)^2; e0_sq is the trial mean of dist(x_0)^2"])


def verify_thm1(cfg: ExperimentConfig, stride=None, **_) -> BoundReport:
    inputs = _base_inputs(cfg)
    inst, na = _quartic_only(cfg, "thm1", inputs)
    if na:
        return na
    s = cfg.schedules
    if cfg.algorithm != "clipped-sgd" or s.clip.kind != "constant":
        return _na("thm1", inputs, "needs clipped SGD with a constant threshold")
    K = horizon(s, inst.epoch_size, cfg.max_epochs, cfg.max_iters)
    base = np.arange(0, K, _stride(cfg, stride, K))
    sim = simulate(cfg, None, np.union1d(base, base + 1))
    res = sim.result
    i0 = np.searchsorted(res.record_ks, base)
    i1 = np.searchsorted(res.record_ks, base + 1)
    dead = res.mask_diverged()
    e0 = np.where(dead[:, i0], np.inf, res.dist[:, i0] ** 2)
    e1 = np.where(dead[:, i1], np.inf, res.dist[:, i1] ** 2)
    rho_k = res.ratio[:, i0]
    c = inst.constants
    gamma = s.clip.gamma
    rhs = theory.thm1_recursion_rhs(e0, c.mu, c.sigma, gamma, res.alpha[i0], res.batch[i0], rho_k)
    verdicts, mean, se = _stat_verdicts(e1 - rhs)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho_eff = (rho_k * e0).mean(axis=0) / e0.mean(axis=0)
    inputs.update(mu=c.mu, sigma=c.sigma, gamma=gamma)
    return BoundReport(
        "thm1", inputs, [int(k) for k in base],
        {"bound": rhs.mean(axis=0), "rho_eff": rho_eff}, {"value": e1.mean(axis=0), "diff_mean": mean, "diff_se": se},
        verdicts, required_fraction=0.95, summary={"trials": res.trials},
        notes=["value is the trial mean of e_{k+1}^2; bound is the trial mean of the one-step bound with the "
               "realized clipping ratio; verdicts allow two standard errors of the paired difference"],
    )


def verify_thm3(cfg: ExperimentConfig, stride=None, burn_in=0.1, slope_slack=0.1, **_) -> BoundReport:
    inputs = _base_inputs(cfg)
    inst, na = _quartic_only(cfg, "thm3", inputs)
    if na:
        return na
    s = cfg.schedules
    if cfg.algorithm != "clipped-sgd" or s.clip.kind != "coupled" or s.step.kind != "polynomial" or s.batch.kind != "unit":
        return _na("thm3", inputs, "needs clipped SGD with gamma_k = gamma / sqrt(alpha_k), polynomial steps, unit batches")
    c = inst.constants
    K = horizon(s, inst.epoch_size, cfg.max_epochs, cfg.max_iters)
    start = max(1, int(math.ceil(burn_in * K)))
    base = np.arange(start, K, _stride(cfg, stride, K - start))
    slope_ks = np.unique(np.round(np.logspace(math.log10(max(1, K / 10)), math.log10(K), 60)).astype(np.int64))
    sim = simulate(cfg, None, np.union1d(np.union1d(base, base + 1), np.append(slope_ks, 0)))
    res = sim.result
    dist0 = float(np.max(res.dist[:, 0]))
    try:
        t3 = theory.thm3_bound(c.mu, c.L0, c.L1, c.p, c.sigma_moment, dist0, s.clip.gamma, s.step.alpha0, s.step.tau, K)
    except DomainError as exc:
        return _na("thm3", inputs, str(exc))
    inputs.update(mu=c.mu, L0=c.L0, L1=c.L1, p=c.p, sigma=c.sigma_moment, dist0=dist0,
                  gamma=s.clip.gamma, alpha0=s.step.alpha0, tau=s.step.tau, C=t3.C)
    if not t3.applicable:
        return _na("thm3", inputs, f"recursion exponent {t3.recursion_exponent:g} or rate {t3.rate_exponent:g} out of range")
    dead = res.mask_diverged()
    i0 = np.searchsorted(res.record_ks, base)
    i1 = np.searchsorted(res.record_ks, base + 1)
    e0 = np.where(dead[:, i0], np.inf, res.dist[:, i0] ** 2)
    e1 = np.where(dead[:, i1], np.inf, res.dist[:, i1] ** 2)
    rhs = t3.recursion_rhs(e0, base[None, :])
    verdicts, mean, se = _stat_verdicts(e1 - rhs)

    js = np.searchsorted(res.record_ks, slope_ks)
    mean_sq = np.where(dead[:, js], np.inf, res.dist[:, js] ** 2).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = float(np.polyfit(np.log(slope_ks), np.log(mean_sq), 1)[0]) if np.all(np.isfinite(mean_sq)) else math.nan
    env = t3.envelope[slope_ks - 1]
    env_ok = bool(np.all(mean_sq[slope_ks >= start] <= env[slope_ks >= start]))
    return BoundReport(
        "thm3", inputs, [int(k) for k in base], {"bound": rhs.mean(axis=0)},
        {"value": e1.mean(axis=0), "diff_mean": mean, "diff_se": se},
        verdicts, required_fraction=0.95,
        checks={"slope": bool(slope <= -t3.rate_exponent + slope_slack), "envelope": env_ok},
        summary={"slope": slope, "predicted_rate": t3.rate_exponent, "slope_slack": slope_slack,
                 "slope_ks": slope_ks, "mean_dist_sq": mean_sq, "envelope": env, "burn_in_k": start},
        notes=["recursion verdicts allow two standard errors; slope is the least-squares fit of log mean "
               "dist^2 against log k over the last decade"],
    )


def _region_L(inst, radius: float):
    if isinstance(inst, PhaseRetrieval):
        return inst.lipschitz_on_ball(radius), "region"
    if inst.constants.L is not None:
        return inst.constants.L, "global"
    return None, None


def verify_thm5(cfg: ExperimentConfig, kstar_draws: int = 1000, chunk: int = 20000, **_) -> BoundReport:
    inputs = _base_inputs(cfg)
    s = cfg.schedules
    if cfg.algorithm != "clipped-shb" or s.momentum.kind != "coupled" or s.step.kind != "constant" \
            or s.clip.kind != "constant" or s.batch.kind != "unit":
        return _na("thm5", inputs, "needs clipped SHB with constant step and threshold, coupled momentum, unit batches")
    inst = problem_for_trial(cfg, 0)
    if not cfg.shared_data:
        return _na("thm5", inputs, "needs data shared across trials")
    rho = inst.constants.rho or 0.0
    if rho <= 0 and (cfg.moreau is None or cfg.moreau.lam is None):
        return _na("thm5", inputs, "convex instance: set moreau.lam explicitly")
    settings = cfg.moreau
    mcfg = (settings.resolve(inst) if settings is not None else MoreauConfig.for_problem(inst, tol_prox=1e-2))
    K = horizon(s, inst.epoch_size, cfg.max_epochs, cfg.max_iters)
    alpha = s.step.alpha0
    alpha0 = alpha * math.sqrt(K)
    nu = s.momentum.nu
    gamma = s.clip.gamma

    sim = simulate(cfg, None, np.arange(K + 1), keep_iterates=True)
    res = sim.result
    T = res.trials
    radius = float(np.max(np.linalg.norm(np.nan_to_num(res.snapshots, nan=0.0), axis=2)))
    L, scope = _region_L(inst, radius)
    Delta = float(np.mean(inst.value(res.x0))) - inst.f_star
    inputs.update(rho=rho, lam=mcfg.lam, tol_prox=mcfg.tol_prox, alpha=alpha, alpha0=alpha0, nu=nu, gamma=gamma,
                  K=K, Delta=Delta, L=L, L_scope=scope, visited_radius=radius, kstar_draws=kstar_draws)
    if L is None:
        return _na("thm5", inputs, "instance has no second-moment constant")
    if np.any(res.diverged_at >= 0):
        return _na("thm5", inputs, "a trial diverged")
    try:
        t5 = theory.thm5_bound(rho, Delta, gamma, L, nu, mcfg.lam, alpha0, K)
    except PreconditionError as exc:
        return _na("thm5", inputs, str(exc))

    gen = rngmod.generator(rngmod.seed_sequence(cfg.master_seed, rngmod.KSTAR))
    kstar = gen.choice(np.arange(1, K + 1), size=(T, kstar_draws), p=t5.weights)
    pairs, counts = np.unique(np.stack([np.repeat(np.arange(T), kstar_draws), kstar.ravel()]), axis=1, return_counts=True)
    pts = res.snapshots[pairs[0], pairs[1]]
    upper = np.empty(pts.shape[0])
    point = np.empty(pts.shape[0])
    worst_cert = 0.0
    for a in range(0, pts.shape[0], chunk):
        P = pts[a:a + chunk]
        pr = prox_batch(inst, mcfg, P)
        step = np.linalg.norm(P - pr.y, axis=1)
        point[a:a + chunk] = (step / mcfg.lam) ** 2
        upper[a:a + chunk] = ((step + pr.cert) / mcfg.lam) ** 2
        worst_cert = max(worst_cert, float(pr.cert.max()))
    weights = counts / (T * kstar_draws)
    est_upper = float(np.sum(weights * upper))
    est_point = float(np.sum(weights * point))

    simplified_setting = (
        math.isclose(alpha0, 1.0 / rho, rel_tol=1e-9) and math.isclose(nu, 1.0 / alpha0, rel_tol=1e-9)
        and math.isclose(mcfg.lam, 1.0 / (2.0 * rho), rel_tol=1e-9) and K >= 2
    )
    bound = t5.simplified if simplified_setting else t5.general
    notes = ["value is a certified upper estimate of E||grad f_lam(x_k*)||^2 that adds the prox "
             "certificate to the computed distance"]
    if scope == "region":
        notes.append("L holds on the ball containing every visited iterate")
    return BoundReport(
        "thm5", inputs, [K], {"bound": [bound], "general": [t5.general], "simplified": [t5.simplified]},
        {"value": [est_upper], "point_estimate": [est_point]},
        theory.verdicts_leq([est_upper], [bound]),
        summary={"bound_form": "simplified" if simplified_setting else "general", "C": t5.C, "xi": t5.xi,
                 "prox_points": int(pts.shape[0]), "max_cert": worst_cert},
        notes=notes,
    )


_VERIFIERS = {
    "example1": verify_example1,
    "prop1": verify_prop1,
    "thm1": verify_thm1,
    "thm3": verify_thm3,
    "thm5": verify_thm5,
}


def verify_bounds(cfg: ExperimentConfig, bound: str, **options) -> BoundReport:
    """Run ``cfg`` and check it against the selected bound.

    Configurations outside a bound's hypotheses give a not-applicable report.
    """
    if bound not in _VERIFIERS:
        raise ConfigError(f"bound must be one of {BOUNDS}, got {bound!r}")
    report = _VERIFIERS[bound](cfg, **options)
    log.info("%s: %s", bound, report.counts)
    return report


def thm5_config(problem, K: int, trials: int, master_seed: int = 0, radius_factor: float = 1.5,
                tol_prox: float = 1e-2) -> ExperimentConfig:
    """Clipped SHB set up for the weakly convex complexity bound.

    ``alpha0 = 1/rho``, constant step ``alpha0 / sqrt(K)``, ``nu = 1/alpha0``,
    ``lam = 1/(2 rho)`` and ``gamma = 2 L`` with ``L`` certified on a ball of
    ``radius_factor`` times the largest starting norm.
    """
    probe = ExperimentConfig(problem=problem, trials=trials, master_seed=master_seed, max_iters=K,
                             algorithm="sgd", schedules=ScheduleSet())
    inst = problem_for_trial(probe, 0)
    rho = inst.constants.rho
    if not rho > 0:
        raise ConfigError("this setting ties alpha0 and lam to rho, which must be positive")
    alpha0 = 1.0 / rho
    r0 = max(float(np.linalg.norm(start_point(probe, inst, t))) for t in range(trials))
    L, _ = _region_L(inst, radius_factor * r0)
    schedules = ScheduleSet(
        step=StepSchedule("constant", alpha0 / math.sqrt(K)),
        clip=ClipSchedule("constant", 2.0 * L),
        momentum=MomentumSchedule("coupled", nu=1.0 / alpha0),
        batch=BatchSchedule("unit"),
    )
    return replace(probe, algorithm="clipped-shb", schedules=schedules,
                   moreau=MoreauSettings(lam=None, tol_prox=tol_prox, max_inner=100_000))
