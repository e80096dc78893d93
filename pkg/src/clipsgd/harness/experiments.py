"""Seeded multi-trial experiments and their aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError
from ..metrics import Trace, epoch_to_eps_from_gaps
from ..problems import Problem, build_problem, initial_point, sample_stream
from .config import ExperimentConfig
from .engine import EngineResult, epoch_checkpoints, horizon, run_engine


def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile: the ``ceil(pct/100 * N)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return math.nan
    rank = max(1, math.ceil(pct / 100.0 * v.size))
    return float(v[rank - 1])


def summarize(values) -> tuple[float, float, float]:
    """``(median, p05, p95)``; the median averages the two middle values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    return float(np.median(v)), nearest_rank(v, 5), nearest_rank(v, 95)


def problem_for_trial(cfg: ExperimentConfig, trial: int) -> Problem:
    key = rngmod.seed_sequence(cfg.master_seed, rngmod.DATA, None if cfg.shared_data else trial)
    return build_problem(cfg.problem, key)


def start_point(cfg: ExperimentConfig, inst: Problem, trial: int) -> np.ndarray:
    if cfg.x0 is not None:
        x0 = np.asarray(cfg.x0, dtype=np.float64)
        if x0.shape != (inst.n,):
            raise ConfigError(f"x0 has {x0.size} coordinates, problem dimension is {inst.n}")
        return x0
    return initial_point(inst, cfg.master_seed, trial)


@dataclass
class Simulation:
    """Engine output for a set of trials plus the epoch bookkeeping."""

    cfg: ExperimentConfig
    trials: list
    result: EngineResult
    epochs: np.ndarray
    epoch_ks: np.ndarray
    problem: Problem


def simulate(cfg: ExperimentConfig, trials: Optional[Sequence[int]] = None, record_ks=None, *,
             diag: bool = False, keep_iterates: bool = False) -> Simulation:
    """Run the given trials (default all) and record at ``record_ks`` plus epoch checkpoints."""
    trials = list(range(cfg.trials)) if trials is None else [int(t) for t in trials]
    probe = problem_for_trial(cfg, trials[0])
    K = horizon(cfg.schedules, probe.epoch_size, cfg.max_epochs, cfg.max_iters)
    epochs, epoch_ks = epoch_checkpoints(cfg.schedules, probe.epoch_size, K, cfg.max_epochs)
    ks = np.concatenate([[0], epoch_ks, np.asarray([] if record_ks is None else record_ks, dtype=np.int64)])
    diag_ks = np.arange(0, K + 1, cfg.diag_stride) if diag and cfg.moreau is not None else ()

    def one_batch(inst, batch_trials):
        x0 = np.stack([start_point(cfg, inst, t) for t in batch_trials])
        streams = [sample_stream(inst, cfg.master_seed, t) for t in batch_trials]
        moreau = cfg.moreau.resolve(inst) if len(diag_ks) else None
        ks_all = np.union1d(ks, diag_ks).astype(np.int64)
        return run_engine(inst, cfg.schedules, cfg.algorithm.endswith("shb"), x0, streams, K, ks_all,
                          diag_ks=diag_ks, moreau=moreau, keep_iterates=keep_iterates)

    if cfg.shared_data:
        res = one_batch(probe, trials)
    else:
        parts = [one_batch(probe if t == trials[0] else problem_for_trial(cfg, t), [t]) for t in trials]
        res = _stack(parts)
    return Simulation(cfg, trials, res, epochs, epoch_ks, probe)


def _stack(parts: list[EngineResult]) -> EngineResult:
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return EngineResult(
        record_ks=first.record_ks, fgap=cat("fgap"), dist=cat("dist"), dnorm=cat("dnorm"), ratio=cat("ratio"),
        gradsq=cat("gradsq"), Wk=cat("Wk"), Vk=cat("Vk"), alpha=first.alpha, gamma=first.gamma,
        batch=first.batch, draws_at=first.draws_at, diverged_at=cat("diverged_at"),
        divergence={k: np.concatenate([p.divergence[k] for p in parts]) for k in first.divergence},
        snapshots=None if first.snapshots is None else cat("snapshots"), x0=cat("x0"), K=first.K,
    )


def trace_from(res: EngineResult, row: int, ks=None) -> Trace:
    """Trace of one engine row, truncated at divergence (the diverged state is the last record)."""
    sel = np.ones(res.record_ks.size, bool) if ks is None else np.isin(res.record_ks, ks)
    d = int(res.diverged_at[row])
    if d >= 0:
        sel &= res.record_ks < d
    idx = np.flatnonzero(sel)
    cols = {
        "k": res.record_ks[idx], "fgap": res.fgap[row, idx], "dist": res.dist[row, idx],
        "dnorm": res.dnorm[row, idx], "alpha": res.alpha[idx], "gamma": res.gamma[idx],
        "batch": res.batch[idx], "Wk": res.Wk[row, idx], "Vk": res.Vk[row, idx],
        "moreau_gradsq": res.gradsq[row, idx], "diverged": np.zeros(idx.size, bool),
    }
    if d >= 0:
        cols = {name: list(v) for name, v in cols.items()}
        # schedule columns of this row are filled in by the caller
        extra = {
            "k": d, "fgap": res.divergence["fgap"][row], "dist": res.divergence["dist"][row],
            "dnorm": res.divergence["dnorm"][row], "alpha": np.nan, "gamma": np.nan, "batch": 0,
            "Wk": np.nan, "Vk": np.nan, "moreau_gradsq": np.nan, "diverged": True,
        }
        for name in cols:
            cols[name].append(extra[name])
    return Trace(**cols)


def run_trajectory(cfg: ExperimentConfig, trial: int = 0) -> Trace:
    """Single trial recorded every ``record_stride`` iterations, diagnostics every ``diag_stride``."""
    probe = problem_for_trial(cfg, trial)
    K = horizon(cfg.schedules, probe.epoch_size, cfg.max_epochs, cfg.max_iters)
    ks = np.arange(0, K + 1, cfg.record_stride)
    sim = simulate(cfg, [trial], ks, diag=cfg.moreau is not None)
    keep = np.union1d(ks, np.arange(0, K + 1, cfg.diag_stride) if cfg.moreau is not None else [])
    tr = trace_from(sim.result, 0, keep)
    _fill_divergence_schedule(tr, cfg)
    return tr


def _fill_divergence_schedule(tr: Trace, cfg: ExperimentConfig) -> None:
    if not tr.is_diverged:
        return
    v = cfg.schedules.values(int(tr.k[-1]))
    tr.alpha[-1] = v.alpha
    tr.gamma[-1] = np.nan if v.gamma is None else v.gamma
    tr.batch[-1] = v.batch


@dataclass
class AggregateResult:
    """Across-trial summaries at epoch checkpoints.

    ``metrics[name]`` holds ``median``, ``p05`` and ``p95`` lists aligned with
    ``epochs``; ``epoch_to_eps[eps]`` holds per-trial values (None when the
    target was never reached or the trial diverged).
    """

    epochs: list = field(default_factory=list)
    ks: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    epoch_to_eps: dict = field(default_factory=dict)
    divergence_count: int = 0
    trials: int = 0
    final_gap: list = field(default_factory=list)

    def eps_summary(self, eps: float) -> tuple[float, float, float]:
        vals = [math.inf if q is None else q for q in self.epoch_to_eps[eps]]
        return summarize(vals)

    @property
    def final_gap_median(self) -> float:
        return summarize(self.final_gap)[0]


def aggregate(sim: Simulation) -> AggregateResult:
    res = sim.result
    cols = np.searchsorted(res.record_ks, sim.epoch_ks)
    dead = res.mask_diverged()[:, cols]
    out = AggregateResult(epochs=[int(q) for q in sim.epochs], ks=[int(k) for k in sim.epoch_ks],
                          trials=res.trials, divergence_count=int(np.sum(res.diverged_at >= 0)))
    gaps = np.where(dead, np.inf, res.fgap[:, cols])
    series = {"fgap": gaps}
    if not np.all(np.isnan(res.dist)):
        series["dist"] = np.where(dead, np.inf, res.dist[:, cols])
    for name, arr in series.items():
        stats = [summarize(arr[:, j]) for j in range(arr.shape[1])]
        out.metrics[name] = {
            "median": [s[0] for s in stats], "p05": [s[1] for s in stats], "p95": [s[2] for s in stats],
        }
    for eps in sim.cfg.eps_list:
        out.epoch_to_eps[eps] = [
            None if res.diverged_at[t] >= 0 else epoch_to_eps_from_gaps(gaps[t], eps) for t in range(res.trials)
        ]
    if gaps.shape[1]:
        out.final_gap = [float(g) for g in gaps[:, -1]]
    else:
        out.final_gap = [math.inf if d >= 0 else float(g) for d, g in zip(res.diverged_at, res.fgap[:, 0])]
    return out


def run_trials(cfg: ExperimentConfig) -> AggregateResult:
    """All trials of ``cfg`` aggregated at epoch boundaries."""
    return aggregate(simulate(cfg))


@dataclass
class SweepRow:
    alpha0: float
    eps: Optional[float]
    median: float
    p05: float
    p95: float
    divergence_count: int
    trials: int
    final_gap_median: float


def sweep_initial_stepsize(cfg: ExperimentConfig, grid: Optional[Sequence[float]] = None) -> list[SweepRow]:
    """One :func:`run_trials` per initial stepsize; rows sorted by ``alpha0`` then ``eps``."""
    grid = sorted(cfg.alpha0_grid if grid is None else grid)
    if not grid:
        raise ConfigError("the initial-stepsize grid is empty")
    rows = []
    for a0 in grid:
        agg = run_trials(cfg.with_alpha0(a0))
        eps_list = list(cfg.eps_list) or [None]
        for eps in eps_list:
            med = p05 = p95 = math.nan
            if eps is not None:
                med, p05, p95 = agg.eps_summary(eps)
            rows.append(SweepRow(a0, eps, med, p05, p95, agg.divergence_count, agg.trials, agg.final_gap_median))
    return rows
