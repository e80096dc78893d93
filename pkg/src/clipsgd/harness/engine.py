"""Vectorised trajectory engine.

All trials of one configuration advance together as the rows of a ``(T, n)``
array. Each row owns its oracle stream, and every operation is row-wise, so a
trial produces the same numbers whether it runs alone or in a batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import rng as rngmod
from ..clipping import DIVERGENCE_CUTOFF, ScheduleSet, clip_rows
from ..errors import UnsupportedMetricError
from ..metrics import MoreauConfig, prox_batch
from ..problems import Problem

log = logging.getLogger(__name__)


def _bad_rows(X: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return ~np.all(np.isfinite(X), axis=1) | np.any(np.abs(X) > DIVERGENCE_CUTOFF, axis=1)


def cumulative_draws(schedules: ScheduleSet, K: int) -> np.ndarray:
    """``c[k] = sum_{i<k} m_i`` for ``k = 0..K``."""
    batch = schedules.table(K)["batch"] if K else np.zeros(0, dtype=np.int64)
    return np.concatenate([[0], np.cumsum(batch)])


def horizon(schedules: ScheduleSet, epoch_size: int, max_epochs: int, max_iters: Optional[int]) -> int:
    """Iteration count: ``max_iters`` if given, else the first ``k`` that completes ``max_epochs`` epochs."""
    if max_iters is not None:
        return int(max_iters)
    target = max_epochs * epoch_size
    K = max(target, 1)
    while True:
        c = cumulative_draws(schedules, K)
        if c[-1] >= target:
            return int(np.searchsorted(c, target, side="left"))
        K *= 2


def epoch_checkpoints(schedules: ScheduleSet, epoch_size: int, K: int, max_epochs: int) -> tuple[np.ndarray, np.ndarray]:
    """Epoch numbers ``q`` and the first iteration ``k`` with ``q * epoch_size`` draws used."""
    c = cumulative_draws(schedules, K)
    qs = np.arange(1, max_epochs + 1)
    ks = np.searchsorted(c, qs * epoch_size, side="left")
    keep = ks <= K
    return qs[keep], ks[keep]


@dataclass
class EngineResult:
    """Per-record arrays have shape ``(T, R)``; NaN marks absent values."""

    record_ks: np.ndarray
    fgap: np.ndarray
    dist: np.ndarray
    dnorm: np.ndarray
    ratio: np.ndarray
    gradsq: np.ndarray
    Wk: np.ndarray
    Vk: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    batch: np.ndarray
    draws_at: np.ndarray
    diverged_at: np.ndarray
    divergence: dict
    snapshots: Optional[np.ndarray]
    x0: np.ndarray
    K: int

    @property
    def trials(self) -> int:
        return self.fgap.shape[0]

    def mask_diverged(self) -> np.ndarray:
        """``(T, R)`` True where the trial had diverged at or before that record."""
        d = self.diverged_at
        return (d[:, None] >= 0) & (self.record_ks[None, :] >= d[:, None])


def run_engine(
    inst: Problem,
    schedules: ScheduleSet,
    momentum: bool,
    x0: np.ndarray,
    streams: Sequence[rngmod.SampleStream],
    K: int,
    record_ks,
    *,
    diag_ks=(),
    moreau: Optional[MoreauConfig] = None,
    keep_iterates: bool = False,
) -> EngineResult:
    """Run ``K`` iterations for every row of ``x0``.

    The state ``x_k`` is recorded for ``k`` in ``record_ks``; with clipped SGD
    ``dnorm`` and ``ratio`` refer to the direction computed at ``x_k``.
    Envelope diagnostics are computed at ``diag_ks`` when ``moreau`` is given.
    """
    X = np.array(x0, dtype=np.float64, copy=True)
    T, n = X.shape
    record_ks = np.unique(np.asarray(record_ks, dtype=np.int64))
    record_ks = record_ks[(record_ks >= 0) & (record_ks <= K)]
    R = record_ks.size
    pos = {int(k): j for j, k in enumerate(record_ks)}
    diag = set(int(k) for k in diag_ks) if moreau is not None else set()

    tab = schedules.table(K + 1)
    alpha, batch = tab["alpha"], tab["batch"]
    gamma, beta = tab["gamma"], tab["beta"]
    nu = schedules.momentum.nu if momentum and schedules.momentum.kind == "coupled" else None

    nan = lambda: np.full((T, R), np.nan)  # noqa: E731
    fgap, dist, dnorm, ratio, gradsq, Wk, Vk = (nan() for _ in range(7))
    draws_at = np.zeros(R, dtype=np.int64)
    snaps = np.full((T, R, n), np.nan) if keep_iterates else None
    diverged_at = np.full(T, -1, dtype=np.int64)
    divergence = {"fgap": np.full(T, np.nan), "dist": np.full(T, np.nan), "dnorm": np.full(T, np.nan)}
    alive = np.ones(T, dtype=bool)

    has_dist = True
    try:
        inst.dist_to_opt(X[:1])
    except UnsupportedMetricError:
        has_dist = False

    kind = "normal" if inst.sample_kind == "normal" else "index"
    draws = rngmod.BatchDraws(list(streams), kind)

    def sample(Y, m):
        before = draws.drawn
        with np.errstate(over="ignore", invalid="ignore"):
            return inst.sample_subgrad(Y, draws.take(int(m))), before

    def direction(G, k):
        if gamma is None:
            return G, np.ones(T)
        with np.errstate(over="ignore", invalid="ignore"):
            return clip_rows(G, gamma[k])

    def record(k, D, scale, drawn):
        j = pos[k]
        draws_at[j] = drawn
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            return
        Xa = X[rows]
        fgap[rows, j] = inst.gap(Xa)
        if has_dist:
            dist[rows, j] = inst.dist_to_opt(Xa)
        dnorm[rows, j] = np.sqrt(np.einsum("ij,ij->i", D[rows], D[rows]))
        ratio[rows, j] = scale[rows]
        if snaps is not None:
            snaps[rows, j] = Xa
        if k in diag:
            res = prox_batch(inst, moreau, Xa)
            lam = moreau.lam
            grad = (Xa - res.y) / lam
            gsq = np.einsum("ij,ij->i", grad, grad)
            gradsq[rows, j] = gsq
            if nu is not None:
                fx = inst.value(Xa)
                Da = D[rows]
                dd = np.einsum("ij,ij->i", Da, Da)
                diff = Da - grad
                W = (np.einsum("ij,ij->i", diff, diff) - gsq) / (2 * nu) + fx
                f_lam = inst.value(res.y) + np.einsum("ij,ij->i", Xa - res.y, Xa - res.y) / (2 * lam)
                Wk[rows, j] = W
                Vk[rows, j] = (f_lam + W + fx / (lam * nu)
                               + ((1 - beta[k]) / (2 * lam * nu**2) + alpha[k] / (lam * nu)) * dd)

    if momentum:
        G, drawn = sample(X, batch[0])
        D, scale = direction(G, 0)

    for k in range(K + 1):
        if not momentum:
            G, drawn = sample(X, batch[k])
            D, scale = direction(G, k)
        if k in pos:
            record(k, D, scale, drawn)
        if k == K:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            X_new = X - alpha[k] * D
        bad = _bad_rows(X_new)
        if momentum:
            G, drawn = sample(np.where(bad[:, None], X, X_new), batch[k + 1])
            with np.errstate(over="ignore", invalid="ignore"):
                Z = (1.0 - beta[k]) * D + beta[k] * G
            D_new, scale = direction(Z, k + 1)
            bad |= _bad_rows(D_new)
        newly = alive & bad
        if newly.any():
            rows = np.flatnonzero(newly)
            diverged_at[rows] = k + 1
            with np.errstate(over="ignore", invalid="ignore"):
                Xd = X_new[rows]
                finite = np.all(np.isfinite(Xd), axis=1)
                gap = np.full(rows.size, np.inf)
                if finite.any():
                    gap[finite] = inst.gap(Xd[finite])
                divergence["fgap"][rows] = np.where(np.isnan(gap), np.inf, gap)
                if has_dist:
                    divergence["dist"][rows] = inst.dist_to_opt(Xd)
                Dd = D_new[rows] if momentum else D[rows]
                divergence["dnorm"][rows] = np.sqrt(np.einsum("ij,ij->i", Dd, Dd))
            alive &= ~newly
            log.debug("k=%d: %d trial(s) diverged", k + 1, rows.size)
        X = np.where(alive[:, None], X_new, X)
        if momentum:
            D = np.where(alive[:, None], D_new, 0.0)
        if not alive.any():
            break

    gam = np.full(R, np.nan) if gamma is None else gamma[record_ks]
    return EngineResult(
        record_ks=record_ks, fgap=fgap, dist=dist if has_dist else np.full((T, R), np.nan),
        dnorm=dnorm, ratio=ratio, gradsq=gradsq, Wk=Wk, Vk=Vk,
        alpha=alpha[record_ks], gamma=gam, batch=batch[record_ks], draws_at=draws_at,
        diverged_at=diverged_at, divergence=divergence, snapshots=snaps,
        x0=np.array(x0, dtype=np.float64), K=K,
    )
