import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipsgd import (
    AbsRegressionSpec,
    BatchSchedule,
    ClipSchedule,
    ConfigError,
    DomainError,
    MomentumSchedule,
    OutputError,
    PhaseRetrievalSpec,
    QuarticSpec,
    ScheduleSet,
    StepSchedule,
)
from clipsgd.harness import (
    ExperimentConfig,
    MoreauSettings,
    emit,
    load_config,
    run_trajectory,
    run_trials,
    save_config,
    sweep_initial_stepsize,
    verify_bounds,
)
from clipsgd.harness.config import default_alpha0_grid
from clipsgd.harness.engine import cumulative_draws
from clipsgd.harness.experiments import AggregateResult, aggregate, nearest_rank, simulate, summarize
from clipsgd.harness.io import aggregate_from_json, parse_sweep_csv
from clipsgd.harness.verify import thm5_config
from clipsgd.metrics import Trace


def example1_cfg(trials=1, iters=50):
    return ExperimentConfig(problem=QuarticSpec(1.0, 0.0), algorithm="sgd",
                            schedules=ScheduleSet(step=StepSchedule("polynomial", 0.03, 1.0)),
                            trials=trials, max_iters=iters, x0=(10.0,))


def pr_cfg(algorithm="clipped-sgd", **kw):
    sched = ScheduleSet(step=StepSchedule("polynomial", 0.1, 0.5),
                        clip=ClipSchedule("constant", 10.0) if algorithm.startswith("clipped") else None,
                        momentum=MomentumSchedule.shb_preset(0.9) if algorithm.endswith("shb") else None)
    base = dict(problem=PhaseRetrievalSpec(m=40, n=4), algorithm=algorithm, schedules=sched,
                trials=6, max_epochs=5, eps_list=(0.25, 1e-3))
    base.update(kw)
    return ExperimentConfig(**base)


# -- config --------------------------------------------------------------


def test_config_roundtrip(tmp_path):
    cfg = pr_cfg("clipped-shb", alpha0_grid=(0.1, 1.0), moreau=MoreauSettings(lam=0.2), x0=tuple(range(4)),
                 shared_data=False, master_seed=7)
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg
    assert json.loads(cfg.to_json())["schema_version"] == 1


@pytest.mark.parametrize("mutate, msg", [
    (lambda d: d.update(colour="red"), "unknown config keys"),
    (lambda d: d["step"].update(warmup=3), "unknown keys in step"),
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d.pop("problem"), "problem section"),
    (lambda d: d.update(problem=[1]), "problem must be an object"),
    (lambda d: d["problem"].update(kind="logistic"), "problem kind"),
    (lambda d: d.update(momentum=None), "needs a momentum schedule"),
    (lambda d: d.update(trials=0), "trials"),
    (lambda d: d.update(alpha0_grid=[0.1, -1.0]), "grid"),
    (lambda d: d.update(eps_list=0.1), "eps_list must be a list"),
])
def test_config_rejections(mutate, msg):
    d = pr_cfg("clipped-shb").to_dict()
    mutate(d)
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig.from_dict(d)


def test_config_consistency_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig(algorithm="sgd", schedules=ScheduleSet(clip=ClipSchedule()))
    with pytest.raises(ConfigError):
        ExperimentConfig(algorithm="clipped-sgd", schedules=ScheduleSet())
    with pytest.raises(ConfigError):
        ExperimentConfig(algorithm="shb", schedules=ScheduleSet())
    with pytest.raises(ConfigError):
        ExperimentConfig(problem="quartic")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{not json")
    with pytest.raises(OutputError):
        load_config("/nonexistent/config.json")


def test_default_grid():
    g = default_alpha0_grid()
    assert len(g) == 15 and g[0] == 0.01 and g[-1] == 1.0
    for readable in (0.139, 0.268, 0.518):
        assert min(abs(a - readable) for a in g) < 5e-4
    assert np.allclose(np.diff(np.log(g)), math.log(100) / 14)


def test_shb_presets():
    assert MomentumSchedule.shb_preset(0.9).beta == 0.1
    assert MomentumSchedule.shb_preset(0.99).beta == 0.01


# -- trajectories --------------------------------------------------------


def test_noiseless_descent_is_monotone():
    cfg = ExperimentConfig(problem=QuarticSpec(1.0, 0.0), algorithm="clipped-sgd",
                           schedules=ScheduleSet(step=StepSchedule("constant", 0.01), clip=ClipSchedule("constant", 5.0)),
                           trials=1, max_iters=300, x0=(1.5,))
    tr = run_trajectory(cfg)
    assert len(tr.k) == 301 and not tr.is_diverged
    assert np.all(np.diff(tr.fgap) < 0)


def test_divergence_truncates_trace():
    tr = run_trajectory(example1_cfg())
    assert tr.is_diverged
    assert tr.diverged[-1] and not np.any(tr.diverged[:-1])
    assert tr.k[-1] <= 50 and np.all(np.diff(tr.k) == 1)
    assert math.isclose(tr.alpha[-1], 0.03 / (tr.k[-1] + 1), rel_tol=1e-15)
    assert np.all(np.isfinite(tr.fgap[:-1]))


def test_trajectories_are_deterministic():
    cfg = pr_cfg("clipped-shb", max_epochs=3)
    a, b = run_trajectory(cfg, 2), run_trajectory(cfg, 2)
    assert a == b and a.to_csv() == b.to_csv()
    assert a != run_trajectory(cfg, 3)


def test_single_trial_matches_batched_row():
    cfg = pr_cfg(max_epochs=2)
    sim = simulate(cfg)
    tr = run_trajectory(cfg, 4)
    cols = np.searchsorted(tr.k, sim.result.record_ks)
    assert np.array_equal(tr.fgap[cols], sim.result.fgap[4])


def test_per_trial_data_mode_differs_from_shared():
    shared = simulate(pr_cfg(max_epochs=1, trials=2))
    own = simulate(pr_cfg(max_epochs=1, trials=2, shared_data=False))
    assert own.result.fgap.shape == shared.result.fgap.shape
    assert not np.array_equal(own.result.fgap[1], shared.result.fgap[1])


def test_x0_dimension_checked():
    with pytest.raises(ConfigError):
        run_trajectory(pr_cfg(x0=(1.0, 2.0)))


# -- aggregation ---------------------------------------------------------


def _sorted_rank(values, pct):
    s = sorted(values)
    return s[max(1, math.ceil(pct * len(s) / 100)) - 1]


def test_summary_of_one_to_thirty():
    vals = list(range(30, 0, -1))
    med, lo, hi = summarize(vals)
    assert med == 15.5
    assert (lo, hi) == (_sorted_rank(vals, 5), _sorted_rank(vals, 95)) == (2, 29)


@given(st.lists(st.floats(-1e6, 1e6) | st.just(math.inf), min_size=1, max_size=60), st.floats(0.1, 100))
def test_nearest_rank_matches_sort_oracle(vals, pct):
    assert nearest_rank(vals, pct) == _sorted_rank(vals, pct)
    med, lo, hi = summarize(vals)
    assert lo <= med <= hi or math.isnan(med)


def test_deterministic_trials_have_zero_width():
    cfg = ExperimentConfig(problem=QuarticSpec(1.0, 0.0), algorithm="clipped-sgd",
                           schedules=ScheduleSet(step=StepSchedule("polynomial", 0.1, 0.5), clip=ClipSchedule()),
                           trials=30, max_epochs=20, x0=(1.2,))
    agg = run_trials(cfg)
    m = agg.metrics["fgap"]
    assert m["p05"] == m["p95"] == m["median"]
    assert agg.divergence_count == 0 and agg.trials == 30


def test_example1_divergence_count():
    agg = run_trials(example1_cfg(trials=30))
    assert agg.divergence_count == 30
    assert all(math.isinf(g) for g in agg.final_gap)


def test_diverged_trials_count_as_infinite_gap():
    cfg = pr_cfg("sgd", schedules=ScheduleSet(step=StepSchedule("polynomial", 50.0, 0.5)), trials=5, max_epochs=10)
    sim = simulate(cfg)
    agg = aggregate(sim)
    dead = sim.result.diverged_at >= 0
    assert agg.divergence_count == int(dead.sum()) >= 1
    assert math.isinf(agg.metrics["fgap"]["p95"][-1])
    for t in np.flatnonzero(dead):
        assert math.isinf(agg.final_gap[t])
        assert all(agg.epoch_to_eps[eps][t] is None for eps in cfg.eps_list)


def test_epoch_accounting():
    for batch, m in ((BatchSchedule("unit"), 40), (BatchSchedule("fixed", 4), 40), (BatchSchedule("inverse-step"), 40)):
        sched = ScheduleSet(step=StepSchedule("polynomial", 0.5, 0.5), clip=ClipSchedule(), batch=batch)
        cfg = pr_cfg(schedules=sched, max_epochs=4, trials=2)
        sim = simulate(cfg)
        res = sim.result
        cols = np.searchsorted(res.record_ks, sim.epoch_ks)
        drawn = res.draws_at[cols]
        c = cumulative_draws(cfg.schedules, res.K)
        for q, k, d in zip(sim.epochs, sim.epoch_ks, drawn):
            # draws used before iteration k complete epoch q, and k is the first such iteration
            assert d == c[k] and d >= q * m and c[k - 1] < q * m
            if batch.kind != "inverse-step":
                assert d == q * m


def test_trial_permutation_invariance():
    cfg = pr_cfg("clipped-shb", max_epochs=4)
    perm = [3, 0, 5, 1, 4, 2]
    a = aggregate(simulate(cfg))
    b = aggregate(simulate(cfg, trials=perm))
    assert a.metrics == b.metrics and a.divergence_count == b.divergence_count
    assert sorted(a.final_gap) == sorted(b.final_gap)
    for eps in cfg.eps_list:
        assert sorted(a.epoch_to_eps[eps], key=str) == sorted(b.epoch_to_eps[eps], key=str)


# -- sweep and emit ------------------------------------------------------


def test_sweep_rows_and_roundtrip(tmp_path):
    cfg = pr_cfg(trials=3, max_epochs=3)
    rows = sweep_initial_stepsize(cfg, [1.0, 0.1, 0.3])
    assert len(rows) == 3 * len(cfg.eps_list)
    assert [r.alpha0 for r in rows] == sorted(r.alpha0 for r in rows)
    emit(rows, tmp_path / "s.csv")
    assert _nan_equal(parse_sweep_csv((tmp_path / "s.csv").read_text()), rows)
    emit(rows, tmp_path / "s.json", fmt="json")
    assert len(json.loads((tmp_path / "s.json").read_text())) == len(rows)
    with pytest.raises(ConfigError):
        sweep_initial_stepsize(cfg)


def _nan_equal(a, b):
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        for f in ("alpha0", "eps", "median", "p05", "p95", "divergence_count", "trials", "final_gap_median"):
            u, v = getattr(x, f), getattr(y, f)
            if not (u == v or (isinstance(u, float) and math.isnan(u) and math.isnan(v))):
                return False
    return True


def test_single_point_sweep_equals_run_trials():
    cfg = pr_cfg(trials=3, max_epochs=3)
    (r, _) = sweep_initial_stepsize(cfg, [0.1])
    agg = run_trials(cfg.with_alpha0(0.1))
    assert (r.median, r.p05, r.p95) == agg.eps_summary(0.25)
    assert r.divergence_count == agg.divergence_count and r.final_gap_median == agg.final_gap_median


def test_emit_aggregate_roundtrip(tmp_path):
    agg = run_trials(pr_cfg(trials=3, max_epochs=3))
    emit(agg, tmp_path / "a.json", fmt="json")
    back = aggregate_from_json((tmp_path / "a.json").read_text())
    assert back.epochs == agg.epochs and back.ks == agg.ks and back.metrics == agg.metrics
    assert back.epoch_to_eps == agg.epoch_to_eps and back.final_gap == agg.final_gap
    text = emit(agg, tmp_path / "a.csv").read_text()
    assert text.splitlines()[0] == "epoch,k,metric,median,p05,p95"
    assert emit(agg, tmp_path / "b.csv").read_text() == text


def test_emit_empty_aggregate_and_errors(tmp_path):
    assert emit(AggregateResult(), tmp_path / "e.csv").read_text() == "epoch,k,metric,median,p05,p95\n"
    with pytest.raises(DomainError):
        emit(AggregateResult(), tmp_path / "e.x", fmt="xml")
    with pytest.raises(DomainError):
        emit({"a": 1}, tmp_path / "e.csv")
    with pytest.raises(OutputError, match="missing"):
        emit(AggregateResult(), tmp_path / "missing" / "e.csv")


def test_emit_trace_uses_seventeen_digits(tmp_path):
    tr = Trace(k=[0], fgap=[1 / 3], dnorm=[0.1], alpha=[0.1], batch=[1], diverged=[0])
    text = emit(tr, tmp_path / "t.csv").read_text()
    assert "0.33333333333333331" in text
    assert Trace.from_csv(text) == tr


# -- verification plumbing -----------------------------------------------


def test_verify_not_applicable_paths():
    assert not verify_bounds(pr_cfg(), "example1").applicable
    assert not verify_bounds(pr_cfg(), "prop1").applicable
    coupled = ExperimentConfig(problem=QuarticSpec(1.0, 1.0), algorithm="clipped-sgd",
                               schedules=ScheduleSet(step=StepSchedule("polynomial", 1.0, 0.75),
                                                     clip=ClipSchedule("coupled", 1.0)), trials=4, max_iters=20)
    rep = verify_bounds(coupled, "thm1")
    assert not rep.applicable and rep.notes
    assert not verify_bounds(coupled, "thm5").applicable
    with pytest.raises(ConfigError):
        verify_bounds(coupled, "thm9")


def test_verify_small_runs():
    rep = verify_bounds(example1_cfg(), "example1")
    assert rep.passed and rep.kind == "lower"
    coupled = ExperimentConfig(problem=QuarticSpec(1.0, 1.0), algorithm="clipped-sgd",
                               schedules=ScheduleSet(step=StepSchedule("polynomial", 1.0, 0.75),
                                                     clip=ClipSchedule("coupled", 1.0)),
                               trials=200, max_iters=100)
    rep = verify_bounds(coupled, "prop1", stride=10)
    assert rep.passed and rep.checkpoints[0] == 10


def test_thm5_config_preconditions():
    cfg = thm5_config(PhaseRetrievalSpec(m=30, n=3, p_fail=0.0), 16, 3)
    s = cfg.schedules
    assert cfg.algorithm == "clipped-shb" and s.step.kind == "constant" and s.momentum.kind == "coupled"
    rep = verify_bounds(cfg, "thm5")
    assert rep.applicable and rep.summary["bound_form"] == "simplified"
    with pytest.raises(ConfigError):
        thm5_config(AbsRegressionSpec(m=30, n=3), 16, 3)
