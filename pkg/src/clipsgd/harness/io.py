"""Deterministic CSV / JSON serialization of harness results."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, fields
from pathlib import Path

from ..errors import DomainError, OutputError
from ..metrics import Trace, fmt_float
from ..theory import BoundReport, _jsonable
from .experiments import AggregateResult, SweepRow

AGGREGATE_COLUMNS = ("epoch", "k", "metric", "median", "p05", "p95")
SWEEP_COLUMNS = ("alpha0", "eps", "epochs_median", "epochs_p05", "epochs_p95",
                 "divergence_count", "trials", "final_gap_median")


def _num(text: str) -> float:
    return math.nan if text == "" else float(text)


def aggregate_rows(agg: AggregateResult) -> list[list]:
    rows = []
    for name in sorted(agg.metrics):
        m = agg.metrics[name]
        for j, (q, k) in enumerate(zip(agg.epochs, agg.ks)):
            rows.append([q, k, name, fmt_float(m["median"][j]), fmt_float(m["p05"][j]), fmt_float(m["p95"][j])])
    for eps in sorted(agg.epoch_to_eps):
        med, lo, hi = agg.eps_summary(eps)
        rows.append(["", "", f"epochs_to_eps:{fmt_float(eps)}", fmt_float(med), fmt_float(lo), fmt_float(hi)])
    if agg.trials:
        rows.append(["", "", "divergence_count", agg.divergence_count, "", ""])
    return rows


def sweep_rows(rows: list[SweepRow]) -> list[list]:
    return [[fmt_float(r.alpha0), "" if r.eps is None else fmt_float(r.eps), fmt_float(r.median),
             fmt_float(r.p05), fmt_float(r.p95), r.divergence_count, r.trials, fmt_float(r.final_gap_median)]
            for r in rows]


def parse_sweep_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    if tuple(next(reader)) != SWEEP_COLUMNS:
        raise DomainError("not a sweep table")
    return [SweepRow(float(a), None if e == "" else float(e), _num(m), _num(lo), _num(hi), int(dc), int(t), _num(fg))
            for a, e, m, lo, hi, dc, t, fg in reader]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    out.writerows(rows)
    return buf.getvalue()


def to_jsonable(results):
    if isinstance(results, BoundReport):
        return results.to_dict()
    if isinstance(results, Trace):
        return {"columns": {f.name: _jsonable(getattr(results, f.name)) for f in fields(Trace)}}
    if isinstance(results, AggregateResult):
        d = asdict(results)
        d["epoch_to_eps"] = [{"eps": eps, "per_trial": v} for eps, v in sorted(results.epoch_to_eps.items())]
        return _jsonable(d)
    if isinstance(results, list) and all(isinstance(r, SweepRow) for r in results):
        return [_jsonable(asdict(r)) for r in results]
    raise DomainError(f"cannot serialize {type(results).__name__}")


def _restore(v):
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    if v is None:
        return math.nan
    return v


def aggregate_from_json(text: str) -> AggregateResult:
    d = json.loads(text)
    metrics = {name: {s: [_restore(x) for x in vals] for s, vals in m.items()} for name, m in d["metrics"].items()}
    eps = {e["eps"]: e["per_trial"] for e in d["epoch_to_eps"]}
    return AggregateResult(d["epochs"], d["ks"], metrics, eps, d["divergence_count"], d["trials"],
                           [_restore(x) for x in d["final_gap"]])


def emit(results, path, fmt: str = "csv") -> Path:
    """Write ``results`` to ``path`` as CSV or JSON.

    Traces, aggregates and sweep tables have CSV forms; every result type has a
    JSON form. Floats carry 17 significant digits.
    """
    path = Path(path)
    if fmt == "json":
        text = json.dumps(to_jsonable(results), indent=2) + "\n"
    elif fmt == "csv":
        if isinstance(results, Trace):
            text = results.to_csv()
        elif isinstance(results, AggregateResult):
            text = _csv_text(AGGREGATE_COLUMNS, aggregate_rows(results))
        elif isinstance(results, list) and all(isinstance(r, SweepRow) for r in results):
            text = _csv_text(SWEEP_COLUMNS, sweep_rows(results))
        else:
            raise DomainError(f"no CSV form for {type(results).__name__}")
    else:
        raise DomainError(f"unknown output format {fmt!r}")
    try:
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
    return path
