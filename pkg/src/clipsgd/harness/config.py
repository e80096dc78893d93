"""Experiment configuration and its JSON file format (schema version 1)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..clipping import BatchSchedule, ClipSchedule, MomentumSchedule, ScheduleSet, StepSchedule
from ..errors import ConfigError, OutputError
from ..metrics import MoreauConfig
from ..problems import AbsRegressionSpec, PhaseRetrievalSpec, QuarticSpec

SCHEMA_VERSION = 1
ALGORITHMS = ("sgd", "clipped-sgd", "shb", "clipped-shb")

_PROBLEM_KINDS = {
    "quartic": QuarticSpec,
    "phase_retrieval": PhaseRetrievalSpec,
    "abs_regression": AbsRegressionSpec,
}
_SPEC_KIND = {v: k for k, v in _PROBLEM_KINDS.items()}


def default_alpha0_grid(points: int = 15, start: float = 0.01, stop: float = 1.0) -> list[float]:
    """Log-spaced grid ending at ``stop``."""
    if points == 1:
        return [stop]
    r = math.log(stop / start) / (points - 1)
    return [start * math.exp(r * i) for i in range(points - 1)] + [stop]


@dataclass(frozen=True)
class MoreauSettings:
    """Envelope settings; ``lam=None`` means ``1 / (2 rho)`` of the instance."""

    lam: Optional[float] = None
    tol_prox: float = 1e-6
    max_inner: int = 100_000

    def resolve(self, inst) -> MoreauConfig:
        return MoreauConfig.for_problem(inst, lam=self.lam, tol_prox=self.tol_prox, max_inner=self.max_inner)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: object = field(default_factory=QuarticSpec)
    algorithm: str = "clipped-sgd"
    schedules: ScheduleSet = field(default_factory=lambda: ScheduleSet(clip=ClipSchedule()))
    trials: int = 30
    max_epochs: int = 500
    max_iters: Optional[int] = None
    master_seed: int = 0
    alpha0_grid: tuple = ()
    eps_list: tuple = ()
    diag_stride: int = 10
    record_stride: int = 1
    moreau: Optional[MoreauSettings] = None
    shared_data: bool = True
    x0: Optional[tuple] = None

    def __post_init__(self):
        if type(self.problem) not in _SPEC_KIND:
            raise ConfigError(f"unsupported problem spec {type(self.problem).__name__}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        clipped = self.algorithm.startswith("clipped")
        if clipped and self.schedules.clip is None:
            raise ConfigError(f"{self.algorithm} needs a clip schedule")
        if not clipped and self.schedules.clip is not None:
            raise ConfigError(f"{self.algorithm} must not carry a clip schedule")
        if self.algorithm.endswith("shb") and self.schedules.momentum is None:
            raise ConfigError(f"{self.algorithm} needs a momentum schedule")
        if self.algorithm.endswith("sgd") and self.schedules.momentum is not None:
            raise ConfigError(f"{self.algorithm} does not use a momentum schedule")
        for name in ("trials", "max_epochs", "diag_stride", "record_stride"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.max_iters is not None and (not isinstance(self.max_iters, int) or self.max_iters < 1):
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters!r}")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError(f"master_seed must be a non-negative integer, got {self.master_seed!r}")
        if any(not a > 0 for a in self.alpha0_grid):
            raise ConfigError("alpha0 grid values must be positive")
        if any(not e > 0 for e in self.eps_list):
            raise ConfigError("eps values must be positive")
        object.__setattr__(self, "alpha0_grid", tuple(float(a) for a in self.alpha0_grid))
        object.__setattr__(self, "eps_list", tuple(float(e) for e in self.eps_list))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def with_alpha0(self, alpha0: float) -> "ExperimentConfig":
        step = replace(self.schedules.step, alpha0=alpha0)
        try:
            return replace(self, schedules=replace(self.schedules, step=step))
        except ConfigError as exc:
            raise ConfigError(f"alpha0 = {alpha0:g}: {exc}") from exc

    # -- dict / JSON ------------------------------------------------------

    def to_dict(self) -> dict:
        s = self.schedules
        prob = {"kind": _SPEC_KIND[type(self.problem)]}
        prob.update({f.name: getattr(self.problem, f.name) for f in fields(self.problem)})
        return {
            "schema_version": SCHEMA_VERSION,
            "problem": prob,
            "algorithm": self.algorithm,
            "step": _fields(s.step),
            "clip": None if s.clip is None else _fields(s.clip),
            "momentum": None if s.momentum is None else _fields(s.momentum),
            "batch": _fields(s.batch),
            "trials": self.trials,
            "max_epochs": self.max_epochs,
            "max_iters": self.max_iters,
            "master_seed": self.master_seed,
            "alpha0_grid": list(self.alpha0_grid),
            "eps_list": list(self.eps_list),
            "diag_stride": self.diag_stride,
            "record_stride": self.record_stride,
            "moreau": None if self.moreau is None else _fields(self.moreau),
            "shared_data": self.shared_data,
            "x0": None if self.x0 is None else list(self.x0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        known = {f.name for f in fields(cls)} - {"problem", "schedules"}
        known |= {"problem", "step", "clip", "momentum", "batch"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "problem" not in d:
            raise ConfigError("config needs a problem section")
        prob = d.pop("problem")
        if not isinstance(prob, dict):
            raise ConfigError("problem must be an object")
        prob = dict(prob)
        kind = prob.pop("kind", None)
        if kind not in _PROBLEM_KINDS:
            raise ConfigError(f"problem kind must be one of {sorted(_PROBLEM_KINDS)}, got {kind!r}")
        problem = _build(_PROBLEM_KINDS[kind], prob, "problem")
        step = _build(StepSchedule, d.pop("step", {}), "step")
        clip = d.pop("clip", None)
        mom = d.pop("momentum", None)
        batch = _build(BatchSchedule, d.pop("batch", {}), "batch")
        schedules = ScheduleSet(
            step=step,
            clip=None if clip is None else _build(ClipSchedule, clip, "clip"),
            momentum=None if mom is None else _build(MomentumSchedule, mom, "momentum"),
            batch=batch,
        )
        moreau = d.pop("moreau", None)
        if moreau is not None:
            d["moreau"] = _build(MoreauSettings, moreau, "moreau")
        for key in ("alpha0_grid", "eps_list", "x0"):
            if d.get(key) is not None:
                if not isinstance(d[key], list):
                    raise ConfigError(f"{key} must be a list")
                d[key] = tuple(d[key])
        return cls(problem=problem, schedules=schedules, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


def _fields(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _build(cls, data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_json(text)


def save_config(cfg: ExperimentConfig, path) -> None:
    try:
        Path(path).write_text(cfg.to_json())
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
