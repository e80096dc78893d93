"""Clipped stochastic subgradient methods with bound verification."""

__version__ = "0.1.0"

from .clipping import (
    BatchSchedule,
    ClipSchedule,
    IterState,
    MomentumSchedule,
    ScheduleSet,
    StepSchedule,
    clip_vec,
    schedule_values,
    sgd_step,
    shb_init,
    shb_step,
)
from .errors import (
    ClipSGDError,
    ConfigError,
    DivergedError,
    DomainError,
    OutputError,
    PreconditionError,
    UnsupportedMetricError,
)
from .metrics import MoreauConfig, Trace, epoch_to_eps, lyapunov_V, lyapunov_W, moreau_grad, prox_point
from .problems import (
    AbsRegressionSpec,
    PhaseRetrievalSpec,
    QuarticSpec,
    gen_abs_regression,
    gen_conditioned_matrix,
    gen_phase_retrieval,
    make_quartic,
    stochastic_subgrad,
)
from .theory import BoundReport
