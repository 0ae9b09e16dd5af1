"""Learned descent maps for nonlinear least squares, with baselines and
benchmark suites."""

from .core import (
    DescentSequence,
    DescentStep,
    Mode,
    NlsProblem,
    SmoothMap,
    apply_sequence,
    dm_update,
    dm_update_biased,
)
from .baselines import DescentRun, RunStatus, gauss_newton_minimize, newton_minimize
from .online import OnlineState, init_online, rls_ingest
from .theory import (
    ContractionCertificate,
    Neighborhood,
    contraction_certify,
    frobenius_dm_bound,
    generic_dm_1d,
    lipschitz_anchored,
    monotone_anchored_1d,
    monotone_operator_check,
)
from .trainer import SamplingSpec, TrainerConfig, TrainingSet, sample_initials, solve_stage, train

__all__ = [
    "ContractionCertificate",
    "DescentRun",
    "DescentSequence",
    "DescentStep",
    "Mode",
    "Neighborhood",
    "NlsProblem",
    "OnlineState",
    "RunStatus",
    "SamplingSpec",
    "SmoothMap",
    "TrainerConfig",
    "TrainingSet",
    "apply_sequence",
    "contraction_certify",
    "dm_update",
    "dm_update_biased",
    "frobenius_dm_bound",
    "gauss_newton_minimize",
    "generic_dm_1d",
    "init_online",
    "lipschitz_anchored",
    "monotone_anchored_1d",
    "monotone_operator_check",
    "newton_minimize",
    "rls_ingest",
    "sample_initials",
    "solve_stage",
    "train",
]

__version__ = "0.1.0"
