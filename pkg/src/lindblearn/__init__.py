"""Learning Lindblad master equations from photon-counting data."""

from .engine import (
    DegenerateSteadyStateWarning,
    SteadyStateError,
    build_liouvillian,
    liouvillian,
    matrix_exp,
    propagate,
    steady_state,
    unvectorize,
    vectorize,
)
from .forward import (
    G2,
    LT,
    ExperimentTrace,
    NoiseModel,
    SimulationSettings,
    UnphysicalModelError,
    attach_weights,
    g2_trace,
    lifetime_trace,
    log_likelihood,
    synth_data,
)
from .library import (
    DARK,
    EMISSION,
    EXCITATION,
    BasisTerm,
    OperatorLibrary,
    ProcessOperator,
    build_library,
    classify_optical,
    enumerate_basis,
    operator_from_label,
)
from .model import (
    Model,
    PriorConfig,
    canonical_signature,
    model_prior_log,
    preset_independent_emitters,
    preset_single_emitter,
    preset_symmetric_two_emitter,
    rate_prior_log,
)
from .sampler import (
    ChainRecord,
    MoveTable,
    SamplerConfig,
    Sampler,
    TraceLikelihood,
    FlatLikelihood,
    fit_rates,
    run_chain,
    run_parallel,
)

__version__ = "0.1.0"
