"""Steering of neutral stochastic delay integro-differential equations driven by fBm."""

from .dynamics import (
    DelayPair,
    HistoryFunction,
    MildContext,
    NeutralLipschitzError,
    Nonlinearities,
    PicardDivergence,
    apply_mild_map,
    evaluate_delayed,
    picard_solve,
)
from .fractional_noise import HurstParam, SamplePath, TimeGrid, sample_fbm_path
from .resolvent import MemoryKernel, ResolventTable, solve_resolvent, variation_of_constants
from .scenario import ScenarioConfig, build_heat_scenario, run_steering_experiment, run_validation_suite
from .spectral_space import SpectralModel, VectorPath, sample_qfbm, stochastic_convolution
from .steering import (
    InputOperator,
    SteeringProblem,
    SteeringResult,
    assemble_w,
    contraction_gamma,
    find_t1,
    invert_w,
    phi_iterate,
    synthesize_control,
)

__version__ = "0.1.0"
