"""Power-based direction-of-arrival estimation from microphone directivity."""

from .crlb import CrlbCurve, SnrSpec, crlb, crlb_curve, crlb_values, fim
from .directivity import FourierBasis, basis_row, evaluate, evaluate_derivative, wrap_angle
from .estimator import (
    DoaEstimate,
    PowerDOAEstimator,
    angular_error,
    estimate,
    estimate_many,
    predict_power,
)
from .exceptions import (
    InvalidInputError,
    ModelDegenerateError,
    NoSignalError,
    OrderSelectionError,
    PowerDoaError,
    UnidentifiableDirectionError,
)
from .power import (
    NoiseStats,
    PowerVector,
    SignalFrame,
    compute_power,
    decompose_power,
    power_noise_distribution,
    sample_power_noise,
)
from .scene import (
    GroundTruthArray,
    ScenarioConfig,
    cardioid_array,
    generate_observation,
    generate_training_set,
    run_benchmark,
    synthesize_frames,
)
from .training import (
    DirectivityModel,
    DirectivityRegressor,
    FitReport,
    SolverConfig,
    TrainingSet,
    fit,
    select_order,
)

__version__ = "0.1.0"
