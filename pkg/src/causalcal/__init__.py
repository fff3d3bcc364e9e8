"""Calibration of heterogeneous-effect predictors against nuisance-dependent losses."""

from .calibrators import (
    CalibratorModel,
    binning_fit,
    bucket_minimize,
    ensure_distinct_levels,
    erm_calibrate,
    linear_fit,
    make_strict,
    pava,
    platt_fit,
    umb_edges,
)
from .data import Dataset, FoldAssignment, Observation, split_folds
from .learners import ArmPredictor, Learner, Predictor
from .losses import (
    BoundLoss,
    LossProperties,
    corrected_pinball_qut,
    measure_convexity,
    pinball_qut,
    squared_pseudo_loss,
)
from .metrics import (
    BinnedCalReport,
    binned_cal_error,
    binned_qut_error,
    cross_error,
    exact_cal_error,
    orthogonality_slope,
    risk_delta,
    theorem_bound_check,
)
from .nuisance import LearnerBundle, NuisanceSet, cross_fit, fit_nuisances, fit_qut_auxiliary
from .oracles import DiscreteOracle, GaussianQutOracle, cate_oracle, late_oracle, qut_oracle
from .pipelines import (
    PipelineConfig,
    calibrate_conditional_cross,
    calibrate_conditional_split,
    calibrate_universal_cross,
    calibrate_universal_split,
    three_way_umb,
)
from .pseudo import PseudoSample, chi_acd, chi_cate, chi_late, chi_late_iv, make_pseudo_dataset
from .rng import Rng, SeedStream, derive_stream
from .synth import DiscreteCateDgp, QutDgp, run_cate_experiment, run_quantile_experiment, sample_qut, true_qut_quantile

__version__ = "0.1.0"
