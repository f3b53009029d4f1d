"""pdmotor: motor-state assessment from wrist-worn accelerometer windows.

Classifies one-minute triaxial acceleration windows into OFF/ON/DYS
motor states with an ensemble of small strided CNNs trained on disjoint
patient subsets, aggregates predictions over models and over time, ranks
them by confidence, and explains them with class activation maps. Ships
a seeded synthetic patient generator for end-to-end validation.
"""

from .aggregation import (
    AGGREGATION_MODES,
    CONFIDENCE_MODES,
    EnsemblePrediction,
    SmoothingKernel,
    aggregate,
    confidence_rank,
    interpolate_confident,
    smooth,
)
from .cam import ClassActivationMap, compute_cam, export_overlay, upsample_cam
from .dataset import (
    FoldPlan,
    PatientRecord,
    class_distribution,
    consecutive_agreement,
    eligible_models,
    kfold_windows,
    loso_folds,
    sample_patient_subsets,
)
from .errors import PdmotorError
from .estimators import (
    DiffInitEnsemble,
    DropoutEnsemble,
    MotorStateCnn,
    PatientSubsetEnsemble,
)
from .experiments import ExperimentConfig, run_experiment
from .network import NetConfig, NetworkParams, build, finite_difference_check, forward, predict, train
from .persist import load_model, save_model
from .preprocess import (
    NoMotionPolicy,
    RawStream,
    SensorWindow,
    filter_no_motion,
    magnitude_variance,
    resample,
    windowize,
)
from .states import DYS, OFF, ON, STATE_NAMES, UNLABELED
from .synth import SynthProfile, export_corpus, generate_corpus, make_profiles, synth_generate

__version__ = "0.1.0"
