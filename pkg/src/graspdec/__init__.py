"""Offline EEG grasp decoding: band-power spatial-pattern features with a
linear SVM, a windowed slow-potential baseline, and a synthetic forward
model for end-to-end validation."""

from .core import (
    CLASS_NAMES,
    ChannelMontage,
    Dataset,
    Phase,
    Trial,
    default_montage,
    derive_seed,
    load_dataset,
    save_dataset,
    segment_phase,
    split_train_test,
)
from .csp import (
    CspModel,
    csp_patterns,
    fit_csp,
    fit_csp_from_covariances,
    log_variance_features,
    project,
    sym_eig,
    trial_covariance,
    whitening_transform,
)
from .dsp import (
    BAND_ORDER,
    BANDS,
    IirFilter,
    band_filter,
    design_bandpass,
    design_lowpass,
    mrcp_lowpass,
    preprocess,
    zero_phase,
)
from .errors import ConfigError, DataError, GraspdecError, NumericalError
from .features import (
    FbcspPipeline,
    FeatureCache,
    MrcpPipeline,
    extract_fbcsp,
    extract_mrcp,
    grand_average_mrcp,
    mrcp_window_bounds,
)
from .ml import (
    CvReport,
    FittedClassifier,
    LinearSvmModel,
    OvrModel,
    Standardizer,
    accuracy,
    confusion_matrix,
    kfold_cv,
    paired_t_test,
    scenario_name,
    stratified_folds,
    train_fbcsp_binary,
    train_linear_svm,
    train_mrcp_binary,
    train_ovr,
)
from .synth import (
    GroundTruth,
    SourceSpec,
    SynthConfig,
    chance_band,
    default_config,
    focal_pattern,
    generate_dataset,
    load_ground_truth,
    save_ground_truth,
)
from .analysis import (
    ImportanceProfile,
    TemporalCurve,
    csp_trajectory,
    export_importance_csv,
    export_temporal_csv,
    export_topomap,
    export_trajectory,
    feature_importance,
    pre_post_ttest,
    temporal_evolution,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
