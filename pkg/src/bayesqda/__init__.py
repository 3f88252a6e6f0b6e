"""Bayesian quadratic discriminant analysis with meta-learned
Normal-Inverse-Wishart priors for few-shot classification."""

from .classifier import (
    MODE_FB,
    MODE_LDA,
    MODE_MAP,
    Prediction,
    QdaModel,
    add_class,
    fit,
    predict,
    predict_batch,
    predict_fb,
    predict_map,
)
from .calibration import CalibrationRecord, CalibrationReport, ece, fit_temperature
from .episodes import (
    Episode,
    FeatureDataset,
    SyntheticTaskSpec,
    generate_synthetic,
    normalize_cl2n,
    sample_episode,
)
from .harness import EvalResult, evaluate, evaluate_incremental
from .io import (
    PriorCheckpoint,
    load_checkpoint,
    read_feature_file,
    save_checkpoint,
    write_feature_file,
)
from .niw import (
    ClassPosterior,
    GaussianParams,
    NiwPrior,
    default_prior,
    map_estimate,
    mle_qda,
    niw_posterior,
)
from .numerics import cholesky, log_sum_exp, mvn_logpdf, mvt_logpdf
from .training import (
    PriorGradient,
    TrainerConfig,
    apply_update,
    episode_loss,
    grad,
    meta_train,
)

__version__ = "0.1.0"
