"""Gaussian-mixture encoding of CNN feature maps, a from-scratch random
forest on the resulting descriptors, and the evaluation protocols around
them (splits, cross-validation, ROC/AUC, chi-square comparison)."""

from .descriptors import (
    Descriptor,
    EncodeError,
    FeatureMatrix,
    encode_dataset,
    encode_sample,
    read_matrix_csv,
    write_matrix_csv,
)
from .evaluation import (
    ChiSquareResult,
    ConfusionCounts,
    CvResult,
    EvalReport,
    EvaluationError,
    Metrics,
    RocCurve,
    chi_square_compare,
    compute_metrics,
    evaluate_scores,
    kfold_cv,
    kfold_splits,
    mcnemar_compare,
    roc_auc,
    split_train_val_test,
)
from .fmap import (
    FeatureMap,
    FeatureMapSet,
    FmapError,
    Layer,
    Manifest,
    build_manifest,
    read_container,
    read_container_file,
    write_container,
    write_container_file,
)
from .forest import (
    ForestConfig,
    ForestError,
    ForestModel,
    read_model,
    rf_predict,
    rf_predict_proba,
    rf_predict_proba_batch,
    rf_train,
    write_model,
)
from .gmm import Component, EmConfig, MixtureModel, fit_gmm_em, gaussian_pdf
from .pca import PcaBasis, PcaError, fit_layer_bases, fit_pca, pca_encode

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
