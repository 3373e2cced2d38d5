"""Low-rank thermography with James-Stein eigenvector correction and basis embedding."""

from .classify import (
    ClassificationReport,
    Dataset,
    GaussianNaiveBayes,
    KNearestNeighbors,
    RandomForest,
    cohen_kappa,
    cross_validate,
    roc_curve,
)
from .embedding import EmbeddedImage, EmbeddingParams, embed
from .factorize import (
    CCIPCT,
    NMF,
    PCT,
    ConvexNMF,
    DeepSemiNMF,
    FactorizationResult,
    FactorizeConfig,
    SemiNMF,
    SparseNMF,
    SparsePCT,
    reconstruction_error,
)
from .jse import CovSpectrum, JseResult, jse_shrink, js_mean, sample_cov_spectrum
from .pipeline import PipelineConfig, ThermomicsExtractor, run_comparison, run_pipeline
from .seqio import (
    HeatMatrix,
    PhantomSpec,
    ThermalSequence,
    build_heat_matrix,
    generate_phantom,
    load_sequence,
    normalize_by_reference,
)
from .thermomics import FEATURE_NAMES, SpectralReducer, extract_features, spectral_embed

__version__ = "0.1.0"
