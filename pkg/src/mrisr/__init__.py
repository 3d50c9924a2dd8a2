"""Single-image super-resolution for brain-MRI-style grayscale images.

The pipeline classifies measurement-domain patches into smooth / texture /
edge classes, codes each patch against a per-class coupled dictionary under
sparsity and nonlocal self-similarity constraints, and refines the
assembled image by iterative back-projection.
"""

from .classify import (
    ClassifierConfig,
    PatchClass,
    activity_feature,
    classify_patch,
    covariance_linearity_check,
    covariance_trace_ratio,
    measure_patch,
    measurement_matrix_for,
)
from .cs import (
    MeasurementMatrix,
    SparseCode,
    gaussian_matrix,
    ista_solve,
    omp_solve,
    ric_estimate,
)
from .dictionary import (
    DictionaryPair,
    TrainingPair,
    build_training_set,
    load_dictionary,
    lr_feature_operator,
    save_dictionary,
    train_dictionary_pair,
)
from .image import (
    DegradationModel,
    Image,
    bicubic_resample,
    degrade,
    gaussian_kernel,
    luma_extract,
    luma_merge,
    modcrop,
)
from .metrics import mse, psnr, ssim
from .patches import Patch, PatchGrid, aggregate_patches, extract_patches
from .phantom import LabeledPhantom, phantom
from .reconstruct import (
    ReconConfig,
    ibp_refine,
    joint_sparse_code,
    super_resolve,
    super_resolve_detailed,
    synthesize_patch,
)
from .selfsim import SearchConfig, SimilarSet, gamma_weights, nl_weight, spiral_search

__version__ = "0.1.0"
