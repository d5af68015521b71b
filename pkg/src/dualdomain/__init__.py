"""Dual-domain image synthesis by latent optimisation over paired generators."""

from .autodiff import (
    Gradients,
    NonFiniteInputError,
    ShapeMismatchError,
    Tape,
    TapeConsumedError,
    Tensor,
    backward,
)
from .config import ConfigError, ExperimentConfig, derive_seed, load_config
from .features import (
    BackboneSpec,
    FeatureStack,
    backbone_catalog,
    extract_features,
    generator_intermediate_features,
    get_backbone,
)
from .generators import (
    AnalyticGenerator,
    GeneratorPair,
    LatentCode,
    NeuralGenerator,
    make_analytic_pair,
    make_neural_pair,
    sample_latent,
)
from .losses import (
    crossover_loss,
    domain_loss,
    naive_crossover,
    perceptual_loss,
    total_loss,
)
from .metrics import FeatureSample, MetricReport, fid, matrix_sqrt_psd, psnr, ssim
from .optim import AdamState, adam_step
from .segmentation import (
    Mask,
    MaskPyramid,
    build_mask_pyramid,
    segment_analytic,
    segment_threshold,
)
from .synthesis import DDSConfig, LossWeights, NonFiniteLossError, RunRecord, run_dds

__version__ = "0.1.0"
