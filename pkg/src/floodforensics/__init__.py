"""Detection and localization of GAN-manipulated flood images.

A hybrid detector whose backbone features feed both a whole-image
classification head and a pixel-wise localization head, plus the
mask-conditioned baselines, the evaluation metrics, the image-processing
robustness attacks and a CAM explainer.
"""

from .errors import (
    CheckpointMismatchError,
    ConfigError,
    DecodeError,
    DivergenceError,
    FloodForensicsError,
    InvalidConfigError,
    ManifestEmptyError,
    MetricUndefinedError,
    MissingMaskError,
    ShapeError,
    SplitTooSmallError,
    TrainConfigError,
    UnsupportedModelError,
)
from .estimator import FloodImageDetector
from .explain import Heatmap, cam_map, render_panel
from .inference import evaluate, score_records
from .losses import LossWeights, detection_loss, localization_loss, total_loss
from .manifest import SampleRecord, build_manifest, load_manifest, save_manifest, split_manifest
from .metrics import (
    EvalReport,
    auc,
    balanced_pixel_accuracy,
    iou,
    report_from_scores,
    threshold_decision,
)
from .networks import (
    BackboneSpec,
    BaselineNet,
    HybridNet,
    build_baseline,
    build_hybrid,
    forward_baseline,
    forward_hybrid,
)
from .preprocess import PreprocessConfig, augment, denormalize, load_and_preprocess, normalize
from .robustness import (
    AttackSpec,
    apply_attack,
    gaussian_blur,
    gaussian_noise,
    jpeg_compress,
    median_filter,
    resize_down,
)
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, select_best, train

__version__ = "0.1.0"
