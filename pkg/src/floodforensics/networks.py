"""Model zoo: hybrid detector/localizer and the mask-conditioned baselines.

The hybrid network runs a convolutional backbone, then splits into
  * a detection branch: global average pool + one fully connected layer
    to a single sigmoid score, and
  * a localization branch: 3x3 conv -> ReLU -> 1x1 conv -> sigmoid,
    bilinearly upsampled by the backbone stride back to input resolution.

Baselines reuse the backbone + detection branch; the ``cat`` variant takes a
4-channel input (mask appended as the fourth band), the ``mul`` variant takes
the unit-domain image multiplied by the mask before normalization.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import resnet50

from .errors import InvalidConfigError, MissingMaskError, ShapeError
from .preprocess import PreprocessConfig, normalize_batch

BACKBONE_FAMILIES = ("residual50", "residual_tiny", "xception_like")
BASELINE_KINDS = ("plain", "cat", "mul")

# (output_stride, feature_channels) used when a BackboneSpec leaves them unset
_FAMILY_DEFAULTS = {
    "residual50": (32, 2048),
    "residual_tiny": (4, 16),
    "xception_like": (32, 512),
}


@dataclass(frozen=True)
class BackboneSpec:
    family: str = "residual50"
    output_stride: int | None = None
    feature_channels: int | None = None

    def __post_init__(self):
        if self.family not in BACKBONE_FAMILIES:
            raise InvalidConfigError(
                f"unknown backbone family {self.family!r}, expected one of {BACKBONE_FAMILIES}"
            )

    def resolved(self):
        stride_default, channels_default = _FAMILY_DEFAULTS[self.family]
        stride = self.output_stride if self.output_stride is not None else stride_default
        channels = (
            self.feature_channels if self.feature_channels is not None else channels_default
        )
        if stride < 1 or (stride & (stride - 1)) != 0:
            raise InvalidConfigError(f"output_stride must be a power of two, got {stride}")
        if channels < 1:
            raise InvalidConfigError(f"feature_channels must be positive, got {channels}")
        if self.family == "residual50" and (stride != 32 or channels != 2048):
            raise InvalidConfigError("residual50 is fixed at stride 32 / 2048 channels")
        return BackboneSpec(self.family, stride, channels)


class Residual50Backbone(nn.Module):
    """Standard 50-layer residual network trimmed of its classifier head."""

    def __init__(self, in_channels=3):
        super().__init__()
        net = resnet50(weights=None)
        if in_channels != 3:
            net.conv1 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2,
                                  padding=3, bias=False)
        self.body = nn.Sequential(
            net.conv1, net.bn1, net.relu, net.maxpool,
            net.layer1, net.layer2, net.layer3, net.layer4,
        )
        self.out_channels = 2048
        self.stride = 32

    def forward(self, x):
        return self.body(x)


class _BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class ResidualTinyBackbone(nn.Module):
    """Reduced-depth residual backbone for CPU-scale tests.

    The stem downsamples by 2; each additional power of two in the requested
    stride adds one stride-2 basic block, followed by a final stride-1 block
    at the full channel width.
    """

    def __init__(self, output_stride=4, feature_channels=16, in_channels=3):
        super().__init__()
        n_down = int(output_stride).bit_length() - 1  # log2(stride)
        if 2 ** n_down != output_stride or n_down < 1:
            raise InvalidConfigError(f"output_stride must be a power of two >= 2, got {output_stride}")
        stem_channels = max(feature_channels // 2, 4)
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, stem_channels, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(stem_channels),
            nn.ReLU(inplace=True),
        )
        blocks = []
        c = stem_channels
        for _ in range(n_down - 1):
            blocks.append(_BasicBlock(c, feature_channels, stride=2))
            c = feature_channels
        blocks.append(_BasicBlock(c, feature_channels, stride=1))
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = feature_channels
        self.stride = output_stride

    def forward(self, x):
        return self.blocks(self.stem(x))


class _SeparableConv(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.depthwise = nn.Conv2d(cin, cin, 3, padding=1, groups=cin, bias=False)
        self.pointwise = nn.Conv2d(cin, cout, 1, bias=False)
        self.bn = nn.BatchNorm2d(cout)

    def forward(self, x):
        return self.bn(self.pointwise(self.depthwise(x)))


class _XceptionBlock(nn.Module):
    """Two separable convs with a strided residual shortcut."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.sep1 = _SeparableConv(cin, cout)
        self.sep2 = _SeparableConv(cout, cout)
        self.pool = nn.MaxPool2d(3, stride=stride, padding=1) if stride != 1 else None
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = self.sep1(F.relu(x))
        out = self.sep2(F.relu(out))
        if self.pool is not None:
            out = self.pool(out)
        return out + identity


class XceptionLikeBackbone(nn.Module):
    """Depthwise-separable classifier backbone of moderate depth, stride 32."""

    def __init__(self, feature_channels=512, in_channels=3):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, 32, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, padding=1, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
        )
        self.entry = nn.Sequential(
            _XceptionBlock(64, 128, stride=2),
            _XceptionBlock(128, 256, stride=2),
            _XceptionBlock(256, 256, stride=2),
        )
        self.middle = nn.Sequential(
            _XceptionBlock(256, 256),
            _XceptionBlock(256, 256),
            _XceptionBlock(256, 256),
        )
        self.exit = _XceptionBlock(256, feature_channels, stride=2)
        self.out_channels = feature_channels
        self.stride = 32

    def forward(self, x):
        x = self.stem(x)
        x = self.entry(x)
        x = self.middle(x)
        return F.relu(self.exit(x))


def build_backbone(spec: BackboneSpec, in_channels=3) -> nn.Module:
    spec = spec.resolved()
    if spec.family == "residual50":
        return Residual50Backbone(in_channels=in_channels)
    if spec.family == "residual_tiny":
        return ResidualTinyBackbone(
            output_stride=spec.output_stride,
            feature_channels=spec.feature_channels,
            in_channels=in_channels,
        )
    return XceptionLikeBackbone(
        feature_channels=spec.feature_channels, in_channels=in_channels
    )


class DetectionHead(nn.Module):
    """Global average pool over the feature map, then one linear layer."""

    def __init__(self, in_channels):
        super().__init__()
        self.fc = nn.Linear(in_channels, 1)

    def forward(self, features):
        pooled = features.mean(dim=(2, 3))
        return self.fc(pooled).squeeze(1)


class LocalizationHead(nn.Module):
    """3x3 conv -> ReLU -> 1x1 conv producing a single-channel logit map."""

    def __init__(self, in_channels, head_channels=256):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, head_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(head_channels, 1, 1)

    def forward(self, features):
        return self.conv2(F.relu(self.conv1(features)))


def _check_input(x, stride):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected an N x 3 x H x W batch, got {tuple(x.shape)}")
    if x.shape[2] % stride or x.shape[3] % stride:
        raise InvalidConfigError(
            f"input {x.shape[2]}x{x.shape[3]} is not divisible by the backbone stride {stride}"
        )


class HybridNet(nn.Module):
    """Shared backbone feeding a detection score and a localization map."""

    def __init__(self, backbone_spec: BackboneSpec = BackboneSpec(), head_channels=256):
        super().__init__()
        spec = backbone_spec.resolved()
        self.backbone_spec = spec
        self.head_channels = head_channels
        self.backbone = build_backbone(spec)
        self.detection_head = DetectionHead(self.backbone.out_channels)
        self.localization_head = LocalizationHead(self.backbone.out_channels, head_channels)

    def features_and_logit(self, x, mask=None):
        _check_input(x, self.backbone.stride)
        features = self.backbone(x)
        return features, self.detection_head(features)

    def forward(self, x, detach_localization=False):
        """Return ``(scores, maps)``: sigmoid scores (N,) and maps (N, H, W)."""
        features, det_logit = self.features_and_logit(x)
        loc_input = features.detach() if detach_localization else features
        loc_logit = self.localization_head(loc_input)
        loc_map = torch.sigmoid(loc_logit)
        loc_map = F.interpolate(
            loc_map, scale_factor=self.backbone.stride,
            mode="bilinear", align_corners=False,
        )
        return torch.sigmoid(det_logit), loc_map.squeeze(1)


class BaselineNet(nn.Module):
    """Detector-only model: backbone + detection head, no localization branch."""

    def __init__(self, kind="plain", backbone_spec: BackboneSpec = BackboneSpec()):
        super().__init__()
        if kind not in BASELINE_KINDS:
            raise InvalidConfigError(f"unknown baseline kind {kind!r}, expected {BASELINE_KINDS}")
        spec = backbone_spec.resolved()
        self.kind = kind
        self.backbone_spec = spec
        self.in_channels = 4 if kind == "cat" else 3
        self.backbone = build_backbone(spec, in_channels=self.in_channels)
        self.detection_head = DetectionHead(self.backbone.out_channels)

    def features_and_logit(self, x, mask=None):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected N x {self.in_channels} x H x W, got {tuple(x.shape)}"
            )
        if x.shape[2] % self.backbone.stride or x.shape[3] % self.backbone.stride:
            raise InvalidConfigError(
                f"input {x.shape[2]}x{x.shape[3]} is not divisible by stride {self.backbone.stride}"
            )
        features = self.backbone(x)
        return features, self.detection_head(features)

    def forward(self, x):
        _, logit = self.features_and_logit(x)
        return torch.sigmoid(logit)


def build_hybrid(backbone: BackboneSpec = BackboneSpec(), head_channels=256) -> HybridNet:
    return HybridNet(backbone, head_channels=head_channels)


def build_baseline(kind, backbone: BackboneSpec = BackboneSpec()) -> BaselineNet:
    return BaselineNet(kind, backbone)


def forward_hybrid(model: HybridNet, batch):
    """Spec-level wrapper: normalized batch in, (scores, maps) out."""
    return model(batch)


def prepare_baseline_input(kind, batch, mask=None, cfg: PreprocessConfig = None):
    """Assemble the model input for a baseline variant.

    ``plain``: batch is already normalized, mask ignored.
    ``mul``:   batch is unit-domain; multiply by the mask, then normalize.
    ``cat``:   batch is normalized; the {0, 1} mask is appended un-normalized
               as a fourth channel.
    """
    if kind == "plain":
        return batch
    if kind == "cat" and batch.shape[1] == 4:
        return batch  # mask already concatenated by the caller
    if mask is None:
        raise MissingMaskError(f"baseline kind {kind!r} requires a mask")
    if mask.ndim == 3:
        mask = mask.unsqueeze(1)
    if mask.shape[0] != batch.shape[0] or mask.shape[2:] != batch.shape[2:]:
        raise ShapeError(
            f"mask shape {tuple(mask.shape)} does not match batch {tuple(batch.shape)}"
        )
    mask = mask.to(batch.dtype)
    if kind == "mul":
        cfg = cfg or PreprocessConfig()
        return normalize_batch(batch * mask, cfg)
    if kind == "cat":
        return torch.cat([batch, mask], dim=1)
    raise InvalidConfigError(f"unknown baseline kind {kind!r}")


def forward_baseline(model: BaselineNet, batch, mask=None, cfg: PreprocessConfig = None):
    """Run a baseline with the variant's mask conditioning applied."""
    x = prepare_baseline_input(model.kind, batch, mask, cfg)
    return model(x)
