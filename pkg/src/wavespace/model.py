"""Fully-convolutional position-coding networks and their training loss.

A PositionNet maps a binary skeleton image (batch, 1, h, w) to two
per-pixel class-logit maps, one per mask direction. Backbones expose
named intermediate activations ("block1", "block2", ...) and the shared
decoder output ("decoder", the last hidden layer before the heads).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

BACKBONES = ("vgg16_like", "resnet50_like", "tiny")
HEADS = ("fcn8_like", "dilated")
DECODER_CHANNELS = 64


class ConfigError(ValueError):
    """Raised for unknown or inconsistent model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "vgg16_like"
    head_arch: str = "fcn8_like"
    num_classes_h: int = 21
    num_classes_v: int = 21
    input_size: tuple[int, int] = (224, 224)
    init: str = "random"
    init_path: str | None = None

    @classmethod
    def for_masks(cls, mask_h, mask_v, **kwargs) -> "ModelConfig":
        """Config whose head widths match a mask pair (classes 0..max_class)."""
        size = mask_h.shape
        return cls(
            num_classes_h=mask_h.max_class + 1,
            num_classes_v=mask_v.max_class + 1,
            input_size=size,
            **kwargs,
        )


def _bilinear_kernel(channels: int, kernel_size: int) -> torch.Tensor:
    """Per-channel bilinear upsampling kernel for transposed convolutions."""
    factor = (kernel_size + 1) // 2
    center = factor - 1 if kernel_size % 2 == 1 else factor - 0.5
    og = np.ogrid[:kernel_size, :kernel_size]
    filt = (1 - abs(og[0] - center) / factor) * (1 - abs(og[1] - center) / factor)
    weight = np.zeros((channels, channels, kernel_size, kernel_size), dtype=np.float32)
    weight[range(channels), range(channels)] = filt
    return torch.from_numpy(weight)


class _VGGTrunk(nn.Module):
    """VGG16-style conv stack: five blocks of 3x3 convs with 2x2 pools."""

    PLAN = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))

    def __init__(self, dilated: bool = False):
        super().__init__()
        self.dilated = dilated
        self.blocks = nn.ModuleList()
        self.pools = nn.ModuleList()
        c_in = 1
        for idx, (width, n_convs) in enumerate(self.PLAN):
            convs = []
            dilation = 2 if dilated and idx == 4 else 1
            for _ in range(n_convs):
                convs += [
                    nn.Conv2d(c_in, width, 3, padding=dilation, dilation=dilation),
                    nn.ReLU(inplace=True),
                ]
                c_in = width
            self.blocks.append(nn.Sequential(*convs))
            if dilated and idx >= 3:
                self.pools.append(nn.MaxPool2d(3, stride=1, padding=1))
            else:
                self.pools.append(nn.MaxPool2d(2, stride=2))
        self.tap_channels = {f"block{i + 1}": plan[0] for i, plan in enumerate(self.PLAN)}
        self.tap_strides = (
            {"block1": 2, "block2": 4, "block3": 8, "block4": 8, "block5": 8}
            if dilated
            else {"block1": 2, "block2": 4, "block3": 8, "block4": 16, "block5": 32}
        )

    def forward(self, x):
        taps = {}
        for i, (block, pool) in enumerate(zip(self.blocks, self.pools)):
            x = pool(block(x))
            taps[f"block{i + 1}"] = x
        return taps


class _TinyTrunk(nn.Module):
    """Shallow 3-conv backbone: the no-wave-pattern ablation arm.

    The dilated third conv stretches the receptive field past the image
    border from every pixel; without that, absolute position (which can
    only be read off the zero padding) is undecodable away from the edges.
    """

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 32, 7, stride=2, padding=3)
        self.conv2 = nn.Conv2d(32, 64, 7, stride=2, padding=3)
        self.conv3 = nn.Conv2d(64, 64, 7, stride=1, padding=12, dilation=4)
        self.tap_channels = {"block1": 32, "block2": 64, "block3": 64}
        self.tap_strides = {"block1": 2, "block2": 4, "block3": 4}

    def forward(self, x):
        taps = {}
        x = F.relu(self.conv1(x))
        taps["block1"] = x
        x = F.relu(self.conv2(x))
        taps["block2"] = x
        x = F.relu(self.conv3(x))
        taps["block3"] = x
        return taps


class _Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, c_in, planes, stride=1, dilation=1, downsample=None):
        super().__init__()
        width = planes
        self.conv1 = nn.Conv2d(c_in, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(
            width, width, 3, stride=stride, padding=dilation, dilation=dilation,
            bias=False,
        )
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, planes * self.expansion, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * self.expansion)
        self.downsample = downsample

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + identity)


class _ResNet50Trunk(nn.Module):
    """ResNet50-style trunk (bottleneck blocks 3-4-6-3)."""

    def __init__(self, dilated: bool = False):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(1, 64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        self.c_in = 64
        self.layer1 = self._make_layer(64, 3, stride=1)
        self.layer2 = self._make_layer(128, 4, stride=2)
        if dilated:
            self.layer3 = self._make_layer(256, 6, stride=1, dilation=2)
            self.layer4 = self._make_layer(512, 3, stride=1, dilation=4)
            strides = {"block1": 4, "block2": 8, "block3": 8, "block4": 8}
        else:
            self.layer3 = self._make_layer(256, 6, stride=2)
            self.layer4 = self._make_layer(512, 3, stride=2)
            strides = {"block1": 4, "block2": 8, "block3": 16, "block4": 32}
        self.tap_channels = {
            "block1": 256, "block2": 512, "block3": 1024, "block4": 2048,
        }
        self.tap_strides = strides

    def _make_layer(self, planes, n_blocks, stride, dilation=1):
        downsample = None
        c_out = planes * _Bottleneck.expansion
        if stride != 1 or self.c_in != c_out:
            downsample = nn.Sequential(
                nn.Conv2d(self.c_in, c_out, 1, stride=stride, bias=False),
                nn.BatchNorm2d(c_out),
            )
        layers = [_Bottleneck(self.c_in, planes, stride, dilation, downsample)]
        self.c_in = c_out
        for _ in range(1, n_blocks):
            layers.append(_Bottleneck(self.c_in, planes, 1, dilation))
        return nn.Sequential(*layers)

    def forward(self, x):
        x = self.stem(x)
        taps = {}
        x = self.layer1(x)
        taps["block1"] = x
        x = self.layer2(x)
        taps["block2"] = x
        x = self.layer3(x)
        taps["block3"] = x
        x = self.layer4(x)
        taps["block4"] = x
        return taps


class _Fcn8Decoder(nn.Module):
    """Skip-fusing decoder: deep features upsampled in x2, x2, x8 stages."""

    def __init__(self, c8, c16, c32, out: int = DECODER_CHANNELS):
        super().__init__()
        self.classifier = nn.Sequential(
            nn.Conv2d(c32, 512, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(512, 512, 1), nn.ReLU(inplace=True),
        )
        self.proj32 = nn.Conv2d(512, out, 1)
        self.proj16 = nn.Conv2d(c16, out, 1)
        self.proj8 = nn.Conv2d(c8, out, 1)
        self.up_a = nn.ConvTranspose2d(out, out, 4, stride=2, padding=1)
        self.up_b = nn.ConvTranspose2d(out, out, 4, stride=2, padding=1)
        self.fuse = nn.Conv2d(out, out, 3, padding=1)
        self.up_out = nn.ConvTranspose2d(out, out, 16, stride=8, padding=4)

    def forward(self, f8, f16, f32):
        x = self.up_a(self.proj32(self.classifier(f32)))   # -> 1/16
        x = x + self.proj16(f16)
        x = self.up_b(x)                                    # -> 1/8
        x = x + self.proj8(f8)
        x = F.relu(self.fuse(x))
        return F.relu(self.up_out(x))                       # -> 1/1


class _DilatedDecoder(nn.Module):
    """Context decoder over a single stride-8 feature map."""

    def __init__(self, c_in, out: int = DECODER_CHANNELS):
        super().__init__()
        self.context = nn.Sequential(
            nn.Conv2d(c_in, 256, 3, padding=2, dilation=2), nn.ReLU(inplace=True),
            nn.Conv2d(256, 256, 3, padding=4, dilation=4), nn.ReLU(inplace=True),
            nn.Conv2d(256, out, 1),
        )
        self.refine = nn.Conv2d(out, out, 3, padding=1)

    def forward(self, feat):
        x = self.context(feat)
        x = F.interpolate(x, scale_factor=8, mode="bilinear", align_corners=False)
        return F.relu(self.refine(x))


class _TinyDecoder(nn.Module):
    """Minimal decoder: plain upsample plus one conv."""

    def __init__(self, c_in, stride: int, out: int = DECODER_CHANNELS):
        super().__init__()
        self.stride = stride
        self.conv = nn.Conv2d(c_in, out, 3, padding=1)

    def forward(self, feat):
        x = F.interpolate(
            feat, scale_factor=self.stride, mode="bilinear", align_corners=False
        )
        return F.relu(self.conv(x))


def _stride_requirement(cfg: ModelConfig) -> int:
    if cfg.backbone == "tiny":
        return 4
    return 8 if cfg.head_arch == "dilated" else 32


class PositionNet(nn.Module):
    """Two-headed FCN predicting horizontal and vertical position classes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dilated = cfg.head_arch == "dilated"
        if cfg.backbone == "vgg16_like":
            self.trunk = _VGGTrunk(dilated=dilated)
        elif cfg.backbone == "resnet50_like":
            self.trunk = _ResNet50Trunk(dilated=dilated)
        else:
            self.trunk = _TinyTrunk()

        strides = self.trunk.tap_strides
        chans = self.trunk.tap_channels
        if cfg.backbone == "tiny":
            # The shallow arm keeps its own minimal decoder for either head.
            self.decoder = _TinyDecoder(chans["block3"], strides["block3"])
            self._decoder_taps = ("block3",)
        elif dilated:
            last = sorted(strides)[-1]
            self.decoder = _DilatedDecoder(chans[last])
            self._decoder_taps = (last,)
        else:
            names = sorted(strides, key=lambda n: strides[n])[-3:]
            n8, n16, n32 = names
            self.decoder = _Fcn8Decoder(chans[n8], chans[n16], chans[n32])
            self._decoder_taps = (n8, n16, n32)

        self.head_h = nn.Conv2d(DECODER_CHANNELS, cfg.num_classes_h, 1)
        self.head_v = nn.Conv2d(DECODER_CHANNELS, cfg.num_classes_v, 1)

    def activation_names(self) -> list[str]:
        return list(self.trunk.tap_strides) + ["decoder"]

    def _check_input(self, x):
        req = _stride_requirement(self.cfg)
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError(f"expected input (batch, 1, h, w), got {tuple(x.shape)}")
        if x.shape[2] % req or x.shape[3] % req:
            raise ValueError(
                f"input size {tuple(x.shape[2:])} must be divisible by {req} "
                f"for backbone={self.cfg.backbone}, head={self.cfg.head_arch}"
            )

    def forward_with_activations(self, x):
        self._check_input(x)
        taps = self.trunk(x)
        decoder = self.decoder(*[taps[name] for name in self._decoder_taps])
        taps["decoder"] = decoder
        return self.head_h(decoder), self.head_v(decoder), taps

    def forward(self, x):
        logits_h, logits_v, _ = self.forward_with_activations(x)
        return logits_h, logits_v

    @torch.no_grad()
    def predict(self, x):
        """Argmax class maps (pred_h, pred_v) as int64 arrays."""
        logits_h, logits_v = self.forward(x)
        return (
            logits_h.argmax(dim=1).cpu().numpy(),
            logits_v.argmax(dim=1).cpu().numpy(),
        )


def _init_weights(model: nn.Module) -> None:
    for module in model.modules():
        if isinstance(module, nn.ConvTranspose2d):
            k = module.kernel_size[0]
            module.weight.data.copy_(_bilinear_kernel(module.in_channels, k))
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Conv2d):
            nn.init.kaiming_normal_(module.weight, mode="fan_out", nonlinearity="relu")
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)


def build_model(cfg: ModelConfig, seed: int | None = None) -> PositionNet:
    """Construct and initialize a PositionNet from its config."""
    if cfg.backbone not in BACKBONES:
        raise ConfigError(f"unknown backbone {cfg.backbone!r}; choose from {BACKBONES}")
    if cfg.head_arch not in HEADS:
        raise ConfigError(f"unknown head_arch {cfg.head_arch!r}; choose from {HEADS}")
    if cfg.init not in ("random", "external_weights"):
        raise ConfigError(f"init must be 'random' or 'external_weights', got {cfg.init!r}")
    if cfg.num_classes_h < 2 or cfg.num_classes_v < 2:
        raise ConfigError("need at least 2 classes per direction (background + 1)")
    req = _stride_requirement(cfg)
    h, w = cfg.input_size
    if h % req or w % req:
        raise ConfigError(
            f"input_size {cfg.input_size} must be divisible by {req} for "
            f"backbone={cfg.backbone}, head={cfg.head_arch}"
        )
    if seed is not None:
        torch.manual_seed(seed)
    model = PositionNet(cfg)
    _init_weights(model)
    if cfg.init == "external_weights":
        if not cfg.init_path:
            raise ConfigError("init='external_weights' requires init_path")
        state = torch.load(cfg.init_path, map_location="cpu", weights_only=True)
        model.trunk.load_state_dict(state, strict=False)
    return model


def balance_weights(labels: torch.Tensor) -> torch.Tensor:
    """Per-pixel object/background balance weights for a label batch.

    Object pixels (label > 0) weigh B/X and background pixels O/X, with
    O, B, X the per-image object/background/total pixel counts.
    """
    if labels.dim() == 2:
        labels = labels.unsqueeze(0)
    total = float(labels.shape[1] * labels.shape[2])
    obj = labels > 0
    n_obj = obj.flatten(1).sum(dim=1).to(torch.float64)
    w_at_obj = ((total - n_obj) / total).view(-1, 1, 1)
    w_at_bg = (n_obj / total).view(-1, 1, 1)
    return torch.where(obj, w_at_obj, w_at_bg)


def _direction_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if labels.max().item() >= logits.shape[1]:
        raise ValueError(
            f"label class {int(labels.max())} out of range for "
            f"{logits.shape[1]} head channels"
        )
    ce = F.cross_entropy(logits, labels, reduction="none")
    weights = balance_weights(labels).to(logits.dtype)
    num = (weights * ce).flatten(1).sum(dim=1)
    denom = weights.flatten(1).sum(dim=1)
    per_image = num / denom.clamp_min(1e-12)
    return per_image.mean()


def weighted_ce_loss(logits_h, logits_v, label) -> torch.Tensor:
    """Object/background balanced cross entropy, averaged over directions.

    ``label`` is a ProxyLabel or a (labels_h, labels_v) pair of integer
    maps; 2D inputs are treated as a batch of one. Each pixel's cross
    entropy is weighted by `balance_weights` and reduced as the weighted
    mean over the image, then averaged over the batch and directions.
    """
    if hasattr(label, "horizontal"):
        labels_h, labels_v = label.horizontal, label.vertical
    else:
        labels_h, labels_v = label
    losses = []
    for logits, labels in ((logits_h, labels_h), (logits_v, labels_v)):
        if not torch.is_tensor(labels):
            labels = torch.as_tensor(np.asarray(labels))
        labels = labels.long()
        if labels.dim() == 2:
            labels = labels.unsqueeze(0)
        if logits.dim() == 3:
            logits = logits.unsqueeze(0)
        if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
            raise ValueError(
                f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} "
                "do not align"
            )
        losses.append(_direction_loss(logits, labels))
    return (losses[0] + losses[1]) / 2
