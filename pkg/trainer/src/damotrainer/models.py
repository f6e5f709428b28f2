"""Generator and discriminator architectures.

The generator is a nested-dense-skip encoder/decoder: a strided-convolution
encoder, a stack of residual blocks at the bottleneck, and a transposed-
convolution decoder whose nodes receive dense skip connections from every
same-resolution node to their left (the nested-skip layout popularized by
UNet++), with batch-norm everywhere per the DCGAN guidelines.  The
discriminators are three-layer patch classifiers; the half-scale twin shares
the structure and sees 2x average-pooled inputs.

Width and input resolution are configurable so the same code runs at toy
scale (64/128/256 px, reduced widths) and at the full 1024 px production
scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

ALLOWED_SCALES = (64, 128, 256, 1024)


class ModelConfigError(ValueError):
    """Raised when a model specification is invalid."""


def _scaled(base: int, factor: float) -> int:
    return max(4, round(base * factor))


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape parameters for the mask/wafer generator.

    ``resolution`` is the square input/output size in pixels.  At the full
    1024 px scale the encoder applies five stride-2 stages (bottleneck 32 px,
    widths 32..1024 at ``width_factor`` 1.0); toy scales stop at a 16 px
    bottleneck.  The bottleneck always carries ``residual_blocks`` residual
    blocks, regardless of scale.
    """

    resolution: int = 64
    width_factor: float = 0.25
    in_channels: int = 4  # 3 image channels + 1 uniform-noise channel
    out_channels: int = 3
    base_width: int = 32
    residual_blocks: int = 9

    def __post_init__(self) -> None:
        if self.resolution not in ALLOWED_SCALES:
            raise ModelConfigError(
                f"resolution {self.resolution} not in {ALLOWED_SCALES}")
        if not (0.0 < self.width_factor <= 1.0):
            raise ModelConfigError(
                f"width_factor {self.width_factor} outside (0, 1]")
        if self.residual_blocks < 1:
            raise ModelConfigError("residual_blocks must be >= 1")

    @property
    def n_down(self) -> int:
        if self.resolution == 1024:
            return 5
        return int(math.log2(self.resolution)) - 4  # 16 px bottleneck

    def widths(self) -> list[int]:
        return [_scaled(self.base_width * 2 ** i, self.width_factor)
                for i in range(self.n_down + 1)]


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Shape parameters for the patch discriminators.

    The input is the channel concatenation of a 3-channel condition image and
    a 3-channel candidate image.  Three 4x4 convolutions (the first with
    stride 2) produce a patch logit map of ``resolution / 2`` per side at
    full scale; the half-scale twin average-pools its inputs first.
    """

    resolution: int = 64
    width_factor: float = 0.25
    in_channels: int = 6
    base_width: int = 64

    def __post_init__(self) -> None:
        if self.resolution not in ALLOWED_SCALES:
            raise ModelConfigError(
                f"resolution {self.resolution} not in {ALLOWED_SCALES}")
        if not (0.0 < self.width_factor <= 1.0):
            raise ModelConfigError(
                f"width_factor {self.width_factor} outside (0, 1]")

    def widths(self) -> tuple[int, int]:
        w0 = _scaled(self.base_width, self.width_factor)
        return w0, 2 * w0


def _conv_bn_relu(cin: int, cout: int, kernel: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def _deconv_bn_relu(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 3, stride=2, padding=1, output_padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with batch norm and an identity skip."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class Generator(nn.Module):
    """Nested-dense-skip encoder/decoder with a residual bottleneck.

    Node ``X[i][j]`` lives at encoder depth ``i`` (resolution / 2**i) and
    skip column ``j``; ``X[i][0]`` are the encoder features, and for j >= 1

        X[i][j] = conv(cat(X[i][0..j-1], up(X[i+1][j-1])))

    so every decoder node sees all earlier same-resolution features.  The
    output head maps ``X[0][n_down]`` through a 7x7 convolution and a sigmoid
    to per-pixel values in [0, 1], at the same spatial size as the input.
    """

    def __init__(self, spec: GeneratorSpec) -> None:
        super().__init__()
        self.spec = spec
        w = spec.widths()
        n = spec.n_down
        self.encoders = nn.ModuleList(
            [_conv_bn_relu(spec.in_channels, w[0], 7, 1)]
            + [_conv_bn_relu(w[i - 1], w[i], 3, 2) for i in range(1, n + 1)])
        self.bottleneck = nn.Sequential(
            *[ResidualBlock(w[n]) for _ in range(spec.residual_blocks)])
        self.ups = nn.ModuleDict()
        self.nodes = nn.ModuleDict()
        for j in range(1, n + 1):
            for i in range(0, n - j + 1):
                self.ups[f"{i}_{j}"] = _deconv_bn_relu(w[i + 1], w[i])
                self.nodes[f"{i}_{j}"] = _conv_bn_relu((j + 1) * w[i], w[i], 3, 1)
        self.head = nn.Conv2d(w[0], spec.out_channels, 7, padding=3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.resolution or x.shape[-2] != self.spec.resolution:
            raise ModelConfigError(
                f"expected {self.spec.resolution}px input, got {tuple(x.shape[-2:])}")
        n = self.spec.n_down
        grid: dict[tuple[int, int], torch.Tensor] = {}
        for i, enc in enumerate(self.encoders):
            x = enc(x)
            grid[(i, 0)] = x
        grid[(n, 0)] = self.bottleneck(grid[(n, 0)])
        for j in range(1, n + 1):
            for i in range(0, n - j + 1):
                up = self.ups[f"{i}_{j}"](grid[(i + 1, j - 1)])
                cat = torch.cat([grid[(i, k)] for k in range(j)] + [up], dim=1)
                grid[(i, j)] = self.nodes[f"{i}_{j}"](cat)
        return torch.sigmoid(self.head(grid[(0, n)]))


class _PadSameConv4(nn.Module):
    """4x4 stride-1 convolution that preserves spatial size exactly."""

    def __init__(self, cin: int, cout: int) -> None:
        super().__init__()
        self.pad = nn.ZeroPad2d((1, 2, 1, 2))
        self.conv = nn.Conv2d(cin, cout, 4)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(self.pad(x))


class Discriminator(nn.Module):
    """Patch discriminator over (condition, candidate) image pairs.

    Three 4x4 convolution blocks (batch norm + LeakyReLU 0.2, dropout 0.5
    between them); the first block has stride 2, so the output is a logit
    map of half the input side.  ``downsample`` > 1 average-pools the inputs
    first, giving the half-scale twin of the full-scale discriminator.
    """

    def __init__(self, spec: DiscriminatorSpec, downsample: int = 1) -> None:
        super().__init__()
        self.spec = spec
        self.downsample = downsample
        w0, w1 = spec.widths()
        self.body = nn.Sequential(
            nn.Conv2d(spec.in_channels, w0, 4, stride=2, padding=1),
            nn.BatchNorm2d(w0),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Dropout(0.5),
            _PadSameConv4(w0, w1),
            nn.BatchNorm2d(w1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Dropout(0.5),
            _PadSameConv4(w1, 1),
            nn.BatchNorm2d(1),
            nn.LeakyReLU(0.2, inplace=True),
        )

    def forward(self, cond: torch.Tensor, img: torch.Tensor) -> torch.Tensor:
        x = torch.cat([cond, img], dim=1)
        if self.downsample > 1:
            x = F.avg_pool2d(x, self.downsample)
        return self.body(x)


def build_models(resolution: int = 64, width_factor: float = 0.25,
                 seed: int = 0) -> dict[str, nn.Module]:
    """Build the full model set: both generators and their discriminator pairs.

    Returns ``{"g_dmg", "d_dmg1", "d_dmg2", "g_dls", "d_dls1", "d_dls2"}``;
    the ``*2`` discriminators are the half-scale twins.  Initialization is
    deterministic in ``seed``.
    """
    torch.manual_seed(seed)
    g_spec = GeneratorSpec(resolution=resolution, width_factor=width_factor)
    d_spec = DiscriminatorSpec(resolution=resolution, width_factor=width_factor)
    return {
        "g_dmg": Generator(g_spec),
        "d_dmg1": Discriminator(d_spec),
        "d_dmg2": Discriminator(d_spec, downsample=2),
        "g_dls": Generator(g_spec),
        "d_dls1": Discriminator(d_spec),
        "d_dls2": Discriminator(d_spec, downsample=2),
    }
