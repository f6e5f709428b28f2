"""Perceptual feature extractor with five taps.

Feature distances are taken at five stages of a convolutional pyramid — the
stage outputs *before* each downsampling, mirroring the five-tap layout of a
VGG19 extractor (the taps sit where VGG19's relu1_2 / relu2_2 / relu3_4 /
relu4_4 / relu5_4 sit).  When pretrained VGG19 weights are available they are
used; otherwise a fixed randomly-initialized pyramid with the same tap
structure serves as the extractor (random projections preserve relative
distances well enough for a perceptual penalty, and keep the package fully
offline).

The fallback weights are generated from a seeded NumPy generator and stored
as buffers, so the extractor has no trainable parameters and is bit-exactly
reproducible.
"""
from __future__ import annotations

import contextlib
import math
import sys

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

FALLBACK_WIDTHS = (8, 16, 32, 64, 128)


class FeatureExtractor(nn.Module):
    """Fixed-random five-tap convolutional feature pyramid.

    Each stage is a 3x3 convolution (padding 1) followed by ReLU; the stage
    output is a tap, and the signal is 2x average-pooled between stages
    (skipped once the map is a single pixel, so tiny inputs stay valid).
    """

    def __init__(self, in_channels: int = 3,
                 widths: tuple[int, ...] = FALLBACK_WIDTHS,
                 seed: int = 0, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        self.n_stages = len(widths)
        rng = np.random.default_rng(seed)
        cin = in_channels
        for j, cout in enumerate(widths):
            std = math.sqrt(2.0 / (cin * 9))
            kernel = rng.normal(0.0, std, size=(cout, cin, 3, 3))
            self.register_buffer(f"w{j}", torch.as_tensor(kernel, dtype=dtype))
            self.register_buffer(f"b{j}", torch.zeros(cout, dtype=dtype))
            cin = cout

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        taps = []
        for j in range(self.n_stages):
            x = F.relu(F.conv2d(x, getattr(self, f"w{j}"),
                                getattr(self, f"b{j}"), padding=1))
            taps.append(x)
            if j < self.n_stages - 1 and min(x.shape[-2:]) >= 2:
                x = F.avg_pool2d(x, 2)
        return taps


class Vgg19Features(nn.Module):
    """Five taps from a pretrained VGG19 (stage outputs before each pool)."""

    TAPS = (3, 8, 17, 26, 35)  # relu1_2, relu2_2, relu3_4, relu4_4, relu5_4

    def __init__(self, vgg_features: nn.Module) -> None:
        super().__init__()
        self.slices = nn.ModuleList()
        start = 0
        for end in self.TAPS:
            self.slices.append(nn.Sequential(
                *[vgg_features[k] for k in range(start, end + 1)]))
            start = end + 1
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        taps = []
        for sl in self.slices:
            x = sl(x)
            taps.append(x)
        return taps


def make_phi(kind: str = "auto", seed: int = 0,
             dtype: torch.dtype = torch.float32) -> nn.Module:
    """Build the feature extractor.

    ``kind`` is ``"random"`` (fixed-random fallback), ``"vgg19"`` (pretrained,
    raises if weights cannot be loaded), or ``"auto"`` (try pretrained, fall
    back to random).
    """
    if kind not in ("auto", "random", "vgg19"):
        raise ValueError(f"unknown feature extractor kind {kind!r}")
    if kind in ("auto", "vgg19"):
        try:
            from torchvision.models import vgg19, VGG19_Weights

            # keep stdout clean for callers with line-oriented output
            # contracts; weight-download progress goes to stderr instead
            with contextlib.redirect_stdout(sys.stderr):
                net = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
            return Vgg19Features(net.features.eval())
        except Exception:
            if kind == "vgg19":
                raise
    phi = FeatureExtractor(seed=seed, dtype=dtype)
    phi.eval()
    return phi
