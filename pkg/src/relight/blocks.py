"""Differentiable building blocks.

The down/up back-projection blocks decode their own code back to the input
space, re-encode the reconstruction residual and add it to the code, so the
resampling step keeps what a single strided convolution would lose. The rest
are the standard companions: residual units, a multi-kernel perception
block, squeeze-style channel recalibration, and the dark-region rectifier
used by the shadow-focused discriminator.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .imaging import UNIT, ImageTensor, require_range

#: Intensity threshold of the dark-region rectifier (15 byte steps).
SHADOW_ALPHA = 0.059


def _check_even_spatial(x: torch.Tensor) -> None:
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ValueError(
            f"spatial dims must be even to halve them, got {tuple(x.shape[-2:])}"
        )


class DBPBlock(nn.Module):
    """Down-sampling back-projection: halves H and W, doubles channels.

    code   = e1(x)
    remade = d2(code)
    out    = lam2 * code + e2(remade - lam1 * x)
    """

    def __init__(self, in_channels: int, lam1: float = 1.0, lam2: float = 1.0,
                 tie_weights: bool = False):
        super().__init__()
        out_channels = 2 * in_channels
        self.e1 = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)
        self.d2 = nn.ConvTranspose2d(out_channels, in_channels, 4, stride=2, padding=1)
        self.e2 = self.e1 if tie_weights else nn.Conv2d(
            in_channels, out_channels, 3, stride=2, padding=1
        )
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_even_spatial(x)
        code = self.e1(x)
        residual = self.d2(code) - self.lam1 * x
        return self.lam2 * code + self.e2(residual)


class UBPBlock(nn.Module):
    """Up-sampling back-projection: doubles H and W, halves channels.

    Mirror image of :class:`DBPBlock` with the encode/decode roles swapped.
    """

    def __init__(self, in_channels: int, lam1: float = 1.0, lam2: float = 1.0,
                 tie_weights: bool = False):
        super().__init__()
        if in_channels % 2:
            raise ValueError("up block needs an even channel count to halve it")
        out_channels = in_channels // 2
        self.d1 = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.e2 = nn.Conv2d(out_channels, in_channels, 3, stride=2, padding=1)
        self.d2 = self.d1 if tie_weights else nn.ConvTranspose2d(
            in_channels, out_channels, 4, stride=2, padding=1
        )
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        decoded = self.d1(z)
        residual = self.e2(decoded) - self.lam1 * z
        return self.lam2 * decoded + self.d2(residual)


class ResBlock(nn.Module):
    """Shape-preserving residual unit: x + norm(conv(relu(norm(conv(x)))))."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.conv1.in_channels:
            raise ValueError(
                f"expected {self.conv1.in_channels} channels, got {x.shape[-3]}"
            )
        h = F.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


class MultiScalePerception(nn.Module):
    """Parallel same-padded convolutions with growing kernel sizes.

    Each branch produces an equal share of the input width; the shares are
    concatenated back to the input width and passed through a ReLU.
    """

    def __init__(self, channels: int = 64, kernel_sizes: tuple = (1, 3, 5, 7)):
        super().__init__()
        if channels % len(kernel_sizes):
            raise ValueError(
                f"{channels} channels cannot be split over {len(kernel_sizes)} branches"
            )
        branch_width = channels // len(kernel_sizes)
        self.in_channels = channels
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, branch_width, k, padding=k // 2)
            for k in kernel_sizes
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} channels, got {x.shape[-3]}"
            )
        return F.relu(torch.cat([branch(x) for branch in self.branches], dim=-3))


class RecalibrationBlock(nn.Module):
    """Channel gating: squeeze to per-channel means, excite through a
    bottleneck, scale each channel by a sigmoid gate in (0, 1)."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction:
            raise ValueError(
                f"{channels} channels not divisible by reduction {reduction}"
            )
        self.in_channels = channels
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} channels, got {x.shape[-3]}"
            )
        pooled = x.mean(dim=(-2, -1))
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))
        return x * gate[..., None, None]


def shadow_rectify(x, alpha: float = SHADOW_ALPHA):
    """Keep only the dark band of a unit-range image: ``min(alpha, x)``.

    Output never exceeds ``alpha`` and equals the input wherever the input is
    already darker. Works on torch tensors (differentiable; the gradient is
    zero wherever the threshold wins) and on unit-range :class:`ImageTensor`.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside (0, 1]")
    if isinstance(x, ImageTensor):
        require_range(x, UNIT)
        return ImageTensor(np.minimum(np.float32(alpha), x.data), UNIT)
    return x.clamp(max=alpha)
