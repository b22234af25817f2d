"""The sub-networks: two reconversion-style feature extractors, the
re-renderer that fuses their outputs, and the conditional patch
discriminator used during training.

Both feature extractors share one backbone shape: a 7x7 stem, four
channel-doubling down steps, nine residual blocks at the bottleneck, four
mirrored up steps, and a selection convolution that reduces to the stem
width. The scene branch keeps a stem skip connection (local structure must
survive); the light-effect branch drops it so everything is forced through
the global bottleneck. The painting heads are detachable: they exist for
stage-wise training and are left out of the deployment path.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import (
    DBPBlock,
    MultiScalePerception,
    RecalibrationBlock,
    ResBlock,
    UBPBlock,
)
from .imaging import check_spatial_dims

#: The input is halved this many times on the way to the bottleneck.
N_DOWN_STEPS = 4

DEFAULT_BASE_WIDTH = 32
DEFAULT_RES_BLOCKS = 9
INIT_STD = 0.02


def init_parameters(module: nn.Module, std: float = INIT_STD) -> nn.Module:
    """Normal(0, std) weights and zero biases for all conv/linear layers."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    return module


def _check_image_input(x: torch.Tensor) -> None:
    if x.ndim not in (3, 4) or x.shape[-3] != 3:
        raise ValueError(f"expected [3, H, W] or [B, 3, H, W], got {tuple(x.shape)}")
    check_spatial_dims(x.shape[-2], x.shape[-1])


class PaintingHead(nn.Module):
    """Detachable feature-to-image head; tanh keeps the output in (-1, 1)."""

    def __init__(self, width: int):
        super().__init__()
        self.conv = nn.Conv2d(width, 3, 7, padding=3)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.conv(feats))


class ReconversionBackbone(nn.Module):
    """Encoder/decoder trunk emitting ``base_width`` feature channels at the
    input resolution."""

    def __init__(
        self,
        base_width: int = DEFAULT_BASE_WIDTH,
        n_res_blocks: int = DEFAULT_RES_BLOCKS,
        use_skip: bool = True,
        use_bp_blocks: bool = True,
        lam1: float = 1.0,
        lam2: float = 1.0,
        tie_weights: bool = False,
    ):
        super().__init__()
        w = base_width
        self.base_width = w
        self.use_skip = use_skip
        self.use_bp_blocks = use_bp_blocks

        self.stem = nn.Conv2d(3, w, 7, padding=3)
        self.stem_norm = nn.InstanceNorm2d(w)

        downs, down_norms = [], []
        for i in range(N_DOWN_STEPS):
            c = w * 2**i
            if use_bp_blocks:
                downs.append(DBPBlock(c, lam1, lam2, tie_weights))
            else:
                downs.append(nn.Conv2d(c, 2 * c, 3, stride=2, padding=1))
            down_norms.append(nn.InstanceNorm2d(2 * c))
        self.downs = nn.ModuleList(downs)
        self.down_norms = nn.ModuleList(down_norms)

        bottleneck = w * 2**N_DOWN_STEPS
        self.res_blocks = nn.Sequential(
            *(ResBlock(bottleneck) for _ in range(n_res_blocks))
        )

        ups, up_norms = [], []
        for i in reversed(range(N_DOWN_STEPS)):
            c = w * 2**i
            if use_bp_blocks:
                ups.append(UBPBlock(2 * c, lam1, lam2, tie_weights))
            else:
                ups.append(nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1))
            up_norms.append(nn.InstanceNorm2d(c))
        self.ups = nn.ModuleList(ups)
        self.up_norms = nn.ModuleList(up_norms)

        self.select = nn.Conv2d(2 * w if use_skip else w, w, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_image_input(x)
        h = F.relu(self.stem_norm(self.stem(x)))
        shallow = h
        for down, norm in zip(self.downs, self.down_norms):
            h = F.relu(norm(down(h)))
        h = self.res_blocks(h)
        for up, norm in zip(self.ups, self.up_norms):
            h = F.relu(norm(up(h)))
        if self.use_skip:
            h = torch.cat([h, shallow], dim=-3)
        return F.relu(self.select(h))


class ReconversionNet(nn.Module):
    """Backbone plus its detachable painting head.

    ``forward(x)`` returns the feature map (the deployment path);
    ``forward(x, with_head=True)`` also paints an image for training.
    """

    def __init__(self, use_skip: bool, base_width: int = DEFAULT_BASE_WIDTH,
                 use_bp_blocks: bool = True, lam1: float = 1.0, lam2: float = 1.0,
                 tie_weights: bool = False,
                 n_res_blocks: int = DEFAULT_RES_BLOCKS):
        super().__init__()
        self.backbone = ReconversionBackbone(
            base_width=base_width,
            n_res_blocks=n_res_blocks,
            use_skip=use_skip,
            use_bp_blocks=use_bp_blocks,
            lam1=lam1,
            lam2=lam2,
            tie_weights=tie_weights,
        )
        self.head = PaintingHead(base_width)

    @property
    def base_width(self) -> int:
        return self.backbone.base_width

    def forward(self, x: torch.Tensor, with_head: bool = False):
        feats = self.backbone(x)
        if with_head:
            return feats, self.head(feats)
        return feats


class SceneReconversionNet(ReconversionNet):
    """Extracts illumination-invariant structure; keeps the stem skip."""

    def __init__(self, base_width: int = DEFAULT_BASE_WIDTH, **kwargs):
        super().__init__(use_skip=True, base_width=base_width, **kwargs)


class ShadowPriorNet(ReconversionNet):
    """Predicts the target light's effect; no skip, so the global bottleneck
    cannot be bypassed."""

    def __init__(self, base_width: int = DEFAULT_BASE_WIDTH, **kwargs):
        super().__init__(use_skip=False, base_width=base_width, **kwargs)


class ReRenderer(nn.Module):
    """Fuses scene and light-effect features and paints the output image.

    Concatenated features pass through multi-scale perception and channel
    recalibration before a 7x7 painting convolution with a tanh head.
    """

    def __init__(self, feature_width: int = DEFAULT_BASE_WIDTH,
                 reduction: int = 4, kernel_sizes: tuple = (1, 3, 5, 7)):
        super().__init__()
        merged = 2 * feature_width
        self.feature_width = feature_width
        self.perception = MultiScalePerception(merged, kernel_sizes)
        self.recalibration = RecalibrationBlock(merged, reduction)
        self.paint = nn.Conv2d(merged, 3, 7, stride=1, padding=3)

    def forward(self, scene_feats: torch.Tensor,
                shadow_feats: torch.Tensor) -> torch.Tensor:
        if scene_feats.shape != shadow_feats.shape:
            raise ValueError(
                f"feature shapes differ: {tuple(scene_feats.shape)} vs "
                f"{tuple(shadow_feats.shape)}"
            )
        if scene_feats.shape[-3] != self.feature_width:
            raise ValueError(
                f"expected {self.feature_width} channels per input, "
                f"got {scene_feats.shape[-3]}"
            )
        h = torch.cat([scene_feats, shadow_feats], dim=-3)
        h = self.recalibration(self.perception(h))
        return torch.tanh(self.paint(h))


class PatchDiscriminator(nn.Module):
    """Conditional patch classifier emitting a grid of raw logits.

    Four stride-2 convolutions shrink (condition, candidate) pairs by 16x;
    instance norm on every stage but the first, leaky ReLU slope 0.2, and a
    final 1-channel convolution producing the logit map.
    """

    def __init__(self, in_channels: int = 6, base_width: int = 64):
        super().__init__()
        widths = [base_width * 2**i for i in range(4)]
        layers = []
        prev = in_channels
        for i, width in enumerate(widths):
            layers.append(nn.Conv2d(prev, width, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(width))
            layers.append(nn.LeakyReLU(0.2))
            prev = width
        layers.append(nn.Conv2d(prev, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, condition: torch.Tensor,
                candidate: torch.Tensor) -> torch.Tensor:
        if condition.shape != candidate.shape:
            raise ValueError(
                f"condition and candidate shapes differ: "
                f"{tuple(condition.shape)} vs {tuple(candidate.shape)}"
            )
        if min(condition.shape[-2:]) < 32:
            # the last normalized stage needs more than one spatial element
            raise ValueError(
                f"discriminator inputs must be at least 32x32, "
                f"got {tuple(condition.shape[-2:])}"
            )
        return self.net(torch.cat([condition, candidate], dim=-3))


def drn_forward(scene_net: ReconversionNet, shadow_net: ReconversionNet,
                renderer: ReRenderer, x: torch.Tensor) -> torch.Tensor:
    """Deployment path: both feature extractors (heads off) into the renderer."""
    return renderer(scene_net(x), shadow_net(x))


def parameter_shape_multiset(module: nn.Module) -> list:
    """Sorted list of parameter shapes, for structural comparisons."""
    return sorted(tuple(p.shape) for p in module.parameters())
