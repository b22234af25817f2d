"""Training objectives: conditional adversarial terms, L1 reconstruction,
the shadow-region adversarial term, and the perceptual re-render loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import SHADOW_ALPHA, shadow_rectify

#: Seed of the bundled frozen feature extractor; fixed so the perceptual
#: loss is identical across runs and machines.
FEATURE_EXTRACTOR_SEED = 2020


@dataclass
class LossWeights:
    """Balance knobs shared by the stage objectives.

    ``l1_weight`` scales the reconstruction term against the adversarial
    ones; ``perceptual_weight`` scales the feature-space term of the
    re-render loss; ``shadow_alpha`` is the dark-band threshold fed to the
    shadow-region discriminator.
    """

    l1_weight: float = 100.0
    perceptual_weight: float = 0.01
    shadow_alpha: float = SHADOW_ALPHA

    def __post_init__(self):
        if self.l1_weight < 0 or self.perceptual_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.shadow_alpha <= 1.0:
            raise ValueError(f"shadow_alpha {self.shadow_alpha} outside (0, 1]")


def adv_loss_d(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Discriminator objective: mean BCE over all patch logits.

    Real patches are pushed toward 1, fake ones toward 0; the two halves are
    averaged so a perfectly unsure discriminator (all logits 0) scores ln 2.
    """
    real = F.binary_cross_entropy_with_logits(
        real_logits, torch.ones_like(real_logits)
    )
    fake = F.binary_cross_entropy_with_logits(
        fake_logits, torch.zeros_like(fake_logits)
    )
    return 0.5 * (real + fake)


def adv_loss_g(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator objective: BCE of fake logits against 1."""
    return F.binary_cross_entropy_with_logits(
        fake_logits, torch.ones_like(fake_logits)
    )


def rectify_for_shadow_disc(model_range: torch.Tensor, alpha: float) -> torch.Tensor:
    """Map a model-range tensor to unit range and keep only its dark band."""
    return shadow_rectify((model_range + 1.0) * 0.5, alpha)


def scene_objective(
    g_out: torch.Tensor,
    target_sf: torch.Tensor,
    disc: nn.Module,
    condition: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Stage-1 generator loss: weighted L1 to the shadow-free target plus the
    conditional adversarial term."""
    recon = weights.l1_weight * F.l1_loss(g_out, target_sf)
    return recon + adv_loss_g(disc(condition, g_out))


def shadow_objective(
    g_out: torch.Tensor,
    target: torch.Tensor,
    disc: nn.Module,
    shadow_disc: nn.Module | None,
    condition: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Stage-2 generator loss: the scene-style objective against the target
    image plus (optionally) an adversarial term on rectified dark regions.

    The shadow-region discriminator sees both its condition and its candidate
    rectified in unit range, so only pixels darker than ``shadow_alpha``
    carry gradient.
    """
    loss = weights.l1_weight * F.l1_loss(g_out, target)
    loss = loss + adv_loss_g(disc(condition, g_out))
    if shadow_disc is not None:
        rect_condition = rectify_for_shadow_disc(condition, weights.shadow_alpha)
        rect_out = rectify_for_shadow_disc(g_out, weights.shadow_alpha)
        loss = loss + adv_loss_g(shadow_disc(rect_condition, rect_out))
    return loss


def perceptual_l1_loss(
    estimate: torch.Tensor,
    target: torch.Tensor,
    feat_extractor: nn.Module,
    perceptual_weight: float,
) -> torch.Tensor:
    """Stage-3 loss: pixel L1 plus weighted L1 between fixed feature maps."""
    if estimate.shape != target.shape:
        raise ValueError(
            f"shape mismatch: {tuple(estimate.shape)} vs {tuple(target.shape)}"
        )
    pixel = F.l1_loss(estimate, target)
    est_feats = feat_extractor(estimate)
    tgt_feats = feat_extractor(target)
    if est_feats.shape != tgt_feats.shape:
        raise ValueError(
            "feature extractor returned mismatched shapes: "
            f"{tuple(est_feats.shape)} vs {tuple(tgt_feats.shape)}"
        )
    return pixel + perceptual_weight * F.l1_loss(est_feats, tgt_feats)


class FixedFeatureExtractor(nn.Module):
    """Frozen random strided conv stack used as the perceptual feature map.

    A fixed-seed stand-in for a pretrained classifier's features: three
    stride-2 convolutions (3 -> 16 -> 32 -> 64) with ReLUs, Kaiming-scaled
    weights, no trainable parameters. Any other frozen module with the same
    call signature can replace it.
    """

    def __init__(self, widths: tuple = (16, 32, 64),
                 seed: int = FEATURE_EXTRACTOR_SEED):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        convs = []
        prev = 3
        for width in widths:
            conv = nn.Conv2d(prev, width, 3, stride=2, padding=1)
            with torch.no_grad():
                fan_in = prev * 9
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=generator)
                    * (2.0 / fan_in) ** 0.5
                )
                conv.bias.zero_()
            convs.append(conv)
            prev = width
        self.convs = nn.ModuleList(convs)
        self.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = F.relu(conv(x))
        return x
