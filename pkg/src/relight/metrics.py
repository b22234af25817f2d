"""Reference PSNR and SSIM plus the JSON evaluation report schema."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import ImageTensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 1.0

REPORT_SCHEMA_VERSION = 1

#: JSON stand-in for an infinite PSNR (identical images).
INF_SENTINEL = "inf"


def _as_planes(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        img = img.data
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected [C, H, W], got shape {arr.shape}")
    return arr


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over all channels and pixels.

    Computed on unit-range data with peak 1.0; returns ``math.inf`` when the
    images are identical.
    """
    x, y = _as_planes(a), _as_planes(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10((DYNAMIC_RANGE**2) / mse)


def _gaussian_taps(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return taps / taps.sum()


_SSIM_TAPS = _gaussian_taps(SSIM_WINDOW, SSIM_SIGMA)


def _windowed_mean(plane: np.ndarray) -> np.ndarray:
    # Separable Gaussian filtering followed by a crop of the window radius,
    # which equals valid-mode filtering regardless of the padding rule.
    half = (SSIM_WINDOW - 1) // 2
    out = ndimage.correlate1d(plane, _SSIM_TAPS, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, _SSIM_TAPS, axis=1, mode="nearest")
    return out[half:-half, half:-half]


def ssim(a, b) -> float:
    """Mean local structural similarity, averaged across the RGB channels.

    Gaussian window 11x11 with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic
    range 1.0; statistics are window-weighted and biased; only fully valid
    windows contribute.
    """
    x, y = _as_planes(a), _as_planes(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(
            f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    per_channel = []
    for xc, yc in zip(x, y):
        mu_x = _windowed_mean(xc)
        mu_y = _windowed_mean(yc)
        var_x = _windowed_mean(xc * xc) - mu_x * mu_x
        var_y = _windowed_mean(yc * yc) - mu_y * mu_y
        cov = _windowed_mean(xc * yc) - mu_x * mu_y
        score = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
            (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        )
        per_channel.append(float(score.mean()))
    return float(np.mean(per_channel))


def _encode_psnr(value: float):
    return INF_SENTINEL if math.isinf(value) else float(value)


def _decode_psnr(value) -> float:
    if value == INF_SENTINEL:
        return math.inf
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValueError(f"invalid psnr_db entry: {value!r}")
    return float(value)


def _mean_psnr(values: list[float]) -> float:
    return float(np.mean(values)) if values else math.inf


@dataclass
class ImageScore:
    """Metrics for a single evaluated image."""

    scene_id: str
    psnr_db: float
    ssim: float


@dataclass
class ScoreBlock:
    """Per-image scores and their aggregates for one method."""

    per_image: list[ImageScore] = field(default_factory=list)
    mean_psnr_db: float = math.inf
    mean_ssim: float = 0.0

    @classmethod
    def from_scores(cls, scores: list[ImageScore]) -> "ScoreBlock":
        if not scores:
            raise ValueError("cannot aggregate an empty score list")
        return cls(
            per_image=list(scores),
            mean_psnr_db=_mean_psnr([s.psnr_db for s in scores]),
            mean_ssim=float(np.mean([s.ssim for s in scores])),
        )

    def to_dict(self) -> dict:
        return {
            "per_image": [
                {
                    "scene_id": s.scene_id,
                    "psnr_db": _encode_psnr(s.psnr_db),
                    "ssim": float(s.ssim),
                }
                for s in self.per_image
            ],
            "mean_psnr_db": _encode_psnr(self.mean_psnr_db),
            "mean_ssim": float(self.mean_ssim),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ScoreBlock":
        if not isinstance(payload, dict):
            raise ValueError("score block must be an object")
        for key in ("per_image", "mean_psnr_db", "mean_ssim"):
            if key not in payload:
                raise ValueError(f"score block is missing required field {key!r}")
        scores = []
        for entry in payload["per_image"]:
            if set(entry) != {"scene_id", "psnr_db", "ssim"}:
                raise ValueError(f"malformed per-image entry: {entry!r}")
            scores.append(
                ImageScore(
                    scene_id=str(entry["scene_id"]),
                    psnr_db=_decode_psnr(entry["psnr_db"]),
                    ssim=float(entry["ssim"]),
                )
            )
        for s in scores:
            if not -1.0 <= s.ssim <= 1.0:
                raise ValueError(f"ssim {s.ssim} outside [-1, 1]")
            if s.psnr_db < 0.0:
                raise ValueError(f"psnr_db {s.psnr_db} is negative")
        return cls(
            per_image=scores,
            mean_psnr_db=_decode_psnr(payload["mean_psnr_db"]),
            mean_ssim=float(payload["mean_ssim"]),
        )


@dataclass
class MetricReport:
    """Evaluation results for one model plus the input-copy baseline.

    ``label`` names the configuration row the scores belong to, so ablation
    runs stay distinguishable in downstream tables.
    """

    label: str
    model: ScoreBlock
    baseline: ScoreBlock
    metadata: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        payload = {
            "schema_version": self.schema_version,
            "label": self.label,
            "metadata": dict(self.metadata),
            "baseline": self.baseline.to_dict(),
        }
        payload.update(self.model.to_dict())
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricReport":
        if payload.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported report schema: {payload.get('schema_version')!r}"
            )
        for key in ("label", "per_image", "mean_psnr_db", "mean_ssim", "baseline"):
            if key not in payload:
                raise ValueError(f"report is missing required field {key!r}")
        return cls(
            label=str(payload["label"]),
            model=ScoreBlock.from_dict(payload),
            baseline=ScoreBlock.from_dict(payload["baseline"]),
            metadata=dict(payload.get("metadata", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls.from_json(Path(path).read_text())
