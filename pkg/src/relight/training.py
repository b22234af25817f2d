"""Three-stage training protocol, checkpoint container, and evaluation.

Stage ``scene`` fits the skip-connected feature extractor against the
exposure-fused shadow-free targets with a conditional discriminator. Stage
``shadow`` fits the no-skip extractor against the target-light images, with
a second discriminator that only sees rectified dark regions. Stage
``render`` freezes the first two (heads and discriminators dropped) and
fits the re-renderer with the perceptual L1 loss.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .datagen import (
    TrainingSet,
    iter_labeled_pairs,
    load_training_set,
    manifest_target,
    read_manifest,
)
from .imaging import MODEL, ImageTensor, LightSetting, from_model_range, to_model_range
from .losses import (
    FixedFeatureExtractor,
    LossWeights,
    adv_loss_d,
    perceptual_l1_loss,
    rectify_for_shadow_disc,
    scene_objective,
    shadow_objective,
)
from .metrics import ImageScore, MetricReport, ScoreBlock, psnr, ssim
from .networks import (
    DEFAULT_BASE_WIDTH,
    PatchDiscriminator,
    ReconversionBackbone,
    ReconversionNet,
    ReRenderer,
    SceneReconversionNet,
    ShadowPriorNet,
    init_parameters,
)

STAGES = ("scene", "shadow", "render")

#: Environment variable forcing deterministic kernels.
DETERMINISTIC_ENV = "DRN_DETERMINISTIC"

DEFAULT_DISC_WIDTH = 64
LOG_COLUMNS = ("iter", "loss_g", "loss_d", "loss_d_shad", "l1")
CKPT_MAGIC = b"RELIGHT1"
CKPT_VERSION = 1

_NONFINITE_LIMIT = 3
_L1_WINDOW = 10


class TrainingDiverged(RuntimeError):
    """Losses were non-finite for several consecutive batches."""


class GradientLeakError(RuntimeError):
    """A frozen parameter received a gradient during stage 3."""


class MissingArtifactError(FileNotFoundError):
    """A required checkpoint or dataset artifact does not exist."""


def deterministic_requested() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") == "1"


def apply_determinism() -> None:
    if deterministic_requested():
        torch.use_deterministic_algorithms(True)


@dataclass
class StageConfig:
    """Hyperparameters of one training stage plus the ablation switches."""

    stage: str
    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    use_shadow_disc: bool = True
    use_bp_blocks: bool = True
    two_stage: bool = True
    width_mult: float = 1.0
    bp_lam1: float = 1.0
    bp_lam2: float = 1.0
    max_steps: int | None = None
    target_l1: float | None = None
    debug_freeze_check: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage {self.stage!r} not one of {STAGES}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"Adam beta {beta} outside [0, 1)")
        if not self.two_stage and self.stage != "shadow":
            raise ValueError(
                "a single-stage configuration only trains the direct "
                "(shadow-style) generator"
            )
        w = self.base_width
        if w < 4 or w % 2:
            raise ValueError(
                f"width_mult {self.width_mult} gives unusable base width {w}"
            )

    @property
    def base_width(self) -> int:
        return int(round(DEFAULT_BASE_WIDTH * self.width_mult))

    @property
    def disc_width(self) -> int:
        return max(4, int(round(DEFAULT_DISC_WIDTH * self.width_mult)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "StageConfig":
        payload = dict(payload)
        payload["weights"] = LossWeights(**payload.get("weights", {}))
        return cls(**payload)


def ablation_label(config: StageConfig) -> str:
    """Name the configuration row implied by the ablation switches."""
    if config.two_stage:
        return "drn"
    if config.use_bp_blocks:
        return "bpae"
    if config.use_shadow_disc:
        return "shadadv"
    return "pix2pix"


def build_generator(config: StageConfig) -> ReconversionNet:
    kwargs = dict(
        base_width=config.base_width,
        use_bp_blocks=config.use_bp_blocks,
        lam1=config.bp_lam1,
        lam2=config.bp_lam2,
    )
    if config.stage == "scene":
        return SceneReconversionNet(**kwargs)
    if config.stage == "shadow":
        return ShadowPriorNet(**kwargs)
    raise ValueError(f"stage {config.stage!r} has no single generator")


def init_stage_models(config: StageConfig) -> dict:
    """Seeded construction of everything a stage trains from scratch."""
    torch.manual_seed(config.seed)
    if config.stage == "render":
        return {"renderer": init_parameters(ReRenderer(config.base_width))}
    models = {
        "generator": init_parameters(build_generator(config)),
        "disc": init_parameters(PatchDiscriminator(6, config.disc_width)),
    }
    if config.stage == "shadow" and config.use_shadow_disc:
        models["disc_shadow"] = init_parameters(
            PatchDiscriminator(6, config.disc_width)
        )
    return models


@dataclass
class CheckpointBundle:
    """Everything needed to resume or deploy one stage."""

    stage: str
    iteration: int
    config: StageConfig
    params: dict
    optimizers: dict
    torch_rng: torch.Tensor
    numpy_rng: dict


def state_hash(state: dict) -> str:
    """Order-independent digest of a named tensor mapping."""
    digest = hashlib.sha256()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(
            np.ascontiguousarray(state[name].detach().cpu().numpy()).tobytes()
        )
    return digest.hexdigest()


def config_hash(config: StageConfig) -> str:
    return hashlib.sha256(
        json.dumps(config.to_dict(), sort_keys=True).encode()
    ).hexdigest()


def _flatten_bundle(bundle: CheckpointBundle):
    tensors = {}
    opt_groups, opt_scalars = {}, {}
    for role in sorted(bundle.params):
        for name, value in bundle.params[role].items():
            tensors[f"params/{role}/{name}"] = value
    for role in sorted(bundle.optimizers):
        state_dict = bundle.optimizers[role]
        opt_groups[role] = state_dict.get("param_groups", [])
        opt_scalars[role] = {}
        for idx, entry in state_dict.get("state", {}).items():
            for key, value in entry.items():
                if isinstance(value, torch.Tensor):
                    tensors[f"opt/{role}/{idx}/{key}"] = value
                else:
                    opt_scalars[role].setdefault(str(idx), {})[key] = value
    tensors["rng/torch"] = bundle.torch_rng
    extras = {
        "numpy_rng": bundle.numpy_rng,
        "opt_groups": opt_groups,
        "opt_scalars": opt_scalars,
        "param_roles": sorted(bundle.params),
        "opt_roles": sorted(bundle.optimizers),
    }
    return tensors, extras


def save_checkpoint(bundle: CheckpointBundle, path) -> None:
    """Write the bundle as a JSON header plus raw little-endian tensor bytes.

    Saving, loading and saving again produces identical bytes.
    """
    tensors, extras = _flatten_bundle(bundle)
    names = sorted(tensors)
    arrays = [
        np.ascontiguousarray(tensors[name].detach().cpu().numpy())
        for name in names
    ]
    header = {
        "format": "relight-checkpoint",
        "version": CKPT_VERSION,
        "stage": bundle.stage,
        "iteration": bundle.iteration,
        "config": bundle.config.to_dict(),
        "config_hash": config_hash(bundle.config),
        "tensors": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in zip(names, arrays)
        ],
        "extras": extras,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> CheckpointBundle:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing checkpoint {path.name} (looked in {path.parent})")
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError(f"{path} is not a relight checkpoint")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode())
        arrays = {}
        for meta in header["tensors"]:
            dtype = np.dtype(meta["dtype"])
            count = int(np.prod(meta["shape"], dtype=np.int64)) if meta["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            arrays[meta["name"]] = np.frombuffer(raw, dtype=dtype).reshape(
                meta["shape"]
            ).copy()

    extras = header["extras"]
    params = {role: {} for role in extras["param_roles"]}
    optimizers = {
        role: {"state": {}, "param_groups": _restore_groups(extras["opt_groups"][role])}
        for role in extras["opt_roles"]
    }
    torch_rng = None
    for name, arr in arrays.items():
        tensor = torch.from_numpy(arr)
        parts = name.split("/")
        if parts[0] == "params":
            params[parts[1]]["/".join(parts[2:])] = tensor
        elif parts[0] == "opt":
            role, idx, key = parts[1], int(parts[2]), "/".join(parts[3:])
            optimizers[role]["state"].setdefault(idx, {})[key] = tensor
        elif name == "rng/torch":
            torch_rng = tensor
    for role, scalars in extras["opt_scalars"].items():
        for idx, entry in scalars.items():
            optimizers[role]["state"].setdefault(int(idx), {}).update(entry)

    return CheckpointBundle(
        stage=header["stage"],
        iteration=header["iteration"],
        config=StageConfig.from_dict(header["config"]),
        params=params,
        optimizers=optimizers,
        torch_rng=torch_rng,
        numpy_rng=extras["numpy_rng"],
    )


def _restore_groups(groups: list) -> list:
    restored = []
    for group in groups:
        group = dict(group)
        if "betas" in group:
            group["betas"] = tuple(group["betas"])
        restored.append(group)
    return restored


def _module_params(module: torch.nn.Module) -> dict:
    return {name: value for name, value in module.state_dict().items()}


def _model_batch(arr_u8: np.ndarray) -> torch.Tensor:
    # Mirrors load_png + to_model_range bit for bit.
    unit = torch.from_numpy(arr_u8.astype(np.float32) / 255.0)
    return unit * 2.0 - 1.0


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def write_loss_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def read_loss_log(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for entry in csv.DictReader(fh):
            rows.append(
                {
                    key: (None if entry[key] == "" else float(entry[key]))
                    for key in LOG_COLUMNS
                }
            )
    return rows


class _RunLog:
    """Collects per-iteration rows and drives the stop conditions."""

    def __init__(self, config: StageConfig):
        self.config = config
        self.rows = []
        self.nonfinite_streak = 0

    def record(self, iteration, loss_g, loss_d, loss_d_shad, l1) -> None:
        values = [loss_g, loss_d, loss_d_shad, l1]
        self.rows.append((iteration, *values))
        if all(v is None or math.isfinite(v) for v in values):
            self.nonfinite_streak = 0
        else:
            self.nonfinite_streak += 1
            if self.nonfinite_streak >= _NONFINITE_LIMIT:
                raise TrainingDiverged(
                    f"stage {self.config.stage}: non-finite losses for "
                    f"{self.nonfinite_streak} consecutive batches "
                    f"(iteration {iteration})"
                )

    def should_stop(self, iteration: int) -> bool:
        if self.config.max_steps is not None and iteration >= self.config.max_steps:
            return True
        if self.config.target_l1 is not None and self.rows:
            recent = [row[4] for row in self.rows[-_L1_WINDOW:]]
            if sum(recent) / len(recent) < self.config.target_l1:
                return True
        return False


def _finish(stage, config, iteration, params, optimizers, rng, rows, log_path):
    if log_path is not None:
        write_loss_log(log_path, rows)
    return CheckpointBundle(
        stage=stage,
        iteration=iteration,
        config=config,
        params=params,
        optimizers={k: v.state_dict() for k, v in optimizers.items()},
        torch_rng=torch.get_rng_state(),
        numpy_rng=rng.bit_generator.state,
    )


def _require_stage(config: StageConfig, stage: str) -> None:
    if config.stage != stage:
        raise ValueError(f"config is for stage {config.stage!r}, expected {stage!r}")


def _require_data(data: TrainingSet) -> None:
    if len(data) == 0:
        raise ValueError("training set is empty")


def train_scene(data: TrainingSet, config: StageConfig,
                log_path=None) -> CheckpointBundle:
    """Stage 1: fit the scene extractor against shadow-free targets."""
    _require_stage(config, "scene")
    _require_data(data)
    apply_determinism()
    models = init_stage_models(config)
    generator, disc = models["generator"], models["disc"]
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=betas)
    rng = np.random.default_rng(config.seed)
    log = _RunLog(config)

    iteration = 0
    stop = False
    for _ in range(config.epochs):
        if stop:
            break
        order = rng.permutation(len(data))
        for batch in _batches(order, config.batch_size):
            x_u8, _, ysf_u8 = data.triples(batch)
            x = _model_batch(x_u8)
            y_sf = _model_batch(ysf_u8)

            with torch.no_grad():
                _, fake = generator(x, with_head=True)
            loss_d = adv_loss_d(disc(x, y_sf), disc(x, fake))
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            _, fake = generator(x, with_head=True)
            loss_g = scene_objective(fake, y_sf, disc, x, config.weights)
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()

            iteration += 1
            with torch.no_grad():
                l1 = float(F.l1_loss(fake.detach(), y_sf))
            log.record(iteration, float(loss_g.detach()), float(loss_d.detach()), None, l1)
            if log.should_stop(iteration):
                stop = True
                break

    return _finish(
        "scene", config, iteration,
        {"generator": _module_params(generator), "disc": _module_params(disc)},
        {"g": opt_g, "d": opt_d}, rng, log.rows, log_path,
    )


def train_shadow(data: TrainingSet, config: StageConfig,
                 log_path=None) -> CheckpointBundle:
    """Stage 2: fit the light-effect extractor against target-light images.

    With ``use_shadow_disc`` a second discriminator judges rectified dark
    regions of (condition, candidate) pairs; switching it off reproduces the
    plain conditional setup.
    """
    _require_stage(config, "shadow")
    _require_data(data)
    apply_determinism()
    models = init_stage_models(config)
    generator, disc = models["generator"], models["disc"]
    shadow_disc = models.get("disc_shadow")
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=betas)
    optimizers = {"g": opt_g, "d": opt_d}
    opt_ds = None
    if shadow_disc is not None:
        opt_ds = torch.optim.Adam(shadow_disc.parameters(), lr=config.lr, betas=betas)
        optimizers["d_shadow"] = opt_ds
    rng = np.random.default_rng(config.seed)
    log = _RunLog(config)

    iteration = 0
    stop = False
    alpha = config.weights.shadow_alpha
    for _ in range(config.epochs):
        if stop:
            break
        order = rng.permutation(len(data))
        for batch in _batches(order, config.batch_size):
            x_u8, y_u8, _ = data.triples(batch)
            x = _model_batch(x_u8)
            y = _model_batch(y_u8)

            with torch.no_grad():
                _, fake = generator(x, with_head=True)
            loss_d = adv_loss_d(disc(x, y), disc(x, fake))
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            loss_ds = None
            if shadow_disc is not None:
                rect_x = rectify_for_shadow_disc(x, alpha)
                loss_ds_t = adv_loss_d(
                    shadow_disc(rect_x, rectify_for_shadow_disc(y, alpha)),
                    shadow_disc(rect_x, rectify_for_shadow_disc(fake, alpha)),
                )
                opt_ds.zero_grad()
                loss_ds_t.backward()
                opt_ds.step()
                loss_ds = float(loss_ds_t.detach())

            _, fake = generator(x, with_head=True)
            loss_g = shadow_objective(fake, y, disc, shadow_disc, x, config.weights)
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()

            iteration += 1
            with torch.no_grad():
                l1 = float(F.l1_loss(fake.detach(), y))
            log.record(iteration, float(loss_g.detach()), float(loss_d.detach()), loss_ds, l1)
            if log.should_stop(iteration):
                stop = True
                break

    params = {"generator": _module_params(generator), "disc": _module_params(disc)}
    if shadow_disc is not None:
        params["disc_shadow"] = _module_params(shadow_disc)
    return _finish("shadow", config, iteration, params, optimizers, rng,
                   log.rows, log_path)


def _load_bundle(source, expected_stage: str) -> CheckpointBundle:
    if isinstance(source, CheckpointBundle):
        bundle = source
    else:
        bundle = load_checkpoint(source)
    if bundle.stage != expected_stage:
        raise ValueError(
            f"expected a {expected_stage!r} checkpoint, got {bundle.stage!r}"
        )
    return bundle


def frozen_backbone(bundle: CheckpointBundle) -> ReconversionBackbone:
    """Rebuild a stage-1/2 backbone (head dropped) and freeze it."""
    config = bundle.config
    backbone = ReconversionBackbone(
        base_width=config.base_width,
        use_skip=(bundle.stage == "scene"),
        use_bp_blocks=config.use_bp_blocks,
        lam1=config.bp_lam1,
        lam2=config.bp_lam2,
    )
    state = {
        name.removeprefix("backbone."): value
        for name, value in bundle.params["generator"].items()
        if name.startswith("backbone.")
    }
    backbone.load_state_dict(state)
    backbone.requires_grad_(False)
    backbone.eval()
    return backbone


def _assert_frozen_clean(named_modules: dict, iteration: int) -> None:
    for role, module in named_modules.items():
        for name, param in module.named_parameters():
            grad = param.grad
            if grad is not None and float(grad.abs().max()) != 0.0:
                raise GradientLeakError(
                    f"gradient leaked into frozen {role} parameter {name!r} "
                    f"at iteration {iteration}"
                )


def train_render(data: TrainingSet, scene_ckpt, shadow_ckpt,
                 config: StageConfig, log_path=None,
                 feat_extractor=None) -> CheckpointBundle:
    """Stage 3: freeze both extractors and fit the re-renderer.

    Feature extraction runs under ``no_grad``; with
    ``config.debug_freeze_check`` every step additionally asserts that no
    frozen parameter accumulated a gradient.
    """
    _require_stage(config, "render")
    _require_data(data)
    apply_determinism()
    scene_bundle = _load_bundle(scene_ckpt, "scene")
    shadow_bundle = _load_bundle(shadow_ckpt, "shadow")
    if scene_bundle.config.base_width != shadow_bundle.config.base_width:
        raise ValueError("stage-1/2 checkpoints disagree on the base width")
    if scene_bundle.config.base_width != config.base_width:
        raise ValueError(
            "render width_mult does not match the stage-1/2 checkpoints"
        )
    scene_net = frozen_backbone(scene_bundle)
    shadow_net = frozen_backbone(shadow_bundle)

    models = init_stage_models(config)
    renderer = models["renderer"]
    if feat_extractor is None:
        feat_extractor = FixedFeatureExtractor()
    opt = torch.optim.Adam(
        renderer.parameters(), lr=config.lr,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    rng = np.random.default_rng(config.seed)
    log = _RunLog(config)
    frozen = {"scene": scene_net, "shadow": shadow_net}

    iteration = 0
    stop = False
    for _ in range(config.epochs):
        if stop:
            break
        order = rng.permutation(len(data))
        for batch in _batches(order, config.batch_size):
            x_u8, y_u8, _ = data.triples(batch)
            x = _model_batch(x_u8)
            y = _model_batch(y_u8)

            with torch.no_grad():
                scene_feats = scene_net(x)
                shadow_feats = shadow_net(x)
            estimate = renderer(scene_feats, shadow_feats)
            loss = perceptual_l1_loss(
                estimate, y, feat_extractor, config.weights.perceptual_weight
            )
            opt.zero_grad()
            loss.backward()
            if config.debug_freeze_check:
                _assert_frozen_clean(frozen, iteration + 1)
            opt.step()

            iteration += 1
            with torch.no_grad():
                l1 = float(F.l1_loss(estimate.detach(), y))
            log.record(iteration, float(loss.detach()), None, None, l1)
            if log.should_stop(iteration):
                stop = True
                break

    return _finish("render", config, iteration,
                   {"renderer": _module_params(renderer)}, {"g": opt},
                   rng, log.rows, log_path)


class DeployedModel:
    """Inference wrapper around the trained components."""

    def __init__(self, label: str, estimate_fn, metadata: dict):
        self.label = label
        self._estimate = estimate_fn
        self.metadata = metadata

    def estimate(self, x_model: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self._estimate(x_model)


def load_deployment(ckpt_dir) -> DeployedModel:
    """Assemble the deployment path from a checkpoint directory.

    Two-stage configurations need ``scene.ckpt``, ``shadow.ckpt`` and
    ``render.ckpt``; single-stage ones only ``shadow.ckpt`` (the painting
    head stays attached there).
    """
    ckpt_dir = Path(ckpt_dir)
    shadow_bundle = _load_bundle(ckpt_dir / "shadow.ckpt", "shadow")
    config = shadow_bundle.config
    metadata = {
        "ablation": {
            "shadow_adversary": config.use_shadow_disc,
            "back_projection": config.use_bp_blocks,
            "stages": 2 if config.two_stage else 1,
        },
        "checkpoint_iterations": {"shadow": shadow_bundle.iteration},
    }
    label = ablation_label(config)

    if not config.two_stage:
        net = ShadowPriorNet(
            base_width=config.base_width,
            use_bp_blocks=config.use_bp_blocks,
            lam1=config.bp_lam1,
            lam2=config.bp_lam2,
        )
        net.load_state_dict(shadow_bundle.params["generator"])
        net.requires_grad_(False)
        net.eval()
        return DeployedModel(
            label, lambda x: net(x, with_head=True)[1], metadata
        )

    scene_bundle = _load_bundle(ckpt_dir / "scene.ckpt", "scene")
    render_bundle = _load_bundle(ckpt_dir / "render.ckpt", "render")
    scene_net = frozen_backbone(scene_bundle)
    shadow_net = frozen_backbone(shadow_bundle)
    renderer = ReRenderer(render_bundle.config.base_width)
    renderer.load_state_dict(render_bundle.params["renderer"])
    renderer.requires_grad_(False)
    renderer.eval()
    metadata["checkpoint_iterations"].update(
        scene=scene_bundle.iteration, render=render_bundle.iteration
    )
    return DeployedModel(
        label,
        lambda x: renderer(scene_net(x), shadow_net(x)),
        metadata,
    )


def _tensor_from_image(img: ImageTensor) -> torch.Tensor:
    return torch.from_numpy(np.array(to_model_range(img).data))


def _image_from_tensor(t: torch.Tensor) -> ImageTensor:
    return from_model_range(ImageTensor(t.detach().cpu().numpy(), MODEL))


def infer_image(model: DeployedModel, img: ImageTensor) -> ImageTensor:
    """Relight one unit-range image through the deployment path."""
    return _image_from_tensor(model.estimate(_tensor_from_image(img)))


def input_copy_baseline(
    data_root,
    scenes: list | None = None,
    target: LightSetting | None = None,
    include_identity: bool = False,
) -> ScoreBlock:
    """Score the unmodified inputs against the target-light ground truth.

    ``scenes`` defaults to the manifest's validation split, matching
    :func:`evaluate`.
    """
    if scenes is None:
        scenes = read_manifest(data_root)["split"]["val"]
    resolved = _resolve_target(data_root, target)
    scores = []
    for scene_id, light, x, y, _ in iter_labeled_pairs(data_root, resolved, scenes):
        if not include_identity and light == resolved:
            continue
        scores.append(
            ImageScore(f"{scene_id}/{light.name}", psnr(x, y), ssim(x, y))
        )
    if not scores:
        raise ValueError("no evaluation pairs found (empty validation set?)")
    return ScoreBlock.from_scores(scores)


def _resolve_target(data_root, target: LightSetting | None) -> LightSetting:
    if target is not None:
        return target
    return manifest_target(read_manifest(data_root))


def evaluate(
    ckpt_dir,
    data_root,
    scenes: list | None = None,
    target: LightSetting | None = None,
    include_identity: bool = False,
) -> MetricReport:
    """Score the deployed model and the input-copy baseline on a scene set.

    ``scenes`` defaults to the manifest's validation split. Identity pairs
    (input already under the target light) are excluded from the aggregates
    by default: the baseline would score infinite PSNR on them by
    construction.
    """
    manifest = read_manifest(data_root)
    if scenes is None:
        scenes = manifest["split"]["val"]
    if not scenes:
        raise ValueError("validation set is empty")
    resolved_target = _resolve_target(data_root, target)
    model = load_deployment(ckpt_dir)

    scores = []
    for scene_id, light, x, y, _ in iter_labeled_pairs(
        data_root, resolved_target, scenes
    ):
        if not include_identity and light == resolved_target:
            continue
        estimate = infer_image(model, x)
        scores.append(
            ImageScore(f"{scene_id}/{light.name}", psnr(estimate, y), ssim(estimate, y))
        )
    if not scores:
        raise ValueError("no evaluation pairs found (empty validation set?)")

    baseline = input_copy_baseline(
        data_root, scenes, resolved_target, include_identity
    )
    metadata = dict(model.metadata)
    metadata.update(
        {
            "identity_pairs_excluded": not include_identity,
            "n_scenes": len(scenes),
            "ssim_convention": "channel-mean, gaussian 11x11 sigma 1.5",
            "target": {
                "direction": resolved_target.direction,
                "kelvin": resolved_target.temperature_kelvin,
            },
        }
    )
    return MetricReport(
        label=model.label,
        model=ScoreBlock.from_scores(scores),
        baseline=baseline,
        metadata=metadata,
    )


def train_stage(
    data_root,
    config: StageConfig,
    ckpt_dir,
    scenes: list | None = None,
    target: LightSetting | None = None,
) -> CheckpointBundle:
    """Train one stage on a dataset directory and save ``<stage>.ckpt``.

    The training split comes from the manifest unless ``scenes`` is given.
    Stage ``render`` requires ``scene.ckpt`` and ``shadow.ckpt`` in
    ``ckpt_dir``.
    """
    manifest = read_manifest(data_root)
    if scenes is None:
        scenes = manifest["split"]["train"]
    data = load_training_set(data_root, target, scenes)
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / f"{config.stage}_log.csv"
    if config.stage == "scene":
        bundle = train_scene(data, config, log_path)
    elif config.stage == "shadow":
        bundle = train_shadow(data, config, log_path)
    else:
        bundle = train_render(
            data, ckpt_dir / "scene.ckpt", ckpt_dir / "shadow.ckpt",
            config, log_path,
        )
    save_checkpoint(bundle, ckpt_dir / f"{config.stage}.ckpt")
    return bundle
