"""Command-line entry point.

Subcommands cover the whole pipeline: ``gen-data`` renders a synthetic
dataset, ``fuse`` (re)builds shadow-free targets, ``train`` runs one of the
three stages, ``eval`` writes a metric report, ``infer`` relights single
images, and ``report`` turns logs and reports into static plots.

Configuration can come from a JSON file with flat dotted keys (for example
``{"train.lr": 2e-4}``); explicit flags override the file. Every subcommand
writes the fully resolved configuration to ``run_config.json`` next to its
outputs. Exit codes: 0 success, 1 runtime failure, 2 usage error. Setting
``DRN_DETERMINISTIC=1`` forces deterministic kernels.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .datagen import RenderConfig, generate_dataset, read_manifest
from .fusion import fuse_scene_dir
from .imaging import LightSetting, load_png, save_png
from .losses import LossWeights
from .metrics import MetricReport
from .training import (
    MissingArtifactError,
    StageConfig,
    apply_determinism,
    evaluate,
    infer_image,
    load_deployment,
    train_stage,
)


class UsageError(Exception):
    """Invalid flag or config values; maps to exit code 2."""


def _load_file_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(payload, dict):
        raise UsageError("config file must hold a flat JSON object")
    return payload


class _Resolver:
    """Merges built-in defaults, config-file entries, and explicit flags."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.file_config = _load_file_config(getattr(args, "config", None))
        self.resolved = {}

    def get(self, name: str, default=None):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is None:
            value = self.file_config.get(f"{self.command}.{name}", default)
        self.resolved[name] = value
        return value

    def flag_off(self, name: str, positive_key: str) -> bool:
        """A store-true switch that disables ``positive_key`` (default on)."""
        if getattr(self.args, name.replace("-", "_"), False):
            value = False
        else:
            value = bool(self.file_config.get(f"{self.command}.{positive_key}", True))
        self.resolved[positive_key] = value
        return value


def _write_run_config(out_dir, command: str, resolved: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in resolved.items()},
    }
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _target_from(resolver: _Resolver) -> LightSetting:
    direction = resolver.get("target-direction", "E")
    kelvin = int(resolver.get("target-kelvin", 4500))
    try:
        return LightSetting(direction, kelvin)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_gen_data(args) -> int:
    resolver = _Resolver(args, "gen-data")
    out = Path(resolver.get("out"))
    n_scenes = int(resolver.get("scenes", 2))
    size = int(resolver.get("size", 64))
    seed = int(resolver.get("seed", 0))
    split = float(resolver.get("split", 0.9))
    ambient = float(resolver.get("ambient", 0.25))
    shadow_length = float(resolver.get("shadow-length", 0.3))
    target = _target_from(resolver)
    if size % 16 != 0:
        raise UsageError(f"--size {size} is not divisible by 16")
    if n_scenes < 1:
        raise UsageError("--scenes must be at least 1")
    try:
        cfg = RenderConfig(
            resolution=size, ambient=ambient, shadow_length=shadow_length
        )
        manifest = generate_dataset(
            n_scenes, cfg, out, seed=seed, split_ratio=split, target=target
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    _write_run_config(out, "gen-data", resolver.resolved)
    print(
        f"wrote {len(manifest['scenes'])} scenes "
        f"({len(manifest['split']['train'])} train / "
        f"{len(manifest['split']['val'])} val) under {out}"
    )
    return 0


def cmd_fuse(args) -> int:
    resolver = _Resolver(args, "fuse")
    root = Path(resolver.get("data"))
    levels = resolver.get("levels")
    levels = int(levels) if levels is not None else None
    scenes = args.scene
    if not scenes:
        try:
            scenes = read_manifest(root)["scenes"]
        except FileNotFoundError:
            scenes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not scenes:
        raise MissingArtifactError(f"no scene directories found under {root}")
    resolver.resolved["scenes"] = list(scenes)
    for scene_id in scenes:
        fuse_scene_dir(root / scene_id, levels)
    _write_run_config(root, "fuse", resolver.resolved)
    print(f"fused {len(scenes)} scenes under {root}")
    return 0


def _stage_config(resolver: _Resolver, stage: str) -> StageConfig:
    weights = LossWeights(
        l1_weight=float(resolver.get("l1-weight", 100.0)),
        perceptual_weight=float(resolver.get("perceptual-weight", 0.01)),
        shadow_alpha=float(resolver.get("shadow-alpha", 0.059)),
    )
    max_steps = resolver.get("max-steps")
    target_l1 = resolver.get("target-l1")
    return StageConfig(
        stage=stage,
        epochs=int(resolver.get("epochs", 20)),
        batch_size=int(resolver.get("batch-size", 4)),
        lr=float(resolver.get("lr", 1e-4)),
        adam_beta1=float(resolver.get("adam-beta1", 0.5)),
        adam_beta2=float(resolver.get("adam-beta2", 0.999)),
        seed=int(resolver.get("seed", 0)),
        weights=weights,
        use_shadow_disc=resolver.flag_off("no-shadow-disc", "use_shadow_disc"),
        use_bp_blocks=resolver.flag_off("plain-blocks", "use_bp_blocks"),
        two_stage=resolver.flag_off("single-stage", "two_stage"),
        width_mult=float(resolver.get("width-mult", 1.0)),
        bp_lam1=float(resolver.get("bp-lam1", 1.0)),
        bp_lam2=float(resolver.get("bp-lam2", 1.0)),
        max_steps=int(max_steps) if max_steps is not None else None,
        target_l1=float(target_l1) if target_l1 is not None else None,
        debug_freeze_check=bool(getattr(resolver.args, "debug_freeze", False)),
    )


def cmd_train(args) -> int:
    resolver = _Resolver(args, "train")
    data_root = Path(resolver.get("data"))
    ckpt_dir = Path(resolver.get("ckpt-dir"))
    try:
        config = _stage_config(resolver, args.stage)
    except ValueError as exc:
        raise UsageError(str(exc))
    if config.stage == "render":
        for prerequisite in ("scene.ckpt", "shadow.ckpt"):
            if not (ckpt_dir / prerequisite).exists():
                raise MissingArtifactError(
                    f"stage render needs {prerequisite} in {ckpt_dir}; "
                    f"train that stage first"
                )
    bundle = train_stage(data_root, config, ckpt_dir)
    resolver.resolved["stage"] = config.stage
    _write_run_config(ckpt_dir, "train", resolver.resolved)
    print(
        f"stage {config.stage} finished after {bundle.iteration} iterations; "
        f"checkpoint at {ckpt_dir / (config.stage + '.ckpt')}"
    )
    return 0


def cmd_eval(args) -> int:
    resolver = _Resolver(args, "eval")
    data_root = Path(resolver.get("data"))
    ckpt_dir = Path(resolver.get("ckpt-dir"))
    report_path = Path(resolver.get("report"))
    split = resolver.get("split", "val")
    if split not in ("val", "train", "all"):
        raise UsageError(f"--split must be val, train or all, not {split!r}")
    manifest = read_manifest(data_root)
    scenes = manifest["scenes"] if split == "all" else manifest["split"][split]
    report = evaluate(ckpt_dir, data_root, scenes=scenes)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report.save(report_path)
    _write_run_config(report_path.parent, "eval", resolver.resolved)
    plots_dir = resolver.get("plots")
    if plots_dir is not None:
        from .plots import plot_loss_curves, plot_metric_bars

        plots_dir = Path(plots_dir)
        plots_dir.mkdir(parents=True, exist_ok=True)
        plot_metric_bars(report, plots_dir / "metric_bars.png")
        for log in sorted(ckpt_dir.glob("*_log.csv")):
            plot_loss_curves(log, plots_dir / (log.stem + ".png"))
    print(
        f"[{report.label}] mean PSNR {report.model.mean_psnr_db:.2f} dB "
        f"(baseline {report.baseline.mean_psnr_db:.2f}), "
        f"mean SSIM {report.model.mean_ssim:.4f} "
        f"(baseline {report.baseline.mean_ssim:.4f}); report at {report_path}"
    )
    return 0


def cmd_infer(args) -> int:
    resolver = _Resolver(args, "infer")
    in_path = Path(resolver.get("in"))
    ckpt_dir = Path(resolver.get("ckpt-dir"))
    out_path = Path(resolver.get("out"))
    image = load_png(in_path)
    model = load_deployment(ckpt_dir)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_png(infer_image(model, image), out_path)
    _write_run_config(out_path.parent, "infer", resolver.resolved)
    print(f"[{model.label}] relit {in_path} -> {out_path}")
    return 0


def cmd_report(args) -> int:
    from .plots import plot_loss_curves, plot_metric_bars

    resolver = _Resolver(args, "report")
    out_dir = Path(resolver.get("out"))
    logs = args.log or []
    metrics_path = resolver.get("metrics")
    if not logs and metrics_path is None:
        raise UsageError("report needs at least one --log or a --metrics file")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for log in logs:
        written.append(plot_loss_curves(Path(log), out_dir / (Path(log).stem + ".png")))
    if metrics_path is not None:
        report = MetricReport.load(Path(metrics_path))
        written.append(plot_metric_bars(report, out_dir / "metric_bars.png"))
    resolver.resolved["logs"] = [str(p) for p in logs]
    _write_run_config(out_dir, "report", resolver.resolved)
    print(f"wrote {len(written)} plot(s) under {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relight",
        description="Any-to-one image relighting toolbox.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="render a synthetic dataset")
    gen.add_argument("--out", required=True, help="dataset root directory")
    gen.add_argument("--scenes", type=int, help="number of scenes (default 2)")
    gen.add_argument("--size", type=int, help="image resolution (default 64)")
    gen.add_argument("--seed", type=int, help="base seed (default 0)")
    gen.add_argument("--split", type=float, help="train fraction (default 0.9)")
    gen.add_argument("--ambient", type=float, help="ambient light level")
    gen.add_argument("--shadow-length", type=float, help="shadow length in canvas units")
    gen.add_argument("--target-direction", help="target light direction (default E)")
    gen.add_argument("--target-kelvin", type=int, help="target temperature (default 4500)")
    gen.add_argument("--config", help="JSON config file with dotted keys")
    gen.set_defaults(func=cmd_gen_data)

    fuse = sub.add_parser("fuse", help="build shadow-free fusions for scenes")
    fuse.add_argument("--data", required=True, help="dataset root")
    fuse.add_argument("--scene", action="append", help="restrict to a scene id (repeatable)")
    fuse.add_argument("--levels", type=int, help="pyramid depth override")
    fuse.add_argument("--config", help="JSON config file")
    fuse.set_defaults(func=cmd_fuse)

    train = sub.add_parser("train", help="run one training stage")
    train.add_argument("--stage", required=True, choices=("scene", "shadow", "render"))
    train.add_argument("--data", required=True, help="dataset root")
    train.add_argument("--ckpt-dir", required=True, help="checkpoint directory")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--adam-beta1", type=float)
    train.add_argument("--adam-beta2", type=float)
    train.add_argument("--seed", type=int)
    train.add_argument("--width-mult", type=float)
    train.add_argument("--bp-lam1", type=float,
                       help="residual weighting inside back-projection blocks")
    train.add_argument("--bp-lam2", type=float,
                       help="direct-path weighting inside back-projection blocks")
    train.add_argument("--l1-weight", type=float)
    train.add_argument("--perceptual-weight", type=float)
    train.add_argument("--shadow-alpha", type=float)
    train.add_argument("--max-steps", type=int)
    train.add_argument("--target-l1", type=float)
    train.add_argument("--no-shadow-disc", action="store_true",
                       help="drop the dark-region discriminator")
    train.add_argument("--plain-blocks", action="store_true",
                       help="plain strided convs instead of back-projection blocks")
    train.add_argument("--single-stage", action="store_true",
                       help="train one direct generator (shadow stage only)")
    train.add_argument("--debug-freeze", action="store_true",
                       help="assert zero gradients into frozen nets every step")
    train.add_argument("--config", help="JSON config file")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score checkpoints against ground truth")
    ev.add_argument("--data", required=True)
    ev.add_argument("--ckpt-dir", required=True)
    ev.add_argument("--report", required=True, help="output report JSON path")
    ev.add_argument("--split", choices=("val", "train", "all"))
    ev.add_argument("--plots", help="directory for plot images")
    ev.add_argument("--config", help="JSON config file")
    ev.set_defaults(func=cmd_eval)

    infer = sub.add_parser("infer", help="relight one image")
    infer.add_argument("--in", dest="in", required=True, help="input PNG")
    infer.add_argument("--ckpt-dir", required=True)
    infer.add_argument("--out", required=True, help="output PNG")
    infer.add_argument("--config", help="JSON config file")
    infer.set_defaults(func=cmd_infer)

    rep = sub.add_parser("report", help="emit plots from logs and reports")
    rep.add_argument("--log", action="append", help="training log CSV (repeatable)")
    rep.add_argument("--metrics", help="metric report JSON")
    rep.add_argument("--out", required=True, help="output directory")
    rep.add_argument("--config", help="JSON config file")
    rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    apply_determinism()
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps failures to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
