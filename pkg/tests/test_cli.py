import hashlib
import json

import pytest

from relight.cli import main
from relight.imaging import load_png
from relight.metrics import MetricReport


def _run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def smoke_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data") / "d"
    code = main(["gen-data", "--out", str(root), "--scenes", "2",
                 "--size", "32", "--seed", "7"])
    assert code == 0
    return root


@pytest.fixture(scope="module")
def smoke_ckpts(smoke_dataset, tmp_path_factory):
    ckpt_dir = tmp_path_factory.mktemp("cli_ckpts")
    for stage in ("scene", "shadow", "render"):
        code = main([
            "train", "--stage", stage, "--data", str(smoke_dataset),
            "--ckpt-dir", str(ckpt_dir), "--epochs", "1", "--max-steps", "2",
            "--width-mult", "0.25", "--seed", "0",
        ])
        assert code == 0
    return ckpt_dir


class TestGenData:
    def test_counts(self, smoke_dataset):
        pngs = list(smoke_dataset.rglob("*.png"))
        assert len(pngs) == 2 * 41
        assert (smoke_dataset / "manifest.json").exists()
        assert (smoke_dataset / "run_config.json").exists()

    def test_idempotent_manifest(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert _run("gen-data", "--out", out, "--scenes", "2",
                        "--size", "32", "--seed", "3") == 0
        digest = lambda p: hashlib.sha256((p / "manifest.json").read_bytes()).hexdigest()
        assert digest(a) == digest(b)

    def test_bad_size_is_usage_error(self, tmp_path, capsys):
        code = _run("gen-data", "--out", tmp_path / "x", "--scenes", "1",
                    "--size", "60", "--seed", "0")
        assert code == 2
        assert "not divisible by 16" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, tmp_path):
        assert _run("gen-data", "--out", tmp_path / "x", "--wat", "1") == 2


class TestFuse:
    def test_refuse_existing_dataset(self, smoke_dataset):
        before = (smoke_dataset / "scene0000" / "shadow_free.png").read_bytes()
        assert _run("fuse", "--data", smoke_dataset) == 0
        after = (smoke_dataset / "scene0000" / "shadow_free.png").read_bytes()
        assert before == after  # deterministic refusion

    def test_single_scene_flag(self, smoke_dataset):
        assert _run("fuse", "--data", smoke_dataset, "--scene", "scene0001") == 0


class TestTrain:
    def test_render_without_prereqs_exits_1(self, smoke_dataset, tmp_path, capsys):
        code = _run("train", "--stage", "render", "--data", smoke_dataset,
                    "--ckpt-dir", tmp_path / "empty")
        assert code == 1
        assert "scene.ckpt" in capsys.readouterr().err

    def test_writes_artifacts(self, smoke_ckpts):
        for stage in ("scene", "shadow", "render"):
            assert (smoke_ckpts / f"{stage}.ckpt").exists()
            assert (smoke_ckpts / f"{stage}_log.csv").exists()
        assert (smoke_ckpts / "run_config.json").exists()

    def test_config_file_with_flag_override(self, smoke_dataset, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"train.epochs": 1, "train.max-steps": 1,
                                      "train.width-mult": 0.25}))
        ckpts = tmp_path / "ckpts"
        code = _run("train", "--stage", "scene", "--data", smoke_dataset,
                    "--ckpt-dir", ckpts, "--config", config, "--max-steps", "2")
        assert code == 0
        resolved = json.loads((ckpts / "run_config.json").read_text())
        assert resolved["config"]["max-steps"] == 2  # flag beats file
        assert resolved["config"]["width-mult"] == 0.25  # file beats default

    def test_bad_stage_config_exits_2(self, smoke_dataset, tmp_path):
        code = _run("train", "--stage", "scene", "--data", smoke_dataset,
                    "--ckpt-dir", tmp_path / "c", "--single-stage")
        assert code == 2

    def test_identical_runs_write_identical_checkpoints(self, smoke_dataset, tmp_path):
        dirs = [tmp_path / "run_a", tmp_path / "run_b"]
        for out in dirs:
            assert _run("train", "--stage", "scene", "--data", smoke_dataset,
                        "--ckpt-dir", out, "--epochs", "1", "--max-steps", "2",
                        "--width-mult", "0.25", "--seed", "5") == 0
        a = (dirs[0] / "scene.ckpt").read_bytes()
        b = (dirs[1] / "scene.ckpt").read_bytes()
        assert a == b
        assert ((dirs[0] / "scene_log.csv").read_bytes()
                == (dirs[1] / "scene_log.csv").read_bytes())

    def test_bp_lambda_flags_change_behavior(self, smoke_dataset, tmp_path):
        out_a, out_b = tmp_path / "lam_a", tmp_path / "lam_b"
        common = ["train", "--stage", "scene", "--data", str(smoke_dataset),
                  "--epochs", "1", "--max-steps", "1", "--width-mult", "0.25",
                  "--seed", "0"]
        assert main(common + ["--ckpt-dir", str(out_a)]) == 0
        assert main(common + ["--ckpt-dir", str(out_b), "--bp-lam2", "0.5"]) == 0
        resolved = json.loads((out_b / "run_config.json").read_text())
        assert resolved["config"]["bp-lam2"] == 0.5
        assert ((out_a / "scene.ckpt").read_bytes()
                != (out_b / "scene.ckpt").read_bytes())


class TestEvalInferReport:
    def test_eval_writes_schema_valid_report(self, smoke_dataset, smoke_ckpts, tmp_path):
        report_path = tmp_path / "out" / "report.json"
        code = _run("eval", "--data", smoke_dataset, "--ckpt-dir", smoke_ckpts,
                    "--report", report_path)
        assert code == 0
        report = MetricReport.load(report_path)
        assert report.label == "drn"
        assert report.baseline.per_image
        assert (report_path.parent / "run_config.json").exists()

    def test_infer_preserves_dimensions(self, smoke_dataset, smoke_ckpts, tmp_path):
        src = smoke_dataset / "scene0000" / "N_2500.png"
        dst = tmp_path / "relit.png"
        assert _run("infer", "--in", src, "--ckpt-dir", smoke_ckpts,
                    "--out", dst) == 0
        assert load_png(dst).data.shape == load_png(src).data.shape

    def test_infer_missing_ckpt_exits_1(self, smoke_dataset, tmp_path, capsys):
        src = smoke_dataset / "scene0000" / "N_2500.png"
        code = _run("infer", "--in", src, "--ckpt-dir", tmp_path / "none",
                    "--out", tmp_path / "y.png")
        assert code == 1
        assert "shadow.ckpt" in capsys.readouterr().err

    def test_report_plots(self, smoke_ckpts, smoke_dataset, tmp_path):
        report_path = tmp_path / "report.json"
        assert _run("eval", "--data", smoke_dataset, "--ckpt-dir", smoke_ckpts,
                    "--report", report_path) == 0
        out = tmp_path / "plots"
        code = _run("report", "--log", smoke_ckpts / "scene_log.csv",
                    "--metrics", report_path, "--out", out)
        assert code == 0
        assert (out / "scene_log.png").exists()
        assert (out / "metric_bars.png").exists()

    def test_report_without_inputs_exits_2(self, tmp_path):
        assert _run("report", "--out", tmp_path / "p") == 2

    def test_eval_plots_flag(self, smoke_dataset, smoke_ckpts, tmp_path):
        report_path = tmp_path / "r.json"
        plots = tmp_path / "plots"
        assert _run("eval", "--data", smoke_dataset, "--ckpt-dir", smoke_ckpts,
                    "--report", report_path, "--plots", plots) == 0
        assert (plots / "metric_bars.png").exists()
        assert (plots / "scene_log.png").exists()


class TestRunConfigAudit:
    def test_every_subcommand_writes_run_config(self, smoke_dataset, smoke_ckpts,
                                                tmp_path):
        # gen-data, train already covered; exercise the rest
        assert (smoke_dataset / "run_config.json").exists()
        assert (smoke_ckpts / "run_config.json").exists()

        assert _run("fuse", "--data", smoke_dataset) == 0
        assert json.loads((smoke_dataset / "run_config.json").read_text())[
            "command"] == "fuse"

        out_png = tmp_path / "out" / "y.png"
        assert _run("infer", "--in", smoke_dataset / "scene0000" / "N_2500.png",
                    "--ckpt-dir", smoke_ckpts, "--out", out_png) == 0
        assert json.loads((out_png.parent / "run_config.json").read_text())[
            "command"] == "infer"

        report_path = tmp_path / "rep.json"
        assert _run("eval", "--data", smoke_dataset, "--ckpt-dir", smoke_ckpts,
                    "--report", report_path) == 0
        plots = tmp_path / "plots2"
        assert _run("report", "--metrics", report_path, "--out", plots) == 0
        assert json.loads((plots / "run_config.json").read_text())[
            "command"] == "report"


class TestDeterministicEnv:
    def test_env_var_toggles_deterministic_kernels(self, monkeypatch):
        import torch

        from relight.training import apply_determinism, deterministic_requested

        monkeypatch.delenv("DRN_DETERMINISTIC", raising=False)
        assert not deterministic_requested()
        monkeypatch.setenv("DRN_DETERMINISTIC", "1")
        assert deterministic_requested()
        before = torch.are_deterministic_algorithms_enabled()
        try:
            apply_determinism()
            assert torch.are_deterministic_algorithms_enabled()
        finally:
            torch.use_deterministic_algorithms(before)
