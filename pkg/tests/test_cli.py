"""Command-line surface: subcommands, exit codes, file outputs."""

import json

import numpy as np
import pytest

from conftest import orbit_camera
from gs3.cli import cli_dispatch
from gs3.image import read_raw
from gs3.sceneio import load_checkpoint
from gs3.shadow import read_shadow_table


def run(*argv):
    return cli_dispatch(list(argv))


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """One small end-to-end train shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("gen", "--kind", "diffuse-sphere", "--out", str(data),
               "--views", "6", "--lights", "6", "--res", "24",
               "--seed", "0", "--test-views", "2") == 0
    out = root / "run"
    assert run("train", "--data", str(data / "manifest.json"), "--out", str(out),
               "--iters", "25", "--stage1", "8", "--basis", "2",
               "--n-init", "80", "--seed", "1", "--quiet") == 0
    return root


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert run("--help") == 0
        assert "usage" in capsys.readouterr().out

    def test_unknown_subcommand_exits_two(self, capsys):
        assert run("frobnicate") == 2

    def test_unknown_flag_exits_two(self):
        assert run("gen", "--kind", "diffuse-sphere", "--out", "x", "--bogus") == 2

    def test_runtime_failure_exits_one(self, tmp_path, capsys):
        assert run("eval", "--ckpt", str(tmp_path / "missing.gs3c"),
                   "--data", str(tmp_path / "missing.json"),
                   "--metrics", str(tmp_path / "m.csv")) == 1
        assert "error" in capsys.readouterr().err


class TestGen:
    def test_writes_train_and_test_manifests(self, toy_run):
        data = toy_run / "data"
        assert (data / "manifest.json").exists()
        assert (data / "manifest_test.json").exists()
        man = json.loads((data / "manifest.json").read_text())
        assert len(man["frames"]) == 6
        assert (data / "images" / "0000.png").exists()


class TestTrain:
    def test_outputs_exist(self, toy_run):
        out = toy_run / "run"
        assert (out / "checkpoint.gs3c").exists()
        log = (out / "loss_log.csv").read_text().splitlines()
        assert log[0] == "iter,stage,loss,l1,dssim,num_gaussians"
        assert len(log) == 26  # header + 25 iterations

    def test_checkpoint_loadable_with_config(self, toy_run):
        model, cfg = load_checkpoint(toy_run / "run" / "checkpoint.gs3c",
                                     want_config=True)
        assert cfg["basis_count"] == 2
        assert cfg["seed"] == 1
        assert model.iteration == 25

    def test_ablation_flags_recorded(self, toy_run, tmp_path):
        data = toy_run / "data"
        out = tmp_path / "ablation"
        assert run("train", "--data", str(data / "manifest.json"), "--out", str(out),
                   "--iters", "6", "--stage1", "2", "--basis", "1",
                   "--n-init", "40", "--no-psi", "--no-phi", "--no-shadow-splat",
                   "--quiet") == 0
        _, cfg = load_checkpoint(out / "checkpoint.gs3c", want_config=True)
        assert cfg["psi"] is False and cfg["phi"] is False
        assert cfg["shadow_splatting"] is False


class TestRender:
    def write_request(self, root):
        cam = orbit_camera(width=20, height=20, fx=26.0)
        cam_path = root / "camera.json"
        cam_path.write_text(json.dumps(cam.to_dict()))
        light_path = root / "light.json"
        light_path.write_text(json.dumps({
            "kind": "point", "position": [1.2, 1.4, 2.0],
            "intensity": [5, 5, 5], "falloff": "inverse_square"}))
        return cam_path, light_path

    def test_png_output(self, toy_run, tmp_path):
        cam_path, light_path = self.write_request(tmp_path)
        out = tmp_path / "frame.png"
        assert run("render", "--ckpt", str(toy_run / "run" / "checkpoint.gs3c"),
                   "--camera", str(cam_path), "--light", str(light_path),
                   "--out", str(out)) == 0
        assert out.exists()

    def test_raw_output_and_shadow_table(self, toy_run, tmp_path):
        cam_path, light_path = self.write_request(tmp_path)
        out = tmp_path / "frame.raw"
        table = tmp_path / "shadow.gs3s"
        assert run("render", "--ckpt", str(toy_run / "run" / "checkpoint.gs3c"),
                   "--camera", str(cam_path), "--light", str(light_path),
                   "--out", str(out), "--shadow-table", str(table)) == 0
        img = read_raw(out)
        assert img.shape == (20, 20, 3)
        raw_t, refined = read_shadow_table(table)
        assert np.all((raw_t >= 0) & (raw_t <= 1))
        assert np.all((refined > 0) & (refined < 1))

    def test_env_light_render(self, toy_run, tmp_path):
        cam_path, _ = self.write_request(tmp_path)
        light_path = tmp_path / "env.json"
        light_path.write_text(json.dumps({"kind": "env", "map": "white",
                                          "samples": 4}))
        out = tmp_path / "env.png"
        assert run("render", "--ckpt", str(toy_run / "run" / "checkpoint.gs3c"),
                   "--camera", str(cam_path), "--light", str(light_path),
                   "--out", str(out)) == 0
        assert out.exists()

    def test_deterministic_output(self, toy_run, tmp_path):
        cam_path, light_path = self.write_request(tmp_path)
        a = tmp_path / "a.raw"
        b = tmp_path / "b.raw"
        for out in (a, b):
            assert run("render", "--ckpt", str(toy_run / "run" / "checkpoint.gs3c"),
                       "--camera", str(cam_path), "--light", str(light_path),
                       "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()


class TestEval:
    def test_metrics_csv(self, toy_run, tmp_path, capsys):
        csv_path = tmp_path / "metrics.csv"
        assert run("eval", "--ckpt", str(toy_run / "run" / "checkpoint.gs3c"),
                   "--data", str(toy_run / "data" / "manifest_test.json"),
                   "--metrics", str(csv_path)) == 0
        rows = csv_path.read_text().splitlines()
        assert rows[0] == "frame,psnr,ssim"
        assert rows[-1].startswith("mean,")
        assert len(rows) == 2 + 2  # header + 2 frames + mean
