import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from relightkit import imagefiles
from relightkit.cli import main

from test_pipeline import config_dict, make_dataset

H, W = 24, 32


@pytest.fixture
def runner():
    return CliRunner()


def write_frame(tmp_path, rng):
    img = rng.uniform(0.2, 0.8, (H, W, 3))
    inv = rng.uniform(200.0, 900.0, (H, W))
    image_path = tmp_path / "frame.png"
    depth_path = tmp_path / "frame_depth.png"
    imagefiles.save_image(image_path, img)
    imagefiles.write_inverse_depth_png(depth_path, inv)
    return image_path, depth_path


class TestRelightCommand:
    def test_missing_depth_exits_2_naming_path(self, runner, tmp_path, rng):
        image_path, _ = write_frame(tmp_path, rng)
        missing = tmp_path / "nope.png"
        result = runner.invoke(main, [
            "relight", "--image", str(image_path), "--depth", str(missing),
            "--fov", "90", "--src-sun", "0,60", "--tgt-sun", "180,30"])
        assert result.exit_code == 2
        assert "nope.png" in result.output

    def test_bad_sun_spec_exits_2(self, runner, tmp_path, rng):
        image_path, depth_path = write_frame(tmp_path, rng)
        result = runner.invoke(main, [
            "relight", "--image", str(image_path), "--depth", str(depth_path),
            "--fov", "90", "--src-sun", "60", "--tgt-sun", "180,30"])
        assert result.exit_code == 2

    def test_writes_output_and_buffers(self, runner, tmp_path, rng):
        image_path, depth_path = write_frame(tmp_path, rng)
        out = tmp_path / "relit.png"
        dump = tmp_path / "buffers"
        result = runner.invoke(main, [
            "relight", "--image", str(image_path), "--depth", str(depth_path),
            "--fov", "90", "--src-sun", "0,60", "--tgt-sun", "180,30",
            "--out", str(out), "--dump-buffers", str(dump),
            "--grid-size", "9", "--smooth-iters", "1"])
        assert result.exit_code == 0, result.output
        assert out.is_file()
        for name in ("normal.png", "reflectance.png", "refined_src.png",
                     "refined_tgt_0.png", "relit_0.png"):
            assert (dump / name).is_file(), name

    def test_identity_relight_close_to_input(self, runner, tmp_path, rng):
        image_path, depth_path = write_frame(tmp_path, rng)
        out = tmp_path / "relit.png"
        result = runner.invoke(main, [
            "relight", "--image", str(image_path), "--depth", str(depth_path),
            "--fov", "90", "--src-sun", "0,60", "--tgt-sun", "0,60",
            "--out", str(out), "--no-sky-recolor",
            "--grid-size", "9", "--smooth-iters", "1"])
        assert result.exit_code == 0, result.output
        orig = imagefiles.load_image(image_path)
        relit = imagefiles.load_image(out)
        assert np.abs(orig - relit).mean() < 2.0 / 255.0

    def test_dimension_mismatch_exits_2(self, runner, tmp_path, rng):
        image_path, _ = write_frame(tmp_path, rng)
        depth_path = tmp_path / "small_depth.png"
        imagefiles.write_inverse_depth_png(depth_path, np.full((8, 8), 500.0))
        result = runner.invoke(main, [
            "relight", "--image", str(image_path), "--depth", str(depth_path),
            "--fov", "90", "--src-sun", "0,60", "--tgt-sun", "180,30"])
        assert result.exit_code == 2
        assert "differ" in result.output


class TestAugmentCommand:
    def test_runs_config(self, runner, tmp_path):
        make_dataset(tmp_path, frames=1)
        out = tmp_path / "out"
        cfg = tmp_path / "config.yaml"
        cfg.write_text(yaml.safe_dump(config_dict(tmp_path, out)))
        result = runner.invoke(main, ["augment", str(cfg), "--workers", "1"])
        assert result.exit_code == 0, result.output
        assert "augmented 1 frames" in result.output
        assert (out / "0000" / "manifest.json").is_file()

    def test_frame_failure_exits_1(self, runner, tmp_path):
        make_dataset(tmp_path, frames=2)
        (tmp_path / "depth" / "0000" / "000001.png").write_bytes(b"junk")
        cfg = tmp_path / "config.yaml"
        cfg.write_text(yaml.safe_dump(config_dict(tmp_path, tmp_path / "out")))
        result = runner.invoke(main, ["augment", str(cfg), "--workers", "1"])
        assert result.exit_code == 1
        assert "000001" in result.output

    def test_invalid_config_exits_2(self, runner, tmp_path):
        cfg = tmp_path / "config.yaml"
        cfg.write_text(yaml.safe_dump({"output_root": "x"}))
        result = runner.invoke(main, ["augment", str(cfg)])
        assert result.exit_code == 2
        assert "invalid config" in result.output


GT_SEQ = """\
0 1 Car 0 0 0 100 100 200 200 1 1 1 1 1 1 1
1 1 Car 0 0 0 105 100 205 200 1 1 1 1 1 1 1
"""


class TestMotEvalCommand:
    def make_dirs(self, tmp_path, pred_text=GT_SEQ):
        gt_dir = tmp_path / "gt"
        pred_dir = tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        (gt_dir / "0000.txt").write_text(GT_SEQ)
        (pred_dir / "0000.txt").write_text(pred_text)
        return gt_dir, pred_dir

    def test_perfect_predictions_score_100(self, runner, tmp_path):
        gt_dir, pred_dir = self.make_dirs(tmp_path)
        out = tmp_path / "report.json"
        result = runner.invoke(main, ["mot-eval", str(gt_dir), str(pred_dir),
                                      "--json-out", str(out)])
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text())
        assert doc["aggregate"]["MOTA"] == pytest.approx(100.0)
        assert doc["sequences"]["0000.txt"]["MOTP"] == pytest.approx(100.0)
        assert "ALL" in result.output

    def test_missing_prediction_file_warns(self, runner, tmp_path):
        gt_dir, pred_dir = self.make_dirs(tmp_path)
        (gt_dir / "0001.txt").write_text(GT_SEQ)
        result = runner.invoke(main, ["mot-eval", str(gt_dir), str(pred_dir)])
        assert result.exit_code == 0
        assert "no predictions for 0001.txt" in result.output

    def test_all_skipped_exits_1(self, runner, tmp_path):
        gt_dir = tmp_path / "gt"
        pred_dir = tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        (gt_dir / "0000.txt").write_text(GT_SEQ)
        result = runner.invoke(main, ["mot-eval", str(gt_dir), str(pred_dir)])
        assert result.exit_code == 1

    def test_malformed_label_exits_1_with_line(self, runner, tmp_path):
        gt_dir, pred_dir = self.make_dirs(tmp_path, pred_text="0 1 Car 0\n")
        result = runner.invoke(main, ["mot-eval", str(gt_dir), str(pred_dir)])
        assert result.exit_code == 1
        assert ":1:" in result.output


class TestIqEvalCommand:
    def test_identical_images(self, runner, tmp_path, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        a = tmp_path / "a.png"
        imagefiles.save_image(a, img)
        out = tmp_path / "iq.json"
        result = runner.invoke(main, ["iq-eval", str(a), str(a),
                                      "--json-out", str(out)])
        assert result.exit_code == 0, result.output
        assert "PSNR inf" in result.output
        doc = json.loads(out.read_text())
        assert doc["RMSE"] == 0.0
        assert doc["SSIM"] == pytest.approx(1.0)

    def test_shape_mismatch_exits_2(self, runner, tmp_path, rng):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        imagefiles.save_image(a, rng.uniform(0, 1, (16, 16, 3)))
        imagefiles.save_image(b, rng.uniform(0, 1, (8, 16, 3)))
        result = runner.invoke(main, ["iq-eval", str(a), str(b)])
        assert result.exit_code == 2


class TestMeshDumpCommand:
    def test_writes_obj(self, runner, tmp_path, rng):
        _, depth_path = write_frame(tmp_path, rng)
        out = tmp_path / "mesh.obj"
        result = runner.invoke(main, ["mesh-dump", "--depth", str(depth_path),
                                      "--fov", "90", "--out", str(out),
                                      "--grid-size", "9"])
        assert result.exit_code == 0, result.output
        assert "81 vertices" in result.output
        assert "128 triangles" in result.output
        lines = out.read_text().splitlines()
        assert sum(1 for l in lines if l.startswith("v ")) == 81
        assert sum(1 for l in lines if l.startswith("f ")) == 128
