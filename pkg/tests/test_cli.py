import os
import subprocess
import sys

import numpy as np
import pytest

from conceptforge import visualize as V

CLI = [sys.executable, "-m", "conceptforge"]

SYNTH_SMALL = ["synth", "--images", "12", "--grid-w", "5", "--grid-h", "5",
               "--channels", "16", "--concepts", "3", "--placements", "2",
               "--noise-sigma", "0.02", "--seed", "3"]


def run(*args, env_extra=None, check=False):
    env = dict(os.environ)
    env.update(env_extra or {})
    proc = subprocess.run(CLI + list(args), capture_output=True, text=True,
                          env=env)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}\nstdout: {proc.stdout}\n"
                             f"stderr: {proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> cluster -> merge -> detect -> eval on a small corpus."""
    root = tmp_path_factory.mktemp("pipe")
    synth = root / "synth"
    run(*SYNTH_SMALL, "--out", str(synth), check=True)
    run("cluster", "--corpus", str(synth / "features"), "--layer", "synth",
        "--k", "8", "--seed", "3", "--per-image", "25",
        "--out", str(root / "dict"), check=True)
    run("merge", "--dict", str(root / "dict" / "dictionary.vcdc"),
        "--threshold", "0.95", "--out", str(root / "merged"), check=True)
    run("detect", "--corpus", str(synth / "features"),
        "--dict", str(root / "merged" / "merged.vcdc"),
        "--out", str(root / "det"), check=True)
    run("eval", "--detections", str(root / "det" / "detections.txt"),
        "--annotations", str(synth / "annotations.txt"),
        "--out", str(root / "eval"), check=True)
    return root


class TestExitCodes:
    def test_missing_required_flag_is_usage_error(self):
        assert run("cluster", "--out", "/tmp/x").returncode == 2

    def test_unknown_subcommand(self):
        assert run("frobnicate").returncode == 2

    def test_unknown_flag(self):
        assert run("merge", "--dict", "x", "--out", "y",
                   "--bogus", "1").returncode == 2

    def test_data_error_is_exit_one(self, tmp_path):
        proc = run("merge", "--dict", str(tmp_path / "missing.vcdc"),
                   "--out", str(tmp_path))
        assert proc.returncode == 1
        assert "error" in proc.stderr

    def test_invalid_numeric_flag_is_exit_one(self, tmp_path):
        proc = run("eval", "--detections", "x", "--annotations", "y",
                   "--out", str(tmp_path), "--match-radius", "-5")
        assert proc.returncode == 1


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        assert (pipeline / "synth" / "annotations.txt").exists()
        assert (pipeline / "synth" / "planted.vcdc").exists()
        assert (pipeline / "dict" / "dictionary.vcdc").exists()
        assert (pipeline / "merged" / "merged.vcdc").exists()
        assert (pipeline / "det" / "detections.txt").exists()
        assert (pipeline / "eval" / "report.txt").exists()
        assert (pipeline / "eval" / "ap_matrix.txt").exists()
        for sub in ("synth", "dict", "merged", "det", "eval"):
            assert (pipeline / sub / "provenance.txt").exists()

    def test_eval_rerun_byte_identical(self, pipeline, tmp_path):
        run("eval", "--detections", str(pipeline / "det" / "detections.txt"),
            "--annotations", str(pipeline / "synth" / "annotations.txt"),
            "--out", str(tmp_path / "eval2"), check=True)
        for name in ("report.txt", "ap_matrix.txt"):
            assert (pipeline / "eval" / name).read_bytes() == \
                (tmp_path / "eval2" / name).read_bytes()

    def test_report_renders_from_matrix(self, pipeline):
        proc = run("report", "--ap-matrix",
                   str(pipeline / "eval" / "ap_matrix.txt"), check=True)
        assert "best concept per part" in proc.stdout
        assert "mAP" in proc.stdout

    def test_single_filter_mode(self, pipeline, tmp_path):
        run("detect", "--corpus", str(pipeline / "synth" / "features"),
            "--dict", str(pipeline / "merged" / "merged.vcdc"),
            "--mode", "sf", "--out", str(tmp_path / "sf"), check=True)
        text = (tmp_path / "sf" / "detections.txt").read_text()
        assert "mode=sf" in text

    def test_viz_outputs(self, pipeline, tmp_path):
        # ppm source images named after the synthetic image ids
        rng = np.random.default_rng(0)
        images = tmp_path / "imgs"
        images.mkdir()
        for k in range(12):
            V.save_ppm(rng.integers(0, 256, (80, 80, 3)).astype(np.uint8),
                       images / f"synth{k:04d}.ppm")
        run("viz", "--corpus", str(pipeline / "synth" / "features"),
            "--dict", str(pipeline / "merged" / "merged.vcdc"),
            "--concept", "0", "--n", "4", "--images", str(images),
            "--out", str(tmp_path / "viz"), check=True)
        assert (tmp_path / "viz" / "patches.txt").exists()
        assert (tmp_path / "viz" / "montage.ppm").exists()
        assert (tmp_path / "viz" / "mean_patch.ppm").exists()
        canvas = V.load_ppm(tmp_path / "viz" / "montage.ppm")
        assert canvas.shape[2] == 3


class TestEnvOverrides:
    def test_env_sets_default(self, tmp_path):
        out = tmp_path / "s"
        run(*SYNTH_SMALL[:-2], "--out", str(out),  # drop --seed 3
            env_extra={"CONCEPTFORGE_SEED": "77"}, check=True)
        assert "seed=77" in (out / "provenance.txt").read_text()

    def test_explicit_flag_beats_env(self, tmp_path):
        out = tmp_path / "s"
        run(*SYNTH_SMALL, "--out", str(out),
            env_extra={"CONCEPTFORGE_SEED": "77"}, check=True)
        assert "seed=3" in (out / "provenance.txt").read_text()

    def test_env_satisfies_required_flag(self, tmp_path):
        out = tmp_path / "s"
        proc = run(*SYNTH_SMALL, env_extra={"CONCEPTFORGE_OUT": str(out)},
                   check=True)
        assert proc.returncode == 0
        assert (out / "annotations.txt").exists()


class TestSelfcheck:
    def test_small_scale_passes(self, tmp_path):
        proc = run("selfcheck", "--scale", "small", "--seed", "1",
                   "--out", str(tmp_path / "sc"))
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "selfcheck: PASS" in proc.stdout
        assert "planted recovery" in proc.stdout
        for name in ("dictionary.vcdc", "merged.vcdc", "detections.txt",
                     "report.txt", "ap_matrix.txt", "provenance.txt"):
            assert (tmp_path / "sc" / name).exists()
