"""Command-line behavior: artifact formats, determinism, config resolution,
and error reporting."""

import os

import numpy as np
import pytest

from fashionseg import cli, netpbm, report
from fashionseg.metrics import confusion


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def seg_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("segdata")
    manifest = cli.dataio.gen_synthetic("seg", 4, (16, 16), 0, seed=21,
                                        out_dir=str(d))
    # mark two records as the test split for eval
    lines = open(manifest).read().splitlines()
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    body[-1] = body[-1].replace(",train", ",test")
    body[-2] = body[-2].replace(",train", ",test")
    open(manifest, "w").write("\n".join(body) + "\n")
    return str(d), manifest


@pytest.fixture(scope="module")
def seg_run(tmp_path_factory, seg_data):
    _, manifest = seg_data
    out = tmp_path_factory.mktemp("segrun")
    code = cli.main(["train-seg", "--manifest", manifest, "--out-dir", str(out),
                     "--iterations", "8", "--batch-size", "2",
                     "--base-lr", "1e-3", "--seed", "3",
                     "--checkpoint-interval", "4"])
    assert code == 0
    return str(out)


class TestTrainArtifacts:
    def test_loss_csv_format(self, seg_run):
        lines = open(os.path.join(seg_run, "loss.csv")).read().splitlines()
        assert lines[0] == "iteration,loss"
        assert len(lines) == 9
        for i, line in enumerate(lines[1:]):
            it, loss = line.split(",")
            assert int(it) == i
            assert np.isfinite(float(loss))

    def test_checkpoints_written(self, seg_run):
        assert os.path.exists(os.path.join(seg_run, "checkpoint_000004.fseg"))
        assert os.path.exists(os.path.join(seg_run, "checkpoint_final.fseg"))

    def test_loss_figure_rendered(self, seg_run):
        png = os.path.join(seg_run, "loss_curve.png")
        assert os.path.getsize(png) > 0
        assert open(png, "rb").read(8) == b"\x89PNG\r\n\x1a\n"

    def test_config_resolved_echo(self, seg_run):
        text = open(os.path.join(seg_run, "config.resolved")).read()
        entries = dict(line.split(" = ") for line in text.splitlines())
        assert entries["base_lr"] == "0.001"
        assert entries["iterations"] == "8"
        assert entries["seed"] == "3"
        assert entries["preset"] == "mini"
        # untouched defaults are echoed too
        assert entries["momentum"] == "0.9"

    def test_bitwise_deterministic_rerun(self, tmp_path, seg_data):
        _, manifest = seg_data
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            code = cli.main(["train-seg", "--manifest", manifest,
                             "--out-dir", str(out), "--iterations", "6",
                             "--batch-size", "2", "--base-lr", "1e-3",
                             "--seed", "5"])
            assert code == 0
            outs.append(out)
        a, b = outs
        assert (a / "loss.csv").read_bytes() == (b / "loss.csv").read_bytes()
        assert ((a / "checkpoint_final.fseg").read_bytes()
                == (b / "checkpoint_final.fseg").read_bytes())


class TestEvalAndPredict:
    def test_eval_seg_outputs(self, tmp_path, seg_data, seg_run, capsys):
        _, manifest = seg_data
        out = tmp_path / "eval"
        code, stdout, _ = run_cli(capsys, "eval-seg", "--manifest", manifest,
                                  "--checkpoint",
                                  os.path.join(seg_run, "checkpoint_final.fseg"),
                                  "--out-dir", str(out), "--split", "train")
        assert code == 0
        assert stdout.startswith("mean_iou,")
        mean = float(stdout.strip().split(",")[1])
        assert 0.0 <= mean <= 1.0
        iou_lines = (out / "iou.csv").read_text().splitlines()
        assert iou_lines[0] == "image,iou"
        assert len(iou_lines) == 3  # 2 train records
        metrics = dict(line.split(",") for line in
                       (out / "metrics.csv").read_text().splitlines()[1:])
        assert abs(float(metrics["mean_iou"]) - mean) < 1e-6
        assert (out / "iou_hist.png").exists()

    def test_eval_default_split_is_test(self, tmp_path, seg_data, seg_run, capsys):
        _, manifest = seg_data
        out = tmp_path / "evaltest"
        code, stdout, _ = run_cli(capsys, "eval-seg", "--manifest", manifest,
                                  "--checkpoint",
                                  os.path.join(seg_run, "checkpoint_final.fseg"),
                                  "--out-dir", str(out))
        assert code == 0
        assert len((out / "iou.csv").read_text().splitlines()) == 3  # 2 test records

    def test_predict_seg_writes_mask(self, tmp_path, seg_data, seg_run, capsys):
        root, manifest = seg_data
        rec = cli.dataio.load_manifest(manifest)[0]
        out = tmp_path / "pred"
        code, stdout, _ = run_cli(capsys, "predict-seg", "--checkpoint",
                                  os.path.join(seg_run, "checkpoint_final.fseg"),
                                  "--out-dir", str(out),
                                  os.path.join(root, rec.image_path))
        assert code == 0
        mask_path = stdout.strip()
        assert mask_path.endswith(".mask.pgm")
        buf = netpbm.decode_pgm(open(mask_path, "rb").read())
        assert (buf.width, buf.height) == (16, 16)
        assert set(np.unique(buf.samples)) <= {0, 255}


class TestClsPipeline:
    def test_train_eval_predict(self, tmp_path, capsys):
        data = tmp_path / "data"
        manifest = cli.dataio.gen_synthetic("cls", 8, (96, 48), 4, seed=2,
                                            out_dir=str(data))
        out = tmp_path / "run"
        code = cli.main(["train-cls", "--manifest", manifest, "--out-dir",
                         str(out), "--iterations", "5", "--batch-size", "4",
                         "--seed", "1"])
        capsys.readouterr()
        assert code == 0
        ckpt = os.path.join(out, "checkpoint_final.fseg")

        ev = tmp_path / "eval"
        code, stdout, _ = run_cli(capsys, "eval-cls", "--manifest", manifest,
                                  "--checkpoint", ckpt, "--out-dir", str(ev),
                                  "--split", "train")
        assert code == 0
        assert stdout.startswith("accuracy,")
        counts = (ev / "confusion_counts.csv").read_text().splitlines()
        assert counts[0] == "true\\pred,c0,c1,c2,c3"
        assert len(counts) == 5
        assert (ev / "confusion_matrix.png").exists()

        rec = cli.dataio.load_manifest(manifest)[0]
        code, stdout, _ = run_cli(capsys, "predict-cls", "--checkpoint", ckpt,
                                  "--out-dir", str(tmp_path / "p"),
                                  os.path.join(data, rec.image_path))
        assert code == 0
        path, label, prob = stdout.strip().split(",")
        assert path.endswith(".ppm")
        assert 0 <= int(label) < 4
        assert 0.0 <= float(prob) <= 1.0


class TestConfigFile:
    def test_file_then_flag_precedence(self, tmp_path, seg_data, capsys):
        _, manifest = seg_data
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# run settings\nbase-lr = 0.01\niterations = 3\n"
                       "batch_size = 2\n")
        out = tmp_path / "out"
        code = cli.main(["train-seg", "--config", str(cfg), "--manifest",
                         manifest, "--out-dir", str(out), "--iterations", "4",
                         "--seed", "0"])
        capsys.readouterr()
        assert code == 0
        entries = dict(line.split(" = ") for line in
                       (out / "config.resolved").read_text().splitlines())
        assert entries["base_lr"] == "0.01"   # from file
        assert entries["iterations"] == "4"   # flag wins over file

    def test_unknown_key_rejected(self, tmp_path, seg_data, capsys):
        _, manifest = seg_data
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed = 9\n")
        code, _, err = run_cli(capsys, "train-seg", "--config", str(cfg),
                               "--manifest", manifest,
                               "--out-dir", str(tmp_path / "o"))
        assert code == 1
        assert err.startswith("error: config:")

    def test_malformed_line_rejected(self, tmp_path, seg_data, capsys):
        _, manifest = seg_data
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just some words\n")
        code, _, err = run_cli(capsys, "train-seg", "--config", str(cfg),
                               "--manifest", manifest,
                               "--out-dir", str(tmp_path / "o"))
        assert code == 1
        assert "error: config:" in err and "line 1" in err


class TestErrorReporting:
    def test_missing_manifest_flag(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "train-seg", "--out-dir", str(tmp_path))
        assert code == 1
        assert err.strip().startswith("error: config:")

    def test_bad_manifest_content(self, capsys, tmp_path):
        m = tmp_path / "m.txt"
        m.write_text("a.ppm,-,-\n")
        code, _, err = run_cli(capsys, "train-seg", "--manifest", str(m),
                               "--out-dir", str(tmp_path))
        assert code == 1
        assert err.strip().startswith("error: manifest:")

    def test_bad_checkpoint_file(self, capsys, tmp_path):
        bad = tmp_path / "bad.fseg"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code, _, err = run_cli(capsys, "predict-seg", "--checkpoint", str(bad),
                               "--out-dir", str(tmp_path), "x.ppm")
        assert code == 1
        assert err.strip().startswith("error: checkpoint-magic:")

    def test_error_line_shape(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "train-seg", "--out-dir", str(tmp_path))
        line = err.strip()
        kindful, _, msg = line.partition(": ")
        assert kindful == "error: config" or line.startswith("error: ")
        assert msg


class TestParamCount:
    def test_cls_full_table(self, capsys):
        code, out, _ = run_cli(capsys, "param-count", "cls")
        assert code == 0
        assert "12616384" in out
        assert "note:" in out and "ratio" in out

    def test_seg_mini_table(self, capsys):
        code, out, _ = run_cli(capsys, "param-count", "seg", "--preset", "mini")
        assert code == 0
        assert "total weights" in out
        assert "note:" not in out


class TestGradcheckCommand:
    def test_seg_mini_passes(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "seg", "--seed", "0")
        assert code == 0
        assert "PASS" in out


def test_synth_data_command(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "synth-data", "seg", "--count", "2",
                           "--height", "16", "--width", "16",
                           "--out-dir", str(tmp_path))
    assert code == 0
    manifest = out.strip()
    assert os.path.exists(manifest)
    assert len(cli.dataio.load_manifest(manifest)) == 2


class TestReportHelpers:
    def test_smoothed_window(self):
        vals = [4.0, 2.0, 0.0, 2.0]
        assert report.smoothed(vals, 2) == [3.0, 1.0, 1.0]
        assert report.smoothed(vals, 10) == vals

    def test_metrics_csv_round_trip(self, tmp_path):
        p = tmp_path / "m.csv"
        report.write_metrics_csv(p, [("mean_iou", 1 / 3)])
        lines = p.read_text().splitlines()
        assert lines[0] == "metric,value"
        name, val = lines[1].split(",")
        assert name == "mean_iou"
        assert float(val) == 1 / 3  # %.17g preserves float64 exactly

    def test_confusion_csv_layout(self, tmp_path):
        cm = confusion([0, 1, 1], [0, 1, 0], 2)
        report.write_confusion_csvs(tmp_path / "c.csv", tmp_path / "n.csv", cm)
        counts = (tmp_path / "c.csv").read_text().splitlines()
        assert counts == ["true\\pred,c0,c1", "c0,1,0", "c1,1,1"]
        norm = (tmp_path / "n.csv").read_text().splitlines()
        assert norm[1].startswith("c0,1,")
