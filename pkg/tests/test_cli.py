import numpy as np
import pytest

from dilated_depth import data_io, gradcheck
from dilated_depth.cli import main
from dilated_depth.metrics import MetricsReport

TOY = """\
# small synthetic run
bins = 20
iterations = 6
constant_phase = 4
decay_period = 1
base_lr = 0.05
scenes = 4
test_scenes = 2
image_size = 16
seed = 3
"""


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = write(root / "toy.cfg", TOY)
    assert main(["train", str(config), "-o", str(root / "ck")]) == 0
    assert main(["synth", str(config), str(root / "data")]) == 0
    return root


def test_train_writes_checkpoint(trained):
    ck = trained / "ck"
    assert (ck / "config.digest").exists() and (ck / "dataset.digest").exists()
    lines = (ck / "history.log").read_text().splitlines()
    assert [int(line.split()[0]) for line in lines] == list(range(6))
    assert float(lines[-1].split()[1]) == pytest.approx(0.05 * 0.1**2)


def test_train_is_deterministic(trained, tmp_path):
    assert main(["train", str(trained / "toy.cfg"), "-o", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "history.log").read_text() == (trained / "ck" / "history.log").read_text()


def test_unknown_key(tmp_path, capsys):
    config = write(tmp_path / "bad.cfg", "bins = 20\nlearning_rat = 0.1\n")
    assert main(["train", str(config)]) == 1
    err = capsys.readouterr().err
    assert "learning_rat" in err and ":2:" in err


def test_bad_value(tmp_path):
    assert main(["rf", str(write(tmp_path / "bad.cfg", "sigma = abc\n"))]) == 1


def test_missing_config(tmp_path):
    assert main(["rf", str(tmp_path / "absent.cfg")]) == 2


def test_eval_soft_and_hard(trained, capsys):
    reports = {}
    for rule in ("soft", "hard"):
        code = main(["eval", str(trained / "ck"), str(trained / "data" / "manifest.csv"), "--inference", rule])
        assert code == 0
        reports[rule] = MetricsReport.from_record(capsys.readouterr().out)
        cm = data_io.load_tensor(trained / "ck" / f"confusion_{rule}.rdt")
        assert cm.shape == (20, 20) and cm.sum() == reports[rule].n_valid
    assert reports["soft"].n_valid == reports["hard"].n_valid == 6 * 16 * 16


def test_eval_missing_depth_file(trained, tmp_path, capsys):
    image = trained / "data" / "train_0000_image.rdt"
    manifest = write(tmp_path / "m.csv", f"{image},{tmp_path / 'gone.rdt'},train\n")
    assert main(["eval", str(trained / "ck"), str(manifest)]) == 2
    assert "gone.rdt" in capsys.readouterr().err


def test_eval_digest_mismatch(trained, tmp_path):
    import shutil

    ck = tmp_path / "ck"
    shutil.copytree(trained / "ck", ck)
    (ck / "config.txt").write_text((ck / "config.txt").read_text().replace("seed = 3", "seed = 4"))
    assert main(["eval", str(ck), str(trained / "data" / "manifest.csv")]) == 1


def test_infer(trained, tmp_path):
    image = trained / "data" / "test_0000_image.rdt"
    out = tmp_path / "depth.rdt"
    assert main(["infer", str(trained / "ck"), str(image), "-o", str(out), "--inference", "hard"]) == 0
    depth = data_io.load_depth(out)
    assert depth.shape == (1, 1, 16, 16)
    assert np.all(depth.values >= 0.7) and np.all(depth.values <= 10.0)


def test_bins_analyze_single_row(trained, capsys):
    assert main(["bins-analyze", str(trained / "ck"), "--bins", "20"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].split() == ["bins", "pixel_acc", "rel"]
    assert len(rows) == 2 and rows[1].split()[0] == "20"


def test_bins_analyze_dataset_mismatch(trained, tmp_path):
    other = write(tmp_path / "other.cfg", TOY.replace("scenes = 4", "scenes = 3"))
    assert main(["train", str(other), "-o", str(tmp_path / "ck2")]) == 0
    assert main(["bins-analyze", str(trained / "ck"), str(tmp_path / "ck2")]) == 1


def test_bins_analyze_count_mismatch(trained):
    assert main(["bins-analyze", str(trained / "ck"), "--bins", "50"]) == 1


def rf_table(capsys, config):
    assert main(["rf", str(config)]) == 0
    lines = capsys.readouterr().out.splitlines()
    rows = [line.split() for line in lines[1:] if not line.startswith(("total", "pre-"))]
    total = int(next(line for line in lines if line.startswith("total")).split()[-1])
    final = int(lines[-1].split()[-1])
    return rows, total, final


def test_rf_dilation_comparison(tmp_path, capsys):
    on, p_on, rf_on = rf_table(capsys, write(tmp_path / "on.cfg", "bins = 50\n"))
    off, p_off, rf_off = rf_table(capsys, write(tmp_path / "off.cfg", "bins = 50\ndilation = off\n"))
    rfs = [int(r[2]) for r in on]
    assert rfs == sorted(rfs)
    assert rf_off < rf_on and p_on == p_off
    assert any(r[-1] == "l=4" for r in on) and not any(r[-1].startswith("l=") for r in off)


def test_precision_env_override(tmp_path, monkeypatch):
    config = write(tmp_path / "t.cfg", TOY.replace("iterations = 6", "iterations = 1"))
    monkeypatch.setenv("RDT_PRECISION", "standard")
    assert main(["train", str(config), "-o", str(tmp_path / "ck")]) == 0
    assert "precision = standard" in (tmp_path / "ck" / "config.txt").read_text()
    assert data_io.load_tensor(tmp_path / "ck" / "classifier.weight.rdt").dtype == np.float64
    monkeypatch.setenv("RDT_PRECISION", "quad")
    assert main(["train", str(config), "-o", str(tmp_path / "ck")]) == 1


def test_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    for kind in ("conv_l1", "conv_l2", "conv_l4", "batchnorm", "maxpool", "deconv", "residual_block", "loss_head", "network"):
        assert kind in out


def test_gradcheck_detects_corrupted_backward(monkeypatch, capsys):
    from dilated_depth import conv_ops

    real = conv_ops.relu_backward
    monkeypatch.setattr(conv_ops, "relu_backward", lambda up, mask: real(up, mask) * 1.01)
    assert main(["gradcheck"]) == 3
    assert "relu" in capsys.readouterr().err


def test_gradcheck_names_coordinate(monkeypatch, capsys):
    from dilated_depth import conv_ops

    real = conv_ops.batch_norm_backward

    def skewed(up, cache):
        gx, gg, gb = real(up, cache)
        gg = gg.copy()
        gg[1] += 0.5
        return gx, gg, gb

    monkeypatch.setattr(conv_ops, "batch_norm_backward", skewed)
    assert main(["gradcheck"]) == 3
    assert "gamma[1]" in capsys.readouterr().err


def test_suite_constants():
    assert gradcheck.STEP == 1e-5
    assert gradcheck.LAYER_TOLERANCE == 1e-4 and gradcheck.NETWORK_TOLERANCE == 1e-3
