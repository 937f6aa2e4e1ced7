import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from oracles import parse_pgm
from tdn import cli, data
from tdn.checkpoint import load_checkpoint, save_checkpoint, to_bytes
from tdn.errors import InvariantError
from tdn.model import TDNConfig, init_model

import make_goldens

GOLDENS = Path(__file__).parent / "goldens"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(d), "--videos", "30", "--seed", "3"]) == 0
    return d


def test_synth_defaults(tmp_path, capsys):
    code, out, err = run(capsys, "synth", "--out", tmp_path)
    assert code == 0 and err == ""
    assert "200 videos" in out
    assert len(list((tmp_path / "features").glob("*.tdnf"))) == 200
    ds = data.load_dataset(tmp_path)
    assert len(ds) == 200 and ds.classes == 8 and ds.feature_dim == 16
    assert len(data.read_truth(tmp_path / data.TRUTH)) == 200


def test_synth_infeasible_exit_1(tmp_path, capsys):
    code, out, err = run(capsys, "synth", "--out", tmp_path, "--segments", "9", "--classes", "8")
    assert code == 1 and out == ""
    assert len(err.strip().splitlines()) == 1 and "exceed" in err


def test_synth_deterministic_and_env_seed(tmp_path, capsys, monkeypatch):
    run(capsys, "synth", "--out", tmp_path / "a", "--videos", "5", "--seed", "11")
    run(capsys, "synth", "--out", tmp_path / "b", "--videos", "5", "--seed", "11")
    monkeypatch.setenv("TDN_SEED", "11")
    run(capsys, "synth", "--out", tmp_path / "c", "--videos", "5")
    run(capsys, "synth", "--out", tmp_path / "d", "--videos", "5", "--seed", "12")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    read = lambda d: [(tmp_path / d / f).read_bytes() for f in files]
    assert read("a") == read("b") == read("c")
    assert read("a") != read("d")


def test_usage_error_exit_1(capsys):
    code, _, err = run(capsys, "train")
    assert code == 1 and "required" in err


def test_train_epochs_zero(synth_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--data", synth_dir, "--epochs", "0", "--seed", "4",
                       "--ckpt", tmp_path / "m.ckpt")
    assert code == 0 and out == ""
    expected = init_model(TDNConfig(feature_dim=16, num_classes=8, seed=4, epochs=0))
    assert (tmp_path / "m.ckpt").read_bytes() == to_bytes(expected)


def test_train_lr_zero_constant_loss(synth_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--data", synth_dir, "--epochs", "3", "--lr", "0",
                       "--ckpt", tmp_path / "m.ckpt")
    assert code == 0
    losses = [float(line.split()[3]) for line in out.splitlines()]
    assert len(losses) == 3
    assert max(losses) - min(losses) <= 1e-12


def test_train_log_and_determinism(synth_dir, tmp_path, capsys):
    args = ["train", "--data", synth_dir, "--epochs", "3", "--lr", "0.01", "--batch", "4"]
    _, out1, _ = run(capsys, *args, "--ckpt", tmp_path / "a.ckpt")
    _, out2, _ = run(capsys, *args, "--ckpt", tmp_path / "b.ckpt")
    assert out1 == out2
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    lines = out1.splitlines()
    assert [l.split()[:2] for l in lines] == [["epoch", "1"], ["epoch", "2"], ["epoch", "3"]]
    assert all(l.split()[4] == "val_gap" for l in lines)


def test_train_synthetic_defaults_loss_drops(tmp_path, capsys):
    run(capsys, "synth", "--out", tmp_path / "d")
    code, out, _ = run(capsys, "train", "--data", tmp_path / "d", "--ckpt", tmp_path / "m.ckpt")
    losses = [float(line.split()[3]) for line in out.splitlines()]
    assert code == 0 and len(losses) == 20
    assert losses[-1] < losses[0]


def test_train_missing_data_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "nope", "--ckpt", tmp_path / "m.ckpt")
    assert code == 1 and "manifest" in err


def oracle_setup(tmp_path):
    ds = data.Dataset(2, [
        data.Video("a", np.tile([1.0, 0.0], (6, 1)), frozenset({0})),
        data.Video("b", np.tile([0.0, 1.0], (9, 1)), frozenset({1})),
    ])
    data.save_dataset(ds, tmp_path / "d")
    model = init_model(TDNConfig(feature_dim=2, num_classes=2))
    for layer in model.layers:
        layer.conv.wz1.value[...] = 0.0
        layer.conv.wz2.value[...] = 0.0
    # every frame maps to h = ±(1, -1); the classifier turns that into confident logits
    model.cls_w.value[...] = [[5.0, -5.0], [-5.0, 5.0]]
    save_checkpoint(model, tmp_path / "m.ckpt")


def test_eval_oracle_gap(tmp_path, capsys):
    oracle_setup(tmp_path)
    args = ("eval", "--data", tmp_path / "d", "--ckpt", tmp_path / "m.ckpt")
    code, out, _ = run(capsys, *args)
    assert code == 0 and out == "GAP: 1.000000\n"
    assert run(capsys, *args)[1] == out


def test_eval_dim_mismatch(synth_dir, tmp_path, capsys):
    save_checkpoint(init_model(TDNConfig(feature_dim=5, num_classes=8)), tmp_path / "m.ckpt")
    code, _, err = run(capsys, "eval", "--data", synth_dir, "--ckpt", tmp_path / "m.ckpt")
    assert code == 1 and "width" in err


def test_eval_corrupt_checkpoint(synth_dir, tmp_path, capsys):
    (tmp_path / "m.ckpt").write_bytes(b"garbage-bytes")
    code, _, err = run(capsys, "eval", "--data", synth_dir, "--ckpt", tmp_path / "m.ckpt")
    assert code == 1 and "magic" in err


@pytest.fixture
def identity_ckpt(tmp_path):
    path = tmp_path / "id.ckpt"
    save_checkpoint(init_model(TDNConfig(feature_dim=16, num_classes=8, kernel_init="identity")), path)
    return path


def test_segment_single_frame(tmp_path, identity_ckpt, capsys):
    data.write_features(np.ones((1, 16)), tmp_path / "one.tdnf")
    code, out, _ = run(capsys, "segment", "--features", tmp_path / "one.tdnf", "--ckpt", identity_ckpt)
    assert code == 0 and out == "\n"


def test_segment_recovers_planted_boundary(tmp_path, identity_ckpt, capsys):
    ds, truth = data.synth_generate(data.SyntheticSpec(videos=5, frames=40, segments=2, noise=0.0, seed=8))
    for v, t in zip(ds.videos, truth):
        data.write_features(v.features, tmp_path / "v.tdnf")
        code, out, _ = run(capsys, "segment", "--features", tmp_path / "v.tdnf", "--ckpt", identity_ckpt,
                           "--layer", "2")
        lines = out.splitlines()
        assert code == 0 and len(lines) == 2
        assert lines[0] == ",".join(map(str, t.cuts))
        assert lines[1] == ""  # two nodes remain, K(2) = 1


def test_segment_layer_out_of_range(tmp_path, identity_ckpt, capsys):
    data.write_features(np.ones((4, 16)), tmp_path / "v.tdnf")
    code, _, err = run(capsys, "segment", "--features", tmp_path / "v.tdnf", "--ckpt", identity_ckpt,
                       "--layer", "99")
    assert code == 1 and "99" in err


def test_viz_identity_golden(tmp_path, identity_ckpt, capsys):
    data.write_features(np.eye(16)[:4], tmp_path / "v.tdnf")
    out = tmp_path / "a.pgm"
    code, _, _ = run(capsys, "viz", "--features", tmp_path / "v.tdnf", "--ckpt", identity_ckpt,
                     "--layer", "1", "--stage", "raw", "--out", out)
    assert code == 0
    expected = b"P5\n4 4\n255\n" + bytes(255 * np.eye(4, dtype=np.uint8).reshape(-1))
    assert out.read_bytes() == expected


@pytest.mark.parametrize("stage", ["raw", "refined"])
def test_viz_regression_goldens(tmp_path, capsys, stage):
    feats, ckpt = make_goldens.inputs(tmp_path)
    out = tmp_path / "out.pgm"
    code, _, _ = run(capsys, "viz", "--features", feats, "--ckpt", ckpt, "--layer", "1",
                     "--stage", stage, "--out", out)
    assert code == 0
    assert out.read_bytes() == (GOLDENS / f"synth40_layer1_{stage}.pgm").read_bytes()


def test_viz_refined_blocks_black_and_parseable(tmp_path, capsys):
    feats, ckpt = make_goldens.inputs(tmp_path)
    code, out, _ = run(capsys, "segment", "--features", feats, "--ckpt", ckpt)
    cuts = [int(c) for c in out.strip().split(",") if c]
    run(capsys, "viz", "--features", feats, "--ckpt", ckpt, "--stage", "refined", "--out", tmp_path / "r.pgm")
    blob = (tmp_path / "r.pgm").read_bytes()
    w, h, maxval, pix = parse_pgm(blob)
    assert (w, h, maxval) == (40, 40, 255)
    img = np.asarray(Image.open(tmp_path / "r.pgm"))
    assert img.shape == (40, 40)
    assert np.array_equal(img.reshape(-1), np.frombuffer(pix, np.uint8))
    seg = np.searchsorted(cuts, np.arange(40), side="right")
    cross = seg[:, None] != seg[None, :]
    assert cuts and np.all(img[cross] == 0)
    assert img.max() == 255


def test_viz_long_input_shape(tmp_path, capsys):
    x = np.random.default_rng(0).standard_normal((300, 16))
    data.write_features(x, tmp_path / "v.tdnf")
    save_checkpoint(init_model(TDNConfig(feature_dim=16, num_classes=8)), tmp_path / "m.ckpt")
    run(capsys, "viz", "--features", tmp_path / "v.tdnf", "--ckpt", tmp_path / "m.ckpt", "--out", tmp_path / "a.pgm")
    assert Image.open(tmp_path / "a.pgm").size == (300, 300)


def test_viz_all_zero_is_black(tmp_path, capsys):
    model = init_model(TDNConfig(feature_dim=3, num_classes=2))
    model.layers[0].kernel.wf.value[...] = 0.0
    save_checkpoint(model, tmp_path / "m.ckpt")
    data.write_features(np.ones((5, 3)), tmp_path / "v.tdnf")
    run(capsys, "viz", "--features", tmp_path / "v.tdnf", "--ckpt", tmp_path / "m.ckpt", "--out", tmp_path / "a.pgm")
    assert parse_pgm((tmp_path / "a.pgm").read_bytes())[3] == bytes(25)


def test_viz_unwritable_path(tmp_path, identity_ckpt, capsys):
    data.write_features(np.eye(16)[:4], tmp_path / "v.tdnf")
    code, out, err = run(capsys, "viz", "--features", tmp_path / "v.tdnf", "--ckpt", identity_ckpt,
                         "--out", tmp_path / "missing" / "dir" / "a.pgm")
    assert code == 1 and out == "" and err.count("\n") == 1


def test_invariant_failure_exit_2(synth_dir, tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise InvariantError("broken")

    monkeypatch.setattr(cli, "evaluate_gap", boom)
    save_checkpoint(init_model(TDNConfig(feature_dim=16, num_classes=8)), tmp_path / "m.ckpt")
    code, _, err = run(capsys, "eval", "--data", synth_dir, "--ckpt", tmp_path / "m.ckpt")
    assert code == 2 and "internal" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tdn.cli", "synth", "--out", str(tmp_path),
                           "--videos", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and "2 videos" in proc.stdout
