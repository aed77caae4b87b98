import numpy as np
import pytest

from ctxfill import dataio
from ctxfill.cli import main

TINY_CFG = """
# desk-scale settings for CLI tests
image_size = 32
base_channels = 4
bottleneck_units = 8
patch = 16
overlap = 2
batch_size = 4
checkpoint_every = 0
"""


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    assert main(["synth-data", "--out", str(root), "--count", "8", "--size", "32",
                 "--seed", "13"]) == 0
    return root


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, cli_data):
    out = tmp_path_factory.mktemp("cli_run")
    cfg = out / "train.cfg"
    cfg.write_text(TINY_CFG)
    code = main(["train", "--config", str(cfg), "--data", str(cli_data),
                 "--out", str(out), "--iterations", "8", "--loss", "l2",
                 "--mask", "central", "--seed", "1"])
    assert code == 0
    return out


def test_synth_data_writes_images(cli_data):
    files = sorted(cli_data.glob("*.ppm"))
    assert len(files) == 8


def test_train_produces_checkpoint_and_log(trained_run):
    assert (trained_run / "final.ckpt").exists()
    log = (trained_run / "train_log.tsv").read_text().strip().splitlines()
    assert len(log) == 8
    assert log[0].startswith("0\t")


def test_train_prints_resolved_config(tmp_path, cli_data, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY_CFG)
    main(["train", "--config", str(cfg), "--data", str(cli_data),
          "--out", str(tmp_path / "run"), "--iterations", "1", "--loss", "l2"])
    out = capsys.readouterr().out
    assert "resolved config" in out
    assert "train.iterations = 1" in out
    assert "gen.image_size = 32" in out


def test_inpaint_preserves_context_pixels(trained_run, cli_data, tmp_path):
    inputs = sorted(cli_data.glob("*.ppm"))
    out = tmp_path / "inpaint"
    code = main(["inpaint", "--ckpt", str(trained_run / "final.ckpt"),
                 "--input", str(inputs[0]), "--out", str(out), "--mask", "central"])
    assert code == 0
    composited = dataio.load_image(out / "composited.ppm")
    original = dataio.load_image(inputs[0])
    from ctxfill.masking import central_mask
    m = central_mask(32, 32, 16, 2)
    ctx = ~np.broadcast_to(m.mask.astype(bool), original.shape)
    np.testing.assert_array_equal(composited[ctx], original[ctx])
    assert (out / "prediction.ppm").exists()
    assert (out / "mask.pgm").exists()


def test_eval_text_and_json(trained_run, cli_data, capsys):
    for fmt in ("text", "json"):
        code = main(["eval", "--ckpt", str(trained_run / "final.ckpt"),
                     "--data", str(cli_data), "--method", "rec", "--format", fmt])
        assert code == 0
        out = capsys.readouterr().out
        assert "mean_l1_pct" in out


def test_eval_nn_self_retrieval_is_exact(tmp_path, trained_run, capsys):
    # Every held-out image has an exact duplicate in the train split, so
    # nn_ours must reconstruct each one with zero error.
    root = tmp_path / "dups"
    root.mkdir()
    dataio.generate_synthetic_dataset(root, count=1, size=32, seed=2)
    src = next(root.glob("*.ppm")).read_bytes()
    for i in range(5):
        (root / f"copy_{i}.ppm").write_bytes(src)
    code = main(["eval", "--ckpt", str(trained_run / "final.ckpt"),
                 "--data", str(root), "--method", "nn-ours", "--format", "json",
                 "--seed", "0"])
    assert code == 0
    import json
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{"):])
    assert report["mean_l1_pct"] == 0.0
    assert report["psnr_db"] == 99.0


def test_nn_listing(trained_run, cli_data, capsys):
    query = sorted(cli_data.glob("*.ppm"))[0]
    code = main(["nn", "--ckpt", str(trained_run / "final.ckpt"),
                 "--input", str(query), "--data", str(cli_data)])
    assert code == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l and l[0].isdigit()]
    assert len(lines) == 8
    assert lines[0].split("\t")[1] == query.name  # self at rank 1


def test_gradcheck_exits_zero(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "all" in out and "passed" in out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", "x", "--out", "y", "--bogus", "1"])
    assert exc.value.code == 1


def test_missing_data_dir_is_data_error(tmp_path):
    code = main(["train", "--data", str(tmp_path / "absent"), "--out",
                 str(tmp_path / "out"), "--iterations", "1"])
    assert code == 2


def test_bad_checkpoint_is_data_error(tmp_path):
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"XXXXnot a checkpoint")
    code = main(["inpaint", "--ckpt", str(bogus), "--input", "x.ppm",
                 "--out", str(tmp_path)])
    assert code == 2


def test_bad_config_key_is_usage_error(tmp_path, cli_data):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 5\n")
    code = main(["train", "--config", str(cfg), "--data", str(cli_data),
                 "--out", str(tmp_path / "run")])
    assert code == 1


def test_same_seed_reproduces_log(tmp_path, cli_data):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY_CFG)
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(cfg), "--data", str(cli_data),
                     "--out", str(out), "--iterations", "5", "--loss", "joint",
                     "--seed", "4"]) == 0
        logs.append((out / "train_log.tsv").read_text())
    assert logs[0] == logs[1]
