import os
import subprocess
import sys

import numpy as np
import pytest

from binmap import cli, codec


def run_cli(args):
    return cli.main(args)


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = run_cli(["gen", "--out", str(out), "--seed", "7", "--map-cells", "192",
                  "--train-samples", "24", "--eval-samples", "12",
                  "--n-drives", "1", "--drive-steps", "10"])
    assert rc == 0
    return out


def test_gen_outputs_exist(gen_dir):
    for name in ("world.imap", "resolved_config.txt",
                 "samples/train.rec", "samples/eval.rec",
                 "drive_000.csv", "drive_000.sweeps"):
        assert (gen_dir / name).exists(), name


def test_gen_writes_resolved_config(gen_dir):
    text = (gen_dir / "resolved_config.txt").read_text()
    assert "seed = 7" in text
    assert "map_cells = 192" in text


def test_inspect_imap(gen_dir, capsys):
    rc = run_cli(["inspect", str(gen_dir / "world.imap")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "intensity raster: 192x192" in out
    assert "lossless raster rate" in out


def test_train_compress_localize_inspect(gen_dir, tmp_path, capsys):
    ckpt = tmp_path / "stage1.ckpt"
    rc = run_cli(["train", "--data", str(gen_dir), "--out", str(ckpt),
                  "--stage", "1", "--epochs-stage1", "1", "--seed", "7"])
    assert rc == 0
    assert ckpt.exists()

    ckpt2 = tmp_path / "stage2.ckpt"
    rc = run_cli(["train", "--data", str(gen_dir), "--out", str(ckpt2),
                  "--stage", "2", "--mode", "match", "--init", str(ckpt),
                  "--epochs-stage2", "1", "--seed", "7", "--lambda1", "0.01"])
    assert rc == 0

    bmc = tmp_path / "map.bmc"
    rc = run_cli(["compress", "--map", str(gen_dir / "world.imap"),
                  "--checkpoint", str(ckpt2), "--out", str(bmc)])
    assert rc == 0
    assert bmc.exists()

    rc = run_cli(["inspect", str(bmc)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "compressed map" in out
    assert "achieved bpp" in out
    assert "entropy bound" in out

    trace = tmp_path / "trace.csv"
    rc = run_cli(["localize", "--drive", str(gen_dir / "drive_000.csv"),
                  "--map", str(bmc), "--checkpoint", str(ckpt2),
                  "--out", str(trace)])
    assert rc == 0
    lines = trace.read_text().strip().splitlines()
    assert lines[0].startswith("step,gt_tx")
    assert len(lines) == 11  # header + one row per drive step


def test_stage2_without_init_fails(gen_dir, tmp_path, capsys):
    rc = run_cli(["train", "--data", str(gen_dir), "--out", str(tmp_path / "x.ckpt"),
                  "--stage", "2"])
    assert rc == 1
    assert "stage-1 checkpoint" in capsys.readouterr().err


def test_missing_file_is_one_line_error(tmp_path, capsys):
    rc = run_cli(["inspect", str(tmp_path / "nope.bmc")])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert err.count("\n") == 1


def test_bad_magic_is_one_line_error(tmp_path, capsys):
    bad = tmp_path / "bad.bmc"
    bad.write_bytes(b"JUNKJUNKJUNK")
    rc = run_cli(["inspect", str(bad)])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert err.count("\n") == 1


def test_config_file_and_flag_override(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("seed = 5\nmap_cells = 208\n# comment\n")

    class Args:
        config = str(cfgfile)
        seed = 9  # flag overrides file
        threads = None

    cfg = cli.resolve_config(Args())
    assert cfg["seed"] == 9
    assert cfg["map_cells"] == 208


def test_config_rejects_unknown_key(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("bogus = 1\n")

    class Args:
        config = str(cfgfile)

    with pytest.raises(cli.CliError):
        cli.resolve_config(Args())


def test_threads_env_fallback(monkeypatch):
    class Args:
        config = None
        threads = None

    monkeypatch.setenv("BINMAP_THREADS", "3")
    cfg = cli.resolve_config(Args())
    assert cfg["threads"] == 3


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "binmap.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen" in proc.stdout and "localize" in proc.stdout
