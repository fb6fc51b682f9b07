import csv
import io
import os
import subprocess
import sys

import numpy as np
import pytest

from gru_ntm.cli import _COMMAND_KEYS, main
from gru_ntm.config import ConfigError, parse_config_text, resolve
from gru_ntm.data import Schema

FAST = ["--gru1-units", "6", "--gru2-units", "5", "--memory-rows", "4", "--memory-width", "3",
        "--controller-units", "4", "--dense-units", "5", "--max-epochs", "2", "--window", "4"]


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:        # argparse rejects bad flags while parsing
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--per-class", "120", "--seed", "3", "--out", str(root / "synth")]) == 0
    assert main(["train", "--data", str(root / "synth"), "--out", str(root / "run"), "--seed", "1",
                 "--reduce-fraction", "1.0", *FAST]) == 0
    return root


def test_synth_is_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        code, out, _ = run(["synth", "--per-class", "30", "--seed", "5", "--out", str(tmp_path / d)], capsys)
        assert code == 0
    for name in ("normal.csv", "dos.csv", "ddos.csv", "schema.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = (tmp_path / "a" / "dos.csv").read_text().splitlines()
    assert len(rows) == 31 and rows[0].endswith(",label") and rows[1].endswith(",DoS")
    assert Schema.load(tmp_path / "a" / "schema.txt") == Schema()


def test_train_outputs(trained):
    run_dir = trained / "run"
    for name in ("checkpoint.gntm", "epoch_log.csv", "test.gntm", "norm.json", "schema.txt", "run.cfg"):
        assert (run_dir / name).is_file(), name
    log = (run_dir / "epoch_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,train_acc,val_loss,val_acc,seconds"
    assert len(log) == 3
    # the saved run.cfg reproduces the configuration
    cfg = parse_config_text((run_dir / "run.cfg").read_text())
    assert cfg["seed"] == 1 and cfg["gru1_units"] == 6


def test_eval_from_cache_and_csv(trained, capsys):
    ckpt = str(trained / "run" / "checkpoint.gntm")
    code, out, _ = run(["eval", "--checkpoint", ckpt, "--data", str(trained / "run" / "test.gntm"),
                        "--out", str(trained / "rep")], capsys)
    assert code == 0 and out.startswith("accuracy=")
    assert {"report.json", "confusion.csv", "curves.csv"} <= {p.name for p in (trained / "rep").iterdir()}
    code, out, _ = run(["eval", "--checkpoint", ckpt, "--data", str(trained / "synth"),
                        "--out", str(trained / "rep2")], capsys)
    assert code == 0


def test_eval_feature_mismatch(trained, tmp_path, capsys):
    assert main(["synth", "--per-class", "30", "--features", "5", "--out", str(tmp_path / "s5")]) == 0
    capsys.readouterr()
    code, _, err = run(["eval", "--checkpoint", str(trained / "run" / "checkpoint.gntm"),
                        "--data", str(tmp_path / "s5"), "--out", str(tmp_path / "r")], capsys)
    assert code == 1
    assert "missing columns" in err or "features" in err


def detect_input(trained, n):
    lines = (trained / "synth" / "ddos.csv").read_text().splitlines()
    return "\n".join(lines[: n + 1]) + "\n"


@pytest.mark.parametrize("n,rows", [(12, 9), (4, 1), (3, 0)])
def test_detect_emits_one_row_per_full_window(trained, tmp_path, capsys, n, rows):
    path = tmp_path / "in.csv"
    path.write_text(detect_input(trained, n))
    code, out, err = run(["detect", "--checkpoint", str(trained / "run" / "checkpoint.gntm"),
                          "--input", str(path)], capsys)
    assert code == 0
    lines = out.splitlines()
    if rows == 0:
        assert lines == [] or lines == ["index,class,p_Normal,p_DoS,p_DDoS"]
        assert "warm-up" in err
        return
    assert lines[0] == "index,class,p_Normal,p_DoS,p_DDoS"
    body = list(csv.reader(lines[1:]))
    assert len(body) == rows
    assert [int(r[0]) for r in body] == list(range(4, n + 1))
    for r in body:
        assert r[1] in ("Normal", "DoS", "DDoS")
        assert abs(sum(float(p) for p in r[2:]) - 1.0) < 5e-6


def test_detect_uncertain_and_stdin(trained, monkeypatch, capsys):
    monkeypatch.setattr(sys, "stdin", io.StringIO(detect_input(trained, 5)))
    code, out, _ = run(["detect", "--checkpoint", str(trained / "run" / "checkpoint.gntm"),
                        "--min-confidence", "1.01"], capsys)
    assert code == 0
    assert [line.split(",")[1] for line in out.splitlines()[1:]] == ["uncertain", "uncertain"]


def test_gradcheck_exit_codes(capsys):
    code, out, _ = run(["gradcheck", "--coords", "40"], capsys)
    assert code == 0 and out.startswith("PASS")
    code, out, _ = run(["gradcheck", "--coords", "40", "--tolerance", "1e-14"], capsys)
    assert code == 3 and out.startswith("FAIL")


def test_usage_errors(tmp_path, capsys):
    assert run(["train", "--no-such-flag"], capsys)[0] == 1
    assert run(["eval"], capsys)[0] == 1
    assert run(["detect"], capsys)[0] == 1
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("seed = 3\nflavour = mint\n")
    code, _, err = run(["synth", "--config", str(cfg)], capsys)
    assert code == 1 and "flavour" in err
    assert run(["synth", "--per-class", "many"], capsys)[0] == 1


def test_runtime_errors(tmp_path, capsys):
    (tmp_path / "junk.gntm").write_bytes(b"junk")
    code, _, err = run(["detect", "--checkpoint", str(tmp_path / "junk.gntm")], capsys)
    assert code == 2
    code, _, _ = run(["train", "--data", str(tmp_path / "nowhere")], capsys)
    assert code == 2


def test_help_lists_every_flag(capsys):
    for cmd, keys in _COMMAND_KEYS.items():
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for key in keys + ["config"]:
            assert "--" + key.replace("_", "-") in out, (cmd, key)


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nseed = 4\nlr = 0.01  # trailing\nadditive_write = yes\n")
    assert resolve(None, {}, env={}).seed == 0
    assert resolve(None, {}, env={"GNTM_SEED": "9"}).seed == 9
    r = resolve(str(cfg), {}, env={"GNTM_SEED": "9"})
    assert (r.seed, r.lr, r.additive_write) == (4, 0.01, True)
    assert resolve(str(cfg), {"seed": "11"}, env={"GNTM_SEED": "9"}).seed == 11
    with pytest.raises(ConfigError):
        resolve(str(tmp_path / "missing.cfg"), {}, env={})
    with pytest.raises(ConfigError):
        parse_config_text("lr 0.1\n")


def test_gntm_seed_environment(tmp_path):
    env = dict(os.environ, GNTM_SEED="5")
    out_env = tmp_path / "env"
    subprocess.run([sys.executable, "-m", "gru_ntm", "synth", "--per-class", "20", "--out", str(out_env)],
                   check=True, env=env, capture_output=True)
    assert main(["synth", "--per-class", "20", "--seed", "5", "--out", str(tmp_path / "flag")]) == 0
    assert (out_env / "normal.csv").read_bytes() == (tmp_path / "flag" / "normal.csv").read_bytes()
