import csv
import json

import numpy as np
import pytest

from fff import config
from fff.cli import main
from fff.errors import ConfigError

FIG2_CFG = """\
# linear 1-D model on N(0, 1.5^2)
model = linear
dataset = normal
sigma = 1.5
n_data = 4096
n_eval = 0
batch_size = 4096
steps = 3000
lr = 0.05
beta = 1.0
probe_kind = sphere
schedule = exponential
gamma = 0.999
eval_every = 500
"""

SMALL = ["--dataset", "two_moons", "--n-data", "400", "--n-eval", "100", "--hidden", "8,8", "--steps", "30",
         "--batch-size", "50", "--eval-every", "10", "--final-layer-scale", "0.1"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--out", str(out), *SMALL]) == 0
    return out


def test_train_fig2_config(tmp_path):
    cfg = tmp_path / "fig2.cfg"
    cfg.write_text(FIG2_CFG)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    doc = json.loads((tmp_path / "run" / "checkpoint.json").read_text())
    a = doc["params"]["encoder"][0]["weight"][0][0]
    b = doc["params"]["decoder"][0]["weight"][0][0]
    assert abs(abs(a) - 2 / 3) < 1e-3 and abs(abs(b) - 1.5) < 1e-3
    assert len(_rows(tmp_path / "run" / "metrics.csv")) == 6


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_flag_overrides_config_and_is_recorded(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("beta = 3\nsteps = 5\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--beta", "100", "--out", str(out), *SMALL[:-6]]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["beta"] == 100.0
    assert manifest["config"]["steps"] == 30
    assert "beta = 100.0" in (out / "config.cfg").read_text()


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2
    assert main(["train", "--steps", "many"]) == 2
    assert main(["train", "--schedule", "cyclic"]) == 2
    capsys.readouterr()


def test_help_lists_config_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--beta", "--k-probes", "--probe-kind", "--grad-clip", "--threads", "--config"):
        assert flag in text


def test_manifest_rerun_is_bit_exact(trained, tmp_path):
    again = tmp_path / "again"
    assert main(["train", "--config", str(trained / "manifest.json"), "--threads", "1", "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
    assert (again / "checkpoint.json").read_bytes() == (trained / "checkpoint.json").read_bytes()


def test_data_and_nll(trained, tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["data", "--out", str(out), "--svg", *SMALL]) == 0
    assert (out / "data.svg").read_text().startswith("<svg")
    assert len(_rows(out / "data.csv")) == 400
    capsys.readouterr()
    assert main(["nll", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(out / "eval.csv"),
                 "--out", str(tmp_path / "nll")]) == 0
    line = capsys.readouterr().out
    rows = _rows(tmp_path / "nll" / "nll.csv")
    assert len(rows) == 100
    mean = -float(np.mean([float(r["log_likelihood"]) for r in rows]))
    assert line.startswith(f"mean_nll={mean!r}")


def test_sample(trained, tmp_path):
    out = tmp_path / "s"
    assert main(["sample", "--checkpoint", str(trained / "checkpoint.json"), "--n", "25", "--seed", "3",
                 "--out", str(out)]) == 0
    first = (out / "samples.csv").read_bytes()
    assert len(_rows(out / "samples.csv")) == 25
    assert main(["sample", "--checkpoint", str(trained / "checkpoint.json"), "--n", "25", "--seed", "3",
                 "--out", str(out)]) == 0
    assert (out / "samples.csv").read_bytes() == first
    assert main(["sample", "--checkpoint", str(trained / "checkpoint.json"), "--context", "1,2"]) == 2


def test_corrupt_checkpoint_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["sample", "--checkpoint", str(bad)]) == 2
    assert main(["sample", "--checkpoint", str(tmp_path / "missing.json")]) == 2


def test_verify_all(tmp_path, capsys):
    assert main(["verify", "--suite", "all", "--seed", "7", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert {l.split(":")[0] for l in lines if ": PASS" in l} == {"theorem1", "theorem2", "landscape", "partition"}
    assert all(r["ok"] for r in json.loads((tmp_path / "verify.json").read_text()).values())
    assert json.loads((tmp_path / "manifest.json").read_text())["ok"] is True


def test_landscape(tmp_path):
    assert main(["landscape", "--n", "9", "--svg", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "landscape.csv")
    assert list(rows[0]) == ["variant", "a", "b", "da", "db", "magnitude"]
    assert len(rows) == 8 * 9 + 9 * 9
    assert any(p.suffix == ".svg" for p in tmp_path.iterdir())


def test_reweight_dw4(tmp_path, capsys):
    run = tmp_path / "dw4"
    args = ["--dataset", "dw4", "--n-data", "512", "--n-eval", "64", "--mcmc-burnin", "100", "--hidden", "16",
            "--steps", "20", "--batch-size", "64", "--eval-every", "10", "--final-layer-scale", "0.1"]
    assert main(["train", "--out", str(run), *args]) == 0
    capsys.readouterr()
    assert main(["reweight", "--checkpoint", str(run / "checkpoint.json"), "--n", "200",
                 "--out", str(tmp_path / "rw")]) == 0
    summary = json.loads((tmp_path / "rw" / "manifest.json").read_text())
    assert 1.0 <= summary["ess"] <= 200 + 1e-9
    w = [float(r["normalized_weight"]) for r in _rows(tmp_path / "rw" / "weights.csv")]
    assert sum(w) == pytest.approx(1.0)
    assert main(["sample", "--checkpoint", str(run / "checkpoint.json"), "--n", "5", "--full-coordinates",
                 "--out", str(tmp_path / "s")]) == 0
    assert len(_rows(tmp_path / "s" / "samples.csv")[0]) == 8
    assert main(["reweight", "--checkpoint", str(run / "checkpoint.json"), "--potential", "lj13"]) == 2


def test_beta_search(tmp_path, capsys):
    args = ["--dataset", "normal", "--sigma", "1", "--n-data", "256", "--n-eval", "64", "--hidden", "8",
            "--batch-size", "64", "--beta", "1", "--beta-rounds", "2", "--beta-steps", "20"]
    assert main(["beta-search", "--out", str(tmp_path), *args]) == 0
    assert capsys.readouterr().out.startswith("beta=")
    assert len(_rows(tmp_path / "beta_search.csv")) == 2


def test_config_parser():
    values = config.parse_text("# comment\nbeta = 2.5\nhidden = 32, 32\nglobal_skip = false\n")
    assert values == {"beta": 2.5, "hidden": (32, 32), "global_skip": False}
    for bad in ("beta 2", "beta = x", "nope = 1", "beta = 1\nbeta = 2"):
        with pytest.raises(ConfigError):
            config.parse_text(bad)
    cfg = config.build(overrides={"beta": 4.0})
    assert config.build(overrides=config.parse_text(cfg.to_text())) == cfg
    with pytest.raises(ConfigError):
        config.build(overrides={"model": "resnet"})


def test_particle_coordinate_options(tmp_path, capsys):
    args = ["--dataset", "dw4", "--n-data", "256", "--n-eval", "0", "--mcmc-burnin", "50", "--hidden", "8",
            "--steps", "5", "--batch-size", "64", "--eval-every", "5", "--coordinates", "com"]
    run = tmp_path / "com"
    assert main(["train", "--out", str(run), *args]) == 0
    meta = json.loads((run / "checkpoint.json").read_text())["metadata"]
    assert meta["coordinates"]["kind"] == "com" and len(meta["coordinates"]["shift"]) == 6
    assert main(["reweight", "--checkpoint", str(run / "checkpoint.json"), "--potential", "dw4",
                 "--potential-params", "tau=2", "--n", "50", "--out", str(tmp_path / "rw")]) == 0
    lj = ["--dataset", "lj13", "--n-data", "64", "--n-eval", "0", "--mcmc-burnin", "10", "--coordinates", "internal"]
    assert main(["data", "--out", str(tmp_path / "lj"), *lj]) == 2
    assert main(["train", "--coordinates", "polar"]) == 2
    capsys.readouterr()
