import csv
import json
import math

import numpy as np
import pytest

from potfield import cli
from potfield.attractor import read_features
from potfield.cli import (
    CONFIG_KEYS,
    RunConfig,
    cmd_analyze,
    cmd_coherence,
    cmd_evolve,
    cmd_lyapunov,
    cmd_synth,
    main,
)
from potfield.errors import ConfigError, SingularKernel, UnknownAsset
from potfield.market_data import write_trajectory_csv
from potfield.synth import drifting_well

FAST = {"gp_starts": "2", "gp_maxiter": "100"}


def _cfg(tmp_path, name="run.cfg", **keys):
    lines = [f"{k.replace('__', '.')} = {v}" for k, v in {**FAST, **keys}.items()]
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def _ohlcv(path, closes, start="2021-01-01T00:00:00Z", step_min=60):
    from potfield.market_data import format_time, parse_time

    t0 = parse_time(start)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "open", "high", "low", "close", "volume"])
        for i, c in enumerate(closes):
            w.writerow([format_time(t0 + 60 * step_min * i), c, c, c, c, 1.0])


def _bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


# ----------------------------------------------------------------------- config


def test_print_defaults_lists_every_key(capsys):
    assert main(["--print-defaults"]) == 0
    text = capsys.readouterr().out
    for key, default, _ in CONFIG_KEYS:
        assert f"\n{key} =" in text
    assert "input.<ASSET>" in text
    # the printed defaults are themselves a valid config
    values = {}
    for line in text.splitlines():
        if line and not line.startswith("#"):
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
    assert RunConfig.from_mapping(values) == RunConfig.from_mapping({})


def test_unknown_key_and_bad_values(tmp_path):
    assert cmd_analyze(_cfg(tmp_path, colour="blue")) == 2
    assert cmd_analyze(_cfg(tmp_path, gp_starts="many")) == 2
    bad = _cfg(tmp_path, input__A="a.csv", window_start="2021-01-02", window_end="2021-01-01")
    assert cmd_analyze(bad) == 2
    with pytest.raises(UnknownAsset):
        RunConfig.from_mapping({"input.A": "a.csv", "assets": "A,B"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"price_field": "vwap"})
    (tmp_path / "broken.cfg").write_text("no equals sign here\n")
    assert cmd_lyapunov(tmp_path / "broken.cfg") == 2


def test_flags_override_file(tmp_path):
    path = _cfg(tmp_path, gp_seed="4")
    cfg = RunConfig.load(path, {"gp_seed": "9"})
    assert cfg.gp_seed == 9 and cfg.gp_starts == 2
    assert cfg.out == tmp_path / "out"


def test_bundled_config_resolves():
    cfg = RunConfig.load("bundled:apr2021.cfg")
    assert cfg.assets == ("BTC", "ETH")
    assert all(p.exists() for p in cfg.inputs.values())
    assert cfg.resample == 3600.0 and cfg.subwindow == 86400.0


# ------------------------------------------------------------------------ synth


def test_synth_bundled_spec(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "bundled:quadratic.spec", "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "timestamp,x1,x2"
    assert len(lines) == 1 + 500
    echo = json.loads((out / "resolved_config.json").read_text())
    assert echo["schema_version"] == "1" and echo["config"]["seed"] == 1


def test_synth_invalid_curvature(tmp_path, capsys):
    spec = tmp_path / "bad.spec"
    spec.write_text("curvature = 1, 2; 2, 1\ncenter = 0, 0\nx0 = 1, 1\n")
    assert cmd_synth(spec, tmp_path / "o") == 2
    assert "positive definite" in capsys.readouterr().err
    spec.write_text("dt = 0.5\ncurvature = 1, 0; 0, 1\n")
    assert cmd_synth(spec, tmp_path / "o") == 2  # step guard
    spec.write_text("wobble = 1\n")
    assert cmd_synth(spec, tmp_path / "o") == 2


def test_synth_seed_contract(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cmd_synth("bundled:quadratic.spec", a, seed=1) == 0
    assert cmd_synth("bundled:quadratic.spec", b, seed=1) == 0
    assert cmd_synth("bundled:quadratic.spec", c, seed=2) == 0
    ta, tb, tc = ((d / "trajectory.csv").read_bytes() for d in (a, b, c))
    assert ta == tb and ta != tc
    assert ta.splitlines()[0] == tc.splitlines()[0]
    assert len(ta.splitlines()) == len(tc.splitlines())


# --------------------------------------------------------------------- lyapunov


def _contracting_traj(tmp_path):
    # A = 2 I, gamma = 4; start on the slow mode, rate 2 - sqrt(2)
    slow = 2.0 - math.sqrt(2.0)
    spec = tmp_path / "c.spec"
    spec.write_text(f"curvature = 2, 0; 0, 2\ncenter = 0, 0\ngamma = 4\nx0 = 1, -0.5\n"
                    f"v0 = {-slow}, {0.5 * slow}\nsteps = 1500\n")
    assert cmd_synth(spec, tmp_path / "syn") == 0
    return tmp_path / "syn" / "trajectory.csv", slow


def test_lyapunov_contracting_synth_is_stable(tmp_path):
    traj, slow = _contracting_traj(tmp_path)
    out = tmp_path / "ly"
    assert cmd_lyapunov(_cfg(tmp_path, trajectory=traj, lyap_k=50, out=out)) == 0
    rep = json.loads((out / "lyapunov.json").read_text())
    assert rep["verdict"] == "Stable" and rep["schema_version"] == "1"
    assert rep["lambda_max"] == pytest.approx(-slow, rel=0.1)
    rows = list(csv.reader(open(out / "exponents.csv")))
    assert rows[0] == ["rank", "exponent"] and len(rows) == 1 + rep["pair_count"]
    assert (out / "resolved_config.json").exists()


def test_lyapunov_missing_input(tmp_path, capsys):
    assert cmd_lyapunov(_cfg(tmp_path, input__BTC=tmp_path / "nope.csv")) == 2
    assert "error" in capsys.readouterr().err
    assert cmd_lyapunov(_cfg(tmp_path, name="empty.cfg")) == 2


def test_lyapunov_deterministic(tmp_path):
    traj, _ = _contracting_traj(tmp_path)
    for d in ("a", "b"):
        assert cmd_lyapunov(_cfg(tmp_path, trajectory=traj, lyap_k=50, out=tmp_path / d)) == 0
    assert _bytes(tmp_path / "a") == _bytes(tmp_path / "b")


# ---------------------------------------------------------------------- analyze


def test_analyze_synth_recovers_center(tmp_path):
    assert cmd_synth("bundled:quadratic.spec", tmp_path / "syn") == 0
    out = tmp_path / "an"
    cfg = _cfg(tmp_path, trajectory=tmp_path / "syn" / "trajectory.csv", out=out)
    assert cmd_analyze(cfg) == 0
    rep = json.loads((out / "summary.json").read_text())
    mu = np.array([rep["mu_a"]["x1"], rep["mu_a"]["x2"]])
    states = np.loadtxt(tmp_path / "syn" / "trajectory.csv", delimiter=",", skiprows=1,
                        usecols=(1, 2))
    span = np.ptp(states, axis=0)
    assert np.all(np.abs(mu - [0.3, -0.2]) <= 0.05 * span)
    for name in ("kl_field.csv", "field.csv", "ellipses.csv", "resolved_config.json"):
        assert (out / name).exists()


def test_analyze_two_asset_bundle_shapes(tmp_path):
    out = tmp_path / "an"
    cfg = RunConfig.load("bundled:apr2021.cfg", {**FAST, "window_start": "2021-04-20T00:00:00Z",
                                                 "window_end": "2021-04-21T23:00:00Z",
                                                 "out": str(out)})
    assert cmd_analyze(cfg) == 0
    rep = json.loads((out / "summary.json").read_text())
    assert rep["assets"] == ["BTC", "ETH"]
    assert np.array(rep["sigma_a"]).shape == (2, 2)
    assert len(rep["principal_axis"]["phases"]) == 1
    assert 0 <= rep["principal_axis"]["phases"][0]["degrees"] < 180
    assert set(rep["trend"]) == {"x0", "magnitude", "direction_deg", "p_pos", "p_neg"}
    with open(out / "kl_field.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["BTC", "ETH", "lap_mean", "lap_var", "kl", "sign"]


def test_analyze_constant_price(tmp_path, capsys):
    _ohlcv(tmp_path / "a.csv", [10.0] * 30)
    _ohlcv(tmp_path / "b.csv", [5.0 + 0.1 * i for i in range(30)])
    cfg = _cfg(tmp_path, input__A="a.csv", input__B="b.csv", out=tmp_path / "o")
    assert cmd_analyze(cfg) == 2
    assert "DegenerateRange" in capsys.readouterr().err


def test_analyze_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise SingularKernel("kernel matrix not positive definite after jitter")

    monkeypatch.setattr(cli, "analyze_window", boom)
    assert cmd_synth("bundled:quadratic.spec", tmp_path / "syn") == 0
    cfg = _cfg(tmp_path, trajectory=tmp_path / "syn" / "trajectory.csv", out=tmp_path / "o")
    assert cmd_analyze(cfg) == 3


def test_analyze_unknown_asset(tmp_path):
    _ohlcv(tmp_path / "a.csv", [10.0 + i for i in range(30)])
    assert cmd_analyze(_cfg(tmp_path, input__A="a.csv", assets="A,Z")) == 2


def test_main_flags(tmp_path):
    assert cmd_synth("bundled:quadratic.spec", tmp_path / "syn") == 0
    cfg = _cfg(tmp_path, trajectory=tmp_path / "syn" / "trajectory.csv")
    out = tmp_path / "m"
    assert main(["analyze", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    echo = json.loads((out / "resolved_config.json").read_text())
    assert echo["config"]["gp_seed"] == 3 and echo["command"] == "analyze"
    assert main(["--config", str(cfg), "--set", "gp_starts=1", "--out", str(tmp_path / "n"),
                 "lyapunov"]) == 0
    assert main([]) == 2


# ----------------------------------------------------------------------- evolve


def test_evolve_ten_days(tmp_path):
    rng = np.random.default_rng(0)
    n = 10 * 24
    _ohlcv(tmp_path / "a.csv", 100 + np.cumsum(rng.normal(size=n)))
    _ohlcv(tmp_path / "b.csv", 50 + np.cumsum(rng.normal(size=n)))
    out = tmp_path / "ev"
    cfg = _cfg(tmp_path, input__A="a.csv", input__B="b.csv", out=out)
    assert cmd_evolve(cfg) == 0
    rows = list(csv.reader(open(out / "evolution.csv")))
    assert rows[0] == ["date", "A_mu_a", "B_mu_a", "A_std", "B_std", "error"]
    assert len(rows) == 11
    feats = read_features(out / "features_A.csv")
    assert len(feats) == 10
    for r, f in zip(rows[1:], feats):
        assert r[0] == f.date
        assert (f.value is None and r[1] == "") or float(r[1]) == f.value


def test_evolve_drifting_well_is_monotone(tmp_path):
    vel = np.array([0.4, -0.2])
    tr, _ = drifting_well([0.0, 0.0], vel, [[8.0, 1.0], [1.0, 6.0]], x0=[0.4, -0.3],
                          gamma=1.0, noise_std=0.3, dt=0.01, steps=3000, seed=3)
    write_trajectory_csv(tr, tmp_path / "drift.csv")
    out = tmp_path / "ev"
    cfg = _cfg(tmp_path, trajectory=tmp_path / "drift.csv", subwindow="5", normalize="false",
               out=out)
    assert cmd_evolve(cfg) == 0
    rows = list(csv.reader(open(out / "evolution.csv")))[1:]
    x1 = [float(r[1]) for r in rows if r[1]]
    x2 = [float(r[2]) for r in rows if r[2]]
    assert len(x1) >= 5
    assert np.all(np.diff(x1) > 0) and np.all(np.diff(x2) < 0)


def test_evolve_mostly_failed_exit(tmp_path):
    _ohlcv(tmp_path / "a.csv", [10.0] * 72)
    _ohlcv(tmp_path / "b.csv", [5.0] * 72)
    out = tmp_path / "ev"
    assert cmd_evolve(_cfg(tmp_path, input__A="a.csv", input__B="b.csv", out=out)) == 2
    rows = list(csv.reader(open(out / "evolution.csv")))[1:]
    assert len(rows) == 3 and all(r[1] == "" and "DegenerateRange" in r[-1] for r in rows)


# -------------------------------------------------------------------- coherence


def test_coherence_same_asset_twice(tmp_path):
    rng = np.random.default_rng(1)
    closes = 100 + np.cumsum(rng.normal(size=256))
    _ohlcv(tmp_path / "a.csv", closes)
    _ohlcv(tmp_path / "b.csv", closes)
    out = tmp_path / "co"
    assert cmd_coherence(_cfg(tmp_path, input__A="a.csv", input__B="b.csv", out=out)) == 0
    with open(out / "coherence.csv") as fh:
        rows = list(csv.DictReader(fh))
    inside = [float(r["r2"]) for r in rows if r["in_coi"] == "1"]
    assert inside and min(inside) >= 1 - 1e-6
    assert cmd_coherence(_cfg(tmp_path, input__A="a.csv", input__B="b.csv",
                              out=tmp_path / "co2")) == 0
    assert _bytes(out) == _bytes(tmp_path / "co2")


def test_coherence_needs_two_assets(tmp_path, capsys):
    for name in "abc":
        _ohlcv(tmp_path / f"{name}.csv", [1.0 + i for i in range(64)])
    cfg = _cfg(tmp_path, input__A="a.csv", input__B="b.csv", input__C="c.csv")
    assert cmd_coherence(cfg) == 2
    assert "exactly two" in capsys.readouterr().err
