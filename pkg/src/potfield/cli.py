"""Command-line pipeline: ``potfield [global flags] <subcommand>``.

Runs are driven by a flat ``key = value`` config file (``#`` starts a comment
line).  Price inputs are given one per asset as ``input.<ASSET> = path``;
relative paths resolve against the config file's directory.  Every key, its
default and meaning is listed by ``potfield --print-defaults``.

Exit codes: 0 success, 2 data or config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import __version__
from .attractor import (
    AnalysisSettings,
    analyze_window,
    ellipse_polylines,
    export_features,
    temporal_evolution,
)
from .errors import ConfigError, DataError, NumericalError, UnknownAsset
from .gp_field import TrainOptions, write_field_csv
from .lyapunov import default_epsilon, default_stride, lyapunov_exponents, stability_verdict
from .market_data import (
    PRICE_FIELDS,
    format_time,
    load_assets,
    parse_duration,
    parse_time,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .synth import DoubleWell, QuadraticWell, SynthSpec, simulate
from .wavelet import coherence, scale_grid, write_coherence_csv

log = logging.getLogger("potfield")

SCHEMA_VERSION = "1"
EXIT_OK, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3
BUNDLED_PREFIX = "bundled:"

# key, default (as written in a config file), description
CONFIG_KEYS = [
    ("trajectory", "", "trajectory CSV (timestamp + one column per asset); alternative to input.<ASSET>"),
    ("dt", "", "sampling interval of `trajectory`, seconds; empty = median spacing"),
    ("col_timestamp", "timestamp", "price CSV column holding the timestamp"),
    ("col_open", "open", "price CSV column holding the open price"),
    ("col_high", "high", "price CSV column holding the high price"),
    ("col_low", "low", "price CSV column holding the low price"),
    ("col_close", "close", "price CSV column holding the close price"),
    ("col_volume", "volume", "price CSV column holding the volume"),
    ("assets", "", "comma-separated assets to analyze, in order; empty = all inputs"),
    ("window_start", "", "first timestamp included (ISO-8601 or Unix seconds); empty = data start"),
    ("window_end", "", "last timestamp included; empty = data end"),
    ("subwindow", "1d", "evolve: subwindow length (e.g. 1d, 12h, 3600)"),
    ("resample", "", "resampling interval of price inputs (e.g. 5min, 1h); empty = native"),
    ("price_field", "close", "price per resampled bucket: close | open | mean"),
    ("normalize", "true", "min-max normalize each window before inference"),
    ("gp_starts", "8", "optimizer restarts"),
    ("gp_seed", "0", "seed for optimizer restarts and quasi-random grids"),
    ("gp_bound_low", "0.001", "lower hyperparameter bound factor"),
    ("gp_bound_high", "1000", "upper hyperparameter bound factor"),
    ("gp_maxiter", "200", "L-BFGS-B iterations per start"),
    ("gp_jobs", "1", "threads used for optimizer restarts"),
    ("grid_points", "", "test points per axis; empty = 25 (M<=2), 12 (M=3), Sobol (M>3)"),
    ("grid_pad", "0.1", "padding of the test grid, fraction of the data span"),
    ("qmc_points", "4096", "Sobol test points when M > 3"),
    ("grace", "0", "convergence: samples outside the radius bridged between runs"),
    ("lyap_eps_percentile", "5", "epsilon as this percentile of pairwise state distances"),
    ("lyap_epsilon", "", "explicit epsilon (state units); overrides the percentile"),
    ("lyap_k", "", "stride in samples; empty = about lyap_horizon, at most (N-1)/10"),
    ("lyap_horizon", "1h", "target stride duration when lyap_k is empty"),
    ("wavelet_omega0", "6", "Morlet centre frequency"),
    ("wavelet_voices", "12", "scales per octave"),
    ("wavelet_scale_width", "0.6", "scale smoothing width in octaves"),
    ("out", "out", "output directory"),
]
DEFAULTS = {k: v for k, v, _ in CONFIG_KEYS}

SYNTH_KEYS = [
    ("potential", "quadratic", "quadratic | double_well"),
    ("center", "0,0", "quadratic: well centre; double_well: scalar centre"),
    ("curvature", "1,0;0,1", "quadratic: SPD matrix, rows separated by ';'"),
    ("depth", "1", "double_well: barrier height"),
    ("half_width", "1", "double_well: distance of the minima from the centre"),
    ("x0", "1,1", "initial state"),
    ("v0", "", "initial velocity; empty = zero"),
    ("gamma", "0.5", "damping"),
    ("noise_std", "0", "velocity noise per sqrt(time unit)"),
    ("dt", "0.01", "time step"),
    ("steps", "500", "number of states written, including x0"),
    ("assets", "", "column names; empty = x1, x2, ..."),
    ("t0", "0", "time of the first state (Unix seconds)"),
    ("seed", "0", "noise seed"),
]
SYNTH_DEFAULTS = {k: v for k, v, _ in SYNTH_KEYS}


# ------------------------------------------------------------------- parsing


def _resolve_bundled(path: str | Path) -> Path:
    s = str(path)
    if s.startswith(BUNDLED_PREFIX):
        p = files("potfield") / "data" / s[len(BUNDLED_PREFIX):]
        return Path(str(p))
    return Path(path)


def read_kv(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file into an ordered dict of strings."""
    path = _resolve_bundled(path)
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv, s: str):
    return None if s.strip() == "" else conv(s)


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _names(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one run (see ``CONFIG_KEYS``)."""

    inputs: dict = field(default_factory=dict)  # asset -> Path
    trajectory: Path | None = None
    dt: float | None = None
    schema: dict = field(default_factory=dict)
    assets: tuple = ()
    window_start: float | None = None
    window_end: float | None = None
    subwindow: float = 86400.0
    resample: float | None = None
    price_field: str = "close"
    normalize: bool = True
    gp_starts: int = 8
    gp_seed: int = 0
    gp_bound_low: float = 1e-3
    gp_bound_high: float = 1e3
    gp_maxiter: int = 200
    gp_jobs: int = 1
    grid_points: int | None = None
    grid_pad: float = 0.1
    qmc_points: int = 4096
    grace: int = 0
    lyap_eps_percentile: float = 5.0
    lyap_epsilon: float | None = None
    lyap_k: int | None = None
    lyap_horizon: float = 3600.0
    wavelet_omega0: float = 6.0
    wavelet_voices: int = 12
    wavelet_scale_width: float = 0.6
    out: Path = Path("out")
    raw: dict = field(default_factory=dict, compare=False)  # merged key -> string

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: Path | None = None) -> "RunConfig":
        base = Path(".") if base is None else base
        merged = dict(DEFAULTS)
        inputs = {}
        for key, value in values.items():
            if key.startswith("input."):
                name = key[len("input."):].strip()
                if not name:
                    raise ConfigError("input key needs an asset name: input.<ASSET>")
                inputs[name] = value
            elif key in DEFAULTS:
                merged[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")

        def path(s):
            p = Path(s)
            if str(s).startswith(BUNDLED_PREFIX):
                return _resolve_bundled(s)
            return p if p.is_absolute() else base / p

        try:
            cfg = cls(
                inputs={k: path(v) for k, v in inputs.items()},
                trajectory=_opt(path, merged["trajectory"]),
                dt=_opt(parse_duration, merged["dt"]),
                schema={f: merged[f"col_{f}"] for f in
                        ("timestamp", "open", "high", "low", "close", "volume")},
                assets=_names(merged["assets"]),
                window_start=_opt(parse_time, merged["window_start"]),
                window_end=_opt(parse_time, merged["window_end"]),
                subwindow=parse_duration(merged["subwindow"]),
                resample=_opt(parse_duration, merged["resample"]),
                price_field=merged["price_field"].strip().lower(),
                normalize=_bool(merged["normalize"]),
                gp_starts=int(merged["gp_starts"]),
                gp_seed=int(merged["gp_seed"]),
                gp_bound_low=float(merged["gp_bound_low"]),
                gp_bound_high=float(merged["gp_bound_high"]),
                gp_maxiter=int(merged["gp_maxiter"]),
                gp_jobs=int(merged["gp_jobs"]),
                grid_points=_opt(int, merged["grid_points"]),
                grid_pad=float(merged["grid_pad"]),
                qmc_points=int(merged["qmc_points"]),
                grace=int(merged["grace"]),
                lyap_eps_percentile=float(merged["lyap_eps_percentile"]),
                lyap_epsilon=_opt(float, merged["lyap_epsilon"]),
                lyap_k=_opt(int, merged["lyap_k"]),
                lyap_horizon=parse_duration(merged["lyap_horizon"]),
                wavelet_omega0=float(merged["wavelet_omega0"]),
                wavelet_voices=int(merged["wavelet_voices"]),
                wavelet_scale_width=float(merged["wavelet_scale_width"]),
                out=path(merged["out"]),
                raw={**merged, **{f"input.{k}": v for k, v in inputs.items()}},
            )
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise ConfigError(f"bad config value: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict[str, str] | None = None) -> "RunConfig":
        values: dict[str, str] = {}
        base = Path(".")
        if path is not None:
            p = _resolve_bundled(path)
            values = read_kv(p)
            base = p.parent
        values.update(overrides or {})
        return cls.from_mapping(values, base)

    def validate(self) -> None:
        if self.window_start is not None and self.window_end is not None:
            if not self.window_start < self.window_end:
                raise ConfigError("window_start must be earlier than window_end")
        if self.price_field not in PRICE_FIELDS:
            raise ConfigError(f"price_field must be one of {PRICE_FIELDS}")
        if self.subwindow <= 0 or (self.resample is not None and self.resample <= 0):
            raise ConfigError("subwindow and resample must be positive")
        if self.gp_starts < 1 or self.gp_maxiter < 1 or self.gp_jobs < 1:
            raise ConfigError("gp_starts, gp_maxiter and gp_jobs must be at least 1")
        if not 0 < self.gp_bound_low < 1 < self.gp_bound_high:
            raise ConfigError("need 0 < gp_bound_low < 1 < gp_bound_high")
        if self.grid_points is not None and self.grid_points < 2:
            raise ConfigError("grid_points must be at least 2")
        if not 0 < self.lyap_eps_percentile <= 100:
            raise ConfigError("lyap_eps_percentile must lie in (0, 100]")
        if self.lyap_k is not None and self.lyap_k < 1:
            raise ConfigError("lyap_k must be at least 1")
        if self.wavelet_voices < 1 or self.wavelet_omega0 <= 0:
            raise ConfigError("wavelet_voices and wavelet_omega0 must be positive")
        if self.inputs and self.assets:
            missing = [a for a in self.assets if a not in self.inputs]
            if missing:
                raise UnknownAsset(f"assets {missing} have no input.<ASSET> entry")

    def settings(self) -> AnalysisSettings:
        opts = TrainOptions(self.gp_starts, self.gp_seed, self.gp_bound_low,
                            self.gp_bound_high, self.gp_maxiter, self.gp_jobs)
        return AnalysisSettings(self.normalize, opts, self.grid_points, self.grid_pad,
                                self.qmc_points, self.grace)

    def echo(self) -> dict:
        """Typed view of every setting, for ``resolved_config.json``.  The
        output directory is left out so that reruns elsewhere stay identical."""
        return {
            "inputs": {k: str(self.raw.get(f"input.{k}", v)) for k, v in self.inputs.items()},
            "trajectory": self.raw.get("trajectory") or None,
            "dt": self.dt,
            "schema": dict(self.schema),
            "assets": list(self.assets),
            "window_start": None if self.window_start is None else format_time(self.window_start),
            "window_end": None if self.window_end is None else format_time(self.window_end),
            "subwindow": self.subwindow,
            "resample": self.resample,
            "price_field": self.price_field,
            "normalize": self.normalize,
            "gp_starts": self.gp_starts,
            "gp_seed": self.gp_seed,
            "gp_bound_low": self.gp_bound_low,
            "gp_bound_high": self.gp_bound_high,
            "gp_maxiter": self.gp_maxiter,
            "gp_jobs": self.gp_jobs,
            "grid_points": self.grid_points,
            "grid_pad": self.grid_pad,
            "qmc_points": self.qmc_points,
            "grace": self.grace,
            "lyap_eps_percentile": self.lyap_eps_percentile,
            "lyap_epsilon": self.lyap_epsilon,
            "lyap_k": self.lyap_k,
            "lyap_horizon": self.lyap_horizon,
            "wavelet_omega0": self.wavelet_omega0,
            "wavelet_voices": self.wavelet_voices,
            "wavelet_scale_width": self.wavelet_scale_width,
        }


def _matrix(s: str) -> np.ndarray:
    rows = [_floats(r) for r in s.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows must have equal length")
    return np.array(rows)


def read_synth_spec(path, overrides: dict[str, str] | None = None) -> tuple[SynthSpec, int, dict]:
    """Parse a synth spec file; returns ``(spec, seed, typed echo)``."""
    values = read_kv(path) if path is not None else {}
    values.update(overrides or {})
    unknown = sorted(set(values) - set(SYNTH_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown synth keys {unknown}")
    v = {**SYNTH_DEFAULTS, **values}
    try:
        kind = v["potential"].strip().lower()
        if kind == "quadratic":
            pot = QuadraticWell(_floats(v["center"]), _matrix(v["curvature"]))
            echo_pot = {"kind": kind, "center": pot.center.tolist(),
                        "curvature": pot.curvature.tolist()}
        elif kind == "double_well":
            pot = DoubleWell(float(v["depth"]), float(v["half_width"]), float(v["center"]))
            echo_pot = {"kind": kind, "depth": pot.depth, "half_width": pot.half_width,
                        "center": pot.center}
        else:
            raise ValueError(f"unknown potential {kind!r}")
        spec = SynthSpec(pot, _floats(v["x0"]), _opt(_floats, v["v0"]), float(v["gamma"]),
                         float(v["noise_std"]), float(v["dt"]), int(v["steps"]),
                         _names(v["assets"]) or None, float(v["t0"]))
        spec.check_step()
        seed = int(v["seed"])
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(f"invalid synth spec: {exc}") from None
    echo = {"potential": echo_pot, "x0": spec.x0.tolist(), "v0": spec.v0.tolist(),
            "gamma": spec.gamma, "noise_std": spec.noise_std, "dt": spec.dt,
            "steps": spec.steps, "assets": list(spec.assets), "t0": spec.t0, "seed": seed}
    return spec, seed, echo


# -------------------------------------------------------------------- output


def _clean(obj):
    """JSON-safe copy: numpy to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(_clean(obj), indent=2, allow_nan=False))
        fh.write("\n")


def _prepare(cfg: RunConfig, command: str, derived: dict | None = None) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(cfg, command, out, derived)
    return out


def _echo(cfg: RunConfig, command: str, out: Path, derived: dict | None = None) -> None:
    write_json({"schema_version": SCHEMA_VERSION, "command": command,
                "config": cfg.echo(), "derived": derived or {}}, out / "resolved_config.json")


def load_window(cfg: RunConfig):
    """The configured assets over the configured window, in price units."""
    if cfg.trajectory is not None:
        traj = read_trajectory_csv(cfg.trajectory, cfg.dt)
    elif cfg.inputs:
        traj = load_assets(cfg.inputs, cfg.schema, cfg.price_field, cfg.resample)
    else:
        raise ConfigError("no inputs: set `trajectory` or input.<ASSET> entries")
    if cfg.assets:
        traj = traj.select(cfg.assets)
    return traj.between(cfg.window_start, cfg.window_end)


def _window_info(traj) -> dict:
    return {"start": format_time(traj.times[0]), "end": format_time(traj.times[-1]),
            "n_states": traj.n, "dt": traj.dt, "assets": list(traj.assets)}


# ---------------------------------------------------------------- subcommands


def _lyapunov(cfg: RunConfig) -> int:
    traj = load_window(cfg)
    k = cfg.lyap_k if cfg.lyap_k is not None else default_stride(traj, cfg.lyap_horizon)
    eps = (cfg.lyap_epsilon if cfg.lyap_epsilon is not None
           else default_epsilon(traj, cfg.lyap_eps_percentile))
    res = lyapunov_exponents(traj, eps, k)
    verdict = stability_verdict(res)
    out = _prepare(cfg, "lyapunov", {"epsilon": res.epsilon, "k": res.k, **_window_info(traj)})
    with open(out / "exponents.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "exponent"])
        for i, e in enumerate(res.exponents):
            w.writerow([i, repr(float(e))])
    write_json({
        "schema_version": SCHEMA_VERSION,
        "verdict": verdict.value,
        "lambda_max": res.lambda_max,
        "pair_count": res.pair_count,
        "skipped_pairs": res.skipped,
        "epsilon": res.epsilon,
        "k": res.k,
        "window": _window_info(traj),
    }, out / "lyapunov.json")
    print(f"{verdict.value}: lambda_max = {res.lambda_max:.6g} per second "
          f"({res.pair_count} pairs)")
    return EXIT_OK


def _summary_json(res, assets) -> dict:
    s = res.summary
    mu_a, sig_a, mu_r, sig_r = s.reporting()
    tr = res.trend
    phases = []
    if res.axes is not None:
        for (j, jp), ang in sorted(res.axes.phases.items()):
            phases.append({"assets": [assets[j], assets[jp]], "degrees": ang})
    model = res.model
    return {
        "schema_version": SCHEMA_VERSION,
        "window": {"start": format_time(s.window[0]), "end": format_time(s.window[1])},
        "assets": list(assets),
        "normalized": res.traj.norm is not None,
        "mu_a": dict(zip(assets, mu_a)),
        "sigma_a": sig_a,
        "std_a": dict(zip(assets, s.std())),
        "sigma_a_scalar": s.sigma_a_scalar,
        "mu_r": None if mu_r is None else dict(zip(assets, mu_r)),
        "sigma_r": sig_r,
        "eigenvalues": s.eigvals,
        "eigenvectors": s.eigvecs,
        "principal_axis": None if res.axes is None else {
            "eigenvalue": res.axes.eigval_max,
            "eigenvector": res.axes.eigvec_max,
            "phases": phases,
        },
        "trend": {
            "x0": dict(zip(assets, tr.x0)),
            "magnitude": dict(zip(assets, tr.magnitude)),
            "direction_deg": tr.direction_deg,
            "p_pos": dict(zip(assets, tr.p_pos)),
            "p_neg": dict(zip(assets, tr.p_neg)),
        },
        "convergence": [
            {"onset": format_time(c.onset), "end": format_time(c.end),
             "start_index": c.start_index, "end_index": c.end_index,
             "duration_s": c.duration, "longest": c.longest}
            for c in res.convergence
        ],
        "hyperparameters": {
            **model.params.as_dict(),
            "jitter": model.jitter,
            "log_likelihood": model.log_likelihood,
            "best_start": model.diagnostics.get("start_index"),
        },
        "asymmetry_max": float(np.max(res.field.asymmetry)),
        "prior_laplacian_variance": res.field.prior_lap_var,
    }


def _write_kl_csv(res, assets, path) -> None:
    k = res.klf
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*assets, "lap_mean", "lap_var", "kl", "sign"])
        for x, lm, lv, kl, sg in zip(k.points, res.field.lap_mean, res.field.lap_var, k.kl, k.sign):
            w.writerow([*(repr(float(v)) for v in x), repr(float(lm)), repr(float(lv)),
                        repr(float(kl)), int(sg)])


def _write_ellipses(res, assets, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "point", assets[0], assets[1]])
        for level, pts in ellipse_polylines(res.summary):
            for i, (a, b) in enumerate(pts):
                w.writerow([level, i, repr(float(a)), repr(float(b))])


def _analyze(cfg: RunConfig) -> int:
    traj = load_window(cfg)
    res = analyze_window(traj, cfg.settings())
    assets = list(traj.assets)
    derived = {**_window_info(traj), "test_points": int(res.field.points.shape[0])}
    out = _prepare(cfg, "analyze", derived)
    write_json(_summary_json(res, assets), out / "summary.json")
    _write_kl_csv(res, assets, out / "kl_field.csv")
    write_field_csv(res.field, out / "field.csv", assets)
    if len(assets) >= 2:
        _write_ellipses(res, assets, out / "ellipses.csv")
    mu = res.summary.reporting()[0]
    print("mu_a: " + ", ".join(f"{a}={v:.6g}" for a, v in zip(assets, mu)))
    return EXIT_OK


def _evolve(cfg: RunConfig) -> int:
    traj = load_window(cfg)
    entries = temporal_evolution(traj, cfg.subwindow, cfg.settings())
    assets = list(traj.assets)
    out = _prepare(cfg, "evolve", {**_window_info(traj), "subwindows": len(entries)})
    with open(out / "evolution.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *(f"{a}_mu_a" for a in assets), *(f"{a}_std" for a in assets),
                    "error"])
        for e in entries:
            if e.ok:
                mu = e.summary.reporting()[0]
                sd = e.summary.std()
                w.writerow([format_time(e.start), *(repr(float(v)) for v in mu),
                            *(repr(float(v)) for v in sd), ""])
            else:
                w.writerow([format_time(e.start), *([""] * (2 * len(assets))), e.error])
    for a in assets:
        export_features(entries, a, assets, out / f"features_{a}.csv")
    ok = sum(e.ok for e in entries)
    print(f"{ok}/{len(entries)} subwindows analyzed")
    if 2 * ok >= len(entries):
        return EXIT_OK
    failed = [e for e in entries if not e.ok]
    return EXIT_NUMERICAL if any(e.numerical for e in failed) else EXIT_DATA


def _coherence(cfg: RunConfig) -> int:
    traj = load_window(cfg)
    if traj.m != 2:
        raise ConfigError(f"coherence needs exactly two assets, got {traj.m}")
    scales = scale_grid(traj.n, traj.dt, cfg.wavelet_voices)
    cmap = coherence(traj.states[:, 0], traj.states[:, 1], traj.dt, scales,
                     cfg.wavelet_omega0, cfg.wavelet_voices, cfg.wavelet_scale_width, traj.times)
    out = _prepare(cfg, "coherence", {**_window_info(traj), "scales": len(scales),
                                      "scale_min": float(scales[0]),
                                      "scale_max": float(scales[-1])})
    write_coherence_csv(cmap, out / "coherence.csv")
    inside = cmap.inside_coi
    mean_r2 = float(cmap.r2[inside].mean()) if inside.any() else float("nan")
    print(f"mean r2 inside cone of influence: {mean_r2:.4f}")
    return EXIT_OK


def _synth(out, spec_path, overrides: dict | None = None) -> int:
    spec, seed, echo = read_synth_spec(spec_path, overrides)
    traj = simulate(spec, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json({"schema_version": SCHEMA_VERSION, "command": "synth", "config": echo,
                "derived": {"n_states": traj.n}}, out / "resolved_config.json")
    write_trajectory_csv(traj, out / "trajectory.csv")
    print(f"wrote {traj.n} states to {out / 'trajectory.csv'}")
    return EXIT_OK


def _guard(fn, *args) -> int:
    try:
        return fn(*args)
    except (DataError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, np.linalg.LinAlgError) as exc:
        # remaining value errors come from malformed inputs
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def _as_config(config) -> RunConfig:
    return config if isinstance(config, RunConfig) else RunConfig.load(config)


def cmd_lyapunov(config) -> int:
    return _guard(lambda: _lyapunov(_as_config(config)))


def cmd_analyze(config) -> int:
    return _guard(lambda: _analyze(_as_config(config)))


def cmd_evolve(config) -> int:
    return _guard(lambda: _evolve(_as_config(config)))


def cmd_coherence(config) -> int:
    return _guard(lambda: _coherence(_as_config(config)))


def cmd_synth(spec_file, out=None, seed: int | None = None) -> int:
    overrides = {} if seed is None else {"seed": str(seed)}
    return _guard(_synth, DEFAULTS["out"] if out is None else out, spec_file, overrides)


# ----------------------------------------------------------------------- main


def defaults_text() -> str:
    lines = ["# potfield run config; flat `key = value`, '#' starts a comment line",
             "# input.<ASSET> = path    one OHLCV CSV per asset (repeat per asset)"]
    for key, default, doc in CONFIG_KEYS:
        lines.append(f"# {doc}")
        lines.append(f"{key} = {default}".rstrip())
    lines.append("")
    lines.append("# ---- synth spec file keys")
    for key, default, doc in SYNTH_KEYS:
        lines.append(f"# {key} = {default}    {doc}")
    return "\n".join(lines) + "\n"


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=d,
                        help="config file (prefix 'bundled:' for packaged configs)")
    parser.add_argument("--out", metavar="DIR", default=d, help="output directory")
    parser.add_argument("--seed", type=int, metavar="N", default=d,
                        help="seed (gp_seed, or the synth noise seed)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        default=d if suppress else [], help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="potfield",
        description="Potential-field analysis of multi-asset price trajectories.",
        epilog="Exit codes: 0 success, 2 data or config error, 3 numerical failure.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--print-defaults", action="store_true",
                   help="print every config key with its default and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "lyapunov": "Lyapunov exponents and stability verdict",
        "analyze": "potential field, mean attractor and trend for one window",
        "evolve": "mean attractor per subwindow plus feature export",
        "coherence": "wavelet coherence of two assets",
        "synth": "simulate a trajectory from a spec file",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        _global_flags(sp, suppress=True)
        if name == "synth":
            sp.add_argument("spec", nargs="?", help="synth spec file")
    return p


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        sys.stdout.write(defaults_text())
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_DATA

    if args.command == "synth":
        spec = args.spec or args.config
        if spec is None:
            print("error: synth needs a spec file", file=sys.stderr)
            return EXIT_DATA

        def run_synth():
            over = _overrides(args.set)
            if args.seed is not None:
                over["seed"] = str(args.seed)
            return _synth(args.out or DEFAULTS["out"], spec, over)

        return _guard(run_synth)

    def build():
        over = _overrides(args.set)
        if args.out is not None:
            over["out"] = args.out
        if args.seed is not None:
            over["gp_seed"] = str(args.seed)
        cfg = RunConfig.load(args.config, over)
        if args.out is not None:
            cfg = replace(cfg, out=Path(args.out))
        return cfg

    runner = {"lyapunov": _lyapunov, "analyze": _analyze, "evolve": _evolve,
              "coherence": _coherence}[args.command]
    return _guard(lambda: runner(build()))


if __name__ == "__main__":
    sys.exit(main())
