"""Attractor and repeller extraction from a Laplacian posterior, and the
window analytics built on it.

Test points are weighted by the KL divergence between prior and posterior of
the Laplacian.  Points whose posterior mean Laplacian is positive (potential
minima) feed the attractor moments, negative ones the repeller moments.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    DegenerateSpectrum,
    NoAttractorMass,
    NonPositiveVariance,
    NumericalError,
    PotfieldError,
    TooShort,
    UnknownAsset,
)
from .gp_field import (
    FieldPosterior,
    PotentialFieldModel,
    TrainOptions,
    posterior_field,
    prior_laplacian_variance,
    test_grid,
    train,
)
from .market_data import (
    Trajectory,
    estimate_gradient_observations,
    format_time,
    normalize_minmax,
    parse_time,
)

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------- KL field


def kl_divergence(mu_po: float, var_po: float, var_pr: float) -> float:
    """Prior-vs-posterior score of a Laplacian posterior, zero prior mean.

    ``0.5 * (var_pr/var_po + mu_po**2/var_po - 1 + log(sd_po/sd_pr))``
    """
    if not (var_po > 0 and var_pr > 0):
        raise NonPositiveVariance(f"variances must be positive (posterior {var_po}, prior {var_pr})")
    return 0.5 * (var_pr / var_po + mu_po**2 / var_po - 1.0 + 0.5 * math.log(var_po / var_pr))


@dataclass(frozen=True)
class KLField:
    points: np.ndarray
    kl: np.ndarray
    sign: np.ndarray
    k_a: np.ndarray
    k_r: np.ndarray


def build_kl_field(post: FieldPosterior, prior_var: float | None = None) -> KLField:
    """KL weight and Laplacian sign at every test point.

    ``prior_var`` defaults to the model's own prior Laplacian variance, so the
    weight vanishes wherever the data are uninformative.  Negative values
    (possible only when the posterior is wider than the prior) are clipped to 0.
    """
    if prior_var is None:
        prior_var = post.prior_lap_var
    if not prior_var > 0:
        raise NonPositiveVariance(f"prior variance must be positive, got {prior_var}")
    var_po = np.maximum(np.asarray(post.lap_var, dtype=float), VAR_FLOOR)
    mu = np.asarray(post.lap_mean, dtype=float)
    kl = 0.5 * (prior_var / var_po + mu**2 / var_po - 1.0 + 0.5 * np.log(var_po / prior_var))
    kl = np.maximum(kl, 0.0)
    sign, k_a, k_r = split_by_sign(kl, mu)
    return KLField(_frozen(post.points), _frozen(kl), _frozen(sign), _frozen(k_a), _frozen(k_r))


def split_by_sign(kl, lap_mean):
    """``(sign, k_a, k_r)``: positive (or zero) Laplacian sends the weight to
    the attractor, negative to the repeller."""
    kl = np.asarray(kl, dtype=float)
    sign = np.where(np.asarray(lap_mean, dtype=float) >= 0, 1.0, -1.0)
    return sign, np.where(sign > 0, kl, 0.0), np.where(sign < 0, kl, 0.0)


# ---------------------------------------------------------------------- moments


def _weighted_moments(points, w):
    total = w.sum()
    mu = (w[:, None] * points).sum(0) / total
    d = points - mu
    cov = (w[:, None] * d).T @ d / total
    return mu, 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class AttractorSummary:
    """Mean attractor/repeller of one window, in the analysis coordinates.

    ``coord_scale`` converts analysis coordinates to min-max normalized ones
    (all ones when the analysis already ran on normalized prices); ``norm``
    holds per-asset ``(min, max)`` when the coordinates are normalized, so
    moments can be reported in price units.
    """

    mu_a: np.ndarray
    sigma_a_mat: np.ndarray
    sigma_a_scalar: float
    eigvals: np.ndarray
    eigvecs: np.ndarray
    mu_r: np.ndarray | None = None
    sigma_r_mat: np.ndarray | None = None
    window: tuple | None = None
    coord_scale: np.ndarray | None = None
    norm: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.mu_a.size

    def to_price(self, x):
        x = np.asarray(x, dtype=float)
        if self.norm is None:
            return x
        return self.norm[:, 0] + x * (self.norm[:, 1] - self.norm[:, 0])

    def price_factor(self) -> np.ndarray:
        if self.norm is None:
            return np.ones(self.dim)
        return self.norm[:, 1] - self.norm[:, 0]

    def reporting(self):
        """``(mu_a, sigma_a_mat, mu_r, sigma_r_mat)`` in price units."""
        f = self.price_factor()
        outer = np.outer(f, f)
        mu_r = None if self.mu_r is None else self.to_price(self.mu_r)
        sig_r = None if self.sigma_r_mat is None else self.sigma_r_mat * outer
        return self.to_price(self.mu_a), self.sigma_a_mat * outer, mu_r, sig_r

    def std(self) -> np.ndarray:
        """Per-asset marginal standard deviation of the attractor, price units."""
        return np.sqrt(np.maximum(np.diag(self.sigma_a_mat), 0.0)) * self.price_factor()


def attractor_moments(klf: KLField, window=None, coord_scale=None, norm=None) -> AttractorSummary:
    pts = np.asarray(klf.points, dtype=float)
    m = pts.shape[1]
    if not klf.k_a.sum() > 0:
        raise NoAttractorMass("no test point carries positive-Laplacian KL mass")
    mu_a, sig_a = _weighted_moments(pts, np.asarray(klf.k_a))
    mu_r = sig_r = None
    if klf.k_r.sum() > 0:
        mu_r, sig_r = _weighted_moments(pts, np.asarray(klf.k_r))

    vals, vecs = np.linalg.eigh(sig_a)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    vals = np.where(vals < 0, 0.0, vals)
    # deterministic orientation: largest-magnitude entry positive
    for c in range(m):
        if vecs[np.argmax(np.abs(vecs[:, c])), c] < 0:
            vecs[:, c] = -vecs[:, c]

    scale = np.ones(m) if coord_scale is None else np.asarray(coord_scale, dtype=float)
    sig_norm = sig_a * np.outer(scale, scale)
    det = max(float(np.linalg.det(sig_norm)), 0.0)
    radius = det ** (1.0 / (2 * m))
    return AttractorSummary(
        _frozen(mu_a), _frozen(sig_a), radius, _frozen(vals), _frozen(vecs),
        None if mu_r is None else _frozen(mu_r), None if sig_r is None else _frozen(sig_r),
        window, _frozen(scale), None if norm is None else _frozen(norm),
    )


# ------------------------------------------------------------------------ trend


@dataclass(frozen=True)
class TrendReport:
    x0: np.ndarray  # price units
    magnitude: np.ndarray  # mu_a - x0, price units
    direction_deg: float | None
    p_pos: np.ndarray
    p_neg: np.ndarray


def trend_report(summary: AttractorSummary, x0) -> TrendReport:
    """Trend line from ``x0`` (analysis coordinates) to the mean attractor.

    Correction probabilities use the attractor's per-asset marginal Gaussian.
    The direction is measured in the plane of the first two assets after
    min-max scaling, counter-clockwise from the first asset's axis.
    """
    x0 = np.asarray(x0, dtype=float)
    mu = summary.mu_a
    sd = np.sqrt(np.maximum(np.diag(summary.sigma_a_mat), 0.0))
    p_pos = np.empty_like(mu)
    for j in range(mu.size):
        if sd[j] > 0:
            p_pos[j] = 1.0 - ndtr((x0[j] - mu[j]) / sd[j])
        else:
            p_pos[j] = 1.0 if mu[j] > x0[j] else 0.0
    p_neg = 1.0 - p_pos
    direction = None
    if mu.size >= 2:
        d = (mu - x0)[:2] * summary.coord_scale[:2]
        direction = float(np.degrees(np.arctan2(d[1], d[0])) % 360.0)
    x0_price = summary.to_price(x0)
    magnitude = summary.to_price(mu) - x0_price
    return TrendReport(_frozen(x0_price), _frozen(magnitude), direction, _frozen(p_pos), _frozen(p_neg))


# ----------------------------------------------------------------- principal axes


@dataclass(frozen=True)
class PrincipalAxes:
    eigval_max: float
    eigvec_max: np.ndarray
    phases: dict  # (j, j') -> degrees in [0, 180)


def principal_axes(summary_or_cov, rtol: float = 1e-9) -> PrincipalAxes:
    """Leading eigenpair of the attractor covariance and its pairwise phase angles."""
    if isinstance(summary_or_cov, AttractorSummary):
        cov = summary_or_cov.sigma_a_mat
    else:
        cov = np.asarray(summary_or_cov, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals.size > 1 and abs(vals[0] - vals[1]) <= rtol * max(abs(vals[0]), np.finfo(float).tiny):
        raise DegenerateSpectrum("top two eigenvalues coincide; principal orientation undefined")
    v = vecs[:, 0].copy()
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    phases = {}
    for j in range(v.size):
        for jp in range(j + 1, v.size):
            ang = math.degrees(math.atan2(v[jp], v[j])) % 180.0
            phases[(j, jp)] = 0.0 if math.isclose(ang, 180.0) else ang
    return PrincipalAxes(float(max(vals[0], 0.0)), _frozen(v), phases)


# ------------------------------------------------------------------ convergence


@dataclass(frozen=True)
class ConvergenceInterval:
    start_index: int
    end_index: int  # inclusive
    onset: float
    end: float
    longest: bool = False

    @property
    def duration(self) -> float:
        return self.end - self.onset


def convergence_windows(traj: Trajectory, summary: AttractorSummary, grace: int = 0,
                        radius: float | None = None) -> list[ConvergenceInterval]:
    """Maximal runs of states within ``radius`` (default ``sigma_a_scalar``) of
    the mean attractor, measured on normalized coordinates.

    Excursions of at most ``grace`` samples between two runs are bridged.
    """
    r = summary.sigma_a_scalar if radius is None else radius
    scale = summary.coord_scale
    dist = np.linalg.norm((traj.states - summary.mu_a) * scale, axis=1)
    inside = dist <= r
    runs = []
    n = inside.size
    i = 0
    while i < n:
        if inside[i]:
            j = i
            while j + 1 < n and inside[j + 1]:
                j += 1
            runs.append([i, j])
            i = j + 1
        else:
            i += 1
    merged = []
    for a, b in runs:
        if merged and a - merged[-1][1] - 1 <= grace:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    if not merged:
        return []
    t = traj.times
    lengths = [t[b] - t[a] for a, b in merged]
    best = max(range(len(merged)), key=lambda k: (lengths[k], merged[k][1] - merged[k][0], -k))
    return [ConvergenceInterval(a, b, float(t[a]), float(t[b]), k == best)
            for k, (a, b) in enumerate(merged)]


# --------------------------------------------------------------- full pipeline


@dataclass(frozen=True)
class AnalysisSettings:
    normalize: bool = True
    train: TrainOptions = field(default_factory=TrainOptions)
    grid_points: int | None = None
    grid_pad: float = 0.1
    qmc_points: int = 4096
    grace: int = 0


@dataclass(frozen=True)
class WindowAnalysis:
    traj: Trajectory  # analysis coordinates
    model: PotentialFieldModel
    field: FieldPosterior
    klf: KLField
    summary: AttractorSummary
    trend: TrendReport
    axes: PrincipalAxes | None
    convergence: list


def analyze_window(traj: Trajectory, settings: AnalysisSettings | None = None) -> WindowAnalysis:
    """Gradient estimation, GP training, field posterior and attractor analytics
    for a single window."""
    s = settings or AnalysisSettings()
    raw = traj
    if s.normalize:
        work = normalize_minmax(traj)
        scale = np.ones(work.m)
        norm = work.norm
    else:
        work = traj
        span = np.ptp(traj.states, axis=0)
        scale = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 1.0)
        norm = None
    obs = estimate_gradient_observations(work)
    model = train(obs, s.train)
    grid = test_grid(work.states, s.grid_points, s.grid_pad, s.qmc_points, s.train.seed)
    post = posterior_field(model, grid)
    klf = build_kl_field(post)
    window = (float(raw.times[0]), float(raw.times[-1]))
    summary = attractor_moments(klf, window, scale, norm)
    trend = trend_report(summary, work.states[0])
    try:
        axes = principal_axes(summary)
    except DegenerateSpectrum:
        axes = None
    conv = convergence_windows(work, summary, s.grace)
    return WindowAnalysis(work, model, post, klf, summary, trend, axes, conv)


# -------------------------------------------------------------- evolution/export


@dataclass(frozen=True)
class EvolutionEntry:
    start: float
    end: float
    summary: AttractorSummary | None
    error: str | None = None
    numerical: bool = False  # failure came from a numerical, not a data, error

    @property
    def ok(self) -> bool:
        return self.summary is not None


def split_subwindows(traj: Trajectory, duration: float) -> list[tuple]:
    """Non-overlapping windows ``[t0 + k D, t0 + (k+1) D)``; trailing partial windows dropped."""
    if duration <= 0:
        raise ValueError("subwindow duration must be positive")
    t0 = traj.times[0]
    count = int(math.floor(traj.n * traj.dt / duration + 1e-9))
    if count < 1:
        raise TooShort("trajectory shorter than one subwindow")
    out = []
    for k in range(count):
        a, b = t0 + k * duration, t0 + (k + 1) * duration
        mask = (traj.times >= a - 1e-9 * duration) & (traj.times < b - 1e-9 * duration)
        out.append((a, b, mask))
    return out


def temporal_evolution(traj: Trajectory, subwindow: float,
                       settings: AnalysisSettings | None = None) -> list[EvolutionEntry]:
    """Per-subwindow mean attractor; failed subwindows are kept as gaps."""
    entries = []
    for a, b, mask in split_subwindows(traj, subwindow):
        try:
            if mask.sum() < 3:
                raise TooShort(f"subwindow has {int(mask.sum())} samples; need at least 3")
            sub = Trajectory(traj.states[mask], traj.dt, traj.assets, traj.times[mask])
            res = analyze_window(sub, settings)
            entries.append(EvolutionEntry(a, b, res.summary))
        except (PotfieldError, ValueError) as exc:
            log.warning("subwindow %s failed: %s", format_time(a), exc)
            entries.append(EvolutionEntry(a, b, None, f"{type(exc).__name__}: {exc}",
                                          isinstance(exc, NumericalError)))
    return entries


@dataclass(frozen=True)
class FeatureRow:
    date: str
    value: float | None
    std: float | None


def export_features(evolution: Sequence[EvolutionEntry], asset: str, assets: Sequence[str],
                    path=None) -> list[FeatureRow]:
    """Per-subwindow ``(date, mean-attractor component, std)`` for one asset.

    Failed subwindows give rows with empty values.  Written as CSV when
    ``path`` is given.
    """
    if not evolution:
        raise ValueError("evolution is empty")
    if asset not in assets:
        raise UnknownAsset(f"unknown asset {asset!r}; have {list(assets)}")
    j = list(assets).index(asset)
    rows = []
    for e in evolution:
        if e.ok:
            mu, _, _, _ = e.summary.reporting()
            rows.append(FeatureRow(format_time(e.start), float(mu[j]), float(e.summary.std()[j])))
        else:
            rows.append(FeatureRow(format_time(e.start), None, None))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", f"{asset}_mu_a", f"{asset}_std"])
            for r in rows:
                w.writerow([r.date, "" if r.value is None else repr(r.value),
                            "" if r.std is None else repr(r.std)])
    return rows


def read_features(path) -> list[FeatureRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = []
        for date, val, sd in reader:
            parse_time(date)
            rows.append(FeatureRow(date, float(val) if val else None, float(sd) if sd else None))
    return rows


def ellipse_polylines(summary: AttractorSummary, levels=(1, 2, 3), points: int = 73,
                      dims=(0, 1)) -> list[tuple[int, np.ndarray]]:
    """Contours of the attractor Gaussian in the plane of two assets, price units."""
    mu, cov, _, _ = summary.reporting()
    i, j = dims
    sub = cov[np.ix_([i, j], [i, j])]
    vals, vecs = np.linalg.eigh(sub)
    vals = np.maximum(vals, 0.0)
    th = np.linspace(0.0, 2 * np.pi, points)
    circle = np.stack([np.cos(th), np.sin(th)])
    out = []
    for lv in levels:
        pts = (vecs @ (lv * np.sqrt(vals)[:, None] * circle)).T + mu[[i, j]]
        out.append((lv, pts))
    return out


__all__ = [
    "KLField", "AttractorSummary", "TrendReport", "PrincipalAxes", "ConvergenceInterval",
    "AnalysisSettings", "WindowAnalysis", "EvolutionEntry", "FeatureRow",
    "kl_divergence", "build_kl_field", "split_by_sign", "attractor_moments", "trend_report", "principal_axes",
    "convergence_windows", "analyze_window", "temporal_evolution", "export_features",
    "read_features", "ellipse_polylines", "prior_laplacian_variance",
]
