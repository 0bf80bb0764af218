"""Gaussian-process model of the potential gradient.

Each of the M gradient components is an independent zero-mean GP sharing one
squared-exponential kernel

    k(x, x') = sigma_se**2 * exp(-0.5 * (x - x')^T diag(lambdas)^-1 (x - x'))

so ``lambdas`` are squared length-scales.  Hyperparameters maximize the
log marginal likelihood summed over the M output columns.  Derivatives of the
posterior mean (the Jacobian of the gradient field, whose trace is the
Laplacian of the potential) come from differentiating the kernel.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import NonFinite, SingularKernel
from .market_data import GradientObservations

log = logging.getLogger(__name__)

JITTER_START = 1e-9
JITTER_MAX = 1e-3
_CHUNK = 512


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SEKernelParams:
    sigma_se: float
    lambdas: np.ndarray
    noise_var: float

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        vals = [self.sigma_se, self.noise_var, *lam]
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValueError(f"kernel parameters must be positive and finite: {vals}")
        object.__setattr__(self, "lambdas", _frozen(lam))
        object.__setattr__(self, "sigma_se", float(self.sigma_se))
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def dim(self) -> int:
        return self.lambdas.size

    def as_dict(self) -> dict:
        return {
            "sigma_se": self.sigma_se,
            "lambdas": [float(v) for v in self.lambdas],
            "noise_var": self.noise_var,
        }


# ---------------------------------------------------------------------- kernels


def kernel_eval(params: SEKernelParams, x, xp) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
    return float(params.sigma_se**2 * np.exp(-0.5 * np.sum(d * d / params.lambdas)))


def kernel_grad(params: SEKernelParams, xs, x) -> np.ndarray:
    """Derivative of ``k(xs, x)`` with respect to the test input ``xs``."""
    d = np.asarray(xs, dtype=float) - np.asarray(x, dtype=float)
    return -(d / params.lambdas) * kernel_eval(params, xs, x)


def kernel_hess(params: SEKernelParams, xs, x) -> np.ndarray:
    """Second derivative of ``k(xs, x)`` with respect to ``xs`` twice:
    ``Lambda^-1 (d d^T Lambda^-1 - I) k`` with ``d = xs - x``."""
    d = np.asarray(xs, dtype=float) - np.asarray(x, dtype=float)
    inv = 1.0 / params.lambdas
    u = d * inv
    return (np.outer(u, u) - np.diag(inv)) * kernel_eval(params, xs, x)


def kernel_matrix(params: SEKernelParams, a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float)) / np.sqrt(params.lambdas)
    b = np.atleast_2d(np.asarray(b, dtype=float)) / np.sqrt(params.lambdas)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return params.sigma_se**2 * np.exp(-0.5 * np.maximum(sq, 0.0))


def prior_laplacian_variance(params: SEKernelParams) -> float:
    """Prior variance of the Laplacian at any point: ``sigma_se**2 * sum(1/lambdas)``."""
    return float(params.sigma_se**2 * np.sum(1.0 / params.lambdas))


def _factor(kmat: np.ndarray):
    """Cholesky of ``kmat + jitter I`` with escalating relative jitter."""
    n = kmat.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    base = np.trace(kmat) / n
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-12):
        jit = rel * base
        try:
            chol = cholesky(kmat + jit * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(chol)):
                return chol, jit
        except np.linalg.LinAlgError:
            pass
        rel *= 10.0
    raise SingularKernel(
        "kernel matrix not positive definite even with jitter "
        f"{JITTER_MAX:g} * mean diagonal (duplicate states with a zero noise floor?)"
    )


# ------------------------------------------------------------------------ model


@dataclass(frozen=True)
class PotentialFieldModel:
    params: SEKernelParams
    X: np.ndarray
    Y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    log_likelihood: float = float("nan")
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def gram(self) -> np.ndarray:
        """``K(X, X) + noise_var I + jitter I`` as factorized."""
        n = self.X.shape[0]
        return kernel_matrix(self.params, self.X, self.X) + (self.params.noise_var + self.jitter) * np.eye(n)


def _as_xy(obs, Y=None):
    if isinstance(obs, GradientObservations):
        return np.asarray(obs.X, dtype=float), np.asarray(obs.Y, dtype=float)
    X = np.asarray(obs, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    return X, Y


def fit(obs, params: SEKernelParams, Y=None) -> PotentialFieldModel:
    """Condition the GP on observations with fixed hyperparameters.

    ``obs`` is a :class:`GradientObservations` or an ``X`` array (then pass
    ``Y``).  An empty ``X`` (shape ``(0, M)``) gives the prior.
    """
    X, Y = _as_xy(obs, Y)
    if X.shape[0] and X.shape != Y.shape:
        raise ValueError(f"X {X.shape} and Y {Y.shape} must match")
    if X.shape[0] == 0:
        m = params.dim
        X, Y = np.zeros((0, m)), np.zeros((0, m))
        return PotentialFieldModel(params, _frozen(X), _frozen(Y), _frozen(np.zeros((0, 0))),
                                   _frozen(np.zeros((0, m))), 0.0, 0.0)
    if X.shape[1] != params.dim:
        raise ValueError(f"{params.dim} length-scales for {X.shape[1]}-D inputs")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise NonFinite("observations contain non-finite values")
    n, m = Y.shape
    kmat = kernel_matrix(params, X, X) + params.noise_var * np.eye(n)
    chol, jit = _factor(kmat)
    alpha = cho_solve((chol, True), Y, check_finite=False)
    lml = (-0.5 * float(np.sum(Y * alpha)) - m * float(np.sum(np.log(np.diag(chol))))
           - 0.5 * n * m * math.log(2 * math.pi))
    return PotentialFieldModel(params, _frozen(X), _frozen(Y), _frozen(chol), _frozen(alpha), jit, lml)


def log_marginal_likelihood(params: SEKernelParams, X, Y) -> float:
    """Summed over output columns; includes the jitter actually needed."""
    return fit(X, params, Y).log_likelihood


# --------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainOptions:
    starts: int = 8
    seed: int = 0
    bound_low: float = 1e-3
    bound_high: float = 1e3
    maxiter: int = 200
    n_jobs: int = 1


def _unpack(theta, m):
    """``(sigma_se**2, lambdas, noise_var)`` from log parameters."""
    return math.exp(theta[0]), np.exp(theta[1:1 + m]), math.exp(theta[1 + m])


class _Objective:
    """Negative LML and gradient in log-parameter space, standardized outputs.

    ``theta = [log sigma_se**2, log lambdas..., log noise_var]``.
    """

    def __init__(self, X, Y):
        self.X, self.Y = X, Y
        self.n, self.m = Y.shape
        self.sqd = (X[:, None, :] - X[None, :, :]) ** 2  # N x N x M

    def __call__(self, theta):
        s2, lam, noise = _unpack(theta, self.X.shape[1])
        kf = s2 * np.exp(-0.5 * np.einsum("ijd,d->ij", self.sqd, 1.0 / lam))
        kmat = kf + noise * np.eye(self.n)
        try:
            chol, jit = _factor(kmat)
        except SingularKernel:
            return 1e25, np.zeros_like(theta)
        a = cho_solve((chol, True), self.Y, check_finite=False)
        lml = (-0.5 * np.sum(self.Y * a) - self.m * np.sum(np.log(np.diag(chol)))
               - 0.5 * self.n * self.m * math.log(2 * math.pi))
        if not math.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        kinv = cho_solve((chol, True), np.eye(self.n), check_finite=False)
        w = a @ a.T - self.m * kinv
        grad = np.empty_like(theta)
        grad[0] = 0.5 * np.sum(w * kf)
        wk = w * kf
        grad[1:-1] = 0.25 * np.einsum("ij,ijd->d", wk, self.sqd) / lam
        grad[-1] = 0.5 * noise * np.trace(w)
        return -lml, -grad


def _bounds(X, y_std, opts):
    span = np.ptp(X, axis=0)
    span = np.where(span > 0, span, 1.0)
    lo, hi = opts.bound_low, opts.bound_high
    b = [(2 * math.log(lo), 2 * math.log(hi))]
    b += [(2 * math.log(lo * s), 2 * math.log(hi * s)) for s in span]
    b += [(2 * math.log(lo), 2 * math.log(hi))]
    return b, span


def _starts(span, bounds, opts):
    rng = np.random.default_rng(opts.seed)
    m = span.size
    pts = [np.concatenate([[0.0], 2 * np.log(0.5 * span), [math.log(0.5)]])]
    for _ in range(opts.starts - 1):
        sig = rng.uniform(math.log(0.1), math.log(10.0))
        ell = rng.uniform(math.log(0.05), math.log(2.0), size=m) + np.log(span)
        nse = rng.uniform(math.log(0.01), math.log(1.0))
        pts.append(np.concatenate([[2 * sig], 2 * ell, [2 * nse]]))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return [np.clip(p, lo, hi) for p in pts[: max(1, opts.starts)]]


def _run_start(obj, theta0, bounds, maxiter):
    f0, _ = obj(theta0)
    res = minimize(obj, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter})
    theta, f = np.asarray(res.x), float(res.fun)
    if not f <= f0:
        theta, f = theta0, f0
    return theta, f, f0


def train(obs, opts: TrainOptions | None = None, Y=None) -> PotentialFieldModel:
    """Maximize the summed log marginal likelihood from several seeded starts."""
    opts = opts or TrainOptions()
    X, Y = _as_xy(obs, Y)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 observations to train")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise NonFinite("observations contain non-finite values")
    y_std = float(np.std(Y))
    if not math.isfinite(y_std):
        raise NonFinite("observation scale overflows")
    y_scale = y_std if y_std > 0 else 1.0
    obj = _Objective(X, Y / y_scale)
    bounds, span = _bounds(X, y_std, opts)
    starts = _starts(span, bounds, opts)

    if opts.n_jobs > 1:
        with ThreadPoolExecutor(opts.n_jobs) as pool:
            runs = list(pool.map(lambda t: _run_start(obj, t, bounds, opts.maxiter), starts))
    else:
        runs = [_run_start(obj, t, bounds, opts.maxiter) for t in starts]

    best = min(range(len(runs)), key=lambda i: (runs[i][1], i))
    theta, f, _ = runs[best]
    if not math.isfinite(f) or f >= 1e25:
        raise NonFinite("log marginal likelihood is not finite at any start")
    s2, lam, noise = _unpack(theta, X.shape[1])
    params = SEKernelParams(math.sqrt(s2) * y_scale, lam, noise * y_scale**2)
    model = fit(X, params, Y)
    if not math.isfinite(model.log_likelihood):
        raise NonFinite("log marginal likelihood overflow")
    diag = {
        "start_index": best,
        "start_lml": [-r[2] - X.shape[0] * Y.shape[1] * math.log(y_scale) for r in runs],
        "final_lml": [-r[1] - X.shape[0] * Y.shape[1] * math.log(y_scale) for r in runs],
        "y_scale": y_scale,
    }
    return PotentialFieldModel(model.params, model.X, model.Y, model.chol, model.alpha,
                               model.jitter, model.log_likelihood, diag)


# -------------------------------------------------------------------- posterior


def _chunks(q):
    for s in range(0, q, _CHUNK):
        yield slice(s, min(q, s + _CHUNK))


def posterior_gradient(model: PotentialFieldModel, Xs, include_noise: bool = False):
    """Posterior mean (Q x M) and marginal variance (Q x M) of the gradient field.

    The variance is that of the latent field; ``include_noise`` adds the
    observation noise to give the predictive variance of a new observation.
    """
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    q, m = Xs.shape[0], model.dim
    mean = np.zeros((q, m))
    var = np.empty(q)
    p = model.params
    for sl in _chunks(q):
        if model.X.shape[0] == 0:
            var[sl] = p.sigma_se**2
            continue
        ks = kernel_matrix(p, Xs[sl], model.X)
        mean[sl] = ks @ model.alpha
        v = solve_triangular(model.chol, ks.T, lower=True, check_finite=False)
        var[sl] = p.sigma_se**2 - np.sum(v * v, axis=0)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + p.noise_var
    return mean, np.repeat(var[:, None], m, axis=1)


@dataclass(frozen=True)
class FieldPosterior:
    points: np.ndarray
    grad_mean: np.ndarray
    grad_var: np.ndarray
    jac_mean: np.ndarray
    lap_mean: np.ndarray
    lap_var: np.ndarray
    prior_lap_var: float
    min_raw_var: float = 0.0

    @property
    def asymmetry(self) -> np.ndarray:
        """Frobenius norm of ``J - J^T`` per point; zero for an exact gradient field."""
        j = self.jac_mean
        return np.linalg.norm(j - np.swapaxes(j, 1, 2), axis=(1, 2))


def posterior_field(model: PotentialFieldModel, Xs) -> FieldPosterior:
    """Gradient, Jacobian and Laplacian posteriors at test states ``Xs``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    q, m = Xs.shape[0], model.dim
    p = model.params
    inv = 1.0 / p.lambdas
    grad_mean, grad_var = posterior_gradient(model, Xs)
    jac = np.zeros((q, m, m))
    lap_var = np.empty(q)
    prior = prior_laplacian_variance(p)
    min_raw = 0.0
    for sl in _chunks(q):
        if model.X.shape[0] == 0:
            lap_var[sl] = prior
            continue
        xs = Xs[sl]
        ks = kernel_matrix(p, xs, model.X)  # C x N
        diff = (xs[:, None, :] - model.X[None, :, :]) * inv  # C x N x M
        dk = -diff * ks[:, :, None]  # d k(x*, x_n) / d x*_b
        jac[sl] = np.einsum("cnb,na->cab", dk, model.alpha)
        reduce = np.zeros(xs.shape[0])
        for b in range(m):
            w = solve_triangular(model.chol, dk[:, :, b].T, lower=True, check_finite=False)
            reduce += np.sum(w * w, axis=0)
        raw = prior - reduce
        min_raw = min(min_raw, float(raw.min()))
        lap_var[sl] = raw
    lap_mean = np.trace(jac, axis1=1, axis2=2)
    return FieldPosterior(
        _frozen(Xs), _frozen(grad_mean), _frozen(grad_var), _frozen(jac), _frozen(lap_mean),
        _frozen(np.maximum(lap_var, 0.0)), prior, min_raw,
    )


# ------------------------------------------------------------------------- grid


def test_grid(states, points_per_axis: int | None = None, pad: float = 0.1,
              qmc_points: int = 4096, seed: int = 0) -> np.ndarray:
    """Test states covering the padded bounding box of ``states``.

    A full mesh for up to three dimensions (25 points per axis for M <= 2, 12
    for M = 3 unless overridden); a scrambled Sobol set beyond that.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    m = states.shape[1]
    lo, hi = states.min(0), states.max(0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - pad * span, hi + pad * span
    if m > 3 and points_per_axis is None:
        u = qmc.Sobol(d=m, scramble=True, seed=seed).random(qmc_points)
        return lo + u * (hi - lo)
    if points_per_axis is None:
        points_per_axis = 25 if m <= 2 else 12
    axes = [np.linspace(a, b, points_per_axis) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


test_grid.__test__ = False  # not a pytest test


def write_field_csv(post: FieldPosterior, path, assets) -> None:
    """One row per test point: coordinates, gradient mean, Laplacian mean and variance."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*assets, *(f"grad_{a}" for a in assets), "lap_mean", "lap_var"])
        for x, g, lm, lv in zip(post.points, post.grad_mean, post.lap_mean, post.lap_var):
            w.writerow([*(repr(float(v)) for v in x), *(repr(float(v)) for v in g),
                        repr(float(lm)), repr(float(lv))])
