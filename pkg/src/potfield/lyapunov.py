"""Lyapunov exponents from a single observed trajectory.

For every pair of states ``(x_i, x_j)``, ``i < j``, closer than ``epsilon``,
the separation ``k * p`` steps later is compared with the initial separation
and the rate ``log(d_p / d_0) / (p k dt)`` is averaged over all available
``p``.  The largest such average decides stability.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import pdist

from .errors import NoPairs, TooShort
from .market_data import Trajectory

log = logging.getLogger(__name__)


class Verdict(str, Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"


@dataclass(frozen=True)
class LyapunovResult:
    exponents: np.ndarray  # ascending
    epsilon: float
    k: int
    dt: float
    skipped: int = 0

    @property
    def lambda_max(self) -> float:
        return float(self.exponents[-1])

    @property
    def pair_count(self) -> int:
        return int(self.exponents.size)


def default_epsilon(traj: Trajectory, percentile: float = 5.0) -> float:
    """Given percentile of all pairwise state distances in the window."""
    return float(np.percentile(pdist(traj.states), percentile))


def default_stride(traj: Trajectory, horizon: float = 3600.0) -> int:
    """Stride with ``k * dt`` close to ``horizon`` seconds, capped so that at
    least ten strides fit in the window."""
    k = max(1, int(round(horizon / traj.dt)))
    cap = max(1, (traj.n - 1) // 10)
    return min(k, cap)


def lyapunov_exponents(
    traj: Trajectory,
    epsilon: float | None = None,
    k: int | None = None,
    *,
    percentile: float = 5.0,
) -> LyapunovResult:
    x = traj.states
    n = x.shape[0]
    if k is None:
        k = default_stride(traj)
    if epsilon is None:
        epsilon = default_epsilon(traj, percentile)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if n <= k + 1:
        raise TooShort(f"need N > k + 1 (N={n}, k={k})")

    dt = traj.dt
    out = []
    skipped = 0
    # 0-based: i in [0, n-k-1], j in (i, n-1], n_ij = floor((n-1-j)/k)
    for i in range(n - k):
        js = np.arange(i + 1, n)
        d0 = np.linalg.norm(x[js] - x[i], axis=1)
        sel = (d0 <= epsilon) & ((n - 1 - js) // k >= 1)
        if not sel.any():
            continue
        js, d0 = js[sel], d0[sel]
        zero = d0 == 0.0
        if zero.any():
            skipped += int(zero.sum())
            js, d0 = js[~zero], d0[~zero]
            if js.size == 0:
                continue
        n_ij = (n - 1 - js) // k
        acc = np.zeros(js.size)
        bad = np.zeros(js.size, dtype=bool)
        for p in range(1, int(n_ij.max()) + 1):
            live = n_ij >= p
            jj = js[live]
            dp = np.linalg.norm(x[i + k * p] - x[jj + k * p], axis=1)
            with np.errstate(divide="ignore"):
                rate = np.log(dp / d0[live]) / (p * k * dt)
            bad[live] |= dp == 0.0
            acc[live] += np.where(dp == 0.0, 0.0, rate)
        if bad.any():
            skipped += int(bad.sum())
        out.append((acc / n_ij)[~bad])

    if skipped:
        log.info("skipped %d pairs with zero initial or forward distance", skipped)
    exps = np.concatenate(out) if out else np.empty(0)
    if exps.size == 0:
        raise NoPairs(f"no state pair within epsilon={epsilon:g}")
    exps = np.sort(exps, kind="stable")
    exps.setflags(write=False)
    return LyapunovResult(exps, float(epsilon), int(k), float(dt), skipped)


def stability_verdict(result: LyapunovResult) -> Verdict:
    return Verdict.STABLE if result.lambda_max < 0 else Verdict.UNSTABLE
