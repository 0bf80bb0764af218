import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from potfield.errors import NoPairs, TooShort
from potfield.lyapunov import (
    LyapunovResult,
    Verdict,
    default_epsilon,
    default_stride,
    lyapunov_exponents,
    stability_verdict,
)
from potfield.market_data import Trajectory
from potfield.synth import QuadraticWell, SynthSpec, simulate


def _exp_traj(rate, starts=(1.0, 1.001), dt=0.01, n=400):
    t = np.arange(n) * dt
    states = np.column_stack([s * np.exp(rate * t) for s in starts])
    return Trajectory(states, dt, tuple(f"x{i}" for i in range(len(starts))))


def _brute_force(x, dt, eps, k):
    """Direct 1-based transcription of the pair-averaging loop."""
    n = x.shape[0]
    out = []
    for i in range(1, n - k + 1):
        for j in range(i + 1, n + 1):
            d0 = np.linalg.norm(x[i - 1] - x[j - 1])
            nij = (n - j) // k
            if d0 > eps or d0 == 0 or nij < 1:
                continue
            acc, ok = 0.0, True
            for p in range(1, nij + 1):
                dp = np.linalg.norm(x[i - 1 + k * p] - x[j - 1 + k * p])
                if dp == 0:
                    ok = False
                    break
                acc += math.log(dp / d0) / (p * k * dt)
            if ok:
                out.append(acc / nij)
    return np.sort(out)


def test_contracting_exponential():
    res = lyapunov_exponents(_exp_traj(-0.5), k=5)
    np.testing.assert_allclose(res.exponents, -0.5, atol=1e-6)
    assert abs(res.lambda_max + 0.5) < 1e-6
    assert stability_verdict(res) is Verdict.STABLE


def test_diverging_exponential():
    res = lyapunov_exponents(_exp_traj(0.3), k=5)
    np.testing.assert_allclose(res.exponents, 0.3, atol=1e-6)
    assert stability_verdict(res) is Verdict.UNSTABLE


def test_no_pairs_when_epsilon_tiny():
    tr = Trajectory(np.array([[0.0], [1.0], [3.0]]), 1.0, ("a",))
    with pytest.raises(NoPairs):
        lyapunov_exponents(tr, epsilon=0.5, k=1)


def test_too_short_and_bad_parameters():
    tr = Trajectory(np.arange(5.0)[:, None], 1.0, ("a",))
    with pytest.raises(TooShort):
        lyapunov_exponents(tr, epsilon=1.0, k=4)
    with pytest.raises(ValueError):
        lyapunov_exponents(tr, epsilon=1.0, k=0)
    with pytest.raises(ValueError):
        lyapunov_exponents(tr, epsilon=0.0, k=1)


@pytest.mark.parametrize("lam, verdict", [(-0.2, Verdict.STABLE), (0.1, Verdict.UNSTABLE),
                                          (0.0, Verdict.UNSTABLE)])
def test_verdict_sign_rule(lam, verdict):
    res = LyapunovResult(np.array([-1.0, lam]), 1.0, 1, 1.0)
    assert stability_verdict(res) is verdict
    assert verdict.value in ("Stable", "Unstable")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(12, 40), st.integers(1, 4), st.integers(1, 3))
def test_matches_brute_force(seed, n, k, m):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.normal(size=(n, m)), axis=0)
    tr = Trajectory(x, 0.5, tuple(f"a{i}" for i in range(m)))
    # epsilon halfway between two distinct distances keeps the boundary unambiguous
    dist = np.unique(np.linalg.norm(x[:, None] - x[None], axis=-1))
    q = int(0.3 * (dist.size - 1))
    eps = float(0.5 * (dist[q] + dist[q + 1]))
    expected = _brute_force(x, 0.5, eps, k)
    if expected.size == 0:
        with pytest.raises(NoPairs):
            lyapunov_exponents(tr, eps, k)
        return
    res = lyapunov_exponents(tr, eps, k)
    np.testing.assert_allclose(res.exponents, expected, rtol=1e-12, atol=1e-14)
    assert res.pair_count == expected.size


def test_zero_distance_pairs_skipped():
    x = np.array([0.0, 1.0, 1.0, 2.0, 3.0, 3.5, 4.0, 6.0, 7.0, 9.0])[:, None]
    tr = Trajectory(x, 1.0, ("a",))
    res = lyapunov_exponents(tr, epsilon=1.0, k=1)
    assert res.skipped >= 1
    assert np.all(np.isfinite(res.exponents))
    np.testing.assert_allclose(res.exponents, _brute_force(x, 1.0, 1.0, 1))


def test_result_invariants():
    rng = np.random.default_rng(3)
    tr = Trajectory(np.cumsum(rng.normal(size=(200, 2)), axis=0), 60.0, ("a", "b"))
    res = lyapunov_exponents(tr)
    assert np.all(np.diff(res.exponents) >= 0)
    assert res.lambda_max == res.exponents[-1]
    assert res.pair_count == res.exponents.size
    assert res.epsilon == default_epsilon(tr)
    assert res.k == default_stride(tr) == 19  # capped at (N - 1) // 10


def test_default_stride_targets_one_hour():
    tr = Trajectory(np.cumsum(np.ones((2000, 1)), axis=0), 300.0, ("a",))
    assert default_stride(tr) == 12


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_scale_invariance(c, seed):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.normal(size=(60, 2)), axis=0)
    a = lyapunov_exponents(Trajectory(x, 1.0, ("a", "b")), epsilon=2.0, k=3)
    b = lyapunov_exponents(Trajectory(c * x, 1.0, ("a", "b")), epsilon=2.0 * c, k=3)
    np.testing.assert_allclose(b.exponents, a.exponents, atol=1e-12, rtol=0)


def test_time_rescaling_halves_exponents():
    rng = np.random.default_rng(5)
    x = np.cumsum(rng.normal(size=(80, 2)), axis=0)
    a = lyapunov_exponents(Trajectory(x, 1.0, ("a", "b")), epsilon=2.0, k=3)
    b = lyapunov_exponents(Trajectory(x, 2.0, ("a", "b")), epsilon=2.0, k=3)
    np.testing.assert_allclose(b.exponents, 0.5 * a.exponents, rtol=1e-12)


@pytest.mark.parametrize("dt", [0.1, 0.05, 0.01])
def test_linear_system_rate_recovered(dt):
    n = int(round(4.0 / dt))
    res = lyapunov_exponents(_exp_traj(-0.7, dt=dt, n=n), k=3)
    assert abs(res.lambda_max + 0.7) <= 0.7 * dt + 1e-9


@pytest.mark.parametrize("a, gamma", [(1.0, 3.0), (2.0, 4.0)])
def test_damped_well_matches_slowest_decay(a, gamma):
    # Starting on the slow eigenmode avoids the rest-start transient, where
    # consecutive states are nearly equal and then separate.
    slow = 0.5 * (gamma - math.sqrt(gamma * gamma - 4 * a))
    x0 = np.array([1.0, -0.6])
    spec = SynthSpec(QuadraticWell([0.0, 0.0], np.diag([a, a])), x0, -slow * x0, gamma, 0.0,
                     0.01, 2000)
    res = lyapunov_exponents(simulate(spec), k=50)
    assert abs(res.lambda_max + slow) <= 0.1 * slow


def test_damped_well_two_rates_slowest_dominates():
    a1, a2, gamma = 1.0, 2.0, 3.0
    slow = [0.5 * (gamma - math.sqrt(gamma**2 - 4 * a)) for a in (a1, a2)]
    x0 = np.array([1.0, 1.0])
    v0 = -np.array(slow) * x0
    spec = SynthSpec(QuadraticWell([0.0, 0.0], np.diag([a1, a2])), x0, v0, gamma, 0.0, 0.01, 2000)
    res = lyapunov_exponents(simulate(spec), k=50)
    assert abs(res.lambda_max + min(slow)) <= 0.1 * min(slow)
