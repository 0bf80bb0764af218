"""Morlet wavelet transform and wavelet coherence between two price series.

The transform at scale ``a`` (seconds) and time ``b`` is

    W(a, b) = (1/a) * integral x(t) conj(psi((t - b) / a)) dt

evaluated through the FFT, with ``psi(t) = pi**-0.25 exp(i w0 t) exp(-t**2/2)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d, uniform_filter1d

from .errors import NonUniformSampling, TooShort
from .market_data import format_time

PI_QUARTER = np.pi**-0.25


def morlet(t, omega0: float = 6.0):
    t = np.asarray(t, dtype=float)
    return PI_QUARTER * np.exp(1j * omega0 * t) * np.exp(-0.5 * t * t)


def morlet_ft(w, omega0: float = 6.0):
    """Continuous Fourier transform ``int psi(t) exp(-i w t) dt`` of :func:`morlet`."""
    w = np.asarray(w, dtype=float)
    return PI_QUARTER * np.sqrt(2 * np.pi) * np.exp(-0.5 * (w - omega0) ** 2)


def scale_grid(n: int, dt: float, voices: int = 12, smin: float | None = None,
               smax: float | None = None) -> np.ndarray:
    """Dyadic scales, ``voices`` per octave, from ``2 dt`` to ``n dt / 4``."""
    smin = 2 * dt if smin is None else smin
    smax = n * dt / 4 if smax is None else smax
    if smax < smin:
        raise TooShort(f"series of {n} samples too short for the scale range")
    octaves = np.log2(smax / smin)
    j = np.arange(int(np.floor(octaves * voices + 1e-9)) + 1)
    return smin * 2.0 ** (j / voices)


def _check(x, dt, times=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if x.size < 8:
        raise TooShort(f"series needs at least 8 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains missing or non-finite values")
    if times is not None:
        steps = np.diff(np.asarray(times, dtype=float))
        if steps.size and not np.allclose(steps, dt, rtol=1e-6, atol=0):
            raise NonUniformSampling("sample times are not uniformly spaced")
    return x


def cwt(x, scales, dt: float = 1.0, omega0: float = 6.0, times=None) -> np.ndarray:
    """S x T complex coefficients; the mean is kept (no detrending)."""
    x = _check(x, dt, times)
    scales = np.asarray(scales, dtype=float)
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    xf = np.fft.fft(x, nfft)
    w = 2 * np.pi * np.fft.fftfreq(nfft, d=dt)
    filt = np.conj(morlet_ft(scales[:, None] * w[None, :], omega0))
    return np.fft.ifft(xf[None, :] * filt, axis=1)[:, :n]


def cone_of_influence(n: int, dt: float) -> np.ndarray:
    """Largest scale unaffected by the edges at each time (e-folding ``sqrt(2) a``)."""
    idx = np.arange(n)
    edge = np.minimum(idx, n - 1 - idx) * dt
    return edge / np.sqrt(2.0)


@dataclass(frozen=True)
class CoherenceMap:
    times: np.ndarray
    scales: np.ndarray
    r2: np.ndarray
    phase: np.ndarray
    coi: np.ndarray
    max_excess: float = 0.0

    @property
    def inside_coi(self) -> np.ndarray:
        return self.scales[:, None] <= self.coi[None, :]


def _smooth(field, scales, dt, voices, scale_width):
    """Gaussian in time (width = scale), then boxcar over ``scale_width`` octaves."""
    out = np.empty_like(field)
    for i, a in enumerate(scales):
        row = field[i]
        sig = a / dt
        if np.iscomplexobj(row):
            out[i] = (gaussian_filter1d(row.real, sig, mode="nearest")
                      + 1j * gaussian_filter1d(row.imag, sig, mode="nearest"))
        else:
            out[i] = gaussian_filter1d(row, sig, mode="nearest")
    size = max(1, int(round(scale_width * voices)))
    if np.iscomplexobj(out):
        return (uniform_filter1d(out.real, size, axis=0, mode="nearest")
                + 1j * uniform_filter1d(out.imag, size, axis=0, mode="nearest"))
    return uniform_filter1d(out, size, axis=0, mode="nearest")


def coherence(x, y, dt: float = 1.0, scales=None, omega0: float = 6.0, voices: int = 12,
              scale_width: float = 0.6, times=None) -> CoherenceMap:
    """Squared wavelet coherence and phase of ``x`` relative to ``y``."""
    x = _check(x, dt, times)
    y = _check(y, dt, times)
    if x.size != y.size:
        raise ValueError("series must have equal length")
    n = x.size
    if scales is None:
        scales = scale_grid(n, dt, voices)
    scales = np.asarray(scales, dtype=float)
    wx = cwt(x, scales, dt, omega0)
    wy = cwt(y, scales, dt, omega0)
    inv = (1.0 / scales)[:, None]
    sxy = _smooth(inv * wx * np.conj(wy), scales, dt, voices, scale_width)
    sxx = _smooth(inv * np.abs(wx) ** 2, scales, dt, voices, scale_width)
    syy = _smooth(inv * np.abs(wy) ** 2, scales, dt, voices, scale_width)
    denom = sxx * syy
    with np.errstate(invalid="ignore", divide="ignore"):
        raw = np.where(denom > 0, np.abs(sxy) ** 2 / denom, 0.0)
    excess = float(max(0.0, np.nanmax(raw) - 1.0)) if raw.size else 0.0
    r2 = np.clip(raw, 0.0, 1.0)
    phase = np.arctan2(sxy.imag, sxy.real)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    t = np.arange(n) * dt if times is None else np.asarray(times, dtype=float)
    return CoherenceMap(t, scales, r2, phase, cone_of_influence(n, dt), excess)


def write_coherence_csv(cmap: CoherenceMap, path) -> None:
    inside = cmap.inside_coi
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "scale", "r2", "phase", "in_coi"])
        for i, a in enumerate(cmap.scales):
            for k, t in enumerate(cmap.times):
                w.writerow([format_time(t), repr(float(a)), repr(float(cmap.r2[i, k])),
                            repr(float(cmap.phase[i, k])), int(inside[i, k])])
