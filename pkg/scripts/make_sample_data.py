"""Regenerate the bundled sample price files in src/potfield/data/.

The files are a *reconstruction*, not an exchange export: 5-minute bars are a
seeded, correlated log-price Brownian bridge pinned to approximate daily
closing prices (plus a few well-known intraday extremes).  They reproduce the
shape of each window (crash, rebound, relative moves of BTC and ETH) but not
tick-level detail.

    python scripts/make_sample_data.py
"""

from __future__ import annotations

import csv
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "potfield" / "data"
STEP = 300  # seconds
SEED = 20210413

# daily vol of log price (BTC, ETH) and 5-minute return correlation
DAILY_VOL = (0.040, 0.055)
RHO = 0.8

# (UTC time, BTC, ETH); daily entries are the close of the previous day
APR_2021 = [
    ("2021-04-12T00:00", 60204, 2157),
    ("2021-04-13T00:00", 59893, 2139),
    ("2021-04-14T00:00", 63503, 2299),
    ("2021-04-14T12:00", 64800, 2370),
    ("2021-04-15T00:00", 63109, 2435),
    ("2021-04-16T00:00", 63314, 2519),
    ("2021-04-17T00:00", 61572, 2431),
    ("2021-04-18T00:00", 60683, 2344),
    ("2021-04-19T00:00", 56216, 2237),
    ("2021-04-20T00:00", 55724, 2166),
    ("2021-04-21T00:00", 56473, 2330),
    ("2021-04-22T00:00", 53906, 2364),
    ("2021-04-23T00:00", 51762, 2403),
    ("2021-04-24T00:00", 51093, 2363),
    ("2021-04-25T00:00", 50050, 2213),
    ("2021-04-26T00:00", 49004, 2303),
    ("2021-04-27T00:00", 54021, 2534),
    ("2021-04-28T00:00", 55033, 2663),
    ("2021-04-29T00:00", 54824, 2747),
    ("2021-04-30T00:00", 53555, 2757),
    ("2021-05-01T00:00", 57750, 2773),
    ("2021-05-02T00:00", 57828, 2945),
    ("2021-05-03T00:00", 56631, 2952),
    ("2021-05-04T00:00", 57200, 3431),
    ("2021-05-05T00:00", 53333, 3253),
    ("2021-05-06T00:00", 57424, 3522),
    ("2021-05-07T00:00", 56397, 3490),
    ("2021-05-08T00:00", 57356, 3484),
    ("2021-05-09T00:00", 58803, 3902),
    ("2021-05-10T00:00", 58232, 3928),
]

SEP_2021 = [
    ("2021-09-06T00:00", 51769, 3940),
    ("2021-09-07T00:00", 52677, 3926),
    ("2021-09-07T14:45", 42900, 3010),
    ("2021-09-08T00:00", 46809, 3431),
    ("2021-09-09T00:00", 46079, 3497),
    ("2021-09-10T00:00", 46368, 3427),
    ("2021-09-11T00:00", 44848, 3212),
    ("2021-09-12T00:00", 45145, 3269),
]


def _ts(s: str) -> int:
    return int(datetime.fromisoformat(s).replace(tzinfo=timezone.utc).timestamp())


def bridge(anchors, rng):
    """Log-price paths (steps x 2) through the anchors, sampled every STEP seconds."""
    times = np.array([_ts(a[0]) for a in anchors])
    logp = np.log(np.array([[a[1], a[2]] for a in anchors], dtype=float))
    sd = np.array(DAILY_VOL) * np.sqrt(STEP / 86400.0)
    cov = np.array([[sd[0] ** 2, RHO * sd[0] * sd[1]], [RHO * sd[0] * sd[1], sd[1] ** 2]])
    chol = np.linalg.cholesky(cov)
    grid = [np.array([times[0]])]
    path = [logp[:1]]
    for k in range(len(times) - 1):
        n = (times[k + 1] - times[k]) // STEP
        steps = rng.standard_normal((n, 2)) @ chol.T
        walk = np.cumsum(steps, axis=0)
        frac = (np.arange(1, n + 1) / n)[:, None]
        seg = logp[k] + frac * (logp[k + 1] - logp[k]) + walk - frac * walk[-1]
        grid.append(times[k] + STEP * np.arange(1, n + 1))
        path.append(seg)
    return np.concatenate(grid), np.concatenate(path), sd


def write_bars(path: Path, times, logp, sd, rng, base_volume):
    closes = np.exp(logp)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "open", "high", "low", "close", "volume"])
        for i in range(1, len(times)):
            o, c = closes[i - 1], closes[i]
            hi = max(o, c) * np.exp(abs(rng.normal(0, sd / 2)))
            lo = min(o, c) * np.exp(-abs(rng.normal(0, sd / 2)))
            vol = base_volume * rng.lognormal(0.0, 0.5)
            stamp = datetime.fromtimestamp(int(times[i - 1]), tz=timezone.utc)
            w.writerow([stamp.strftime("%Y-%m-%dT%H:%M:%SZ"), f"{o:.2f}", f"{hi:.2f}",
                        f"{lo:.2f}", f"{c:.2f}", f"{vol:.4f}"])


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    for tag, anchors in (("2021-04", APR_2021), ("2021-09", SEP_2021)):
        times, logp, sd = bridge(anchors, rng)
        write_bars(OUT / f"btc_{tag}.csv", times, logp[:, 0], sd[0], rng, 25.0)
        write_bars(OUT / f"eth_{tag}.csv", times, logp[:, 1], sd[1], rng, 400.0)
        print(f"{tag}: {len(times) - 1} bars per asset")


if __name__ == "__main__":
    main()
