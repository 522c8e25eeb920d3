#!/usr/bin/env python3
"""Demonstration of daily-activity effects on discussion-tree size.

Simulates clusters whose activity level follows a two-harmonic daily cycle
peaking mid-morning, then shows (a) the mean tree size by the hour at which
the root arrived and (b) the periodogram of the hourly event counts, whose
leading peaks sit at 1 and 2 cycles/day.

Example:
    python3 scripts/circadian_demo.py --seed 3 --clusters 4000 --days 28
"""

from __future__ import annotations

import argparse

import numpy as np

from discussion_hawkes.assess import mean_size_by_hour, periodogram
from discussion_hawkes.harmonics import HarmonicSpec, amplitude_phase
from discussion_hawkes.likelihood import ModelParams
from discussion_hawkes.simulate import simulate_dataset
from discussion_hawkes.trees import hourly_counts


def daily_spec(a1: float, a2: float, peak_hour: float) -> HarmonicSpec:
    w = 2.0 * np.pi / 24.0
    p1, p2 = w * peak_hour, 2.0 * w * peak_hour
    return HarmonicSpec(
        (1, 2),
        (1.0, a1 * np.sin(p1), a1 * np.cos(p1), a2 * np.sin(p2), a2 * np.cos(p2)),
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--clusters", type=int, default=4000)
    ap.add_argument("--days", type=int, default=28)
    ap.add_argument("--peak-hour", type=float, default=10.0)
    args = ap.parse_args()

    spec = daily_spec(0.5, 0.25, args.peak_hour)
    for k, (amp, phase) in enumerate(amplitude_phase(spec), start=1):
        print(f"harmonic {k}: amplitude {amp:.3f}, phase {phase:+.3f} rad")

    p = ModelParams(spec, (0.6, 0.6), (0.45, 0.45), variant="M3")
    rng = np.random.default_rng(args.seed)
    seeds = np.sort(rng.uniform(0, 24.0 * args.days, args.clusters))
    data = simulate_dataset(args.seed, p, seeds, horizon_hours=48.0)

    table = mean_size_by_hour(data)
    print("\nhour  mean size     se   clusters")
    for hour, mean, se, count in table:
        print(f"{int(hour):>4}  {mean:>9.3f}  {se:>5.3f}  {int(count):>8}")

    counts, t0 = hourly_counts(data)
    counts = counts[: (counts.size // 24) * 24]  # whole days only
    pg = periodogram(counts)
    top = pg[np.argsort(pg[:, 1])[::-1][:4]]
    print("\ntop periodogram peaks (cycles/day, power):")
    for freq, power in top:
        print(f"  {freq:>6.3f}  {power:.1f}")


if __name__ == "__main__":
    main()
