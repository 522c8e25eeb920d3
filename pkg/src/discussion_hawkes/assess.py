"""Predictive scoring and goodness-of-fit diagnostics.

Covers cluster-wise log predictive density (lpd), paired model
comparison, size prediction with a learning window, the fair CRPS
estimator and its skill score, bootstrap two-sample KS comparisons,
transmission-concentration quantiles, size-by-hour summaries, and the
periodogram of hourly counts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp
from scipy.stats import gamma as gamma_dist

from .inference import PosteriorSamples
from .likelihood import ModelParams, dataset_loglik_per_cluster
from .simulate import ClusterTruncationError, cluster_rng, propagate_cluster
from .trees import Cluster, ClusterSet


@dataclass(frozen=True)
class ScoreReport:
    """Per-cluster scores with their aggregate under a named metric."""

    per_cluster: np.ndarray
    aggregate: float
    standard_error: float
    metric: str

    def __post_init__(self):
        object.__setattr__(self, "per_cluster", np.asarray(self.per_cluster, dtype=float))


def _thin_draws(samples: PosteriorSamples, R: int) -> np.ndarray:
    flat = samples.flat()
    if R > flat.shape[0]:
        raise ValueError(f"requested {R} draws but only {flat.shape[0]} available")
    idx = np.linspace(0, flat.shape[0] - 1, R).round().astype(int)
    return flat[idx]


def lpd(samples: PosteriorSamples, test: ClusterSet, R: int) -> ScoreReport:
    """Cluster-wise log predictive density, Monte-Carlo averaged over R draws."""
    rows = _thin_draws(samples, R)
    per_draw = np.empty((R, len(test.clusters)))
    for r, row in enumerate(rows):
        p = samples.params_at(row)
        per_draw[r] = dataset_loglik_per_cluster(p, test)
    per_cluster = logsumexp(per_draw, axis=0) - np.log(R)
    bad = ~np.isfinite(per_cluster)
    if np.any(bad):
        raise ValueError(
            f"{int(bad.sum())} test cluster(s) have zero likelihood under every draw"
        )
    se = float(np.sqrt(len(per_cluster) * np.var(per_cluster, ddof=1)))
    return ScoreReport(per_cluster, float(per_cluster.sum()), se, "lpd")


def delta_lpd(a: ScoreReport, b: ScoreReport) -> tuple[float, float]:
    """Paired lpd difference (a minus b) and its standard error."""
    if a.per_cluster.shape != b.per_cluster.shape:
        raise ValueError("score reports cover different cluster sets")
    d = a.per_cluster - b.per_cluster
    n = d.size
    var = np.var(d, ddof=1) if n > 1 else 0.0
    return float(d.sum()), float(np.sqrt(n * var))


def predict_sizes(
    samples: PosteriorSamples,
    cluster: Cluster,
    s: float,
    horizon: float,
    R: int,
    seed: int,
    max_points: int = 100_000,
) -> np.ndarray:
    """Final-size predictions after observing the cluster for s hours.

    The cluster is truncated to [t1, t1 + s); each retained posterior draw
    propagates the truncated tree to t1 + horizon and the resulting size is
    recorded. Returns R integer sizes (unsorted).
    """
    if s < 0 or horizon <= s:
        raise ValueError("need 0 <= s < horizon")
    t1 = float(cluster.times[0])
    a = t1 + s
    keep = cluster.times < a
    keep[0] = True  # the root is always observed, even ex ante (s = 0)
    # dropping a node whose parent survives is fine; orphans cannot occur
    # because children are never earlier than their parent
    idx_map = {0: 0}
    times, parents = [], []
    for i in range(cluster.n):
        if keep[i]:
            idx_map[i + 1] = len(times) + 1
            times.append(cluster.times[i])
            parents.append(idx_map[cluster.parents[i]])
    truncated = Cluster(
        np.array(times), np.array(parents, dtype=int), window_end=t1 + horizon
    )

    rows = _thin_draws(samples, R)
    sizes = np.empty(R, dtype=int)
    capped = 0
    for r, row in enumerate(rows):
        p = samples.params_at(row)
        rng = cluster_rng(seed, r)
        try:
            sim = propagate_cluster(rng, p, truncated, a, t1 + horizon, max_points=max_points)
            sizes[r] = sim.n
        except ClusterTruncationError as err:
            sizes[r] = err.partial.n
            capped += 1
    if capped > 0.01 * R:
        import warnings

        warnings.warn(
            f"size cap reached in {capped}/{R} predictive draws; results truncated",
            RuntimeWarning,
        )
    return sizes


def crps_hat(predictions: np.ndarray, truth: float) -> float:
    """Fair (unbiased) CRPS estimate from an ensemble of predictions."""
    x = np.sort(np.asarray(predictions, dtype=float))
    R = x.size
    if R < 2:
        raise ValueError("need at least 2 predictions")
    phi0 = x.mean()
    phi1 = np.sum(np.arange(R) * x) / (R * (R - 1))
    return float(np.mean(np.abs(x - truth)) + phi0 - 2.0 * phi1)


def crps_report(size_samples: list[np.ndarray], truths: np.ndarray, metric: str = "crps") -> ScoreReport:
    per = np.array([crps_hat(s, t) for s, t in zip(size_samples, truths)])
    se = float(np.sqrt(per.size * np.var(per, ddof=1))) if per.size > 1 else 0.0
    return ScoreReport(per, float(per.mean()), se, metric)


def crpss(model: ScoreReport, train_sizes: np.ndarray, truths: np.ndarray) -> float:
    """Skill of a model's CRPS against the training size distribution.

    The baseline scores every test cluster with the full empirical training
    size sample as its predictive ensemble.
    """
    train_sizes = np.asarray(train_sizes, dtype=float)
    if train_sizes.size == 0:
        raise ValueError("empty baseline sample")
    base = np.array([crps_hat(train_sizes, t) for t in np.asarray(truths, dtype=float)])
    crps0 = base.mean()
    if crps0 == 0:
        raise ValueError("baseline CRPS is zero")
    return float(1.0 - model.aggregate / crps0)


def ks_statistic(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (sup distance of ECDFs)."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be nonempty")
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def bootstrap_ks(
    train_sizes: np.ndarray,
    sim_by_model: dict[str, np.ndarray],
    B: int,
    seed: int,
) -> dict[str, np.ndarray]:
    """Bootstrap KS distributions comparing each model's simulated sizes to data.

    All models must provide one simulated size per training immigrant, in
    the same order, so each bootstrap resample of immigrant indices is
    shared across models.
    """
    train_sizes = np.asarray(train_sizes)
    S = train_sizes.size
    for name, sizes in sim_by_model.items():
        if np.asarray(sizes).size != S:
            raise ValueError(f"model {name!r} simulated {np.asarray(sizes).size} sizes, expected {S}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0B007]))
    out = {name: np.empty(B) for name in sim_by_model}
    for b in range(B):
        idx = rng.integers(0, S, size=S)
        ref = train_sizes[idx]
        for name, sizes in sim_by_model.items():
            out[name][b] = ks_statistic(ref, np.asarray(sizes)[idx])
    return out


def transmission_proportion(mu: float, psi: float, alpha_q: float) -> float:
    """Expected share of offspring produced by the top-100*alpha_q% of spreaders.

    The per-node reproduction strength is Gamma(psi, psi/mu); the strength-
    weighted distribution is Gamma(psi+1, psi/mu), so the share above the
    upper alpha_q quantile has a closed form.
    """
    if not (0 < alpha_q < 1):
        raise ValueError("alpha_q must lie in (0, 1)")
    if mu <= 0 or psi <= 0:
        raise ValueError("mu and psi must be positive")
    x = gamma_dist.isf(alpha_q, psi, scale=mu / psi)
    return float(gamma_dist.sf(x, psi + 1.0, scale=mu / psi))


def zero_reply_fraction(mu: float, psi: float | None, c_bar: float) -> float:
    """Probability that a node with exposure c_bar produces no offspring."""
    if psi is None:
        return float(np.exp(-mu * c_bar))
    return float((psi / (psi + mu * c_bar)) ** psi)


def mean_size_by_hour(data: ClusterSet) -> np.ndarray:
    """Mean cluster size by the immigrant's clock hour.

    Returns a (24, 4) array of columns (hour, mean, se, count); empty
    buckets carry NaN mean/se.
    """
    if not data.clusters:
        raise ValueError("empty cluster set")
    hours = np.array([int(c.times[0] % 24.0) for c in data.clusters])
    sizes = np.array([c.n for c in data.clusters], dtype=float)
    out = np.full((24, 4), np.nan)
    out[:, 0] = np.arange(24)
    out[:, 3] = 0.0
    for h in range(24):
        sel = sizes[hours == h]
        out[h, 3] = sel.size
        if sel.size:
            out[h, 1] = sel.mean()
            out[h, 2] = sel.std(ddof=1) / np.sqrt(sel.size) if sel.size > 1 else 0.0
    return out


def periodogram(counts: np.ndarray) -> np.ndarray:
    """Periodogram of an hourly count series in cycles/day.

    Returns a (m, 2) array of (frequency, power) for positive frequencies
    of the mean-removed series.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.size
    if n < 48:
        raise ValueError("need at least 48 hourly observations")
    x = counts - counts.mean()
    spec = np.abs(np.fft.rfft(x)) ** 2 / n
    freqs = np.fft.rfftfreq(n, d=1.0) * 24.0
    return np.column_stack([freqs[1:], spec[1:]])
