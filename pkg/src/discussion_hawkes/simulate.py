"""Thinning-based simulation of offspring processes and cluster propagation.

Each event's offspring form an inhomogeneous Poisson process whose rate is
bounded by K0 * nu * (exponential density), so proposals are drawn from a
truncated exponential and thinned by alpha(t)/K0. Clusters are propagated
breadth-first: observed events get their latent nu resampled from the
conjugate posterior, newly created events draw nu from the offspring prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harmonics import activity_eval, activity_upper_bound, weighted_integral_matrix
from .likelihood import ModelParams
from .trees import Cluster, ClusterSet, offspring_counts


@dataclass(frozen=True)
class SimConfig:
    master_seed: int
    max_points: int = 100_000
    horizon: tuple[float, float] = (0.0, 48.0)

    def __post_init__(self):
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")
        if self.horizon[1] < self.horizon[0]:
            raise ValueError("horizon must be ordered")


class ClusterTruncationError(RuntimeError):
    """Simulation hit the point cap; carries the partial cluster."""

    def __init__(self, partial: Cluster):
        super().__init__(f"cluster truncated at {partial.n} points")
        self.partial = partial


def sample_truncated_exponential(rng, eta: float, lo: float, hi: float, size=None):
    """Exp(eta) draws conditioned to (lo, hi), via the inverse CDF.

    ``hi`` may be inf. Stable for large eta*(hi-lo).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if not 0 <= lo < hi:
        raise ValueError("need 0 <= lo < hi")
    u = rng.random(size)
    # P(X <= x | lo < X < hi) = (1 - exp(-eta (x - lo))) / (1 - exp(-eta (hi - lo)))
    tail = -np.expm1(-eta * (hi - lo)) if np.isfinite(hi) else 1.0
    return lo - np.log1p(-u * tail) / eta


def simulate_offspring(
    rng,
    p: ModelParams,
    t_j: float,
    is_immigrant: bool,
    nu_j: float,
    a: float,
    b: float,
) -> np.ndarray:
    """Offspring times of one event on [max(a, t_j), b), sorted ascending."""
    if b < a:
        raise ValueError("need b >= a")
    if nu_j < 0:
        raise ValueError("nu_j must be nonnegative")
    if nu_j == 0 or b == a or b <= t_j:
        return np.empty(0)
    eta = p.eta[0] if is_immigrant else p.eta[1]
    k0 = activity_upper_bound(p.harmonic)
    lo = max(0.0, a - t_j)
    hi = b - t_j
    if hi <= lo:
        return np.empty(0)
    # Exponential CDF mass of the proposal interval.
    mass = np.exp(-eta * lo) - np.exp(-eta * hi)
    count = rng.poisson(nu_j * k0 * mass)
    if count == 0:
        return np.empty(0)
    tau = sample_truncated_exponential(rng, eta, lo, hi, size=count)
    times = t_j + tau
    accept = rng.random(count) * k0 <= activity_eval(p.harmonic, times)
    kept = times[accept]
    kept.sort()
    return kept


def _sample_nu(rng, p: ModelParams, cluster: Cluster, a: float) -> np.ndarray:
    """Latent nu for observed events: conjugate posterior, or mu if homogeneous."""
    n = cluster.n
    z = offspring_counts(cluster)
    coef = np.asarray(p.harmonic.coefficients)
    nu = np.empty(n)
    for cls, idx in ((0, np.array([0])), (1, np.arange(1, n))):
        if idx.size == 0:
            continue
        psi, mu, eta = p.psi[cls], p.mu[cls], p.eta[cls]
        if psi is None:
            nu[idx] = mu
            continue
        t = cluster.times[idx]
        exposure = np.zeros(idx.size)
        if a > t.min():
            live = a > t
            if np.any(live):
                exposure[live] = (
                    weighted_integral_matrix(p.harmonic, t[live], a, eta) @ coef
                )
        shape = z[idx] + psi
        rate = exposure + psi / mu
        nu[idx] = rng.gamma(shape, 1.0 / rate)
    return nu


def propagate_cluster(
    rng,
    p: ModelParams,
    c: Cluster,
    a: float,
    b: float,
    max_points: int = 100_000,
) -> Cluster:
    """Extend an observed cluster over [a, b) by recursive offspring simulation.

    Observed events' nu are drawn from their conjugate posterior given the
    window [t1, a); new events draw nu from the offspring prior. The queue is
    processed breadth-first, so parents precede children in the output.
    """
    if b < a:
        raise ValueError("need b >= a")
    if np.any(c.times >= a) and c.n > 1:
        raise ValueError("all observed times must precede a")
    times = list(c.times)
    parents = list(c.parents)
    nu = list(_sample_nu(rng, p, c, a))
    n = c.n

    j = 0
    while j < len(times):
        is_imm = j == 0
        start = a if j < n else times[j]
        kids = simulate_offspring(rng, p, times[j], is_imm, nu[j], start, b)
        for t_k in kids:
            if len(times) >= max_points:
                partial = _assemble(times, parents, b)
                raise ClusterTruncationError(partial)
            times.append(float(t_k))
            parents.append(j + 1)
            if p.psi[1] is None:
                nu.append(p.mu[1])
            else:
                nu.append(rng.gamma(p.psi[1], p.mu[1] / p.psi[1]))
        j += 1
    return _assemble(times, parents, b)


def _assemble(times: list, parents: list, b: float) -> Cluster:
    """Sort a raw (time, parent) list into a valid Cluster."""
    times = np.asarray(times)
    parents = np.asarray(parents, dtype=int)
    order = np.argsort(times, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    new_parents = np.where(parents == 0, 0, rank[np.maximum(parents - 1, 0)] + 1)
    t_sorted = times[order]
    for j in range(1, t_sorted.size):
        if t_sorted[j] <= t_sorted[j - 1]:
            t_sorted[j] = t_sorted[j - 1] + 1e-12
    end = b if t_sorted[-1] < b else np.nextafter(t_sorted[-1], np.inf)
    return Cluster(t_sorted, new_parents[order], window_end=end)


def simulate_dataset(
    master_seed: int,
    p: ModelParams,
    seeds: np.ndarray,
    horizon_hours: float = 48.0,
    max_points: int = 100_000,
) -> ClusterSet:
    """One independently propagated cluster per immigrant time.

    Each cluster gets its own counter-based RNG stream keyed by
    (master_seed, cluster_index), so results do not depend on scheduling or
    worker count.
    """
    seeds = np.asarray(seeds, dtype=float)
    if seeds.size == 0:
        raise ValueError("need at least one immigrant time")
    clusters = []
    for i, t0 in enumerate(seeds):
        rng = cluster_rng(master_seed, i)
        root = Cluster(np.array([t0]), np.array([0]), window_end=t0 + horizon_hours)
        clusters.append(
            propagate_cluster(rng, p, root, t0, t0 + horizon_hours, max_points)
        )
    return ClusterSet(tuple(clusters))


def cluster_rng(master_seed: int, cluster_index: int) -> np.random.Generator:
    """Derived stream for one cluster; Philox keyed by (seed, index)."""
    return np.random.Generator(
        np.random.Philox(key=(np.uint64(master_seed) << np.uint64(32))
                         + np.uint64(cluster_index))
    )
