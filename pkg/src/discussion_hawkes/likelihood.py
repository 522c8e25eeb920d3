"""Cluster likelihoods for the branching model with latent reproduction numbers.

Two event classes exist: the immigrant (root post, class 1) and offspring
(comments, class 2). Each class has its own excitation decay eta, expected
offspring count mu, and optionally a dispersion psi. When psi is present the
latent per-event reproduction number nu ~ Gamma(psi, psi/mu) is integrated
out analytically, giving Negative-Binomial offspring counts; when absent the
class is homogeneous (nu pinned to mu, Poisson offspring).

All likelihoods are computed in log space. An event falling where the
activity function is non-positive yields -inf rather than an exception, so
samplers reject such parameter states naturally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import loggamma

from .harmonics import (
    HarmonicSpec,
    activity_eval,
    basis_matrix,
    weighted_integral_matrix,
)
from .trees import Cluster, ClusterSet, offspring_counts

VARIANTS = ("M1", "M2", "M3", "M4", "M5", "custom")


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: activity coefficients, decays, reproduction, dispersion."""

    harmonic: HarmonicSpec
    eta: tuple[float, float]
    mu: tuple[float, float]
    psi: tuple[float | None, float | None] = (None, None)
    variant: str = "custom"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if any(e <= 0 for e in self.eta) or any(m < 0 for m in self.mu):
            raise ValueError("eta must be positive and mu nonnegative")
        if any(p is not None and p <= 0 for p in self.psi):
            raise ValueError("present psi must be positive")
        k = self.harmonic.K
        p1, p2 = self.psi
        constraints = {
            "M1": self.eta[0] == self.eta[1]
            and self.mu[0] == self.mu[1]
            and k == 0
            and p1 is None
            and p2 is None,
            "M2": k == 0 and p1 is None and p2 is None,
            "M3": p1 is None and p2 is None,
            "M4": p1 is not None and p2 is not None,
            "M5": p1 is not None and p2 is None,
            "custom": True,
        }
        if not constraints[self.variant]:
            raise ValueError(f"parameters violate the {self.variant} constraints")

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "eta": list(self.eta),
            "mu": list(self.mu),
            "psi": [self.psi[0], self.psi[1]],
            "harmonic": self.harmonic.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelParams":
        psi = d.get("psi", [None, None])
        return cls(
            harmonic=HarmonicSpec.from_json_dict(d["harmonic"]),
            eta=tuple(float(x) for x in d["eta"]),
            mu=tuple(float(x) for x in d["mu"]),
            psi=(None if psi[0] is None else float(psi[0]),
                 None if psi[1] is None else float(psi[1])),
            variant=d.get("variant", "custom"),
        )


def params_to_json(p: ModelParams) -> str:
    return json.dumps(p.to_json_dict())


def params_from_json(s: str) -> ModelParams:
    return ModelParams.from_json_dict(json.loads(s))


@dataclass(frozen=True)
class NuPosterior:
    """Gamma(shape, rate) posterior for a latent reproduction number."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


class ClusterData:
    """Flattened per-node arrays for fast repeated likelihood evaluation.

    Immigrants and offspring are concatenated across clusters so one theta
    evaluation is a handful of vectorized operations. ``cluster_index``
    tracks membership for per-cluster reductions.
    """

    def __init__(self, cluster_set: ClusterSet):
        imm_t, imm_a, imm_z, imm_cl = [], [], [], []
        off_t, off_a, off_z, off_cl = [], [], [], []
        off_parent_t, off_parent_is_imm = [], []
        for i, c in enumerate(cluster_set.clusters):
            z = offspring_counts(c)
            imm_t.append(c.times[0])
            imm_a.append(c.window_end)
            imm_z.append(z[0])
            imm_cl.append(i)
            if c.n > 1:
                off_t.append(c.times[1:])
                off_a.append(np.full(c.n - 1, c.window_end))
                off_z.append(z[1:])
                off_cl.append(np.full(c.n - 1, i, dtype=int))
                off_parent_t.append(c.times[c.parents[1:] - 1])
                off_parent_is_imm.append(c.parents[1:] == 1)
        self.n_clusters = len(cluster_set.clusters)
        self.imm_t = np.asarray(imm_t)
        self.imm_a = np.asarray(imm_a)
        self.imm_z = np.asarray(imm_z, dtype=float)
        self.imm_cluster = np.asarray(imm_cl, dtype=int)
        cat = lambda xs, dt: np.concatenate(xs) if xs else np.empty(0, dtype=dt)
        self.off_t = cat(off_t, float)
        self.off_a = cat(off_a, float)
        self.off_z = cat(off_z, float).astype(float)
        self.off_cluster = cat(off_cl, int)
        self.off_parent_t = cat(off_parent_t, float)
        self.off_parent_is_imm = cat(off_parent_is_imm, bool)


def _nb_node_term(z, c_exp, mu, psi):
    """Per-node log factor with nu integrated out (Negative-Binomial form)."""
    denom = np.log(psi + mu * c_exp)
    return (
        loggamma(psi + z)
        - loggamma(psi)
        + z * (np.log(mu) - denom)
        + psi * (np.log(psi) - denom)
    )


def _poisson_node_term(z, c_exp, mu):
    """Per-node log factor with nu pinned to mu (Poisson offspring)."""
    return z * np.log(mu) - mu * c_exp


def _loglik_core(data: ClusterData, harmonic: HarmonicSpec, coef, eta, mu, psi,
                 per_cluster: bool = False):
    """Log-likelihood from flattened arrays; complex-safe in the parameters.

    ``coef`` is the full coefficient vector (leading 1), ``eta``/``mu`` are
    pairs, ``psi`` a pair with None marking a homogeneous class. Returns a
    scalar, or a per-cluster vector when requested. -inf (real) signals an
    invalid intensity.
    """
    coef = np.asarray(coef)
    eta1, eta2 = eta
    mu1, mu2 = mu
    psi1, psi2 = psi

    c_imm = weighted_integral_matrix(harmonic, data.imm_t, data.imm_a, eta1) @ coef
    if data.off_t.size:
        c_off = weighted_integral_matrix(harmonic, data.off_t, data.off_a, eta2) @ coef
        act = basis_matrix(harmonic, data.off_t) @ coef
        if np.any(np.real(act) <= 0):
            if per_cluster:
                out = np.zeros(data.n_clusters)
                bad = np.unique(data.off_cluster[np.real(act) <= 0])
                out[bad] = -np.inf
                good = np.setdiff1d(np.arange(data.n_clusters), bad)
                # still need finite values for the valid clusters
                if good.size:
                    sub = _subset(data, good)
                    out[good] = _loglik_core(sub, harmonic, coef, eta, mu, psi,
                                             per_cluster=True)
                return out
            return -np.inf
    else:
        c_off = np.empty(0, dtype=c_imm.dtype)
        act = np.empty(0, dtype=c_imm.dtype)

    if psi1 is not None:
        imm_terms = _nb_node_term(data.imm_z, c_imm, mu1, psi1)
    else:
        imm_terms = _poisson_node_term(data.imm_z, c_imm, mu1)

    if data.off_t.size:
        eta_p = np.where(data.off_parent_is_imm, eta1, eta2)
        event_terms = (
            np.log(act) + np.log(eta_p) - eta_p * (data.off_t - data.off_parent_t)
        )
        if psi2 is not None:
            off_terms = _nb_node_term(data.off_z, c_off, mu2, psi2)
        else:
            off_terms = _poisson_node_term(data.off_z, c_off, mu2)
        off_total = event_terms + off_terms
    else:
        off_total = np.empty(0, dtype=c_imm.dtype)

    if per_cluster:
        out = np.zeros(data.n_clusters, dtype=imm_terms.dtype)
        np.add.at(out, data.imm_cluster, imm_terms)
        if off_total.size:
            np.add.at(out, data.off_cluster, off_total)
        return out
    return imm_terms.sum() + off_total.sum()


def _subset(data: ClusterData, keep: np.ndarray) -> ClusterData:
    sub = ClusterData.__new__(ClusterData)
    remap = {int(c): i for i, c in enumerate(keep)}
    imm_mask = np.isin(data.imm_cluster, keep)
    off_mask = np.isin(data.off_cluster, keep)
    sub.n_clusters = keep.size
    sub.imm_t = data.imm_t[imm_mask]
    sub.imm_a = data.imm_a[imm_mask]
    sub.imm_z = data.imm_z[imm_mask]
    sub.imm_cluster = np.array([remap[int(c)] for c in data.imm_cluster[imm_mask]], dtype=int)
    sub.off_t = data.off_t[off_mask]
    sub.off_a = data.off_a[off_mask]
    sub.off_z = data.off_z[off_mask]
    sub.off_cluster = np.array([remap[int(c)] for c in data.off_cluster[off_mask]], dtype=int)
    sub.off_parent_t = data.off_parent_t[off_mask]
    sub.off_parent_is_imm = data.off_parent_is_imm[off_mask]
    return sub


def _eta_for(p: ModelParams, is_immigrant: bool) -> float:
    return p.eta[0] if is_immigrant else p.eta[1]


def offspring_intensity(
    p: ModelParams, nu_j: float, t_j: float, is_immigrant: bool, t
) -> float:
    """gamma_j(t) = nu_j alpha(t) eta exp(-eta (t - t_j)) for t > t_j."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= t_j):
        raise ValueError("offspring intensity defined only for t > t_j")
    if nu_j < 0:
        raise ValueError("nu_j must be nonnegative")
    eta = _eta_for(p, is_immigrant)
    val = nu_j * activity_eval(p.harmonic, t) * eta * np.exp(-eta * (t_arr - t_j))
    return val


def ground_intensity(p: ModelParams, c: Cluster, nu: np.ndarray, t: float) -> float:
    """lambda*(t) = sum over events before t of their offspring intensities."""
    nu = np.asarray(nu, dtype=float)
    total = 0.0
    for j in range(c.n):
        if c.times[j] < t:
            total += offspring_intensity(p, nu[j], c.times[j], j == 0, t)
    return float(total)


def compensator(p: ModelParams, c: Cluster, nu: np.ndarray) -> float:
    """Lambda*(a): closed-form integral of the ground intensity over the window."""
    nu = np.asarray(nu, dtype=float)
    if nu.shape[0] != c.n:
        raise ValueError("nu must have one entry per event")
    coef = np.asarray(p.harmonic.coefficients)
    a = c.window_end
    total = nu[0] * float(
        weighted_integral_matrix(p.harmonic, c.times[0], a, p.eta[0])[0] @ coef
    )
    if c.n > 1:
        w = weighted_integral_matrix(p.harmonic, c.times[1:], a, p.eta[1]) @ coef
        total += float(nu[1:] @ w)
    return total


def complete_data_loglik(p: ModelParams, c: Cluster, nu: np.ndarray) -> float:
    """Joint log density of the event times and latent nu.

    Event factors use the known branching structure, plus the compensator
    and, for heterogeneous classes, the Gamma mark density. Homogeneous
    classes contribute no mark term (nu is the constant mu there).
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValueError("nu must be strictly positive")
    total = -compensator(p, c, nu)
    for j in range(1, c.n):
        parent = c.parents[j] - 1
        lam = offspring_intensity(
            p, nu[parent], c.times[parent], parent == 0, c.times[j]
        )
        if lam <= 0:
            return -np.inf
        total += math.log(lam)
    for j in range(c.n):
        psi = p.psi[0] if j == 0 else p.psi[1]
        mu = p.mu[0] if j == 0 else p.mu[1]
        if psi is not None:
            rate = psi / mu
            total += (
                psi * math.log(rate)
                - float(loggamma(psi))
                + (psi - 1) * math.log(nu[j])
                - rate * nu[j]
            )
    return float(total)


def cluster_loglik(p: ModelParams, c: Cluster) -> float:
    """Marginal log-likelihood of one cluster (latent nu integrated out).

    Classes without a dispersion parameter use the Poisson factorization.
    """
    data = ClusterData(ClusterSet((c,)))
    val = _loglik_core(
        data, p.harmonic, np.asarray(p.harmonic.coefficients), p.eta, p.mu, p.psi
    )
    return float(np.real(val))


def homogeneous_cluster_loglik(p: ModelParams, c: Cluster) -> float:
    """Poisson-offspring log-likelihood (the psi -> infinity reduction)."""
    data = ClusterData(ClusterSet((c,)))
    val = _loglik_core(
        data, p.harmonic, np.asarray(p.harmonic.coefficients), p.eta, p.mu,
        (None, None),
    )
    return float(np.real(val))


def dataset_loglik(p: ModelParams, data: ClusterSet | ClusterData) -> float:
    """Sum of cluster log-likelihoods; fixed summation order, -inf propagates."""
    if isinstance(data, ClusterSet):
        if len(data) == 0:
            raise ValueError("empty cluster set")
        data = ClusterData(data)
    val = _loglik_core(
        data, p.harmonic, np.asarray(p.harmonic.coefficients), p.eta, p.mu, p.psi
    )
    return float(np.real(val))


def dataset_loglik_per_cluster(p: ModelParams, data: ClusterSet | ClusterData) -> np.ndarray:
    if isinstance(data, ClusterSet):
        data = ClusterData(data)
    val = _loglik_core(
        data, p.harmonic, np.asarray(p.harmonic.coefficients), p.eta, p.mu, p.psi,
        per_cluster=True,
    )
    return np.real(val)


def nu_posterior(p: ModelParams, c: Cluster, j: int) -> NuPosterior:
    """Conjugate Gamma posterior for nu_j given the observed cluster.

    ``j`` is a 0-based event index. Shape = z_j + psi; rate adds the event's
    own compensator exposure to the prior rate psi/mu.
    """
    if not 0 <= j < c.n:
        raise IndexError("event index out of range")
    is_imm = j == 0
    psi = p.psi[0] if is_imm else p.psi[1]
    mu = p.mu[0] if is_imm else p.mu[1]
    if psi is None:
        raise ValueError("homogeneous class has no nu posterior; nu is the constant mu")
    eta = _eta_for(p, is_imm)
    z = offspring_counts(c)[j]
    coef = np.asarray(p.harmonic.coefficients)
    c_exp = float(
        weighted_integral_matrix(p.harmonic, c.times[j], c.window_end, eta)[0] @ coef
    )
    return NuPosterior(shape=float(z + psi), rate=c_exp + psi / mu)
