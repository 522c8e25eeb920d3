"""Inhomogeneous Poisson model for immigrant (root post) arrivals.

Arrivals over a long observation span [0, a0) follow an intensity
lambda0 * activity(t), where the activity carries its own harmonic
coefficients distinct from the offspring activity function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harmonics import HarmonicSpec, activity_eval, immigrant_integral
from .inference import (
    PosteriorSamples,
    PriorSpec,
    ess,
    rhat,
    run_chain,
)


@dataclass(frozen=True)
class ImmigrantParams:
    """Arrival-rate level (per hour) and its periodic modulation."""

    lambda0: float
    harmonic: HarmonicSpec

    def __post_init__(self):
        if not (self.lambda0 > 0):
            raise ValueError("lambda0 must be positive")


def immigrant_intensity(p: ImmigrantParams, t) -> float:
    """Arrival intensity lambda0 * activity(t)."""
    return p.lambda0 * activity_eval(p.harmonic, t)


def immigrant_loglik(p: ImmigrantParams, arrivals: np.ndarray, a0: float) -> float:
    """Poisson log likelihood of arrival times on [0, a0)."""
    arrivals = np.asarray(arrivals, dtype=float)
    if arrivals.size and (arrivals.min() < 0 or arrivals.max() >= a0):
        raise ValueError("arrivals must lie in [0, a0)")
    vals = immigrant_intensity(p, arrivals)
    if np.any(np.real(vals) <= 0):
        return -np.inf
    comp = p.lambda0 * np.dot(
        np.asarray(p.harmonic.coefficients), immigrant_integral(p.harmonic, a0)
    )
    return float(np.sum(np.log(vals)) - comp)


def _loglik_complex(lam0, coefs, spec: HarmonicSpec, arrivals, a0):
    """Core likelihood usable with complex-step parameter perturbations."""
    from .harmonics import basis_matrix

    B = basis_matrix(spec, arrivals)
    vals = lam0 * (B @ coefs)
    comp = lam0 * np.dot(coefs, immigrant_integral(spec, a0))
    if np.any(np.real(vals) <= 0):
        return -np.inf
    return np.sum(np.log(vals)) - comp


def fit_immigrants(
    arrivals: np.ndarray,
    a0: float,
    K: int = 2,
    chains: int = 4,
    warmup: int = 1500,
    iters: int = 1000,
    seed: int = 0,
    thin: int = 20,
    prior: PriorSpec | None = None,
) -> PosteriorSamples:
    """Posterior over (lambda0, harmonic coefficients) for immigrant arrivals.

    The prior is flat on log(lambda0) and normal on the harmonic
    coefficients. Returns samples in constrained space with the usual
    diagnostics; names are ``lambda0`` then ``alphaI[i]``.
    """
    arrivals = np.asarray(arrivals, dtype=float)
    if arrivals.size == 0:
        raise ValueError("need at least one arrival")
    prior = prior or PriorSpec()
    cycles = tuple(range(1, K + 1))
    spec = HarmonicSpec(cycles, (1.0,) + (0.0,) * (2 * K)) if K else HarmonicSpec.flat()
    sd = prior.alpha_sd(K)

    def log_post(v):
        lam0 = np.exp(v[0])
        coefs = np.concatenate([[1.0], v[1:]])
        ll = _loglik_complex(lam0, coefs, spec, arrivals, a0)
        if np.real(ll) == -np.inf:
            return -np.inf
        lp = -0.5 * np.sum(v[1:] ** 2) / sd**2 if K else 0.0
        return ll + lp

    d = 1 + 2 * K
    mle = np.log(arrivals.size / a0)
    out = []
    for c in range(chains):
        rng = np.random.default_rng(np.random.SeedSequence([seed, c]))
        x0 = np.concatenate([[mle + 0.2 * rng.standard_normal()],
                             rng.normal(0.0, 0.5 * sd, d - 1)])
        out.append(run_chain(log_post, x0, warmup, iters, rng, thin=thin))
    unc = np.stack(out)
    draws = unc.copy()
    draws[..., 0] = np.exp(unc[..., 0])
    names = ["lambda0"] + [f"alphaI[{i}]" for i in range(1, 2 * K + 1)]
    r = rhat(draws)
    e = ess(draws)
    warning = bool(np.any(r > 1.01) or np.any(e < 100))
    return PosteriorSamples(draws, names, "immigrant", spec, r, e, warning)


def params_from_immigrant_row(row: np.ndarray, spec: HarmonicSpec) -> ImmigrantParams:
    coefs = (1.0,) + tuple(float(x) for x in row[1:])
    return ImmigrantParams(float(row[0]), spec.replace_coefficients(coefs))
