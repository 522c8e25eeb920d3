"""Bridge-sampling marginal likelihoods and Bayes factors.

The log marginal likelihood of a fitted model is estimated with the
optimal-bridge scheme of Meng & Wong: posterior draws are mapped to the
unconstrained parameterization, half of them fix a moment-matched
multivariate-normal proposal, and the remaining half plus fresh proposal
draws drive the fixed-point iteration for the normalizing constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .inference import PosteriorSamples, PriorSpec, make_log_posterior
from .trees import ClusterSet


class EvidenceError(ValueError):
    pass


@dataclass(frozen=True)
class EvidenceEstimate:
    """Log marginal likelihood with an approximate error measure."""

    log_ml: float
    coefficient_of_variation: float
    iterations_used: int
    converged: bool

    def __post_init__(self):
        if not np.isfinite(self.coefficient_of_variation) or self.coefficient_of_variation < 0:
            raise EvidenceError("coefficient of variation must be finite and non-negative")


def bridge_log_evidence(
    log_target,
    draws: np.ndarray,
    seed: int,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> EvidenceEstimate:
    """Estimate the log normalizing constant of an unnormalized density.

    ``log_target`` maps a vector to the (unnormalized) log density;
    ``draws`` is an (N, d) array of samples from the normalized target.
    The first half of the draws fixes the normal proposal, the second
    half enters the bridge identity together with an equal number of
    fresh proposal draws.
    """
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[0]
    if n < 4:
        raise EvidenceError("need at least 4 posterior draws")
    fit, use = draws[: n // 2], draws[n // 2 :]

    mean = fit.mean(axis=0)
    cov = np.cov(fit, rowvar=False)
    cov = np.atleast_2d(cov) + 1e-8 * np.eye(fit.shape[1])
    proposal = multivariate_normal(mean=mean, cov=cov)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0B71D9E]))
    n2 = use.shape[0]
    prop_draws = proposal.rvs(size=n2, random_state=rng).reshape(n2, -1)

    # Log-ratios of target to proposal at both sample sets.
    l1 = np.array([log_target(x) for x in prop_draws]) - proposal.logpdf(prop_draws)
    l2 = np.array([log_target(x) for x in use]) - proposal.logpdf(use)
    if not np.all(np.isfinite(l2)):
        raise EvidenceError("log target not finite at posterior draws")
    finite1 = np.isfinite(l1)
    l1 = np.where(finite1, l1, -np.inf)

    n1 = n2
    s1 = n1 / (n1 + n2)
    s2 = n2 / (n1 + n2)
    lstar = np.median(l2)

    log_r = 0.0  # running estimate of log(ml) - lstar
    converged = False
    iters = 0
    for iters in range(1, max_iter + 1):
        # numerator: mean over proposal draws of e^{l1-lstar} / (s1 e^{l1-lstar} + s2 e^{log_r})
        a1 = l1 - lstar
        denom1 = logsumexp(
            np.stack([np.log(s1) + a1, np.full_like(a1, np.log(s2) + log_r)]), axis=0
        )
        log_num = logsumexp(a1 - denom1) - np.log(n1)
        a2 = l2 - lstar
        denom2 = logsumexp(
            np.stack([np.log(s1) + a2, np.full_like(a2, np.log(s2) + log_r)]), axis=0
        )
        log_den = logsumexp(-denom2) - np.log(n2)
        new_log_r = log_num - log_den
        if abs(new_log_r - log_r) < tol:
            log_r = new_log_r
            converged = True
            break
        log_r = new_log_r

    log_ml = log_r + lstar

    # Approximate relative MSE assuming independent draws:
    # f1 evaluated at posterior draws, f2 at proposal draws.
    with np.errstate(over="ignore"):
        p2 = np.exp(l2 - lstar - log_r)  # target/(proposal * r) at posterior draws
        p1 = np.exp(l1 - lstar - log_r)  # same ratio at proposal draws
    f1 = 1.0 / (s1 * p2 + s2)
    f2 = p1 / (s1 * p1 + s2)
    re2 = np.var(f1) / (n2 * np.mean(f1) ** 2) + np.var(f2) / (n1 * np.mean(f2) ** 2)
    cv = float(np.sqrt(max(re2, 0.0)))

    return EvidenceEstimate(float(log_ml), cv, iters, converged)


def _unconstrain_draws(samples: PosteriorSamples) -> np.ndarray:
    """Map retained constrained draws back to the sampling space."""
    flat = samples.flat().copy()
    for j, name in enumerate(samples.names):
        if not name.startswith("alpha"):
            flat[:, j] = np.log(flat[:, j])
    return flat


def bridge_logml(
    samples: PosteriorSamples,
    data: ClusterSet,
    seed: int,
    prior: PriorSpec | None = None,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> EvidenceEstimate:
    """Marginal likelihood of a fitted branching model via bridge sampling."""
    bad_rhat = samples.rhat is not None and np.any(samples.rhat > 1.01)
    if samples.warning or bad_rhat:
        raise EvidenceError(
            "posterior sample fails the diagnostics contract (R-hat/ESS); refit first"
        )
    log_post, _ = make_log_posterior(
        data, samples.variant, samples.harmonic, prior=prior or PriorSpec()
    )
    return bridge_log_evidence(log_post, _unconstrain_draws(samples), seed, tol, max_iter)


def bayes_factor(e_l: EvidenceEstimate, e_m: EvidenceEstimate) -> float:
    """ln Bayes factor of the first model over the second."""
    if not (e_l.converged and e_m.converged):
        raise EvidenceError("both evidence estimates must have converged")
    return e_l.log_ml - e_m.log_ml
