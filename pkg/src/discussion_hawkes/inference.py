"""Priors, unconstrained reparameterization, MCMC sampling and diagnostics.

Positive parameters are log-mapped to an unconstrained space; activity
coefficients pass through unchanged. Sampling uses an adaptive random-walk
Metropolis kernel (covariance and scale adapted during warmup, frozen
afterwards). Gradients of the log posterior are available via complex-step
differentiation for validation and gradient-based extensions.

Model variants share the kernel through a generic chain runner, which the
immigrant-arrival model reuses.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import loggamma, ndtri

from .harmonics import HarmonicSpec
from .likelihood import ClusterData, ModelParams, _loglik_core
from .trees import ClusterSet

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the joint prior.

    ``sigma_alpha`` defaults to 1/sqrt(2K), the entropy-maximising scale
    under the amplitude-sum constraint; pass a value to override.
    """

    eta_shape: float = 1.0
    eta_rate: float = 1.0
    mu_shape: float = 4.0
    mu_rate: float = 8.0
    log_psi_mean: float = 0.0
    log_psi_sd: float = 1.0
    sigma_alpha: float | None = None

    def alpha_sd(self, K: int) -> float:
        if self.sigma_alpha is not None:
            return self.sigma_alpha
        if K == 0:
            return 1.0
        return 1.0 / np.sqrt(2.0 * K)


def param_names(variant: str, K: int) -> list[str]:
    names = [f"alpha[{i}]" for i in range(1, 2 * K + 1)]
    if variant == "M1":
        return ["eta[1]", "mu[1]"]
    names += ["eta[1]", "eta[2]", "mu[1]", "mu[2]"]
    if variant in ("M4", "custom"):
        names += ["psi[1]", "psi[2]"]
    elif variant == "M5":
        names += ["psi[1]"]
    return names


def _psi_count(variant: str) -> int:
    return {"M1": 0, "M2": 0, "M3": 0, "M4": 2, "M5": 1, "custom": 2}[variant]


def to_unconstrained(p: ModelParams) -> np.ndarray:
    """Map params to the sampling space: identity on alpha, log on the rest."""
    coefs = list(p.harmonic.coefficients[1:])
    if p.variant == "M1":
        pos = [p.eta[0], p.mu[0]]
    else:
        pos = [p.eta[0], p.eta[1], p.mu[0], p.mu[1]]
        pos += [x for x in p.psi if x is not None]
    return np.array(coefs + [np.log(x) for x in pos])


def from_unconstrained(
    v: np.ndarray, variant: str, harmonic: HarmonicSpec
) -> tuple[ModelParams, float]:
    """Inverse map; returns params and the log-Jacobian of the transform."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("unconstrained vector has non-finite components")
    K = harmonic.K
    expect = 2 * K + len(param_names(variant, 0))
    if v.shape[0] != expect:
        raise ValueError(f"{variant} with K={K} needs {expect} components, got {v.shape[0]}")
    coefs = (1.0,) + tuple(v[: 2 * K])
    spec = harmonic.replace_coefficients(coefs)
    tail = v[2 * K :]
    if variant == "M1":
        eta = (np.exp(tail[0]),) * 2
        mu = (np.exp(tail[1]),) * 2
        psi = (None, None)
    else:
        eta = (np.exp(tail[0]), np.exp(tail[1]))
        mu = (np.exp(tail[2]), np.exp(tail[3]))
        npsi = _psi_count(variant)
        psis = [np.exp(x) for x in tail[4 : 4 + npsi]]
        psi = (
            psis[0] if npsi >= 1 else None,
            psis[1] if npsi >= 2 else None,
        )
    log_jac = float(tail.sum())
    return ModelParams(spec, eta, mu, psi, variant), log_jac


def log_prior(p: ModelParams, prior: PriorSpec = PriorSpec()) -> float:
    """Joint log prior density in constrained space (present parameters only)."""
    return float(np.real(_log_prior_core(
        np.asarray(p.harmonic.coefficients[1:]),
        np.asarray([p.eta[0]] if p.variant == "M1" else list(p.eta)),
        np.asarray([p.mu[0]] if p.variant == "M1" else list(p.mu)),
        np.asarray([x for x in p.psi if x is not None]),
        prior,
        p.harmonic.K,
    )))


def _gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - loggamma(shape) + (shape - 1) * np.log(x) - rate * x


def _log_prior_core(alphas, etas, mus, psis, prior: PriorSpec, K: int):
    sd = prior.alpha_sd(K)
    total = 0.0
    if len(alphas):
        alphas = np.asarray(alphas)
        total = total + np.sum(
            -0.5 * _LOG_2PI - np.log(sd) - 0.5 * (alphas / sd) ** 2
        )
    for e in np.atleast_1d(etas):
        total = total + _gamma_logpdf(e, prior.eta_shape, prior.eta_rate)
    for m in np.atleast_1d(mus):
        total = total + _gamma_logpdf(m, prior.mu_shape, prior.mu_rate)
    for ps in np.atleast_1d(psis):
        lp = np.log(ps)
        total = total + (
            -lp
            - np.log(prior.log_psi_sd)
            - 0.5 * _LOG_2PI
            - 0.5 * ((lp - prior.log_psi_mean) / prior.log_psi_sd) ** 2
        )
    return total


def _posterior_core(v, data: ClusterData, variant: str, harmonic: HarmonicSpec,
                    prior: PriorSpec):
    """Unnormalised log posterior in unconstrained space; complex-safe."""
    K = harmonic.K
    alphas = v[: 2 * K]
    coef = np.concatenate([[1.0], alphas]) if K else np.ones(1, dtype=v.dtype)
    tail = v[2 * K :]
    if variant == "M1":
        etas = np.exp(tail[:1])
        mus = np.exp(tail[1:2])
        eta_pair = (etas[0], etas[0])
        mu_pair = (mus[0], mus[0])
        psis = np.exp(tail[2:2])
    else:
        etas = np.exp(tail[:2])
        mus = np.exp(tail[2:4])
        eta_pair = (etas[0], etas[1])
        mu_pair = (mus[0], mus[1])
        npsi = _psi_count(variant)
        psis = np.exp(tail[4 : 4 + npsi])
    psi_pair = (
        psis[0] if len(psis) >= 1 else None,
        psis[1] if len(psis) >= 2 else None,
    )
    ll = _loglik_core(data, harmonic, coef, eta_pair, mu_pair, psi_pair)
    if np.real(ll) == -np.inf:
        return -np.inf
    lp = _log_prior_core(alphas, etas, mus, psis, prior, K)
    return ll + lp + tail.sum()


def make_log_posterior(
    data: ClusterSet | ClusterData,
    variant: str,
    harmonic: HarmonicSpec,
    prior: PriorSpec = PriorSpec(),
):
    """Callable v -> unnormalised log posterior (float), plus its gradient.

    Returns (log_post, grad). The gradient uses complex-step differentiation,
    accurate to machine precision; at -inf states it returns NaNs.
    """
    if isinstance(data, ClusterSet):
        data = ClusterData(data)

    def log_post(v: np.ndarray) -> float:
        return float(np.real(_posterior_core(np.asarray(v, dtype=float), data,
                                             variant, harmonic, prior)))

    def grad(v: np.ndarray, h: float = 1e-20) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not np.isfinite(log_post(v)):
            return np.full(v.shape, np.nan)
        g = np.empty(v.shape)
        for k in range(v.size):
            vc = v.astype(complex)
            vc[k] += 1j * h
            g[k] = np.imag(_posterior_core(vc, data, variant, harmonic, prior)) / h
        return g

    return log_post, grad


def log_posterior(
    v: np.ndarray,
    data: ClusterSet | ClusterData,
    variant: str,
    harmonic: HarmonicSpec,
    prior: PriorSpec = PriorSpec(),
) -> float:
    f, _ = make_log_posterior(data, variant, harmonic, prior)
    return f(v)


# ---------------------------------------------------------------------------
# Generic adaptive random-walk Metropolis


def run_chain(
    log_target,
    x0: np.ndarray,
    warmup: int,
    iters: int,
    rng: np.random.Generator,
    target_accept: float = 0.3,
    thin: int = 1,
) -> np.ndarray:
    """One chain; covariance and scale adapt during warmup, then freeze.

    ``thin`` keeps every thin-th post-warmup state, running iters * thin
    steps in total; random-walk chains need this to hit tight R-hat targets
    at modest retained lengths.
    """
    d = x0.size
    x = x0.astype(float).copy()
    lp = log_target(x)
    if not np.isfinite(lp):
        raise ValueError("initial point has non-finite log target")
    log_scale = np.log(2.38 / np.sqrt(d))
    cov = np.eye(d) * 0.01
    chol = np.linalg.cholesky(cov * np.exp(2 * log_scale) + 1e-12 * np.eye(d))
    draws = np.empty((iters, d))

    # Warmup uses doubling adaptation windows; the proposal covariance is
    # re-estimated from each completed window, so early transient samples
    # stop polluting the estimate.
    window_end = min(100, warmup)
    win_mean = np.zeros(d)
    win_m2 = np.zeros((d, d))
    n_win = 0
    rm_iter = 0
    for it in range(warmup + iters * thin):
        prop = x + chol @ rng.standard_normal(d)
        lp_prop = log_target(prop)
        accept_prob = np.exp(min(0.0, lp_prop - lp)) if np.isfinite(lp_prop) else 0.0
        if rng.random() < accept_prob:
            x, lp = prop, lp_prop
        if it < warmup:
            n_win += 1
            delta = x - win_mean
            win_mean += delta / n_win
            win_m2 += np.outer(delta, x - win_mean)
            rm_iter += 1
            log_scale += (accept_prob - target_accept) / rm_iter**0.6
            if it + 1 == window_end:
                if n_win > 10:
                    cov = win_m2 / (n_win - 1) + 1e-10 * np.eye(d)
                win_mean = np.zeros(d)
                win_m2 = np.zeros((d, d))
                n_win = 0
                rm_iter = 10  # keep late windows responsive without jitter
                window_end = min(warmup, window_end + 2 * (window_end if it > 100 else 100))
            chol = np.linalg.cholesky(cov * np.exp(2 * log_scale) + 1e-12 * np.eye(d))
        elif (it - warmup + 1) % thin == 0:
            draws[(it - warmup + 1) // thin - 1] = x
    return draws


def sample_chains(
    log_target,
    init_fn,
    chains: int,
    warmup: int,
    iters: int,
    seed: int,
    thin: int = 1,
) -> np.ndarray:
    """Independent chains with derived RNG streams; returns (chains, iters, d)."""
    out = []
    for c in range(chains):
        rng = np.random.default_rng(np.random.SeedSequence([seed, c]))
        x0 = init_fn(rng)
        out.append(run_chain(log_target, x0, warmup, iters, rng, thin=thin))
    return np.stack(out)


# ---------------------------------------------------------------------------
# Convergence diagnostics (rank-normalised split R-hat, bulk ESS)


def _split_chains(draws: np.ndarray) -> np.ndarray:
    c, n = draws.shape
    half = n // 2
    return np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)


def _rank_normalize(draws: np.ndarray) -> np.ndarray:
    flat = draws.reshape(-1)
    ranks = np.argsort(np.argsort(flat, kind="stable"), kind="stable") + 1.0
    # average ranks for ties
    order = np.argsort(flat, kind="stable")
    sorted_vals = flat[order]
    avg = np.empty_like(ranks)
    i = 0
    while i < flat.size:
        j = i
        while j + 1 < flat.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    z = ndtri((avg - 3.0 / 8.0) / (flat.size + 0.25))
    return z.reshape(draws.shape)


def _rhat_basic(draws: np.ndarray) -> float:
    c, n = draws.shape
    chain_means = draws.mean(axis=1)
    chain_vars = draws.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = n * chain_means.var(ddof=1)
    if w <= 0:
        return 1.0
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def rhat(draws: np.ndarray) -> np.ndarray:
    """Rank-normalised split R-hat per parameter; draws (chains, iters, P).

    Degenerate (constant) parameters report 1.0 by convention.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[:, :, None]
    c, n, npar = draws.shape
    if c < 2 or n < 4:
        raise ValueError("need >= 2 chains and >= 4 draws per chain")
    out = np.empty(npar)
    for j in range(npar):
        split = _split_chains(draws[:, :, j])
        if np.allclose(split, split.flat[0]):
            out[j] = 1.0
            continue
        out[j] = _rhat_basic(_rank_normalize(split))
    return out


def _autocov_fft(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    x = x - x.mean(axis=-1, keepdims=True)
    m = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, n=m, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=m, axis=-1)[..., :n].real
    return acov / n


def _ess_one(split: np.ndarray) -> float:
    """Bulk ESS of split chains via Geyer's initial monotone sequence."""
    c, n = split.shape
    acov = _autocov_fft(split)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if c > 1:
        var_plus += split.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(c * n)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    # Geyer: accumulate adjacent-pair sums while positive, forced monotone.
    prev = np.inf
    tau = 0.0
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
        t += 2
    tau = max(2 * tau - 1.0, 1.0 / np.log10(c * n + 10))
    return float(c * n / tau)


def ess(draws: np.ndarray) -> np.ndarray:
    """Bulk effective sample size per parameter (rank-normalised)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[:, :, None]
    c, n, npar = draws.shape
    if c < 2 or n < 4:
        raise ValueError("need >= 2 chains and >= 4 draws per chain")
    out = np.empty(npar)
    for j in range(npar):
        split = _split_chains(draws[:, :, j])
        if np.allclose(split, split.flat[0]):
            out[j] = float(split.size)
            continue
        out[j] = _ess_one(_rank_normalize(split))
    return out


# ---------------------------------------------------------------------------
# Posterior container and the model-fitting front end


@dataclass
class PosteriorSamples:
    """MCMC draws in constrained space with diagnostics.

    ``draws`` has shape (chains, iters, P), columns ordered as ``names``.
    """

    draws: np.ndarray
    names: list[str]
    variant: str
    harmonic: HarmonicSpec
    rhat: np.ndarray = field(default=None)
    ess: np.ndarray = field(default=None)
    warning: bool = False

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def params_at(self, row: np.ndarray) -> ModelParams:
        return params_from_row(row, self.variant, self.harmonic)

    def thin(self, R: int) -> np.ndarray:
        """R rows evenly spaced across the flattened draws."""
        flat = self.flat()
        if R > flat.shape[0]:
            raise ValueError("R exceeds the number of available draws")
        idx = np.linspace(0, flat.shape[0] - 1, R).round().astype(int)
        return flat[idx]


def params_from_row(row: np.ndarray, variant: str, harmonic: HarmonicSpec) -> ModelParams:
    """Constrained parameter row (ordered per param_names) -> ModelParams."""
    K = harmonic.K
    row = np.asarray(row, dtype=float)
    spec = harmonic.replace_coefficients((1.0,) + tuple(row[: 2 * K]))
    tail = row[2 * K :]
    if variant == "M1":
        return ModelParams(spec, (tail[0], tail[0]), (tail[1], tail[1]), (None, None), "M1")
    npsi = _psi_count(variant)
    psi = (
        tail[4] if npsi >= 1 else None,
        tail[5] if npsi >= 2 else None,
    )
    return ModelParams(spec, (tail[0], tail[1]), (tail[2], tail[3]), psi, variant)


def constrained_row(p: ModelParams) -> np.ndarray:
    if p.variant == "M1":
        tail = [p.eta[0], p.mu[0]]
    else:
        tail = [p.eta[0], p.eta[1], p.mu[0], p.mu[1]]
        tail += [x for x in p.psi if x is not None]
    return np.array(list(p.harmonic.coefficients[1:]) + tail)


def default_harmonic(variant: str, K: int = 2, period: float = 24.0) -> HarmonicSpec:
    """Frequency layout per variant: K cycles 1..K per period, none for M1/M2."""
    if variant in ("M1", "M2") or K == 0:
        return HarmonicSpec.flat(period)
    coefs = (1.0,) + (0.0,) * (2 * K)
    return HarmonicSpec(tuple(range(1, K + 1)), coefs, period)


def prior_init(variant: str, harmonic: HarmonicSpec, prior: PriorSpec, rng,
               log_target=None, max_tries: int = 100) -> np.ndarray:
    """Draw an unconstrained start point from the prior, rejecting -inf states."""
    K = harmonic.K
    sd = prior.alpha_sd(K)
    for _ in range(max_tries):
        alphas = rng.normal(0.0, sd, 2 * K)
        n_eta, n_mu = (1, 1) if variant == "M1" else (2, 2)
        etas = rng.gamma(prior.eta_shape, 1.0 / prior.eta_rate, n_eta)
        mus = rng.gamma(prior.mu_shape, 1.0 / prior.mu_rate, n_mu)
        psis = np.exp(rng.normal(prior.log_psi_mean, prior.log_psi_sd,
                                 _psi_count(variant)))
        v = np.concatenate([alphas, np.log(etas), np.log(mus), np.log(psis)])
        if log_target is None or np.isfinite(log_target(v)):
            return v
    raise RuntimeError("could not find a valid initial point from the prior")


def sample_posterior(
    cluster_set: ClusterSet,
    variant: str,
    prior: PriorSpec = PriorSpec(),
    chains: int = 4,
    warmup: int = 1500,
    iters: int = 1000,
    seed: int = 0,
    K: int = 2,
    harmonic: HarmonicSpec | None = None,
    thin: int = 20,
) -> PosteriorSamples:
    """Fit one model variant by adaptive MCMC.

    Draws are returned in constrained space with rank-normalised split R-hat
    and bulk ESS; the warning flag is set when R-hat > 1.01 or ESS < 100 for
    any parameter.
    """
    if len(cluster_set) == 0:
        raise ValueError("empty training set")
    if harmonic is None:
        harmonic = default_harmonic(variant, K)
    if variant == "M1" and harmonic.K != 0:
        raise ValueError("M1 does not admit harmonic terms")
    if variant == "M2" and harmonic.K != 0:
        raise ValueError("M2 does not admit harmonic terms")
    data = ClusterData(cluster_set)
    log_post, _ = make_log_posterior(data, variant, harmonic, prior)
    init = lambda rng: prior_init(variant, harmonic, prior, rng, log_post)
    unc = sample_chains(log_post, init, chains, warmup, iters, seed, thin=thin)
    # map every draw to constrained space
    names = param_names(variant, harmonic.K)
    cons = np.empty_like(unc)
    K2 = 2 * harmonic.K
    cons[:, :, :K2] = unc[:, :, :K2]
    cons[:, :, K2:] = np.exp(unc[:, :, K2:])
    r = rhat(cons)
    e = ess(cons)
    warning = bool(np.any(r > 1.01) or np.any(e < 100))
    return PosteriorSamples(cons, names, variant, harmonic, r, e, warning)


def posterior_to_csv(samples: PosteriorSamples) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["chain", "iter"] + samples.names)
    c, n, _ = samples.draws.shape
    for ci in range(c):
        for it in range(n):
            w.writerow([ci, it] + [repr(float(x)) for x in samples.draws[ci, it]])
    return out.getvalue()


def posterior_from_csv(
    text: str, variant: str, harmonic: HarmonicSpec
) -> PosteriorSamples:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    names = header[2:]
    rows = [(int(r[0]), [float(x) for x in r[2:]]) for r in reader if r]
    chains = max(r[0] for r in rows) + 1
    per = [[] for _ in range(chains)]
    for ci, vals in rows:
        per[ci].append(vals)
    draws = np.array(per)
    samples = PosteriorSamples(draws, names, variant, harmonic)
    samples.rhat = rhat(draws) if chains >= 2 and draws.shape[1] >= 4 else None
    samples.ess = ess(draws) if chains >= 2 and draws.shape[1] >= 4 else None
    return samples
