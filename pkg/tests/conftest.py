import numpy as np
import pytest

from discussion_hawkes.harmonics import HarmonicSpec
from discussion_hawkes.likelihood import ModelParams
from discussion_hawkes.simulate import simulate_dataset


def daily_coefficients(A1: float = 0.5, A2: float = 0.25, peak: float = 10.0):
    """Two-harmonic activity coefficients with both components peaking at `peak`."""
    w = 2.0 * np.pi / 24.0
    p1, p2 = w * peak, 2.0 * w * peak
    return (1.0, A1 * np.sin(p1), A1 * np.cos(p1), A2 * np.sin(p2), A2 * np.cos(p2))


def reference_m4_params() -> ModelParams:
    """Dispersion model with two daily harmonics at plausible discussion-tree values."""
    spec = HarmonicSpec((1, 2), daily_coefficients())
    return ModelParams(spec, (0.25, 0.34), (0.65, 0.65), (1.15, 6.99), "M4")


def random_params(rng, variant="M4", K=2) -> ModelParams:
    if variant in ("M1", "M2") or K == 0:
        spec = HarmonicSpec.flat()
    else:
        coefs = [1.0]
        for _ in range(K):
            amp = rng.uniform(0.05, 0.3)
            ph = rng.uniform(0, 2 * np.pi)
            coefs += [amp * np.sin(ph), amp * np.cos(ph)]
        spec = HarmonicSpec(tuple(range(1, K + 1)), tuple(coefs))
    eta = tuple(rng.uniform(0.1, 0.6, 2))
    mu = tuple(rng.uniform(0.3, 0.8, 2))
    if variant == "M1":
        return ModelParams(spec, (eta[0], eta[0]), (mu[0], mu[0]), (None, None), "M1")
    if variant in ("M2", "M3"):
        return ModelParams(spec, eta, mu, (None, None), variant)
    psi = tuple(rng.uniform(0.8, 6.0, 2))
    if variant == "M5":
        psi = (psi[0], None)
    return ModelParams(spec, eta, mu, psi, variant)


def random_cluster(rng, max_extra: int = 10, window: float = 48.0):
    """A small random tree satisfying the cluster invariants."""
    n = 1 + rng.integers(0, max_extra + 1)
    t0 = rng.uniform(0, 24)
    times = [t0]
    parents = [0]
    for _ in range(n - 1):
        p = rng.integers(0, len(times)) + 1
        lo = times[p - 1]
        times.append(rng.uniform(lo + 1e-6, t0 + window - 1e-6))
        parents.append(p)
    order = np.argsort(times)
    remap = {0: 0}
    for new, old in enumerate(order):
        remap[old + 1] = new + 1
    from discussion_hawkes.trees import Cluster

    return Cluster(
        np.array(times)[order],
        np.array([remap[parents[o]] for o in order]),
        window_end=t0 + window,
    )


@pytest.fixture(scope="session")
def m4_params():
    return reference_m4_params()


@pytest.fixture(scope="session")
def small_dataset(m4_params):
    rng = np.random.default_rng(12)
    seeds = np.sort(rng.uniform(0, 24 * 10, 120))
    return simulate_dataset(31, m4_params, seeds)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
