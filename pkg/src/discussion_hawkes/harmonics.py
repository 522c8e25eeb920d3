"""Periodic activity function built from sinusoidal basis functions.

The activity function alpha(t) modulates event intensities over the day.
It is a truncated Fourier series with a fixed constant term of 1, so its
mean over one period is exactly 1. Closed forms are provided for the
exponentially weighted integrals W (used by the compensator) and the plain
integrals S (used by the immigrant arrival model).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class HarmonicSpec:
    """Sinusoidal basis on a fixed period.

    ``cycles`` are positive integers giving oscillations per period, so the
    angular frequencies are 2*pi*x/period. ``coefficients`` has length
    2K + 1 laid out as [1, a_sin1, a_cos1, ..., a_sinK, a_cosK]; the leading
    entry is pinned to 1 (the identifiability normalisation).
    """

    cycles: tuple[int, ...] = ()
    coefficients: tuple[float, ...] = (1.0,)
    period: float = 24.0

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if any((not float(x).is_integer()) or x < 1 for x in self.cycles):
            raise ValueError("cycles must be positive integers")
        if len(self.coefficients) != 2 * len(self.cycles) + 1:
            raise ValueError(
                f"need {2 * len(self.cycles) + 1} coefficients for K={len(self.cycles)}, "
                f"got {len(self.coefficients)}"
            )
        if self.coefficients[0] != 1.0:
            raise ValueError("leading coefficient is fixed to 1")

    @property
    def K(self) -> int:
        return len(self.cycles)

    @property
    def frequencies(self) -> np.ndarray:
        """Angular frequencies, radians per hour."""
        return TWO_PI * np.asarray(self.cycles, dtype=float) / self.period

    def replace_coefficients(self, coefficients) -> "HarmonicSpec":
        coefficients = tuple(float(c) for c in coefficients)
        return HarmonicSpec(self.cycles, coefficients, self.period)

    def to_json_dict(self) -> dict:
        return {
            "period_hours": self.period,
            "cycles_per_period": list(self.cycles),
            "coefficients": list(self.coefficients),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "HarmonicSpec":
        return cls(
            cycles=tuple(int(x) for x in d.get("cycles_per_period", [])),
            coefficients=tuple(float(c) for c in d.get("coefficients", [1.0])),
            period=float(d.get("period_hours", 24.0)),
        )

    @classmethod
    def flat(cls, period: float = 24.0) -> "HarmonicSpec":
        """K = 0 spec, alpha(t) identically 1."""
        return cls((), (1.0,), period)


def basis_matrix(spec: HarmonicSpec, t) -> np.ndarray:
    """Basis values [1, sin(w1 t), cos(w1 t), ...] for an array of times.

    Returns shape (len(t), 2K + 1). Complex-safe (used by the complex-step
    gradient of the likelihood).
    """
    t = np.atleast_1d(np.asarray(t))
    out = np.empty((t.shape[0], 2 * spec.K + 1), dtype=t.dtype if np.iscomplexobj(t) else float)
    out[:, 0] = 1.0
    for k, w in enumerate(spec.frequencies):
        out[:, 2 * k + 1] = np.sin(w * t)
        out[:, 2 * k + 2] = np.cos(w * t)
    return out


def basis_eval(spec: HarmonicSpec, t: float) -> np.ndarray:
    """Basis vector of length 2K + 1 at a single time."""
    return basis_matrix(spec, t)[0]


def activity_eval(spec: HarmonicSpec, t):
    """alpha(t) = coefficients . basis(t). Scalar in, scalar out; array in, array out.

    May be negative for extreme coefficients; validity is the caller's concern.
    """
    coef = np.asarray(spec.coefficients)
    vals = basis_matrix(spec, t) @ coef
    return vals[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else vals


def amplitude_phase(spec: HarmonicSpec) -> list[tuple[float, float]]:
    """Polar form (A_k, phi_k) with alpha(t) = 1 + sum A_k cos(w_k t + phi_k)."""
    out = []
    for k in range(spec.K):
        a_sin = spec.coefficients[2 * k + 1]
        a_cos = spec.coefficients[2 * k + 2]
        amp = float(np.hypot(a_sin, a_cos))
        phase = float(np.arctan2(-a_sin, a_cos)) if amp > 0 else 0.0
        out.append((amp, phase))
    return out


def activity_upper_bound(spec: HarmonicSpec) -> float:
    """K0 = 1 + sum of harmonic amplitudes; guaranteed >= alpha(t) everywhere."""
    return 1.0 + sum(a for a, _ in amplitude_phase(spec))


def weighted_integral_matrix(spec: HarmonicSpec, t, a, eta) -> np.ndarray:
    """W_k(t, a, eta) = int_t^a s_k(u) eta exp(-eta (u - t)) du, closed form.

    ``t`` and ``a`` broadcast; returns shape (n, 2K + 1). Complex-safe in eta
    and in the times.
    """
    t = np.atleast_1d(np.asarray(t))
    a = np.broadcast_to(np.atleast_1d(np.asarray(a)), t.shape)
    if np.any(np.real(a) < np.real(t)):
        raise ValueError("window end a must satisfy a >= t")
    dtype = complex if (np.iscomplexobj(t) or np.iscomplexobj(np.asarray(eta))) else float
    out = np.empty((t.shape[0], 2 * spec.K + 1), dtype=dtype)
    decay = np.exp(eta * (t - a))
    out[:, 0] = 1.0 - decay
    for k, w in enumerate(spec.frequencies):
        norm = eta / (eta**2 + w**2)
        sin_a, cos_a = np.sin(a * w), np.cos(a * w)
        sin_t, cos_t = np.sin(t * w), np.cos(t * w)
        out[:, 2 * k + 1] = norm * (
            -decay * (eta * sin_a + w * cos_a) + eta * sin_t + w * cos_t
        )
        out[:, 2 * k + 2] = norm * (
            decay * (w * sin_a - eta * cos_a) + eta * cos_t - w * sin_t
        )
    return out


def weighted_integral(spec: HarmonicSpec, t: float, a: float, eta: float) -> np.ndarray:
    """Single-point W vector; see weighted_integral_matrix."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return weighted_integral_matrix(spec, t, a, eta)[0]


def immigrant_integral(spec: HarmonicSpec, a0: float) -> np.ndarray:
    """S_k(a0) = int_0^{a0} s_k(u) du, closed form."""
    if a0 <= 0:
        raise ValueError("a0 must be positive")
    out = np.empty(2 * spec.K + 1)
    out[0] = a0
    for k, w in enumerate(spec.frequencies):
        out[2 * k + 1] = (1.0 - np.cos(a0 * w)) / w
        out[2 * k + 2] = np.sin(a0 * w) / w
    return out


def spec_to_json(spec: HarmonicSpec) -> str:
    return json.dumps(spec.to_json_dict())


def spec_from_json(s: str) -> HarmonicSpec:
    return HarmonicSpec.from_json_dict(json.loads(s))
