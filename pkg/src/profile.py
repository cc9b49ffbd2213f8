"""
CyclingLab Cycling Profile

The universal period-1 profile P(x), as a lattice sum of A and as a
Fourier series with complex-Gamma coefficients, together with the raw
double sums S~ and S^ of the Laplace-type evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

# Lanczos approximation, g = 7
_LANCZOS_G = 7.0
_LANCZOS_COEFFS = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# exp() overflows just above 709
_EXP_CAP = 700.0

# Lattice window in units of 1/lambdaT: the left tail dies double-exponentially,
# the right tail like exp(-2y); 20 keeps it below 1e-17.
_LEFT_REACH = 3.5
_RIGHT_REACH = 20.0

# -log of the Fourier tail mass to keep
_FOURIER_TAIL = 37.0


# =============================================================================
# PARAMETERS
# =============================================================================

@dataclass(frozen=True)
class CyclingParams:
    """The only parameter of the profile: the product lambda T."""
    lambdaT: float

    def __post_init__(self) -> None:
        if not self.lambdaT > 0:
            raise ValueError(f"lambdaT must be positive, got {self.lambdaT}")


@dataclass(frozen=True)
class SumParams:
    """Arguments of the finite sum S~(n, eta, t); sigma = exp(-eta)."""
    n: int
    eta: float
    t: float
    gamma0: float
    gamma_t: float
    theta0: float
    theta_bar: float
    lambdaT: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")

    @property
    def sigma(self) -> float:
        return math.exp(-self.eta)

    @classmethod
    def from_rate(cls, spec, rate, t: float, eta: float | None = None) -> "SumParams":
        """Sum parameters of a model at time t; n = floor(t/T), eta = |log sigma| by default."""
        from .variances import gamma_t, theta_bar

        return cls(
            n=int(math.floor(t / spec.period)),
            eta=abs(math.log(spec.sigma)) if eta is None else eta,
            t=t,
            gamma0=rate.gamma0,
            gamma_t=float(gamma_t(spec, rate, t)),
            theta0=rate.theta0,
            theta_bar=float(theta_bar(spec, rate, t)),
            lambdaT=spec.lambdaT,
        )


# =============================================================================
# A AND B
# =============================================================================

def A_func(x: ArrayLike) -> np.ndarray:
    """A(x) = exp(-2x - exp(-2x)/2) / 2, exactly 0 once the double exponential underflows."""
    u = -2.0 * np.asarray(x, dtype=float)
    w = np.exp(np.minimum(u, _EXP_CAP))
    return 0.5 * np.exp(u - 0.5 * w)


def B_func(x: ArrayLike) -> np.ndarray:
    """B(x) = exp(-exp(-2x)/2)."""
    u = -2.0 * np.asarray(x, dtype=float)
    return np.exp(-0.5 * np.exp(np.minimum(u, _EXP_CAP)))


# =============================================================================
# PROFILE
# =============================================================================

def profile_sum(p: CyclingParams, x: ArrayLike) -> np.ndarray:
    """
    P(x) = sum over integers l of A(lambdaT (l - x)).

    Each x is split into floor and fraction, so the window of l is the
    same for every point and large |x| loses no accuracy.
    """
    x = np.asarray(x, dtype=float)
    frac = x - np.floor(x)
    lt = p.lambdaT
    k = np.arange(math.floor(-_LEFT_REACH / lt) - 1, math.ceil(_RIGHT_REACH / lt) + 2)
    terms = A_func(lt * (k - frac[..., None]))
    return terms.sum(axis=-1)


def log_gamma(z: ArrayLike) -> np.ndarray:
    """
    Complex log-Gamma by the Lanczos approximation (g=7, 9 terms).

    Only exp() of the result is meaningful; the imaginary part is not
    reduced to the principal branch. Reflection is used for Re z < 1/2.
    """
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape, dtype=complex)
    left = z.real < 0.5
    if np.any(left):
        zl = z[left]
        out[left] = math.log(math.pi) - np.log(np.sin(np.pi * zl)) - log_gamma(1.0 - zl)
    if np.any(~left):
        zr = z[~left] - 1.0
        series = _LANCZOS_COEFFS[0] + sum(
            _LANCZOS_COEFFS[i] / (zr + i) for i in range(1, _LANCZOS_COEFFS.size)
        )
        tt = zr + _LANCZOS_G + 0.5
        out[~left] = _HALF_LOG_2PI + (zr + 0.5) * np.log(tt) - tt + np.log(series)
    return out


def complex_gamma(z: ArrayLike) -> np.ndarray:
    return np.exp(log_gamma(z))


def fourier_coefficient(p: CyclingParams, q: ArrayLike) -> np.ndarray:
    """P^(q) = 2^(-i pi q/lambdaT) Gamma(1 - i pi q/lambdaT) / (2 lambdaT)."""
    y = np.pi * np.asarray(q, dtype=float) / p.lambdaT
    log_coeff = -math.log(2.0 * p.lambdaT) - 1j * y * math.log(2.0) + log_gamma(1.0 - 1j * y)
    return np.exp(log_coeff)


def fourier_terms(p: CyclingParams) -> int:
    """Highest harmonic kept: |P^(q)| ~ exp(-pi^2 q / 2 lambdaT)."""
    return math.ceil(2.0 * p.lambdaT / math.pi ** 2 * _FOURIER_TAIL) + 5


def profile_fourier(p: CyclingParams, x: ArrayLike) -> np.ndarray:
    """P(x) = P^(0) + 2 Re sum_{q >= 1} P^(q) exp(2 pi i q x)."""
    x = np.asarray(x, dtype=float)
    q = np.arange(1, fourier_terms(p) + 1)
    coeffs = fourier_coefficient(p, q)
    frac = x - np.floor(x)
    phases = np.exp(2j * np.pi * frac[..., None] * q)
    return 1.0 / (2.0 * p.lambdaT) + 2.0 * (phases @ coeffs).real


# =============================================================================
# DOUBLE SUMS
# =============================================================================

def S_tilde(sp: SumParams) -> float:
    """S~ = sum_{l=0}^{n-1} A(l lambdaT - eta + theta_bar) B((n - l) lambdaT - eta + theta0)."""
    ell = np.arange(sp.n)
    lt = sp.lambdaT
    a = A_func(ell * lt - sp.eta + sp.theta_bar)
    b = B_func((sp.n - ell) * lt - sp.eta + sp.theta0)
    return float(np.dot(a, b))


def S_hat(p: CyclingParams, eta: ArrayLike, theta_t: ArrayLike) -> np.ndarray:
    """Bilateral sum over l of A(l lambdaT - eta + theta(t)), i.e. P((eta - theta)/lambdaT)."""
    x = (np.asarray(eta, dtype=float) - np.asarray(theta_t, dtype=float)) / p.lambdaT
    return profile_sum(p, x)


def laplace_sum(n: int, sigma: float, gamma0: float, gamma_t: float, lambdaT: float) -> float:
    """
    S(n, sigma, t) summed over the period index k = 1..n.

    Algebraically equal to sigma^2 S~(n, |log sigma|, t).
    """
    k = np.arange(1, n + 1)
    inv = 0.5 / sigma ** 2
    expo = (
        -2.0 * (n - k) * lambdaT
        - inv * (gamma0 * np.exp(-2.0 * k * lambdaT) + gamma_t * np.exp(-2.0 * (n - k) * lambdaT))
    )
    return float(0.5 * gamma_t * np.exp(expo).sum())
