"""Distributions and special functions shared by the model and inference layers.

Everything here is a pure function of its arguments. Densities are handled in
log space throughout; the only unlogged probabilities are returned marginals.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_2PI = np.log(2.0 * np.pi)

# Gauss-Hermite rule used for Gaussian expectations of log(Phi); fixed order
# keeps objective and gradient evaluations mutually consistent.
_GH_ORDER = 40
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(_GH_ORDER)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(np.pi)


def _as_float_array(x):
    arr = np.asarray(x, dtype=float)
    return arr


@dataclass(frozen=True)
class GammaParams:
    """Shape/rate parameters of a Gamma distribution (arrays broadcast together)."""

    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        a, b = np.broadcast_arrays(_as_float_array(self.shape), _as_float_array(self.rate))
        object.__setattr__(self, "shape", a.copy())
        object.__setattr__(self, "rate", b.copy())
        if not np.all(self.shape > 0):
            raise ValueError("Gamma shape must be positive")
        if not np.all(self.rate > 0):
            raise ValueError("Gamma rate must be positive")


@dataclass(frozen=True)
class TruncatedNormalParams:
    """Location/scale parameters of a normal truncated to [0, inf).

    ``scale_sq`` is the variance of the untruncated Gaussian, not its
    standard deviation.
    """

    location: np.ndarray
    scale_sq: np.ndarray

    def __post_init__(self):
        loc, sc = np.broadcast_arrays(
            _as_float_array(self.location), _as_float_array(self.scale_sq)
        )
        object.__setattr__(self, "location", loc.copy())
        object.__setattr__(self, "scale_sq", sc.copy())
        if not np.all(np.isfinite(self.location)):
            raise ValueError("truncated-normal location must be finite")
        if not np.all(self.scale_sq > 0):
            raise ValueError("truncated-normal scale_sq must be positive")


@dataclass(frozen=True)
class NormalParams:
    """Mean/variance parameters of a Gaussian (``variance``, not std dev)."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean, var = np.broadcast_arrays(
            _as_float_array(self.mean), _as_float_array(self.variance)
        )
        object.__setattr__(self, "mean", mean.copy())
        object.__setattr__(self, "variance", var.copy())
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("normal mean must be finite")
        if not np.all(self.variance > 0):
            raise ValueError("normal variance must be positive")


def std_normal_cdf(x):
    """Standard normal CDF. Rejects non-finite input."""
    x = _as_float_array(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("std_normal_cdf requires finite input")
    return special.ndtr(x)


def std_normal_quantile(p):
    """Inverse standard normal CDF for p strictly inside (0, 1)."""
    p = _as_float_array(p)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ValueError("std_normal_quantile requires 0 < p < 1")
    return special.ndtri(p)


def log_std_normal_cdf(x):
    """log(Phi(x)), stable far into the lower tail."""
    return special.log_ndtr(_as_float_array(x))


def std_normal_pdf(x):
    x = _as_float_array(x)
    return np.exp(-0.5 * x * x - 0.5 * LOG_2PI)


def pdf_over_cdf(h):
    """phi(h) / Phi(h) without cancellation for h far below zero.

    Uses the scaled complementary error function on the negative branch;
    the plain ratio is fine on the positive one.
    """
    h = _as_float_array(h)
    out = np.empty_like(h)
    neg = h < 0.0
    # erfcx(-h/sqrt(2)) stays representable for any negative h
    out_neg = np.sqrt(2.0 / np.pi) / special.erfcx(-h[neg] / np.sqrt(2.0))
    out[neg] = out_neg
    pos = ~neg
    out[pos] = std_normal_pdf(h[pos]) / special.ndtr(h[pos])
    return out


def trunc_norm_moments(location, scale_sq):
    """Mean, variance and entropy of N(location, scale_sq) truncated to [0, inf).

    Stable down to location / sqrt(scale_sq) around -38, where nearly all
    prior mass sits below the truncation point.
    """
    location = _as_float_array(location)
    scale_sq = _as_float_array(scale_sq)
    if not np.all(scale_sq > 0):
        raise ValueError("scale_sq must be positive")
    location, scale_sq = np.broadcast_arrays(location, scale_sq)
    sd = np.sqrt(scale_sq)
    h = location / sd
    ratio = pdf_over_cdf(h)
    shifted = h + ratio  # mean / sd, computed before multiplying to keep precision
    mean = sd * shifted
    var = scale_sq * np.maximum(1.0 - ratio * shifted, np.finfo(float).tiny)
    log_mass = special.log_ndtr(h)
    entropy = 0.5 * (LOG_2PI + 1.0) + 0.5 * np.log(scale_sq) + log_mass - 0.5 * h * ratio
    return mean, var, entropy


def trunc_norm_second_moment(location, scale_sq):
    mean, var, _ = trunc_norm_moments(location, scale_sq)
    return var + mean * mean


def gamma_expectations(params: GammaParams):
    """E[x], E[log x] and entropy of Gam(shape, rate)."""
    a, b = params.shape, params.rate
    mean = a / b
    mean_log = special.digamma(a) - np.log(b)
    entropy = a - np.log(b) + special.gammaln(a) + (1.0 - a) * special.digamma(a)
    return mean, mean_log, entropy


def normal_entropy(variance):
    return 0.5 * (LOG_2PI + 1.0) + 0.5 * np.log(_as_float_array(variance))


def normal_log_pdf(x, mean, variance):
    x = _as_float_array(x)
    return -0.5 * (LOG_2PI + np.log(variance) + (x - mean) ** 2 / variance)


def pi_bar_log_prior(pi_bar, beta_a, n_sets):
    """Log prior density of the probit-transformed set activation level.

    Density: Beta(Phi(pi_bar) | beta_a/n_sets, 1) * N(pi_bar | 0, 1), so the
    log is (a - 1) log Phi(pi_bar) + log a + log N(pi_bar | 0, 1) with
    a = beta_a / n_sets.
    """
    if beta_a <= 0:
        raise ValueError("beta_a must be positive")
    if n_sets < 1:
        raise ValueError("n_sets must be >= 1")
    pi_bar = _as_float_array(pi_bar)
    a = beta_a / n_sets
    return (a - 1.0) * special.log_ndtr(pi_bar) + np.log(a) + normal_log_pdf(pi_bar, 0.0, 1.0)


def expected_log_ndtr(mean, variance):
    """Gauss-Hermite estimate of E[log Phi(x)] for x ~ N(mean, variance)."""
    mean = _as_float_array(mean)
    variance = _as_float_array(variance)
    z = mean[..., None] + np.sqrt(2.0 * variance)[..., None] * _GH_NODES
    return special.log_ndtr(z) @ _GH_WEIGHTS


def expected_log_ndtr_grad(mean, variance):
    """Gradient of :func:`expected_log_ndtr` w.r.t. mean and variance.

    Differentiates the quadrature itself, so finite differences of the
    quadrature value match these gradients to rounding error.
    """
    mean = _as_float_array(mean)
    variance = _as_float_array(variance)
    root = np.sqrt(2.0 * variance)[..., None]
    z = mean[..., None] + root * _GH_NODES
    ratio = pdf_over_cdf(z)
    d_mean = ratio @ _GH_WEIGHTS
    d_var = (ratio * _GH_NODES) @ _GH_WEIGHTS / np.sqrt(2.0 * variance)
    return d_mean, d_var
