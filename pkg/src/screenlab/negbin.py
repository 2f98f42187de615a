r"""Negative binomial helpers in the mean/dispersion parameterisation.

A count with mean :math:`\mu` and dispersion :math:`\phi` has variance
:math:`\mu + \mu^2/\phi`. In scipy's terms this is ``nbinom(n=phi, p=phi/(phi+mu))``.
"""

import numpy as np
from scipy.special import gammaln, digamma


def logpmf(k, mean, dispersion):
    k = np.asarray(k, dtype=float)
    mean = np.asarray(mean, dtype=float)
    phi = np.asarray(dispersion, dtype=float)
    log_denom = np.log(phi + mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            gammaln(k + phi)
            - gammaln(phi)
            - gammaln(k + 1.0)
            + phi * (np.log(phi) - log_denom)
            + np.where(k > 0, k * (np.log(mean) - log_denom), 0.0)
        )
    return out


def score(k, mean, dispersion):
    """Derivatives of ``logpmf`` w.r.t. log-mean and log-dispersion."""
    k = np.asarray(k, dtype=float)
    mu = np.asarray(mean, dtype=float)
    phi = np.asarray(dispersion, dtype=float)
    ratio = (k + phi) / (phi + mu)
    d_logmean = k - mu * ratio
    d_logdisp = phi * (digamma(k + phi) - digamma(phi) + np.log(phi / (phi + mu)) + 1.0 - ratio)
    return d_logmean, d_logdisp


def sample(mean, dispersion, rng: np.random.Generator):
    """Gamma-Poisson draw; ``dispersion`` need not be an integer."""
    mean = np.asarray(mean, dtype=float)
    lam = rng.gamma(shape=dispersion, scale=mean / dispersion)
    return rng.poisson(lam)


def tail(tau: int, mean, dispersion):
    """Exact Pr(Y > tau) by summing the pmf.

    Sums the lower part ``0..tau`` directly. Where that part carries most of
    the mass the upper tail is summed explicitly instead, so small tails stay
    accurate in relative terms rather than cancelling against one.
    """
    if tau < 0:
        raise ValueError("tau must be a nonnegative integer")
    scalar = np.ndim(mean) == 0
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    phi = np.broadcast_to(np.asarray(dispersion, dtype=float), mean.shape)
    out = np.empty_like(mean)
    ks = np.arange(tau + 1)
    for idx in np.ndindex(mean.shape):
        mu, ph = mean[idx], phi[idx]
        if mu <= 0:
            out[idx] = 0.0
            continue
        lower = np.exp(logpmf(ks, mu, ph)).sum()
        if lower < 0.5:
            out[idx] = max(0.0, 1.0 - lower)
            continue
        upper, start = 0.0, tau + 1
        # Past the mode each chunk is smaller than the last; stop once a
        # chunk no longer changes the running sum.
        while True:
            chunk = np.exp(logpmf(np.arange(start, start + 256), mu, ph)).sum()
            upper += chunk
            start += 256
            if chunk <= 1e-17 * upper or upper == 0.0:
                break
        out[idx] = upper
    return float(out[0]) if scalar else out


def cdf_terms(tau: int, mean, dispersion):
    """pmf values for ``0..tau`` as a ``(..., tau + 1)`` array."""
    ks = np.arange(tau + 1)
    mean = np.asarray(mean, dtype=float)[..., None]
    return np.exp(logpmf(ks, mean, dispersion))
