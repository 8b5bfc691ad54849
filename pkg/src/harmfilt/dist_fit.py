"""Gamma/log-normal fits to squared-distortion variables and 95th percentiles.

Two estimation routes: EF fits parameters from analytical (mean, variance)
pairs via the inverse moment maps; MLF maximizes the sample likelihood.
Percentile estimates take the maximum over both families (conservative)
and report sqrt, since the distortion itself is the square root of the
fitted variable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConvergenceError, ValidationError

log = logging.getLogger(__name__)

_Z95 = float(special.ndtri(0.95))
_LN_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FitParams:
    family: str  # "gamma" | "lognormal"
    provenance: str  # "EF" | "MLF"
    shape: float = 0.0  # gamma alpha
    scale: float = 0.0  # gamma theta
    mu: float = 0.0  # lognormal location
    sigma: float = 0.0  # lognormal spread
    degenerate_at: float | None = None  # point mass when v = 0

    def moments(self) -> tuple[float, float]:
        if self.degenerate_at is not None:
            return self.degenerate_at, 0.0
        if self.family == "gamma":
            return self.shape * self.scale, self.shape * self.scale**2
        m = math.exp(self.mu + 0.5 * self.sigma**2)
        v = (math.exp(self.sigma**2) - 1.0) * m**2
        return m, v


def ef_gamma(m: float, v: float) -> FitParams:
    """Gamma parameters reproducing (m, v) exactly: theta = v/m, alpha = m^2/v."""
    if m <= 0:
        raise ValidationError(f"gamma EF needs positive mean, got {m}")
    if v < 0:
        raise ValidationError("variance must be nonnegative")
    if v == 0:
        return FitParams(family="gamma", provenance="EF", degenerate_at=m)
    return FitParams(family="gamma", provenance="EF", shape=m * m / v, scale=v / m)


def ef_lognormal(m: float, v: float) -> FitParams:
    """Log-normal parameters from the inverse moment map."""
    if m <= 0:
        raise ValidationError(f"lognormal EF needs positive mean, got {m}")
    if v < 0:
        raise ValidationError("variance must be nonnegative")
    if v == 0:
        return FitParams(family="lognormal", provenance="EF", degenerate_at=m)
    mu = math.log(m * m / math.sqrt(v + m * m))
    sigma = math.sqrt(math.log(v / (m * m) + 1.0))
    return FitParams(family="lognormal", provenance="EF", mu=mu, sigma=sigma)


def log_likelihood(samples: np.ndarray, params: FitParams) -> float:
    """Sum of log densities; nonpositive samples are excluded with a count."""
    x = np.asarray(samples, dtype=float)
    bad = int(np.sum(x <= 0))
    if bad:
        log.warning("excluded %d nonpositive samples from likelihood", bad)
        x = x[x > 0]
    if x.size == 0:
        return -math.inf
    if params.degenerate_at is not None:
        return -math.inf
    if params.family == "gamma":
        a, th = params.shape, params.scale
        return float(
            (a - 1.0) * np.sum(np.log(x))
            - np.sum(x) / th
            - x.size * (math.lgamma(a) + a * math.log(th))
        )
    lx = np.log(x)
    mu, sg = params.mu, params.sigma
    return float(
        -np.sum(lx)
        - x.size * (math.log(sg) + _LN_SQRT_2PI)
        - np.sum((lx - mu) ** 2) / (2.0 * sg**2)
    )


def mlf(samples: np.ndarray, family: str, max_iter: int = 100) -> FitParams:
    """Maximum-likelihood fit.

    Log-normal is closed form (mean/population-sd of the logs); gamma uses
    Newton iteration on the digamma stationarity equation starting from the
    Minka initial guess.
    """
    x = np.asarray(samples, dtype=float)
    x = x[x > 0]
    if x.size < 2:
        raise ValidationError("need at least 2 positive samples for MLF")

    if family == "lognormal":
        lx = np.log(x)
        mu = float(np.mean(lx))
        sigma = float(np.std(lx))
        return FitParams(family="lognormal", provenance="MLF", mu=mu, sigma=sigma)

    if family != "gamma":
        raise ValidationError(f"unknown family {family!r}")

    mean = float(np.mean(x))
    s = math.log(mean) - float(np.mean(np.log(x)))
    if s <= 0:
        raise ConvergenceError("gamma MLE degenerate: log-moment gap <= 0")
    a = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(max_iter):
        num = math.log(a) - special.digamma(a) - s
        den = 1.0 / a - special.polygamma(1, a)
        step = num / den
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2.0
        if abs(a_new - a) <= 1e-12 * a:
            a = a_new
            break
        a = a_new
    else:
        raise ConvergenceError("gamma MLE Newton did not converge")
    return FitParams(family="gamma", provenance="MLF", shape=a, scale=mean / a)


def percentile95(params: FitParams) -> float:
    """95th percentile of the fitted (squared-distortion) variable."""
    if params.degenerate_at is not None:
        return params.degenerate_at
    if params.family == "gamma":
        return params.scale * float(special.gammaincinv(params.shape, 0.95))
    return math.exp(params.mu + params.sigma * _Z95)


@dataclass(frozen=True)
class PercentileEstimate:
    """Conservative p95 of distortion (not squared) per bus and column."""

    columns: list[str]
    p95: np.ndarray  # N x n_columns, fraction of rated voltage
    winner: np.ndarray  # object array of family names


def vhd_p95(means: np.ndarray, variances: np.ndarray, columns: list[str]) -> PercentileEstimate:
    """Cell-wise max of gamma/log-normal EF percentiles, square-rooted."""
    means = np.atleast_2d(means)
    variances = np.atleast_2d(variances)
    n, m = means.shape
    p95 = np.zeros((n, m))
    winner = np.empty((n, m), dtype=object)
    for i in range(n):
        for j in range(m):
            mean, var = means[i, j], variances[i, j]
            if mean <= 0:
                p95[i, j] = 0.0
                winner[i, j] = "degenerate"
                continue
            if var <= 0:
                p95[i, j] = math.sqrt(mean)
                winner[i, j] = "degenerate"
                continue
            pg = percentile95(ef_gamma(mean, var))
            pl = percentile95(ef_lognormal(mean, var))
            if pg >= pl:
                p95[i, j] = math.sqrt(pg)
                winner[i, j] = "gamma"
            else:
                p95[i, j] = math.sqrt(pl)
                winner[i, j] = "lognormal"
    return PercentileEstimate(columns=list(columns), p95=p95, winner=winner)
