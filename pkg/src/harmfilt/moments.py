"""Analytical moments of squared harmonic distortions and system indices.

Given the injection basis (U, theta) and the raw moments mu2 = E[alpha^2],
mu4 = E[alpha^4] of the per-bus harmonic current ratios, with phase angles
independent and uniform on [0, 2pi):

    E[V2_k]   = sum_j U_kj^2 mu2_j
    Var[V2_k] = E[V2_k]^2 + sum_j U_kj^4 (mu4_j - 2 mu2_j^2)

For the system-wide index S = mean_k V2_k the variance couples buses
through W = Uc^H Uc (Uc = U o exp(i*theta)):

    N^2 Var[S] = q^T M' q + sum_{i != j} mu2_i mu2_j |W_ij|^2 - (sum_k E[V2_k])^2

with q the column-sum vector of U o2 and M' the fourth/second moment
matrix (mu4 on the diagonal, outer(mu2, mu2) off it).  The second term is
the Hermitian-conjugation reading of the trace form; it is gated by the
Monte Carlo oracle in the test suite.

Negative variances from floating cancellation are clamped at zero and
counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid_model import AlphaDistribution, StudyCase
from .harmonic_matrix import InjectionBasis

log = logging.getLogger(__name__)


def alpha_moments(dist: AlphaDistribution) -> tuple[float, float]:
    """Exact raw 2nd and 4th moments of the scaled beta ratio."""
    if dist.deterministic:
        return dist.mean**2, dist.mean**4
    a, b = dist.beta_shape()
    s = dist.support_max

    def raw(k: int) -> float:
        value = 1.0
        for r in range(k):
            value *= (a + r) / (a + b + r)
        return value

    return s**2 * raw(2), s**4 * raw(4)


@dataclass(frozen=True)
class AlphaMoments:
    """Per-bus raw moments (zero at buses without nonlinear load)."""

    mu2: np.ndarray
    mu4: np.ndarray

    def __post_init__(self):
        if np.any(self.mu2 < 0) or np.any(self.mu4 < 0):
            raise ValueError("raw moments must be nonnegative")
        active = self.mu2 > 0
        if np.any(self.mu4[active] < self.mu2[active] ** 2 * (1 - 1e-12)):
            raise ValueError("mu4 >= mu2^2 violated (Jensen)")

    def m_diag(self) -> np.ndarray:
        return np.diag(self.mu2)

    def m_prime(self) -> np.ndarray:
        mp = np.outer(self.mu2, self.mu2)
        np.fill_diagonal(mp, self.mu4)
        return mp


def build_alpha_moments(study: StudyCase, h: int) -> AlphaMoments:
    try:
        return study._alpha_moments[h]
    except AttributeError:
        object.__setattr__(study, "_alpha_moments", {})
    except KeyError:
        pass
    n = study.n
    mu2 = np.zeros(n)
    mu4 = np.zeros(n)
    for load in study.loads.values():
        if load.k_e <= 0 or load.s_total <= 0:
            continue
        k = study.case.index_of(load.bus)
        mu2[k], mu4[k] = alpha_moments(load.spectrum[h])
    result = AlphaMoments(mu2=mu2, mu4=mu4)
    study._alpha_moments[h] = result
    return result


def expected_vihd2(basis: InjectionBasis, moments: AlphaMoments, h: int) -> np.ndarray:
    """Per-bus expected squared individual harmonic distortion."""
    u2 = basis.u[h] ** 2
    return u2 @ moments.mu2


def var_vihd2(basis: InjectionBasis, moments: AlphaMoments, h: int):
    """Per-bus variance of squared IHD, clamped at >= 0.

    Returns (variance vector, clamp count).
    """
    u2 = basis.u[h] ** 2
    u4 = u2 * u2
    ev2 = u2 @ moments.mu2
    var = ev2**2 + u4 @ (moments.mu4 - 2.0 * moments.mu2**2)
    clamped = int(np.sum(var < 0))
    if clamped:
        log.debug("clamped %d negative IHD variances at h=%d", clamped, h)
        var = np.maximum(var, 0.0)
    return var, clamped


def vthd2_stats(per_h_mean: dict[int, np.ndarray], per_h_var: dict[int, np.ndarray]):
    """THD^2 mean/variance vectors: sums over the studied harmonic set."""
    mean = sum(per_h_mean.values())
    var = sum(per_h_var.values())
    return mean, var


def sihd_stats(basis: InjectionBasis, moments: AlphaMoments, h: int):
    """Mean and variance of the per-harmonic system-wide index.

    Returns (E[S], Var[S], clamp count).
    """
    n = basis.u[h].shape[0]
    inj = basis.injector_idx
    mu2 = moments.mu2[inj]
    mu4 = moments.mu4[inj]

    u2 = basis.u_cols(h) ** 2
    ev2 = u2 @ mu2
    e_s = float(np.sum(ev2)) / n

    q = u2.sum(axis=0)  # column sums of U o2
    term_a = float((q @ mu2) ** 2 + np.sum(q**2 * (mu4 - mu2**2)))

    uc = basis.complex_basis(h)
    w = uc.conj().T @ uc
    w_abs2 = np.abs(w) ** 2
    term_b = float(mu2 @ w_abs2 @ mu2 - np.sum(mu2**2 * np.diag(w_abs2)))

    var_n2 = term_a + term_b - float(np.sum(ev2)) ** 2
    clamped = 0
    if var_n2 < 0:
        clamped = 1
        log.debug("clamped negative Var[S_IHD] (%.3e) at h=%d", var_n2, h)
        var_n2 = 0.0
    return e_s, var_n2 / n**2, clamped


def sthd_stats(per_h: dict[int, tuple[float, float]]) -> tuple[float, float]:
    """Total-index moments: sums of the per-harmonic contributions."""
    e = sum(v[0] for v in per_h.values())
    var = sum(v[1] for v in per_h.values())
    return e, var


@dataclass(frozen=True)
class DistortionStats:
    """Moments of squared distortions for one scenario."""

    scenario_id: str
    harmonics: tuple[int, ...]
    mean_ihd2: dict[int, np.ndarray]
    var_ihd2: dict[int, np.ndarray]
    mean_thd2: np.ndarray
    var_thd2: np.ndarray
    s_ihd: dict[int, tuple[float, float]]
    e_sthd: float
    var_sthd: float
    n_var_clamped: int = 0

    def moment_matrix(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """(means, variances, column labels) with one column per studied
        harmonic plus a trailing THD column."""
        labels = [f"h{h}" for h in self.harmonics] + ["THD"]
        means = np.column_stack(
            [self.mean_ihd2[h] for h in self.harmonics] + [self.mean_thd2]
        )
        variances = np.column_stack(
            [self.var_ihd2[h] for h in self.harmonics] + [self.var_thd2]
        )
        return means, variances, labels


def distortion_stats(study: StudyCase, basis: InjectionBasis) -> DistortionStats:
    """Full analytical moment pass for one scenario."""
    mean_ihd2: dict[int, np.ndarray] = {}
    var_ihd2: dict[int, np.ndarray] = {}
    s_ihd: dict[int, tuple[float, float]] = {}
    clamped = 0
    for h in study.harmonics:
        mom = build_alpha_moments(study, h)
        mean_ihd2[h] = expected_vihd2(basis, mom, h)
        var_h, c1 = var_vihd2(basis, mom, h)
        var_ihd2[h] = var_h
        e_s, var_s, c2 = sihd_stats(basis, mom, h)
        s_ihd[h] = (e_s, var_s)
        clamped += c1 + c2
    mean_thd2, var_thd2 = vthd2_stats(mean_ihd2, var_ihd2)
    e_sthd, var_sthd = sthd_stats(s_ihd)
    return DistortionStats(
        scenario_id=basis.scenario_id,
        harmonics=study.harmonics,
        mean_ihd2=mean_ihd2,
        var_ihd2=var_ihd2,
        mean_thd2=mean_thd2,
        var_thd2=var_thd2,
        s_ihd=s_ihd,
        e_sthd=e_sthd,
        var_sthd=var_sthd,
        n_var_clamped=clamped,
    )


def expected_sthd_only(study: StudyCase, basis: InjectionBasis) -> float:
    """Cheap objective evaluation: E[S_THD] without variances or fits."""
    total = 0.0
    n = study.n
    for h in study.harmonics:
        mom = build_alpha_moments(study, h)
        u2 = basis.u_cols(h) ** 2
        total += float(np.sum(u2 @ mom.mu2[basis.injector_idx])) / n
    return total
