"""Monte Carlo sampling oracle for the stochastic harmonic model.

Sampling is organized in fixed-size chunks; the uniforms for every
(harmonic, bus, chunk) triple come from an independent Philox stream keyed
by (seed, harmonic index, bus position, chunk index).  Draw sequences are
therefore independent of the worker count and of which thread processes a
chunk, and partial reductions are combined in chunk order, so summary
statistics are bit-identical across 1..N threads and across runs.

Beta variates use the inverse CDF (regularized incomplete beta) so the
mapping uniform -> alpha is reproducible across platforms.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ValidationError
from .fundamental_pf import solve_power_flow
from .grid_model import StudyCase
from .harmonic_matrix import InjectionBasis, build_injection_basis
from .scenario import BASE_SCENARIO, PlacementScenario

log = logging.getLogger(__name__)

CHUNK = 1 << 16
_KEEP_CELL_BUDGET = 3 * 10**7


def worker_count(requested: int | None = None) -> int:
    if requested is not None and requested > 0:
        return requested
    env = os.environ.get("HARMFILT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring malformed HARMFILT_THREADS=%r", env)
    return min(4, os.cpu_count() or 1)


def sample_injections(
    study: StudyCase,
    seed: int,
    chunk_index: int,
    count: int,
    h: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (alpha, phi) arrays of shape (count, n_injectors) for one chunk.

    alpha is the scaled-beta harmonic current ratio, phi the uniform phase.
    Streams are keyed so that any worker regenerates identical values.
    """
    inj = study.injector_indices()
    h_idx = study.harmonics.index(h)
    alpha = np.empty((count, len(inj)))
    phi = np.empty((count, len(inj)))
    loads_by_idx = {study.case.index_of(ld.bus): ld for ld in study.loads.values()}
    for col, bus_pos in enumerate(inj):
        ss = np.random.SeedSequence(
            entropy=seed, spawn_key=(h_idx, int(bus_pos), chunk_index)
        )
        gen = np.random.Generator(np.random.Philox(ss))
        u = gen.random(2 * count)
        dist = loads_by_idx[bus_pos].spectrum[h]
        if dist.deterministic:
            alpha[:, col] = dist.mean
        else:
            a, b = dist.beta_shape()
            alpha[:, col] = dist.support_max * special.betaincinv(a, b, u[:count])
        phi[:, col] = 2.0 * np.pi * u[count:]
    return alpha, phi


@dataclass
class McsRun:
    """Empirical summary of one Monte Carlo run."""

    scenario_id: str
    n_samples: int
    seed: int
    harmonics: tuple[int, ...]
    mean_ihd2: dict[int, np.ndarray]
    var_ihd2: dict[int, np.ndarray]
    mean_thd2: np.ndarray
    var_thd2: np.ndarray
    s_ihd: dict[int, np.ndarray]  # per-sample index per harmonic
    s_thd: np.ndarray  # per-sample total index
    v2_samples: dict[object, np.ndarray] = field(default_factory=dict)
    # keys: harmonic order or "thd"; values (n_samples, N) when kept

    def p95_ihd2(self, h: int) -> np.ndarray:
        return np.percentile(self.v2_samples[h], 95.0, axis=0)

    def p95_thd2(self) -> np.ndarray:
        return np.percentile(self.v2_samples["thd"], 95.0, axis=0)

    def e_sthd(self) -> float:
        return float(np.mean(self.s_thd))

    def var_sthd(self) -> float:
        return float(np.var(self.s_thd))


def _chunk_worker(args):
    (study, seed, chunk_index, count, uc_by_h, keep) = args
    n = study.n
    n_h = len(study.harmonics)
    sum_v2 = np.zeros((n_h, n))
    sum_v4 = np.zeros((n_h, n))
    s_ihd = np.empty((n_h, count))
    v2_kept: dict[int, np.ndarray] = {}
    thd2 = np.zeros((count, n))
    for hi, h in enumerate(study.harmonics):
        alpha, phi = sample_injections(study, seed, chunk_index, count, h)
        src = alpha * np.exp(1j * phi)
        v = src @ uc_by_h[h].T  # (count, N)
        v2 = v.real**2 + v.imag**2
        sum_v2[hi] = v2.sum(axis=0)
        sum_v4[hi] = (v2 * v2).sum(axis=0)
        s_ihd[hi] = v2.mean(axis=1)
        thd2 += v2
        if keep:
            v2_kept[h] = v2
    sum_thd2 = thd2.sum(axis=0)
    sum_thd4 = (thd2 * thd2).sum(axis=0)
    s_thd = thd2.mean(axis=1)
    if keep:
        v2_kept["thd"] = thd2
    return (sum_v2, sum_v4, sum_thd2, sum_thd4, s_ihd, s_thd, v2_kept)


def run_mcs(
    study: StudyCase,
    scenario: PlacementScenario = BASE_SCENARIO,
    n_samples: int = 10**6,
    seed: int = 1,
    basis: InjectionBasis | None = None,
    keep_samples: str = "auto",
    threads: int | None = None,
) -> McsRun:
    """Sample the phasor-sum distortions for one scenario.

    ``keep_samples``: "auto" keeps full per-bus V^2 arrays when the total
    cell count fits the memory budget, "all" forces keeping, "none" keeps
    only per-sample indices and running moments.
    """
    if n_samples <= 0:
        raise ValidationError("sample count must be positive")
    if basis is None:
        pf = solve_power_flow(study, scenario)
        basis = build_injection_basis(study, scenario, pf)

    n = study.n
    harmonics = study.harmonics
    keep = keep_samples == "all" or (
        keep_samples == "auto" and n_samples * n * (len(harmonics) + 1) <= _KEEP_CELL_BUDGET
    )
    uc_by_h = {h: basis.complex_basis(h) for h in harmonics}

    chunks = []
    start = 0
    idx = 0
    while start < n_samples:
        count = min(CHUNK, n_samples - start)
        chunks.append((idx, start, count))
        idx += 1
        start += count

    n_h = len(harmonics)
    sum_v2 = np.zeros((n_h, n))
    sum_v4 = np.zeros((n_h, n))
    sum_thd2 = np.zeros(n)
    sum_thd4 = np.zeros(n)
    s_ihd = {h: np.empty(n_samples) for h in harmonics}
    s_thd = np.empty(n_samples)
    v2_samples: dict[object, np.ndarray] = {}
    if keep:
        for h in harmonics:
            v2_samples[h] = np.empty((n_samples, n))
        v2_samples["thd"] = np.empty((n_samples, n))

    jobs = [(study, seed, ci, count, uc_by_h, keep) for ci, _, count in chunks]
    workers = worker_count(threads)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_worker, jobs))
    else:
        results = [_chunk_worker(j) for j in jobs]

    # reduce strictly in chunk order for bit-identical statistics
    for (ci, start, count), res in zip(chunks, results):
        c_v2, c_v4, c_thd2, c_thd4, c_sihd, c_sthd, v2_kept = res
        sum_v2 += c_v2
        sum_v4 += c_v4
        sum_thd2 += c_thd2
        sum_thd4 += c_thd4
        sl = slice(start, start + count)
        for hi, h in enumerate(harmonics):
            s_ihd[h][sl] = c_sihd[hi]
            if keep:
                v2_samples[h][sl] = v2_kept[h]
        s_thd[sl] = c_sthd
        if keep:
            v2_samples["thd"][sl] = v2_kept["thd"]

    inv_n = 1.0 / n_samples
    mean_ihd2 = {}
    var_ihd2 = {}
    for hi, h in enumerate(harmonics):
        mean_ihd2[h] = sum_v2[hi] * inv_n
        var_ihd2[h] = np.maximum(sum_v4[hi] * inv_n - mean_ihd2[h] ** 2, 0.0)
    mean_thd2 = sum_thd2 * inv_n
    var_thd2 = np.maximum(sum_thd4 * inv_n - mean_thd2**2, 0.0)

    log.info(
        "MCS %s: %d samples, seed %d, %d chunks, %d workers",
        scenario.scenario_id, n_samples, seed, len(chunks), workers,
    )
    return McsRun(
        scenario_id=scenario.scenario_id,
        n_samples=n_samples,
        seed=seed,
        harmonics=harmonics,
        mean_ihd2=mean_ihd2,
        var_ihd2=var_ihd2,
        mean_thd2=mean_thd2,
        var_thd2=var_thd2,
        s_ihd=s_ihd,
        s_thd=s_thd,
        v2_samples=v2_samples,
    )


@dataclass(frozen=True)
class RiskResult:
    """Empirical CDFs of the index ratio treated/base and P[ratio > 1]."""

    ratios: dict[object, np.ndarray]  # harmonic order or "total" -> sorted
    risk: dict[object, float]

    def cdf(self, key) -> tuple[np.ndarray, np.ndarray]:
        values = self.ratios[key]
        probs = np.arange(1, len(values) + 1) / len(values)
        return values, probs


def risk_cdf(base: McsRun, treated: McsRun) -> RiskResult:
    """Paired-sample risk of the system index increasing vs. the base case."""
    if base.seed != treated.seed or base.n_samples != treated.n_samples:
        raise ValidationError(
            "risk comparison requires paired runs (same seed and sample count)"
        )
    if base.harmonics != treated.harmonics:
        raise ValidationError("risk comparison requires the same harmonic set")

    def ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.empty_like(num)
        zero = den == 0
        np.divide(num, den, out=out, where=~zero)
        out[zero & (num == 0)] = 1.0
        out[zero & (num != 0)] = math.inf
        return out

    ratios: dict[object, np.ndarray] = {}
    risk: dict[object, float] = {}
    for h in base.harmonics:
        r = ratio(treated.s_ihd[h], base.s_ihd[h])
        ratios[h] = np.sort(r)
        risk[h] = float(np.mean(r > 1.0))
    r_tot = ratio(treated.s_thd, base.s_thd)
    ratios["total"] = np.sort(r_tot)
    risk["total"] = float(np.mean(r_tot > 1.0))
    return RiskResult(ratios=ratios, risk=risk)
