"""Scenario analysis pipeline: power flow -> basis -> moments -> percentiles.

Ties the fundamental solve, harmonic transfer assembly, analytical moment
engine and distribution fits together, and screens the estimated 95th
percentiles against the voltage distortion limit tables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dist_fit import PercentileEstimate, vhd_p95
from .fundamental_pf import PFSolution, solve_power_flow
from .grid_model import StudyCase
from .harmonic_matrix import (
    InjectionBasis,
    build_injection_basis,
    injector_impedance_columns,
)
from .moments import DistortionStats, distortion_stats, expected_sthd_only
from .scenario import BASE_SCENARIO, PlacementScenario

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LimitViolation:
    bus: int
    column: str  # "h5", "THD", ...
    value_pct: float
    limit_pct: float


@dataclass(frozen=True)
class ScenarioAnalysis:
    scenario: PlacementScenario
    pf: PFSolution
    basis: InjectionBasis
    stats: DistortionStats
    p95: PercentileEstimate
    violations: tuple[LimitViolation, ...]

    @property
    def e_sthd(self) -> float:
        return self.stats.e_sthd

    @property
    def satisfies_limits(self) -> bool:
        return not self.violations


def standard_violations(
    study: StudyCase, p95: PercentileEstimate
) -> tuple[LimitViolation, ...]:
    """Compare the p95 distortion matrix against the voltage limit table."""
    limits = study.config.limits
    out: list[LimitViolation] = []
    for i, bus in enumerate(study.case.buses):
        row = limits.voltage_class(bus.base_kv)
        for j, col in enumerate(p95.columns):
            value_pct = 100.0 * p95.p95[i, j]
            limit_pct = row.thd_pct if col == "THD" else row.ihd_pct
            if value_pct > limit_pct + 1e-12:
                out.append(LimitViolation(bus.id, col, value_pct, limit_pct))
    return tuple(out)


def analyze_scenario(
    study: StudyCase,
    scenario: PlacementScenario = BASE_SCENARIO,
    pf: PFSolution | None = None,
) -> ScenarioAnalysis:
    """Full analytical pass for a scenario (moments, fits, limit check)."""
    if pf is None:
        pf = solve_power_flow(study, scenario)
    basis = build_injection_basis(study, scenario, pf)
    stats = distortion_stats(study, basis)
    means, variances, labels = stats.moment_matrix()
    p95 = vhd_p95(means, variances, labels)
    violations = standard_violations(study, p95)
    return ScenarioAnalysis(
        scenario=scenario,
        pf=pf,
        basis=basis,
        stats=stats,
        p95=p95,
        violations=violations,
    )


def expected_index(
    study: StudyCase,
    scenario: PlacementScenario,
    pf: PFSolution | None = None,
) -> float:
    """Light-weight E[S_THD] evaluation used inside the search loops."""
    if pf is None:
        pf = solve_power_flow(study, scenario)
    z_cols = injector_impedance_columns(study, scenario)
    basis = build_injection_basis(study, scenario, pf, z_columns=z_cols)
    return expected_sthd_only(study, basis)
