"""Newton-Raphson fundamental power flow and operating-constraint checks.

Scenario filters enter the solve as constant shunt admittance
Y = j*Q/V_rated^2 (the passive device at rated frequency), replacing any
existing shunt capacitor at the same bus.  Loads are constant PQ.
Flat start, 1e-8 pu mismatch tolerance, damped full-Newton steps.

The Jacobian is solved densely below ``_DENSE_LIMIT`` buses (faster for
study-sized cases) and via sparse LU above it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .grid_model import NetworkCase, StudyCase
from .scenario import BASE_SCENARIO, PlacementScenario

log = logging.getLogger(__name__)

_DENSE_LIMIT = 600


@dataclass(frozen=True)
class PFSolution:
    v: np.ndarray  # complex bus voltage, pu
    i_from: np.ndarray  # complex branch current at the from end, pu
    i_to: np.ndarray  # complex branch current at the to end, pu
    iterations: int
    max_mismatch: float

    @property
    def v_mag(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def v_angle(self) -> np.ndarray:
        return np.angle(self.v)


@dataclass(frozen=True)
class Violation:
    kind: str  # "bus_voltage" | "branch_current"
    element: int  # bus id or branch index
    value: float
    limit: float


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[Violation, ...]

    @property
    def feasible(self) -> bool:
        return not self.violations


def filter_shunts(study: StudyCase, scenario: PlacementScenario) -> dict[int, complex]:
    """Per-bus shunt admittance of scenario filters at fundamental (pu)."""
    out: dict[int, complex] = {}
    for f in scenario.filters:
        # Zf(1) = -j*Zb exactly, so Y = +j*Q_pu at rated voltage
        out[f.bus] = 1j * f.q_mvar / study.case.mva_base
    return out


def branch_arrays(case: NetworkCase):
    """Vectorized branch data (cached on the case, which is immutable)."""
    try:
        return case._branch_arrays
    except AttributeError:
        pass
    nb = len(case.branches)
    fi = np.empty(nb, dtype=int)
    ti = np.empty(nb, dtype=int)
    r = np.empty(nb)
    x = np.empty(nb)
    bc = np.empty(nb)
    tap = np.empty(nb, dtype=complex)
    rating = np.empty(nb)
    for k, br in enumerate(case.branches):
        fi[k] = case.index_of(br.from_bus)
        ti[k] = case.index_of(br.to_bus)
        r[k] = br.r
        x[k] = br.x
        bc[k] = br.b_charging
        tap[k] = br.tap_ratio * np.exp(1j * np.deg2rad(br.phase_shift_deg))
        rating[k] = br.current_rating
    arrays = (fi, ti, r, x, bc, tap, rating)
    object.__setattr__(case, "_branch_arrays", arrays)
    return arrays


def _branch_admittances(case: NetworkCase):
    """(yff, yft, ytf, ytt) per branch for the fundamental pi model."""
    fi, ti, r, x, bc, tap, _ = branch_arrays(case)
    ys = 1.0 / (r + 1j * x)
    ysh = 0.5j * bc
    yff = (ys + ysh) / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    ytt = ys + ysh
    return yff, yft, ytf, ytt


def build_fundamental_y(
    study: StudyCase, scenario: PlacementScenario
) -> sp.csr_matrix:
    case = study.case
    n = case.n
    fi, ti, *_ = branch_arrays(case)
    yff, yft, ytf, ytt = _branch_admittances(case)
    rows = np.concatenate([fi, fi, ti, ti])
    cols = np.concatenate([fi, ti, fi, ti])
    vals = np.concatenate([yff, yft, ytf, ytt])

    shunts = np.array(
        [complex(b.shunt_g, b.shunt_b) for b in case.buses], dtype=complex
    )
    extra = filter_shunts(study, scenario)
    for bus_id, y_f in extra.items():
        i = case.index_of(bus_id)
        if shunts[i].imag > 0:  # the filter replaces an existing capacitor
            shunts[i] = complex(shunts[i].real, 0.0)
        shunts[i] += y_f
    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([cols, np.arange(n)])
    vals = np.concatenate([vals, shunts])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _mismatch(v, y_dense, p_sched, q_sched, pvpq, pq):
    s = v * np.conj(y_dense @ v)
    return np.concatenate([p_sched[pvpq] - s.real[pvpq], q_sched[pq] - s.imag[pq]])


def solve_power_flow(
    study: StudyCase, scenario: PlacementScenario = BASE_SCENARIO
) -> PFSolution:
    """Full Newton solve in polar coordinates; raises on divergence."""
    case = study.case
    cfg = study.config
    n = case.n
    y_sparse = build_fundamental_y(study, scenario)
    dense = n <= _DENSE_LIMIT
    y = y_sparse.toarray() if dense else y_sparse

    kinds = np.array([b.kind for b in case.buses])
    slack = int(np.flatnonzero(kinds == "slack")[0])
    pv = np.flatnonzero(kinds == "PV")
    pq = np.flatnonzero(kinds == "PQ")
    pvpq = np.sort(np.concatenate([pv, pq]))
    npvpq, npq = len(pvpq), len(pq)

    base = case.mva_base
    p_sched = np.array([(b.p_gen - b.p_load) / base for b in case.buses])
    q_sched = np.array([(b.q_gen - b.q_load) / base for b in case.buses])

    vm = np.ones(n)
    va = np.zeros(n)
    setpoints = np.array([b.v_setpoint for b in case.buses])
    vm[pv] = setpoints[pv]
    vm[slack] = setpoints[slack]

    jrows = np.concatenate([pvpq, pq + n])  # selector for mismatch rows
    mismatch = np.inf
    it = 0
    for it in range(1, cfg.pf_max_iter + 1):
        v = vm * np.exp(1j * va)
        i_bus = y @ v
        s_calc = v * np.conj(i_bus)
        f = np.concatenate(
            [p_sched[pvpq] - s_calc.real[pvpq], q_sched[pq] - s_calc.imag[pq]]
        )
        mismatch = float(np.max(np.abs(f))) if f.size else 0.0
        if mismatch < cfg.pf_tol:
            break
        if not np.isfinite(mismatch):
            raise ConvergenceError("power flow diverged (non-finite mismatch)")

        if dense:
            # dS/dVa = j*diag(V) (diag(I) - Y diag(V))^*
            # dS/dVm = diag(V/|V|) diag(I)^* + diag(V) (Y diag(V/|V|))^*
            yv = y * v[np.newaxis, :]
            core = -yv
            core[np.arange(n), np.arange(n)] += i_bus
            ds_dva = 1j * v[:, np.newaxis] * np.conj(core)
            yvn = y * (v / vm)[np.newaxis, :]
            ds_dvm = v[:, np.newaxis] * np.conj(yvn)
            ds_dvm[np.arange(n), np.arange(n)] += (v / vm) * np.conj(i_bus)
            jac = np.empty((npvpq + npq, npvpq + npq))
            jac[:npvpq, :npvpq] = ds_dva[np.ix_(pvpq, pvpq)].real
            jac[:npvpq, npvpq:] = ds_dvm[np.ix_(pvpq, pq)].real
            jac[npvpq:, :npvpq] = ds_dva[np.ix_(pq, pvpq)].imag
            jac[npvpq:, npvpq:] = ds_dvm[np.ix_(pq, pq)].imag
            try:
                dx = np.linalg.solve(jac, f)
            except np.linalg.LinAlgError as exc:
                raise ConvergenceError(f"singular power-flow Jacobian: {exc}") from exc
        else:
            dv = sp.diags(v)
            dvn = sp.diags(v / vm)
            di = sp.diags(i_bus)
            ds_dva = (1j * dv @ (di - y @ dv).conj()).tocsr()
            ds_dvm = (dvn @ di.conj() + dv @ (y @ dvn).conj()).tocsr()
            jac = sp.bmat(
                [
                    [ds_dva[pvpq][:, pvpq].real, ds_dvm[pvpq][:, pq].real],
                    [ds_dva[pq][:, pvpq].imag, ds_dvm[pq][:, pq].imag],
                ],
                format="csc",
            )
            try:
                dx = spla.spsolve(jac, f)
            except RuntimeError as exc:
                raise ConvergenceError(f"singular power-flow Jacobian: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise ConvergenceError("singular power-flow Jacobian")

        # damped update: halve the step while it worsens the residual
        step = 1.0
        for _ in range(6):
            va_try = va.copy()
            vm_try = vm.copy()
            va_try[pvpq] += step * dx[:npvpq]
            vm_try[pq] += step * dx[npvpq:npvpq + npq]
            v_try = vm_try * np.exp(1j * va_try)
            f_try = _mismatch(v_try, y, p_sched, q_sched, pvpq, pq)
            trial = float(np.max(np.abs(f_try))) if f_try.size else 0.0
            if trial < mismatch or not np.isfinite(mismatch):
                break
            step *= 0.5
        va, vm = va_try, vm_try
    else:
        raise ConvergenceError(
            f"power flow did not converge in {cfg.pf_max_iter} iterations "
            f"(mismatch {mismatch:.3e} pu)"
        )

    v = vm * np.exp(1j * va)
    fi, ti, *_ = branch_arrays(case)
    yff, yft, ytf, ytt = _branch_admittances(case)
    i_from = yff * v[fi] + yft * v[ti]
    i_to = ytf * v[fi] + ytt * v[ti]
    log.debug("power flow converged in %d iterations, mismatch %.2e", it, mismatch)
    return PFSolution(v=v, i_from=i_from, i_to=i_to, iterations=it,
                      max_mismatch=mismatch)


def check_constraints(sol: PFSolution, study: StudyCase) -> ConstraintReport:
    """Over-voltage and branch-current screening of a solved state."""
    case = study.case
    violations: list[Violation] = []
    vm = sol.v_mag
    for b in case.buses:
        limit = b.v_max
        value = vm[case.index_of(b.id)]
        if value > limit + 1e-9:
            violations.append(Violation("bus_voltage", b.id, float(value), limit))
    i_mag = np.maximum(np.abs(sol.i_from), np.abs(sol.i_to))
    ratings = branch_arrays(case)[6]
    for k in np.flatnonzero(i_mag > ratings + 1e-9):
        violations.append(
            Violation("branch_current", int(k), float(i_mag[k]), float(ratings[k]))
        )
    return ConstraintReport(tuple(violations))


def load_currents(study: StudyCase, sol: PFSolution) -> np.ndarray:
    """Complex fundamental current drawn by the total load at every bus (pu)."""
    case = study.case
    s = np.array(
        [complex(b.p_load, b.q_load) / case.mva_base for b in case.buses]
    )
    return np.conj(s / sol.v)
