"""Per-harmonic network assembly, transfer impedances, and injection basis.

At harmonic order h the network is reassembled from scratch: branch series
impedance r + j*h*x, charging and shunts scaled j*h*b, machines as
subtransient shunt reactances, and every aggregate load absorbed as its
Norton shunt (linear RL behind the transformer reactance).  Nonlinear
injections are transferred to the system side with the complex divider
Z_L/(Z_L + j*h*X_TR).

The injection basis packs, per harmonic, the magnitude matrix U (per unit
of rated voltage) and phase matrix theta that drive both the analytical
moment engine and the Monte Carlo sampler:

    V_IHD,k = | sum_j U_kj * alpha_j * exp(i*(theta_kj + phi_j)) |

Columns of U are zero for buses without nonlinear load.
"""

from __future__ import annotations

import cmath
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularityError, ValidationError
from .fundamental_pf import PFSolution, branch_arrays, load_currents
from .grid_model import AggregateLoad, StudyCase
from .scenario import BASE_SCENARIO, PlacementScenario

log = logging.getLogger(__name__)


def linear_load_impedance(load: AggregateLoad, h: float, mva_base: float) -> complex | None:
    """Impedance of the linear load portion at order h (pu), None if absent.

    Parallel R-L sized from the (1 - k_e) share at rated voltage:
    R = 1/P_pu, X_L = 1/Q_pu.  A net-capacitive share (Q < 0) contributes a
    capacitor branch instead of the inductor.
    """
    p_pu, q_pu = load.linear_pq_pu(mva_base)
    y = _linear_admittance(np.array([p_pu]), np.array([q_pu]), h)[0]
    if y == 0:
        return None
    return 1.0 / y


def _linear_admittance(p_lin: np.ndarray, q_lin: np.ndarray, h: float) -> np.ndarray:
    """Vectorized admittance of the parallel R/L (or R/C) linear share."""
    return p_lin + np.where(q_lin >= 0, -1j * q_lin / h, -1j * h * q_lin)


def load_arrays(study: StudyCase):
    """(bus positions, p_lin, q_lin, x_tr_sys) for all aggregate loads."""
    try:
        return study._load_arrays
    except AttributeError:
        pass
    case = study.case
    loads = sorted(study.loads.values(), key=lambda ld: case.index_of(ld.bus))
    idx = np.array([case.index_of(ld.bus) for ld in loads], dtype=int)
    p_lin = np.empty(len(loads))
    q_lin = np.empty(len(loads))
    x_tr = np.empty(len(loads))
    for i, ld in enumerate(loads):
        p_lin[i], q_lin[i] = ld.linear_pq_pu(case.mva_base)
        x_tr[i] = ld.x_tr_system(case.mva_base)
    arrays = (idx, p_lin, q_lin, x_tr)
    object.__setattr__(study, "_load_arrays", arrays)
    return arrays


def _static_stamps(study: StudyCase):
    """Scenario-independent assembly pieces, cached on the study case."""
    try:
        return study._static_stamps
    except AttributeError:
        pass
    case = study.case
    n = case.n
    fi, ti, r, x, bc, tap, _ = branch_arrays(case)
    rows = np.concatenate([fi, fi, ti, ti, np.arange(n)])
    cols = np.concatenate([fi, ti, fi, ti, np.arange(n)])
    shunt_g = np.array([b.shunt_g for b in case.buses])
    shunt_b = np.array([b.shunt_b for b in case.buses])
    gen_mask = np.array([b.kind in ("PV", "slack") for b in case.buses])
    stamps = (rows, cols, fi, ti, r, x, bc, tap, shunt_g, shunt_b, gen_mask)
    object.__setattr__(study, "_static_stamps", stamps)
    return stamps


def build_harmonic_admittance(
    study: StudyCase,
    scenario: PlacementScenario,
    h: float,
    include_loads: bool = True,
) -> sp.csc_matrix:
    """Assemble the complex N x N admittance matrix at harmonic order h."""
    if h < 2:
        raise ValidationError(f"harmonic order {h} must be >= 2")
    case = study.case
    cfg = study.config
    n = case.n
    (rows, cols, fi, ti, r, x, bc, tap, shunt_g, shunt_b, gen_mask) = _static_stamps(study)

    if np.any((r == 0.0) & (x == 0.0)):
        bad = int(np.flatnonzero((r == 0.0) & (x == 0.0))[0])
        br = case.branches[bad]
        raise ValidationError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")

    r_eff = r * np.sqrt(h) if cfg.skin_effect else r
    ys = 1.0 / (r_eff + 1j * h * x)
    ysh = 0.5j * h * bc
    yff = (ys + ysh) / (tap * np.conj(tap)).real
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    ytt = ys + ysh

    diag = np.zeros(n, dtype=complex)
    filter_buses = {f.bus for f in scenario.filters}
    sb = shunt_b.copy()
    if filter_buses:
        replace = np.array(
            [b.id in filter_buses and b.shunt_b > 0 for b in case.buses]
        )
        sb[replace] = 0.0  # the filter replaces the capacitor bank
    diag += shunt_g + 1j * h * sb
    diag[gen_mask] += 1.0 / (1j * h * cfg.gen_harmonic_x_pu)

    if include_loads and study.loads:
        idx, p_lin, q_lin, x_tr = load_arrays(study)
        y_l = _linear_admittance(p_lin, q_lin, h)
        present = y_l != 0
        z = np.zeros(len(idx), dtype=complex)
        z[present] = 1.0 / y_l[present] + 1j * h * x_tr[present]
        if np.any(z[present] == 0):
            bad = int(np.flatnonzero(present & (z == 0))[0])
            raise SingularityError(
                f"degenerate load branch at bus {case.buses[idx[bad]].id} "
                f"(Z_L + jhX_TR = 0)"
            )
        y_load = np.zeros(len(idx), dtype=complex)
        y_load[present] = 1.0 / z[present]
        np.add.at(diag, idx, y_load)

    z_base_sys = {b.id: b.base_kv**2 / case.mva_base for b in case.buses}
    for filt in scenario.designs(study):
        i = case.index_of(filt.bus)
        z_pu = filt.impedance_pu(h, z_base_sys[filt.bus])
        diag[i] += 1.0 / z_pu

    vals = np.concatenate([yff, yft, ytf, ytt, diag])
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


@dataclass(frozen=True)
class HarmonicImpedanceSet:
    """Dense transfer-impedance matrices per studied harmonic order."""

    scenario_id: str
    z: dict[int, np.ndarray]  # h -> complex N x N

    def __getitem__(self, h: int) -> np.ndarray:
        return self.z[h]


def build_impedance_set(
    study: StudyCase, scenario: PlacementScenario = BASE_SCENARIO
) -> HarmonicImpedanceSet:
    """Invert Y at every studied harmonic via sparse LU with N solves."""
    z = {}
    n = study.n
    eye = np.eye(n, dtype=complex)
    for h in study.harmonics:
        y = build_harmonic_admittance(study, scenario, h)
        z[h] = _lu_solve(y, eye, h)
    return HarmonicImpedanceSet(scenario_id=scenario.scenario_id, z=z)


def _lu_solve(y: sp.csc_matrix, rhs: np.ndarray, h: float) -> np.ndarray:
    try:
        lu = spla.splu(y)
    except RuntimeError as exc:
        raise SingularityError(f"Y^(h={h}) is singular: {exc}") from exc
    return lu.solve(rhs)


def transfer_multiplier(load: AggregateLoad, h: float, mva_base: float) -> complex:
    """Complex current divider Z_L/(Z_L + j*h*X_TR) onto the system bus."""
    z_l = linear_load_impedance(load, h, mva_base)
    if z_l is None:
        return 1.0 + 0.0j
    denom = z_l + 1j * h * load.x_tr_system(mva_base)
    if denom == 0:
        raise SingularityError(
            f"resonant-degenerate load at bus {load.bus}: Z_L + jhX_TR = 0"
        )
    return z_l / denom


def transfer_injection(
    load: AggregateLoad,
    h: float,
    pf: PFSolution,
    study: StudyCase,
) -> tuple[complex, float, float]:
    """Eq.-level transfer of the nonlinear injection to the system bus.

    Returns (multiplier, |I1_nl|, angle(I1)) where |I1_nl| is the k_e share
    of the bus fundamental load current from the solved power flow.
    """
    case = study.case
    i_total = load_currents(study, pf)[case.index_of(load.bus)]
    mult = transfer_multiplier(load, h, case.mva_base)
    return mult, load.k_e * abs(i_total), cmath.phase(i_total)


@dataclass(frozen=True)
class InjectionBasis:
    """U/theta matrices per harmonic plus injector bookkeeping.

    u[h] and theta[h] are full N x N with zero columns at buses without
    nonlinear load; injector_idx lists the nonzero column positions.
    """

    scenario_id: str
    u: dict[int, np.ndarray]
    theta: dict[int, np.ndarray]
    injector_idx: np.ndarray
    i1_mag: np.ndarray  # |I^(1)| of the nonlinear share per bus

    def u_cols(self, h: int) -> np.ndarray:
        return self.u[h][:, self.injector_idx]

    def theta_cols(self, h: int) -> np.ndarray:
        return self.theta[h][:, self.injector_idx]

    def complex_basis(self, h: int) -> np.ndarray:
        """U_c = U o exp(i*theta), restricted to injector columns."""
        return self.u_cols(h) * np.exp(1j * self.theta_cols(h))


def build_injection_basis(
    study: StudyCase,
    scenario: PlacementScenario,
    pf: PFSolution,
    z_columns: dict[int, np.ndarray] | None = None,
) -> InjectionBasis:
    """Assemble the scaled transfer columns for every studied harmonic.

    ``z_columns`` may carry precomputed Z[:, injectors] per harmonic (as
    produced by :func:`injector_impedance_columns`); otherwise they are
    built here.
    """
    case = study.case
    n = case.n
    inj_idx = study.injector_indices()
    if z_columns is None:
        z_columns = injector_impedance_columns(study, scenario)

    l_idx, p_lin, q_lin, x_tr = load_arrays(study)
    pos_in_loads = {k: i for i, k in enumerate(l_idx)}
    sel = np.array([pos_in_loads[k] for k in inj_idx], dtype=int)
    k_e = np.array(
        [study.loads[case.buses[k].id].k_e for k in inj_idx]
    )

    i_total = load_currents(study, pf)
    i_inj = i_total[inj_idx]
    i1_mag_inj = k_e * np.abs(i_inj)
    i1_ang = np.angle(i_inj)
    i1_mag_full = np.zeros(n)
    i1_mag_full[inj_idx] = i1_mag_inj

    u: dict[int, np.ndarray] = {}
    theta: dict[int, np.ndarray] = {}
    for h in study.harmonics:
        y_l = _linear_admittance(p_lin[sel], q_lin[sel], h)
        z_l_inv_ok = y_l != 0
        mult = np.ones(len(inj_idx), dtype=complex)
        if np.any(z_l_inv_ok):
            z_l = np.empty(len(inj_idx), dtype=complex)
            z_l[z_l_inv_ok] = 1.0 / y_l[z_l_inv_ok]
            denom = z_l[z_l_inv_ok] + 1j * h * x_tr[sel][z_l_inv_ok]
            if np.any(denom == 0):
                raise SingularityError("resonant-degenerate load (Z_L + jhX_TR = 0)")
            mult[z_l_inv_ok] = z_l[z_l_inv_ok] / denom
        scale = mult * i1_mag_inj * np.exp(1j * h * i1_ang)
        g = z_columns[h] * scale[np.newaxis, :]
        u_h = np.zeros((n, n))
        th_h = np.zeros((n, n))
        u_h[:, inj_idx] = np.abs(g)
        th_h[:, inj_idx] = np.angle(g)
        u[h] = u_h
        theta[h] = th_h

    return InjectionBasis(
        scenario_id=scenario.scenario_id,
        u=u,
        theta=theta,
        injector_idx=inj_idx,
        i1_mag=i1_mag_full,
    )


def injector_impedance_columns(
    study: StudyCase, scenario: PlacementScenario
) -> dict[int, np.ndarray]:
    """Z[:, j] for injector buses j only, per harmonic (cheaper than full Z)."""
    inj_idx = study.injector_indices()
    n = study.n
    rhs = np.zeros((n, len(inj_idx)), dtype=complex)
    rhs[inj_idx, np.arange(len(inj_idx))] = 1.0
    out = {}
    for h in study.harmonics:
        y = build_harmonic_admittance(study, scenario, h)
        out[h] = _lu_solve(y, rhs, h) if len(inj_idx) else np.zeros((n, 0), complex)
    return out
