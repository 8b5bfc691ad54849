"""Fundamental-frequency network case and stochastic study configuration.

The network comes from an IEEE CDF file; :func:`attach_harmonic_config`
then decorates every load bus with an aggregate harmonic load: a
nonlinear-fraction ``k_e`` current injector behind a step-rated transformer
reactance, in parallel with the remaining linear load.  Harmonic current
magnitudes are beta-distributed per the spectrum catalog row selected by
the bus short-circuit ratio; phase angles are uniform on [0, 2pi).

A :class:`StudyCase` is immutable after construction and safe to share
across analysis workers.
"""

from __future__ import annotations

import json
import logging
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import cdf
from .errors import CdfParseError, ValidationError
from .limits import DEFAULT_LIMITS, StandardLimits, alpha_spectrum_pct

log = logging.getLogger(__name__)

_KIND_BY_TYPE = {0: "PQ", 1: "PQ", 2: "PV", 3: "slack"}


@dataclass(frozen=True)
class Bus:
    id: int
    name: str
    base_kv: float
    kind: str  # slack | PV | PQ
    p_load: float  # MW
    q_load: float  # MVAR
    p_gen: float  # MW
    q_gen: float  # MVAR
    shunt_g: float  # pu
    shunt_b: float  # pu
    v_setpoint: float  # pu, PV/slack
    v_max: float = 1.05  # pu

    @property
    def s_load_mva(self) -> float:
        return math.hypot(self.p_load, self.q_load)


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float  # pu
    x: float  # pu
    b_charging: float  # pu, total line charging
    tap_ratio: float = 1.0
    phase_shift_deg: float = 0.0
    current_rating: float = 999.0  # pu
    is_transformer: bool = False


@dataclass(frozen=True)
class NetworkCase:
    name: str
    mva_base: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    raw: cdf.CdfCase | None = None

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bus ids in case")
        slacks = [b.id for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise ValidationError(
                f"case must have exactly one slack bus, found {len(slacks)}"
            )
        id_set = set(ids)
        for br in self.branches:
            if br.from_bus == br.to_bus:
                raise ValidationError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
            if br.from_bus not in id_set or br.to_bus not in id_set:
                raise ValidationError(
                    f"branch {br.from_bus}-{br.to_bus} references unknown bus"
                )
            if br.x == 0.0:
                raise ValidationError(
                    f"branch {br.from_bus}-{br.to_bus} has zero reactance"
                )
        for b in self.buses:
            if b.base_kv <= 0:
                raise ValidationError(f"bus {b.id} has nonpositive base kV")
        self._check_connected()

    def _check_connected(self):
        adj: dict[int, set[int]] = {b.id: set() for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        start = self.buses[0].id
        seen = {start}
        stack = [start]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != len(self.buses):
            missing = sorted(set(adj) - seen)[:5]
            raise ValidationError(f"network is not connected; unreachable buses {missing}")

    @property
    def n(self) -> int:
        return len(self.buses)

    def index_of(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except AttributeError:
            object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})
            return self._index[bus_id]

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.index_of(bus_id)]

    @property
    def slack_id(self) -> int:
        return next(b.id for b in self.buses if b.kind == "slack")


def parse_cdf(source) -> NetworkCase:
    """Build a validated NetworkCase from CDF text/bytes/stream."""
    raw = cdf.read_cdf(source)
    buses = []
    for rec in raw.buses:
        if rec.bus_type not in _KIND_BY_TYPE:
            raise CdfParseError(f"unknown bus type {rec.bus_type} at bus {rec.number}")
        kind = _KIND_BY_TYPE[rec.bus_type]
        buses.append(
            Bus(
                id=rec.number,
                name=rec.name,
                base_kv=rec.base_kv,
                kind=kind,
                p_load=rec.p_load,
                q_load=rec.q_load,
                p_gen=rec.p_gen,
                q_gen=rec.q_gen,
                shunt_g=rec.shunt_g,
                shunt_b=rec.shunt_b,
                v_setpoint=rec.v_desired if rec.v_desired > 0 else 1.0,
            )
        )
    branches = []
    for rec in raw.branches:
        branches.append(
            Branch(
                from_bus=rec.from_bus,
                to_bus=rec.to_bus,
                r=rec.r,
                x=rec.x,
                b_charging=rec.b,
                tap_ratio=rec.ratio if rec.ratio > 0 else 1.0,
                phase_shift_deg=rec.angle,
                current_rating=(rec.rating1 / raw.title.mva_base)
                if rec.rating1 > 0
                else 999.0,
                is_transformer=rec.branch_type != 0 or (0 < rec.ratio != 1.0),
            )
        )
    case = NetworkCase(
        name=raw.title.case_id or "unnamed",
        mva_base=raw.title.mva_base,
        buses=tuple(buses),
        branches=tuple(branches),
        raw=raw,
    )
    log.info("parsed CDF case %r: %d buses, %d branches", case.name, case.n,
             len(case.branches))
    return case


def serialize_cdf(case: NetworkCase) -> str:
    """Write the case back to CDF text (requires the original raw records)."""
    if case.raw is None:
        raise ValidationError("case was not parsed from CDF; nothing to serialize")
    return cdf.write_cdf(case.raw)


@dataclass(frozen=True)
class AlphaDistribution:
    """Beta-distributed harmonic current ratio on [0, support_max].

    mean/sd/support are fractions of the nonlinear load fundamental current.
    ``sd == 0`` denotes the degenerate point mass used in deterministic
    studies and tests.
    """

    mean: float
    sd: float
    support_max: float
    kind: str = "beta-on-support"

    def __post_init__(self):
        if not 0 < self.mean < self.support_max:
            raise ValidationError(
                f"alpha mean {self.mean} outside (0, {self.support_max})"
            )
        if self.sd < 0:
            raise ValidationError("alpha sd must be nonnegative")
        if self.sd > 0 and self.sd**2 >= self.mean * (self.support_max - self.mean):
            raise ValidationError(
                "infeasible beta parameters: sd^2 must be < mean*(support-mean)"
            )

    @property
    def deterministic(self) -> bool:
        return self.sd == 0.0

    def beta_shape(self) -> tuple[float, float]:
        """Shape parameters (a, b) of the underlying Beta on [0, 1]."""
        if self.deterministic:
            raise ValidationError("degenerate distribution has no beta shape")
        m = self.mean / self.support_max
        v = (self.sd / self.support_max) ** 2
        common = m * (1.0 - m) / v - 1.0
        a = m * common
        b = (1.0 - m) * common
        if a <= 0 or b <= 0:
            raise ValidationError("beta shape parameters must be positive")
        return a, b


@dataclass(frozen=True)
class AggregateLoad:
    bus: int
    s_total: float  # MVA
    p_mw: float
    q_mvar: float
    k_e: float
    x_tr: float  # pu on transformer base
    transformer_mva: float
    isc_il: float
    isc_il_class: str
    spectrum: dict[int, AlphaDistribution]
    phase_model: str = "uniform"

    def x_tr_system(self, mva_base: float) -> float:
        """Transformer reactance converted to the system MVA base."""
        return self.x_tr * mva_base / self.transformer_mva

    def linear_pq_pu(self, mva_base: float) -> tuple[float, float]:
        """(P, Q) of the linear load share, per unit on system base."""
        share = 1.0 - self.k_e
        return share * self.p_mw / mva_base, share * self.q_mvar / mva_base


@dataclass(frozen=True)
class StudyConfig:
    harmonics: tuple[int, ...] = (3, 5, 7)
    k_e: float = 0.2
    x_tr_pu: float = 0.13
    transformer_step_mva: float = 50.0
    v_max_pu: float = 1.05
    q_filter_max_mvar: float = 20.0
    f0_hz: float = 50.0
    gen_harmonic_x_pu: float = 0.2
    branch_rating_default_pu: float = 999.0
    alpha_support_factor: float = 2.0
    skin_effect: bool = False
    filter_ht: float = 3.0
    q_bounds: tuple[float, float] = (1.0, 2.3)
    q_grid: tuple[float, ...] = tuple(round(1.0 + 0.1 * i, 1) for i in range(14))
    capacity_grid_mvar: tuple[float, ...] = (20.0, 15.0, 10.0, 5.0)
    candidate_kv: tuple[float, ...] = (138.0,)
    candidate_buses: tuple[int, ...] = ()  # explicit list overrides the kv filter
    d_quantile: float = 0.5
    max_filters: int = 8
    pf_tol: float = 1e-8
    pf_max_iter: int = 30
    limits: StandardLimits = field(default_factory=lambda: DEFAULT_LIMITS)

    def __post_init__(self):
        if any(h < 2 or int(h) != h for h in self.harmonics):
            raise ValidationError("studied harmonics must be integers >= 2")
        if not 0.0 <= self.k_e <= 1.0:
            raise ValidationError("k_e must lie in [0, 1]")
        if self.transformer_step_mva <= 0:
            raise ValidationError("transformer step must be positive")
        if self.v_max_pu < 1.0:
            raise ValidationError("v_max must be >= 1.0 pu")


_CONFIG_KEYS = {
    "harmonics", "k_e", "x_tr_pu", "transformer_step_mva", "v_max_pu",
    "q_filter_max_mvar", "f0_hz", "gen_harmonic_x_pu",
    "branch_rating_default_pu", "alpha_support_factor", "skin_effect",
    "filter_ht", "q_bounds", "q_grid", "capacity_grid_mvar", "candidate_kv",
    "candidate_buses", "d_quantile", "max_filters", "pf_tol", "pf_max_iter",
    "limits",
}

_TUPLE_KEYS = {"harmonics", "q_bounds", "q_grid", "capacity_grid_mvar",
               "candidate_kv", "candidate_buses"}


def load_config(path) -> StudyConfig:
    """Read a study configuration from a JSON or TOML file."""
    text = open(path, "rb").read()
    if str(path).endswith(".toml"):
        data = tomllib.loads(text.decode())
    else:
        data = json.loads(text)
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "limits" in data:
        data["limits"] = _limits_from_dict(data["limits"])
    for key in _TUPLE_KEYS & set(data):
        data[key] = tuple(data[key])
    if "harmonics" in data:
        data["harmonics"] = tuple(int(h) for h in data["harmonics"])
    return StudyConfig(**data)


def _limits_from_dict(spec: dict) -> StandardLimits:
    from .limits import CurrentLimit, VoltageLimit

    kwargs = {}
    if "voltage" in spec:
        kwargs["voltage"] = tuple(
            VoltageLimit(row["kv_max"], row["ihd_pct"], row["thd_pct"])
            for row in spec["voltage"]
        )
    if "current" in spec:
        kwargs["current"] = tuple(
            CurrentLimit(row["name"], row["ratio_max"], row["harmonic_pct"],
                         row["tdd_pct"])
            for row in spec["current"]
        )
    return StandardLimits(**kwargs)


@dataclass(frozen=True)
class StudyCase:
    """Network + limits + per-bus aggregate harmonic loads; immutable."""

    case: NetworkCase
    config: StudyConfig
    loads: dict[int, AggregateLoad]

    @property
    def n(self) -> int:
        return self.case.n

    @property
    def harmonics(self) -> tuple[int, ...]:
        return self.config.harmonics

    def injector_indices(self) -> np.ndarray:
        """Bus positions carrying a nonzero nonlinear injection."""
        try:
            return self._injector_idx
        except AttributeError:
            idx = sorted(
                self.case.index_of(ld.bus)
                for ld in self.loads.values()
                if ld.k_e > 0 and ld.s_total > 0
            )
            object.__setattr__(self, "_injector_idx", np.array(idx, dtype=int))
            return self._injector_idx


def fault_admittance(case: NetworkCase, gen_x_pu: float) -> sp.csc_matrix:
    """Fundamental Y with loads removed and machines as subtransient shunts.

    Used for driving-point (three-phase fault) impedance.  ``gen_x_pu`` is
    interpreted on the system MVA base.
    """
    n = case.n
    rows, cols, vals = [], [], []

    def stamp(i, j, y):
        rows.append(i)
        cols.append(j)
        vals.append(y)

    for br in case.branches:
        i, j = case.index_of(br.from_bus), case.index_of(br.to_bus)
        ys = 1.0 / complex(br.r, br.x)
        a = br.tap_ratio
        ysh = 0.5j * br.b_charging
        stamp(i, i, (ys + ysh) / (a * a))
        stamp(j, j, ys + ysh)
        stamp(i, j, -ys / a)
        stamp(j, i, -ys / a)
    for b in case.buses:
        i = case.index_of(b.id)
        if b.shunt_g or b.shunt_b:
            stamp(i, i, complex(b.shunt_g, b.shunt_b))
        if b.kind in ("PV", "slack"):
            stamp(i, i, 1.0 / complex(0.0, gen_x_pu))
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


def isc_il_ratio(case: NetworkCase, bus_id: int, config: StudyConfig) -> float:
    """Short-circuit to load fundamental current ratio at one bus."""
    ratios = _isc_il_ratios(case, [bus_id], config)
    return ratios[bus_id]


def _isc_il_ratios(case: NetworkCase, bus_ids, config: StudyConfig) -> dict[int, float]:
    y = fault_admittance(case, config.gen_harmonic_x_pu)
    try:
        lu = spla.splu(y)
    except RuntimeError as exc:
        raise ValidationError(f"fault-level matrix is singular: {exc}") from exc
    out = {}
    for bus_id in bus_ids:
        k = case.index_of(bus_id)
        e = np.zeros(case.n, dtype=complex)
        e[k] = 1.0
        z_th = lu.solve(e)[k]
        if not np.isfinite(z_th) or abs(z_th) == 0.0:
            raise ValidationError(f"no fault path to bus {bus_id}")
        i_sc = 1.0 / abs(z_th)
        s_pu = case.bus(bus_id).s_load_mva / case.mva_base
        out[bus_id] = math.inf if s_pu == 0.0 else i_sc / s_pu
    return out


def attach_harmonic_config(case: NetworkCase, config: StudyConfig) -> StudyCase:
    """Attach aggregate harmonic loads to every load bus of the case."""
    load_buses = [b.id for b in case.buses if b.s_load_mva > 0]
    ratios = _isc_il_ratios(case, load_buses, config) if load_buses else {}

    # propagate the configured fundamental voltage cap onto the buses
    buses = tuple(replace(b, v_max=config.v_max_pu) for b in case.buses)
    case = NetworkCase(case.name, case.mva_base, buses, case.branches, case.raw)

    step = config.transformer_step_mva
    loads: dict[int, AggregateLoad] = {}
    for bus_id in load_buses:
        bus = case.bus(bus_id)
        s = bus.s_load_mva
        ratio = ratios[bus_id]
        row = config.limits.current_class(ratio)
        spectrum = {}
        for h in config.harmonics:
            mean_pct, sd_pct = alpha_spectrum_pct(row.name, h)
            support = config.alpha_support_factor * row.harmonic_pct / 100.0
            spectrum[h] = AlphaDistribution(
                mean=mean_pct / 100.0, sd=sd_pct / 100.0, support_max=support
            )
        loads[bus_id] = AggregateLoad(
            bus=bus_id,
            s_total=s,
            p_mw=bus.p_load,
            q_mvar=bus.q_load,
            k_e=config.k_e,
            x_tr=config.x_tr_pu,
            transformer_mva=step * math.ceil(s / step - 1e-12),
            isc_il=ratio,
            isc_il_class=row.name,
            spectrum=spectrum,
        )
    return StudyCase(case=case, config=config, loads=loads)
