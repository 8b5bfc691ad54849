"""Hierarchical restricted direct search for C-type filter placement.

Level N_F enumerates candidate N_F-tuples built apriori-style from the
previous level's desirable set: a tuple is a candidate only if every one of
its (N_F-1)-subsets was desirable.  Each candidate is evaluated at the
single-filter-optimal quality factor per location and the largest feasible
capacity; tuples whose expected system index beats the running quantile
threshold form the desirable set, which is scanned in ascending index
order for the first member whose estimated 95th-percentile distortions
satisfy the standard limits.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .analysis import ScenarioAnalysis, analyze_scenario, expected_index
from .errors import ValidationError
from .fundamental_pf import PFSolution, check_constraints, solve_power_flow
from .grid_model import StudyCase
from .monte_carlo import worker_count
from .scenario import BASE_SCENARIO, FilterPlacement, PlacementScenario, scenario_label

log = logging.getLogger(__name__)

__all__ = [
    "PlacementScenario", "FilterPlacement", "SearchState", "PlacementSolution",
    "base_analysis", "optimize_q", "build_candidates", "fit_capacity",
    "select_desirable", "run_search", "verify_apriori",
]


@dataclass
class SearchState:
    """Bookkeeping for one level of the hierarchical search."""

    level: int
    candidates: list[tuple[int, ...]]  # A^{N_F}, bus tuples
    evaluated: dict[tuple[int, ...], PlacementScenario] = field(default_factory=dict)
    desirable: list[tuple[int, ...]] = field(default_factory=list)  # B, ascending
    threshold_in: float = math.inf  # p^{N_F-1}, gate for B at this level
    threshold_out: float = math.inf  # p^{N_F}, gate for the next level


@dataclass(frozen=True)
class AcceptedCase:
    level: int
    buses: tuple[int, ...]
    e_sthd: float
    satisfied: bool


@dataclass
class PlacementSolution:
    satisfied: bool
    scenario: PlacementScenario
    analysis: ScenarioAnalysis | None
    e_base: float
    accepted_cases: list[AcceptedCase]
    desirable_sets: dict[int, list[tuple[int, ...]]]
    q_opt: dict[int, float]
    levels_explored: int
    apriori_verified: bool = False
    states: list[SearchState] = field(default_factory=list)


class _SearchContext:
    """Caches shared across scenario evaluations within one search."""

    def __init__(self, study: StudyCase, threads: int | None = None):
        self.study = study
        self.threads = worker_count(threads)
        self._pf_cache: dict[tuple, PFSolution] = {}
        self._caps_cache: dict[int, tuple[float, ...]] = {}

    def pf(self, scenario: PlacementScenario) -> PFSolution:
        key = tuple((f.bus, f.q_mvar) for f in scenario.filters)
        sol = self._pf_cache.get(key)
        if sol is None:
            sol = solve_power_flow(self.study, scenario)
            self._pf_cache[key] = sol
        return sol

    def index(self, scenario: PlacementScenario) -> float:
        return expected_index(self.study, scenario, pf=self.pf(scenario))

    def feasible_caps(self, bus: int) -> tuple[float, ...]:
        """Capacities feasible for a lone filter at this bus.

        Adding further capacitive shunts only raises voltages, so a rating
        that violates the voltage cap alone cannot become feasible inside a
        combination; the per-bus screen prunes the joint capacity grid.
        """
        cached = self._caps_cache.get(bus)
        if cached is not None:
            return cached
        cfg = self.study.config
        grid = sorted(set(cfg.capacity_grid_mvar) | {cfg.q_filter_max_mvar},
                      reverse=True)
        ok = []
        for cap in grid:
            scen = PlacementScenario(
                (FilterPlacement(bus, cfg.q_grid[0], cap),),
                scenario_id=f"capscan:{bus}:{cap:g}",
            )
            try:
                if check_constraints(self.pf(scen), self.study).feasible:
                    ok.append(cap)
            except Exception:
                continue
        caps = tuple(ok)
        self._caps_cache[bus] = caps
        return caps

    def map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(it) for it in items]


def base_analysis(study: StudyCase) -> ScenarioAnalysis:
    """Step 1: index, percentile matrix and limit screening with no filters."""
    return analyze_scenario(study, BASE_SCENARIO)


def candidate_buses(study: StudyCase) -> list[int]:
    if study.config.candidate_buses:
        ids = {b.id for b in study.case.buses}
        missing = set(study.config.candidate_buses) - ids
        if missing:
            raise ValidationError(f"candidate buses not in case: {sorted(missing)}")
        return sorted(study.config.candidate_buses)
    kv = set(study.config.candidate_kv)
    return sorted(b.id for b in study.case.buses if b.base_kv in kv)


def optimize_q(study: StudyCase, bus: int, ctx: _SearchContext | None = None) -> float:
    """Quality factor minimizing E[S_THD] for a lone filter at this bus.

    Evaluated at Q_max; ties resolve to the smallest q on the grid.
    """
    ctx = ctx or _SearchContext(study)
    cfg = study.config
    best_q, best_e = None, math.inf
    for q in cfg.q_grid:
        scen = PlacementScenario(
            (FilterPlacement(bus, q, cfg.q_filter_max_mvar),),
            scenario_id=f"qscan:{bus}:{q:g}",
        )
        e = ctx.index(scen)
        if e < best_e - 1e-18:
            best_q, best_e = q, e
    return float(best_q)


def build_candidates(
    level: int,
    b_prev: list[tuple[int, ...]],
    all_buses: list[int],
) -> list[tuple[int, ...]]:
    """A^{N_F}: all buses at level 1, apriori join afterwards."""
    if level == 1:
        return [(b,) for b in sorted(all_buses)]
    prev = {tuple(sorted(t)) for t in b_prev}
    members = sorted({b for t in prev for b in t})
    out = []
    for combo in itertools.combinations(members, level):
        if all(
            tuple(sorted(sub)) in prev
            for sub in itertools.combinations(combo, level - 1)
        ):
            out.append(combo)
    return out


def fit_capacity(
    study: StudyCase,
    combo: tuple[int, ...],
    q_opt: dict[int, float],
    ctx: _SearchContext | None = None,
) -> PlacementScenario | None:
    """Step 4: assign capacities, starting from Q_max everywhere.

    If the fundamental constraints fail at Q_max, every combination on the
    capacity grid is screened and the feasible one with the lowest expected
    index wins.  Returns None when no feasible assignment exists.
    """
    ctx = ctx or _SearchContext(study)
    cfg = study.config
    q_max = cfg.q_filter_max_mvar

    def scen_for(caps) -> PlacementScenario:
        placements = tuple(
            FilterPlacement(bus, q_opt[bus], cap) for bus, cap in zip(combo, caps)
        )
        return PlacementScenario(
            placements, scenario_id=scenario_label(combo, [q_opt[b] for b in combo], caps)
        )

    full = scen_for([q_max] * len(combo))
    try:
        if check_constraints(ctx.pf(full), study).feasible:
            return full
    except ValidationError:
        pass
    except Exception as exc:  # divergence on the full assignment
        log.debug("PF failed at Q_max for %s: %s", combo, exc)

    per_bus = [
        [c for c in ctx.feasible_caps(bus) if c in cfg.capacity_grid_mvar]
        for bus in combo
    ]
    if any(not caps for caps in per_bus):
        log.info("combination %s rejected: no feasible capacity assignment", combo)
        return None

    best_scen, best_e = None, math.inf
    for caps in itertools.product(*per_bus):
        if all(c == q_max for c in caps):
            continue
        scen = scen_for(caps)
        try:
            pf = ctx.pf(scen)
        except Exception:
            continue
        if not check_constraints(pf, study).feasible:
            continue
        e = ctx.index(scen)
        if e < best_e:
            best_scen, best_e = scen.with_index(e), e
    if best_scen is None:
        log.info("combination %s rejected: no feasible capacity assignment", combo)
    return best_scen


def _quantile_threshold(values: list[float], d: float) -> float:
    """First d-quantile (lower order statistic); d >= 1 disables pruning."""
    if d >= 1.0:
        return math.inf
    if not values:
        return math.inf
    ordered = sorted(values)
    k = max(1, math.ceil(d * len(ordered)))
    return ordered[k - 1]


def select_desirable(
    evaluated: dict[tuple[int, ...], PlacementScenario],
    threshold_in: float,
    d: float,
) -> tuple[list[tuple[int, ...]], float]:
    """Step 5: keep members below the previous threshold, sorted ascending.

    Returns (B sorted by (index, buses), this level's outgoing quantile).
    """
    values = [s.e_sthd for s in evaluated.values()]
    members = [
        (s.e_sthd, combo)
        for combo, s in evaluated.items()
        if s.e_sthd < threshold_in
    ]
    members.sort()
    threshold_out = _quantile_threshold(values, d)
    return [combo for _, combo in members], threshold_out


def verify_apriori(solution: PlacementSolution) -> bool:
    """Every proper subset of the returned combination must be desirable."""
    buses = solution.scenario.buses
    if len(buses) <= 1:
        return True
    for size in range(1, len(buses)):
        level_sets = {tuple(sorted(t)) for t in solution.desirable_sets.get(size, [])}
        for sub in itertools.combinations(buses, size):
            if tuple(sorted(sub)) not in level_sets:
                return False
    return True


def run_search(study: StudyCase, threads: int | None = None) -> PlacementSolution:
    """Steps 1-6: iterate levels until a combination satisfies the limits."""
    cfg = study.config
    ctx = _SearchContext(study, threads)
    base = base_analysis(study)
    e_base = base.e_sthd

    if base.satisfies_limits:
        log.info("no standard violations in the base case; no filters needed")
        return PlacementSolution(
            satisfied=True,
            scenario=BASE_SCENARIO,
            analysis=base,
            e_base=e_base,
            accepted_cases=[AcceptedCase(0, (), e_base, True)],
            desirable_sets={},
            q_opt={},
            levels_explored=0,
            apriori_verified=True,
        )

    cand = candidate_buses(study)
    if not cand:
        raise ValidationError("candidate bus set is empty")
    log.info(
        "base case violates limits at %d cells (E[S_THD]=%.4e); "
        "searching over %d candidate buses",
        len(base.violations), e_base, len(cand),
    )

    q_opt = dict(zip(cand, ctx.map(lambda b: optimize_q(study, b, ctx), cand)))

    desirable_sets: dict[int, list[tuple[int, ...]]] = {}
    accepted: list[AcceptedCase] = [AcceptedCase(0, (), e_base, False)]
    states: list[SearchState] = []
    best_fallback: PlacementScenario | None = None
    threshold_in = math.inf
    b_prev: list[tuple[int, ...]] = []
    level = 0

    while level < cfg.max_filters:
        level += 1
        a_level = build_candidates(level, b_prev, cand)
        if not a_level:
            log.info("level %d candidate set is empty; search exhausted", level)
            break

        scens = ctx.map(lambda c: fit_capacity(study, c, q_opt, ctx), a_level)
        evaluated: dict[tuple[int, ...], PlacementScenario] = {}
        for combo, scen in zip(a_level, scens):
            if scen is None:
                continue
            if scen.e_sthd is None:
                scen = scen.with_index(ctx.index(scen))
            evaluated[combo] = scen
        if not evaluated:
            log.info("level %d has no feasible members; search exhausted", level)
            break

        if level == 1:
            threshold_in = _quantile_threshold(
                [s.e_sthd for s in evaluated.values()], cfg.d_quantile
            )
        state = SearchState(level=level, candidates=a_level, evaluated=evaluated,
                            threshold_in=threshold_in)
        b_level, threshold_out = select_desirable(evaluated, threshold_in, cfg.d_quantile)
        state.desirable = b_level
        state.threshold_out = threshold_out
        states.append(state)
        desirable_sets[level] = b_level
        if not b_level:
            log.info("level %d desirable set is empty; search exhausted", level)
            break

        best_combo = b_level[0]
        best_scen = evaluated[best_combo]
        if best_fallback is None or best_scen.e_sthd < best_fallback.e_sthd:
            best_fallback = best_scen

        found: ScenarioAnalysis | None = None
        found_combo: tuple[int, ...] | None = None
        for combo in b_level:
            scen = evaluated[combo]
            result = analyze_scenario(study, scen, pf=ctx.pf(scen))
            if result.satisfies_limits:
                found = result
                found_combo = combo
                break

        accepted.append(
            AcceptedCase(level, best_combo, best_scen.e_sthd,
                         found_combo == best_combo)
        )
        if found is not None and found_combo != best_combo:
            accepted.append(
                AcceptedCase(level, found_combo, evaluated[found_combo].e_sthd, True)
            )

        if found is not None:
            solution = PlacementSolution(
                satisfied=True,
                scenario=found.scenario,
                analysis=found,
                e_base=e_base,
                accepted_cases=accepted,
                desirable_sets=desirable_sets,
                q_opt=q_opt,
                levels_explored=level,
                apriori_verified=False,
                states=states,
            )
            solution.apriori_verified = verify_apriori(solution)
            log.info(
                "solution found at N_F=%d: buses %s, E[S_THD] %.4e (base %.4e)",
                level, found.scenario.buses, found.e_sthd, e_base,
            )
            return solution

        threshold_in = threshold_out
        b_prev = b_level

    # exhausted or level cap: best-effort report flagged unsatisfied
    if best_fallback is None:
        raise ValidationError("search produced no feasible scenarios at level 1")
    result = analyze_scenario(study, best_fallback, pf=ctx.pf(best_fallback))
    solution = PlacementSolution(
        satisfied=False,
        scenario=best_fallback,
        analysis=result,
        e_base=e_base,
        accepted_cases=accepted,
        desirable_sets=desirable_sets,
        q_opt=q_opt,
        levels_explored=level,
        apriori_verified=False,
        states=states,
    )
    solution.apriori_verified = verify_apriori(solution)
    log.warning(
        "no combination satisfied the limits within %d levels; "
        "returning best-effort scenario %s", level, best_fallback.buses,
    )
    return solution
