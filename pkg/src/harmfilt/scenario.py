"""Filter placement scenarios: which C-type filters sit at which buses."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ctype_filter
from .errors import ValidationError
from .grid_model import StudyCase


@dataclass(frozen=True, order=True)
class FilterPlacement:
    bus: int
    q: float  # quality factor
    q_mvar: float  # rated reactive capacity


@dataclass(frozen=True)
class PlacementScenario:
    filters: tuple[FilterPlacement, ...] = ()
    scenario_id: str = "base"
    e_sthd: float | None = field(default=None, compare=False)

    def __post_init__(self):
        buses = [f.bus for f in self.filters]
        if len(set(buses)) != len(buses):
            raise ValidationError("at most one filter per bus")
        object.__setattr__(self, "filters", tuple(sorted(self.filters)))

    @property
    def buses(self) -> tuple[int, ...]:
        return tuple(f.bus for f in self.filters)

    def with_index(self, e_sthd: float) -> "PlacementScenario":
        return PlacementScenario(self.filters, self.scenario_id, e_sthd)

    def designs(self, study: StudyCase) -> list[ctype_filter.CTypeFilter]:
        cfg = study.config
        return [
            ctype_filter.design(
                bus=f.bus,
                v_rated_kv=study.case.bus(f.bus).base_kv,
                q_mvar=f.q_mvar,
                h_t=cfg.filter_ht,
                q=f.q,
                f0_hz=cfg.f0_hz,
                q_bounds=cfg.q_bounds,
            )
            for f in self.filters
        ]


BASE_SCENARIO = PlacementScenario()


def scenario_label(buses, qs, caps) -> str:
    parts = [f"{b}(q={q:g},Q={c:g})" for b, q, c in zip(buses, qs, caps)]
    return "+".join(parts) if parts else "base"
