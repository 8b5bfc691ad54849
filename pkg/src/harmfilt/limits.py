"""IEEE Std 519 distortion limit tables and the stochastic spectrum catalog.

Voltage limits are keyed by rated-voltage class, current limits by the
short-circuit ratio (Isc/IL) class of the aggregate load.  All limits are
stored as percentages of rated voltage / fundamental current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ValidationError

# (upper bound on rated kV, IHD %, THD %); classes checked in order.
_VOLTAGE_ROWS: tuple[tuple[float, float, float], ...] = (
    (1.0, 5.0, 8.0),
    (69.0, 3.0, 5.0),
    (161.0, 1.5, 2.5),
    (math.inf, 1.0, 1.5),
)

# (upper bound on Isc/IL, per-harmonic limit % for 3 <= h < 11, TDD %)
_CURRENT_ROWS: tuple[tuple[float, float, float], ...] = (
    (20.0, 2.0, 2.5),
    (50.0, 3.5, 4.0),
    (100.0, 5.0, 6.0),
    (1000.0, 6.0, 7.5),
    (math.inf, 7.5, 10.0),
)

_CURRENT_CLASS_NAMES = ("<20", "20<50", "50<100", "100<1000", ">1000")

# Spectrum catalog: mean of the harmonic current ratio alpha, in percent of
# the nonlinear load fundamental current, per Isc/IL class and harmonic
# order.  Standard deviations are a constant 0.53x the mean across the whole
# catalog.  The >1000 class is extrapolated proportionally to its
# per-harmonic current limit (anchored on the <20 row).
_ALPHA_MEANS_PCT: dict[str, dict[int, float]] = {
    "<20": {3: 0.20, 5: 1.00, 7: 0.72},
    "20<50": {3: 0.32, 5: 1.61, 7: 1.15},
    "50<100": {3: 0.48, 5: 2.41, 7: 1.72},
    "100<1000": {3: 0.60, 5: 3.01, 7: 2.15},
    ">1000": {3: 0.75, 5: 3.75, 7: 2.70},
}

_ALPHA_SD_RATIO = 0.53


@dataclass(frozen=True)
class VoltageLimit:
    """IHD/THD ceiling (percent of rated voltage) for one voltage class."""

    kv_max: float
    ihd_pct: float
    thd_pct: float


@dataclass(frozen=True)
class CurrentLimit:
    """Per-harmonic and TDD ceiling (percent of IL) for one Isc/IL class."""

    name: str
    ratio_max: float
    harmonic_pct: float
    tdd_pct: float


@dataclass(frozen=True)
class StandardLimits:
    """Distortion limit tables with optional per-class overrides."""

    voltage: tuple[VoltageLimit, ...] = field(
        default_factory=lambda: tuple(VoltageLimit(*row) for row in _VOLTAGE_ROWS)
    )
    current: tuple[CurrentLimit, ...] = field(
        default_factory=lambda: tuple(
            CurrentLimit(name, *row)
            for name, row in zip(_CURRENT_CLASS_NAMES, _CURRENT_ROWS)
        )
    )

    def __post_init__(self):
        for row in self.voltage:
            if row.ihd_pct <= 0 or row.thd_pct <= 0:
                raise ValidationError("voltage limits must be strictly positive")
            if row.ihd_pct > row.thd_pct:
                raise ValidationError(
                    f"IHD limit {row.ihd_pct} exceeds THD limit {row.thd_pct}"
                )
        for row in self.current:
            if row.harmonic_pct <= 0 or row.tdd_pct <= 0:
                raise ValidationError("current limits must be strictly positive")

    def voltage_class(self, base_kv: float) -> VoltageLimit:
        for row in self.voltage:
            if base_kv <= row.kv_max:
                return row
        return self.voltage[-1]

    def current_class(self, isc_il: float) -> CurrentLimit:
        for row in self.current:
            if isc_il < row.ratio_max:
                return row
        return self.current[-1]


def alpha_spectrum_pct(class_name: str, h: int) -> tuple[float, float]:
    """Return (mean, sd) of alpha in percent for one Isc/IL class and order.

    Orders outside the cataloged {3, 5, 7} are interpolated geometrically
    between neighbours and extrapolated flat beyond, which keeps studies with
    a non-default harmonic set runnable.
    """
    try:
        table = _ALPHA_MEANS_PCT[class_name]
    except KeyError as exc:
        raise ValidationError(f"unknown Isc/IL class {class_name!r}") from exc
    if h in table:
        mean = table[h]
    else:
        orders = sorted(table)
        if h < orders[0]:
            mean = table[orders[0]]
        elif h > orders[-1]:
            mean = table[orders[-1]]
        else:
            lo = max(o for o in orders if o < h)
            hi = min(o for o in orders if o > h)
            w = (h - lo) / (hi - lo)
            mean = table[lo] ** (1 - w) * table[hi] ** w
    return mean, _ALPHA_SD_RATIO * mean


DEFAULT_LIMITS = StandardLimits()
