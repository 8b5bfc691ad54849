"""C-type shunt filter design and impedance evaluation.

Topology: C1 in series with (Rp parallel to (L series C2)).  The L-C2
branch resonates at the fundamental, so the filter looks like a plain
capacitor of impedance -j*Zb at rated frequency and dissipates (ideally)
no fundamental power in Rp.

The closed-form impedance implemented here carries q^2 (not q) on the
second denominator term; the printed source formula is inconsistent with
the circuit composition and the element-level oracle, and the oracle wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError

DEFAULT_Q_BOUNDS = (1.0, 2.3)


@dataclass(frozen=True)
class CTypeFilter:
    bus: int
    v_rated_kv: float
    q_mvar: float
    h_t: float
    q: float
    f0_hz: float = 50.0

    # derived element values
    z_b: float = 0.0  # ohm, fundamental impedance magnitude
    r_p: float = 0.0  # ohm, damping resistance
    c1: float = 0.0  # F
    c2: float = 0.0  # F
    l: float = 0.0  # H

    def impedance_pu(self, h: float, z_base_ohm: float) -> complex:
        return impedance(self, h) / z_base_ohm


def design(
    bus: int,
    v_rated_kv: float,
    q_mvar: float,
    h_t: float = 3.0,
    q: float = 2.0,
    f0_hz: float = 50.0,
    q_bounds: tuple[float, float] = DEFAULT_Q_BOUNDS,
) -> CTypeFilter:
    """Size the four passive elements from (V, Q, h_t, q).

    Element extraction: C1 carries the full rated reactive output, so
    1/(w0*C1) = Zb; the fundamental-resonance constraint w0^2*L*C2 = 1
    combined with the tuning-order definition gives C2 = C1*(h_t^2 - 1).
    """
    if q_mvar <= 0:
        raise ValidationError("filter reactive capacity must be positive")
    if h_t <= 1.0:
        raise ValidationError(f"tuning order {h_t} infeasible; must exceed 1")
    lo, hi = q_bounds
    if not lo <= q <= hi:
        raise ValidationError(f"quality factor {q} outside [{lo}, {hi}]")

    w0 = 2.0 * math.pi * f0_hz
    z_b = (v_rated_kv * 1e3) ** 2 / (q_mvar * 1e6)
    r_p = q * z_b / h_t
    c1 = 1.0 / (w0 * z_b)
    c2 = c1 * (h_t**2 - 1.0)
    l = 1.0 / (w0**2 * c2)
    return CTypeFilter(
        bus=bus, v_rated_kv=v_rated_kv, q_mvar=q_mvar, h_t=h_t, q=q,
        f0_hz=f0_hz, z_b=z_b, r_p=r_p, c1=c1, c2=c2, l=l,
    )


def impedance(filt: CTypeFilter, h: float) -> complex:
    """Filter impedance (ohm) at harmonic order h, closed form."""
    ht, q, zb = filt.h_t, filt.q, filt.z_b
    a = h * h - 1.0
    b = ht * ht - 1.0
    num = q * a * complex(ht * a, q * h * b)
    den = ht * ht * a * a + q * q * h * h * b * b
    return zb * (num / den - 1j / h)


def impedance_oracle(filt: CTypeFilter, h: float) -> complex:
    """Compose the impedance from raw element values (test oracle only)."""
    w = 2.0 * math.pi * filt.f0_hz * h
    z_c1 = 1.0 / (1j * w * filt.c1)
    z_lc2 = 1j * w * filt.l + 1.0 / (1j * w * filt.c2)
    if z_lc2 == 0:
        return z_c1  # series branch shorts Rp exactly at resonance
    z_par = filt.r_p * z_lc2 / (filt.r_p + z_lc2)
    return z_c1 + z_par


def impedance_sweep(filt: CTypeFilter, h_max: int = 50) -> list[tuple[float, complex]]:
    return [(float(h), impedance(filt, h)) for h in range(1, h_max + 1)]
