"""Generate the 118-bus transmission test case shipped as data/case118.cdf.

Deterministic synthetic system: a 345 kV backbone ring (buses 1-10) with
six meshed 138 kV regions of 18 buses each (buses 11-118) hanging off it
through step-down transformers.  Parameters are drawn from a seeded RNG
within realistic per-unit ranges; loads and shunt capacitor banks are
placed so that the stochastic harmonic study is nontrivial (resonances in
the 4th..8th order window, several buses above the distortion limits).

Run from the repository root:  python tools/make_case118.py
"""

from __future__ import annotations

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from harmfilt.cdf import BranchRecord, BusRecord, CdfCase, TitleRecord, write_cdf

rng = np.random.default_rng(20240118)

N_RING = 10  # 345 kV backbone
REGIONS = 6
REGION_SIZE = 18

buses: list[BusRecord] = []
branches: list[BranchRecord] = []


def r2(x, nd=5):
    return float(np.round(x, nd))


# --- 345 kV backbone ring with two chords -------------------------------
for k in range(1, N_RING + 1):
    buses.append(
        BusRecord(
            number=k, name=f"HV RING {k:02d}", bus_type=0, base_kv=345.0,
            v_final=1.0, v_desired=1.0,
        )
    )

ring_pairs = [(k, k % N_RING + 1) for k in range(1, N_RING + 1)]
ring_pairs += [(1, 5), (4, 9)]  # chords
for (i, j) in ring_pairs:
    x = r2(rng.uniform(0.020, 0.045))
    branches.append(
        BranchRecord(from_bus=i, to_bus=j, branch_type=0,
                     r=r2(x / 10.0), x=x, b=r2(rng.uniform(0.25, 0.50), 4))
    )

# --- six 138 kV regions --------------------------------------------------
def region_bus(region: int, offset: int) -> int:
    return N_RING + region * REGION_SIZE + offset  # offset 1..18


CHAIN_REGIONS = (1, 3, 4)  # regions with a weak radial spur (offsets 3-7)

for region in range(REGIONS):
    ids = [region_bus(region, o) for o in range(1, REGION_SIZE + 1)]
    chained = region in CHAIN_REGIONS
    for o, bus_id in enumerate(ids, start=1):
        buses.append(
            BusRecord(
                number=bus_id, name=f"R{region + 1} BUS {o:02d}", bus_type=0,
                base_kv=138.0, v_final=1.0, v_desired=1.0,
            )
        )
    # ring within the region; chain regions route the ring around the spur
    ring_offsets = [o for o in range(1, REGION_SIZE + 1)
                    if not (chained and 3 <= o <= 6)]
    ring_ids = [ids[o - 1] for o in ring_offsets]
    for a, b in zip(ring_ids, ring_ids[1:] + ring_ids[:1]):
        x = r2(rng.uniform(0.040, 0.110))
        branches.append(
            BranchRecord(from_bus=a, to_bus=b, branch_type=0,
                         r=r2(x / 4.0), x=x, b=r2(rng.uniform(0.040, 0.100), 4))
        )
    if chained:
        # unloaded radial spur: offset 2 - 3 - 4 - 5 - 6 (dead end)
        for a_off, b_off in [(2, 3), (3, 4), (4, 5), (5, 6)]:
            x = r2(rng.uniform(0.18, 0.25))
            branches.append(
                BranchRecord(from_bus=ids[a_off - 1], to_bus=ids[b_off - 1],
                             branch_type=0, r=r2(x / 8.0), x=x,
                             b=r2(rng.uniform(0.002, 0.005), 4))
            )
        chords = [(1, 9), (10, 15), (12, 17), (8, 13), (7, 11)]
    else:
        chords = [(1, 7), (4, 12), (9, 15), (6, 17), (3, 10)]
    for (a_off, b_off) in chords:
        x = r2(rng.uniform(0.060, 0.150))
        branches.append(
            BranchRecord(from_bus=ids[a_off - 1], to_bus=ids[b_off - 1],
                         branch_type=0, r=r2(x / 4.0), x=x,
                         b=r2(rng.uniform(0.015, 0.045), 4))
        )
    # three step-down transformers to the 345 ring
    hv_a = 2 * region + 1
    hv_b = 2 * region + 2
    for hv, off in [(hv_a, 1), (hv_b, 10), (hv_a, 13)]:
        branches.append(
            BranchRecord(from_bus=hv, to_bus=ids[off - 1], branch_type=1,
                         r=0.0012, x=r2(rng.uniform(0.020, 0.030)), b=0.0,
                         ratio=1.035 if chained else 1.0)
        )

# inter-region 138 kV ties
for region in range(REGIONS):
    nxt = (region + 1) % REGIONS
    a = region_bus(region, 14)
    b = region_bus(nxt, 16)
    x = r2(rng.uniform(0.080, 0.180))
    branches.append(
        BranchRecord(from_bus=a, to_bus=b, branch_type=0, r=r2(x / 4.0), x=x,
                     b=r2(rng.uniform(0.02, 0.05), 4))
    )

by_id = {b.number: b for b in buses}

# --- generation ----------------------------------------------------------
# slack on the ring; PV units on the ring and at selected 138 kV buses
slack_id = 1
by_id[slack_id].bus_type = 3
by_id[slack_id].v_desired = 1.035
by_id[slack_id].v_final = 1.035

hv_gens = [3, 5, 7, 9]
for g in hv_gens:
    by_id[g].bus_type = 2
    by_id[g].v_desired = r2(rng.uniform(1.015, 1.035), 3)

# chain regions (1, 3, 4) keep offsets 2-7 free of machines
lv_gen_offsets = [(0, 8), (0, 16), (1, 13), (1, 15), (2, 4), (2, 12),
                  (3, 16), (3, 9), (4, 8), (4, 17), (5, 11), (5, 2)]
lv_gens = [region_bus(r, o) for r, o in lv_gen_offsets]
for (r, _), g in zip(lv_gen_offsets, lv_gens):
    by_id[g].bus_type = 2
    lo, hi = (0.980, 0.990) if r in CHAIN_REGIONS else (1.000, 1.020)
    by_id[g].v_desired = r2(rng.uniform(lo, hi), 3)

# --- loads ---------------------------------------------------------------
# most 138 kV buses carry aggregate loads; a couple of HV industrial loads
total_p = 0.0
for region in range(REGIONS):
    chained = region in CHAIN_REGIONS
    for o in range(1, REGION_SIZE + 1):
        bus_id = region_bus(region, o)
        if chained and 2 <= o <= 6:
            if o == 2:  # strong load at the spur entry
                p = r2(rng.uniform(42.0, 60.0), 1)
                pf = rng.uniform(0.92, 0.96)
                q = r2(p * np.tan(np.arccos(pf)), 1)
                by_id[bus_id].p_load = p
                by_id[bus_id].q_load = q
                total_p += p
            continue  # offsets 3-6 are unloaded stations on the spur
        if by_id[bus_id].bus_type == 2 and rng.random() < 0.5:
            continue  # some generator buses carry no load
        if rng.random() < 0.12:
            continue  # a few pure switching stations
        p = r2(rng.uniform(25.0, 75.0), 1)
        pf = rng.uniform(0.90, 0.97)
        q = r2(p * np.tan(np.arccos(pf)), 1)
        by_id[bus_id].p_load = p
        by_id[bus_id].q_load = q
        total_p += p

for hv_id, p in [(6, 150.0), (10, 120.0)]:
    by_id[hv_id].p_load = p
    by_id[hv_id].q_load = r2(p * 0.32, 1)
    total_p += p

# --- shunt capacitor banks (resonance drivers, replacement targets) ------
# Cap buses are switching stations: no local load, so the parallel
# resonance is only damped through the surrounding network.  Bank sizes
# are calibrated below so each resonance sits near the targeted order.
# chain regions: bank at the dead end of the spur; mesh regions: bank at
# an interior switching station
cap_sites = [
    region_bus(1, 6), region_bus(3, 6), region_bus(4, 6),
    region_bus(0, 5), region_bus(2, 5), region_bus(5, 5), region_bus(4, 15),
]
cap_targets = [5.0, 7.0, 5.03, 4.97, 7.02, 5.05, 5.02]
for bus_id in cap_sites:
    if by_id[bus_id].p_load:
        total_p -= by_id[bus_id].p_load
        by_id[bus_id].p_load = 0.0
        by_id[bus_id].q_load = 0.0
    by_id[bus_id].shunt_b = 0.30  # placeholder; calibrated below

# --- dispatch ------------------------------------------------------------
# PV units share ~90% of the load; slack covers the rest plus losses
pv_ids = hv_gens + lv_gens
weights = rng.uniform(0.6, 1.4, size=len(pv_ids))
weights /= weights.sum()
for g, w in zip(pv_ids, weights):
    by_id[g].p_gen = r2(0.90 * total_p * w, 1)

case = CdfCase(
    title=TitleRecord(
        date="10/08/26", originator="HARMFILT", mva_base=100.0, year=2026,
        season="S", case_id="118 BUS SYNTHETIC TRANSMISSION",
    ),
    buses=buses,
    branches=branches,
)


def calibrate_caps(case: CdfCase, sweeps: int = 4) -> None:
    """Size each bank so Im{Y_driving} cancels at the targeted order.

    Banks interact, so the point-by-point calibration is swept several
    times until the sizes settle (each pass recalibrates one bank with all
    the others at their current values)."""
    from harmfilt.grid_model import StudyConfig, attach_harmonic_config, parse_cdf
    from harmfilt.harmonic_matrix import build_harmonic_admittance
    from harmfilt.scenario import BASE_SCENARIO
    import scipy.sparse.linalg as spla

    for bus_id in cap_sites:
        by_id[bus_id].shunt_b = 0.0
    for _ in range(sweeps):
        for bus_id, h_t in zip(cap_sites, cap_targets):
            b_old = by_id[bus_id].shunt_b
            by_id[bus_id].shunt_b = 0.0
            study = attach_harmonic_config(parse_cdf(write_cdf(case)), StudyConfig())
            y = build_harmonic_admittance(study, BASE_SCENARIO, h_t).tocsc()
            k = study.case.index_of(bus_id)
            e = np.zeros(study.n, dtype=complex)
            e[k] = 1.0
            z_kk = spla.splu(y).solve(e)[k]
            b = -np.imag(1.0 / z_kk) / h_t
            by_id[bus_id].shunt_b = r2(max(b, 0.02), 4) if b > 0 else r2(max(b_old, 0.02), 4)


calibrate_caps(case)

out = pathlib.Path(__file__).resolve().parents[1] / "data" / "case118.cdf"
out.parent.mkdir(exist_ok=True)
out.write_text(write_cdf(case))
print(f"wrote {out}: {len(buses)} buses, {len(branches)} branches, "
      f"total load {total_p:.0f} MW")
