"""Resonance mode analysis: LC oracle, participation, filter detuning."""

import math

import numpy as np
import pytest

from harmfilt.errors import ValidationError
from harmfilt.grid_model import Branch, Bus, NetworkCase
from harmfilt.modal import participation, sweep_modes
from harmfilt.scenario import BASE_SCENARIO, FilterPlacement, PlacementScenario

from conftest import make_study


def lc_fixture(x_gen=0.15, x_line=0.20, b_cap=0.35):
    """Machine reactance + line feeding a capacitor bus.

    The driving-point resonance at bus 2 is the parallel combination of the
    capacitor with the total inductance: h_r = 1/sqrt((x_gen + x_line) * b).
    """
    buses = (
        Bus(1, "src", 138.0, "slack", 0, 0, 0, 0, 0.0, 0.0, 1.0),
        Bus(2, "cap", 138.0, "PQ", 0.0, 0.0, 0, 0, 0.0, b_cap, 1.0),
    )
    branches = (Branch(1, 2, 0.002, x_line, 0.0),)
    case = NetworkCase("lc", 100.0, buses, branches)
    study = make_study(case, gen_harmonic_x_pu=x_gen, f0_hz=50.0)
    h_r = 1.0 / math.sqrt((x_gen + x_line) * b_cap)
    return study, h_r * 50.0


class TestSweep:
    def test_lc_resonance_within_one_step(self):
        study, f_r = lc_fixture()
        result = sweep_modes(study, BASE_SCENARIO, 120.0, 480.0, 1.0)
        assert result.critical, "no critical mode found"
        top = result.critical[0]
        assert abs(top.frequency_hz - f_r) <= 1.0

    def test_resistive_network_flat(self):
        buses = (
            Bus(1, "a", 138.0, "slack", 0, 0, 0, 0, 0.5, 0.0, 1.0),
            Bus(2, "b", 138.0, "PQ", 0, 0, 0, 0, 0.5, 0.0, 1.0),
        )
        # nearly resistive branch: x tiny to satisfy the x != 0 invariant
        branches = (Branch(1, 2, 1.0, 1e-6, 0.0),)
        study = make_study(
            NetworkCase("r", 100.0, buses, branches), gen_harmonic_x_pu=1e9
        )
        result = sweep_modes(study, BASE_SCENARIO, 120.0, 480.0, 5.0)
        assert not result.critical

    def test_bad_sweep_range(self, five_bus_study):
        with pytest.raises(ValidationError):
            sweep_modes(five_bus_study, BASE_SCENARIO, 480.0, 120.0, 1.0)
        with pytest.raises(ValidationError):
            sweep_modes(five_bus_study, BASE_SCENARIO, 50.0, 480.0, 1.0)


class TestParticipation:
    def test_sum_to_one_every_mode(self):
        study, _ = lc_fixture()
        result = sweep_modes(study, BASE_SCENARIO, 120.0, 480.0, 2.0)
        for mode in result.critical:
            assert mode.participation is not None
            assert abs(mode.participation.sum() - 1.0) < 1e-8

    def test_sum_to_one_on_118(self, study118):
        result = sweep_modes(study118, BASE_SCENARIO, 230.0, 280.0, 5.0)
        checked = 0
        for mode in result.critical:
            if mode.participation is None:
                continue
            assert abs(mode.participation.sum() - 1.0) < 1e-8
            checked += 1
        assert checked >= 1

    def test_symmetric_two_bus_equal_split(self):
        # structurally symmetric: identical shunts, one coupling branch
        buses = (
            Bus(1, "a", 138.0, "slack", 0, 0, 0, 0, 0.0, 0.3, 1.0),
            Bus(2, "b", 138.0, "PQ", 0, 0, 0, 0, 0.0, 0.3, 1.0),
        )
        branches = (Branch(1, 2, 0.01, 0.2, 0.0),)
        study = make_study(
            NetworkCase("sym", 100.0, buses, branches), gen_harmonic_x_pu=1e9
        )
        result = sweep_modes(study, BASE_SCENARIO, 120.0, 480.0, 1.0)
        assert result.critical
        pf = result.critical[0].participation
        assert pf is not None
        assert np.allclose(np.abs(pf), 0.5, atol=1e-6)

    def test_degenerate_pair_returns_none(self):
        vl = np.array([1.0, 1j])
        vr = np.array([1j, 1.0])  # vl.conj() @ vr' ... constructed orthogonal
        vr_orth = np.array([1.0, -1j]) * 1j  # vl.conj()*vr sums to zero
        assert participation(vl, np.array([1j, 1.0])) is None


class TestFilterEffect:
    def test_filter_at_dominant_bus_reduces_peak(self):
        study, _ = lc_fixture()
        base = sweep_modes(study, BASE_SCENARIO, 120.0, 480.0, 1.0)
        top = base.critical[0]
        dominant = top.dominant_bus_index()
        bus_id = study.case.buses[dominant].id
        scen = PlacementScenario(
            (FilterPlacement(bus_id, 2.0, 20.0),), scenario_id="damped"
        )
        treated = sweep_modes(study, scen, 120.0, 480.0, 1.0)
        base_peak = top.modal_impedance
        window = np.nanmax(treated.modal_impedance)
        assert window < base_peak

    def test_mode_ids_stable_across_sweep(self, five_bus_study):
        result = sweep_modes(five_bus_study, BASE_SCENARIO, 150.0, 300.0, 5.0)
        # every frequency row carries exactly N tracked ids
        n = five_bus_study.n
        for row in result.mode_ids:
            assert len(set(row.tolist())) == n
