"""Grid model: CDF parsing, study attachment, Isc/IL classification."""

import io
import math

import numpy as np
import pytest

from harmfilt.cdf import read_cdf, records_equal, write_cdf
from harmfilt.errors import CdfParseError, ValidationError
from harmfilt.grid_model import (
    AlphaDistribution,
    Branch,
    Bus,
    NetworkCase,
    StudyConfig,
    attach_harmonic_config,
    isc_il_ratio,
    parse_cdf,
    serialize_cdf,
)
from harmfilt.limits import DEFAULT_LIMITS

from conftest import THREE_BUS_CDF, make_two_bus


# Independent field-position oracle: the exact CDF column spec, slice by
# slice, applied to the known fixture text.
def _oracle_read_bus(line: str) -> dict:
    line = line.ljust(133)
    return {
        "number": int(line[0:4]),
        "name": line[5:17].strip(),
        "type": int(line[24:26]),
        "p_load": float(line[40:49]),
        "q_load": float(line[49:59]),
        "base_kv": float(line[76:83]),
        "shunt_b": float(line[114:122]),
    }


def _oracle_read_branch(line: str) -> dict:
    line = line.ljust(133)
    return {
        "from": int(line[0:4]),
        "to": int(line[5:9]),
        "r": float(line[19:29]),
        "x": float(line[29:40]),
        "b": float(line[40:50]),
    }


class TestParseCdf:
    def test_three_bus_counts(self, three_bus_case):
        assert three_bus_case.n == 3
        assert len(three_bus_case.branches) == 2
        assert three_bus_case.mva_base == 100.0

    def test_three_bus_fields_match_slice_oracle(self, three_bus_case):
        lines = THREE_BUS_CDF.splitlines()
        bus_lines = lines[2:5]
        for line, bus in zip(bus_lines, three_bus_case.buses):
            ref = _oracle_read_bus(line)
            assert bus.id == ref["number"]
            assert bus.name == ref["name"]
            assert bus.p_load == ref["p_load"]
            assert bus.q_load == ref["q_load"]
            assert bus.base_kv == ref["base_kv"]
            assert bus.shunt_b == ref["shunt_b"]
        branch_lines = lines[7:9]
        for line, br in zip(branch_lines, three_bus_case.branches):
            ref = _oracle_read_branch(line)
            assert (br.from_bus, br.to_bus) == (ref["from"], ref["to"])
            assert br.r == ref["r"]
            assert br.x == ref["x"]
            assert br.b_charging == ref["b"]

    def test_empty_file_is_parse_error(self):
        with pytest.raises(CdfParseError):
            parse_cdf("")
        with pytest.raises(CdfParseError):
            parse_cdf(b"\n\n")

    def test_missing_slack_is_validation_error(self):
        text = THREE_BUS_CDF.replace(
            "   1 SLACK ONE     1  1  3", "   1 SLACK ONE     1  1  0"
        )
        with pytest.raises(ValidationError):
            parse_cdf(text)

    def test_unknown_bus_in_branch(self):
        text = THREE_BUS_CDF.replace(
            "   2    3  1  1 1 0", "   2    9  1  1 1 0"
        )
        with pytest.raises(ValidationError):
            parse_cdf(text)

    def test_disconnected_graph_rejected(self):
        buses = (
            Bus(1, "a", 138.0, "slack", 0, 0, 0, 0, 0, 0, 1.0),
            Bus(2, "b", 138.0, "PQ", 1, 0, 0, 0, 0, 0, 1.0),
            Bus(3, "c", 138.0, "PQ", 1, 0, 0, 0, 0, 0, 1.0),
        )
        with pytest.raises(ValidationError, match="not connected"):
            NetworkCase("x", 100.0, buses, (Branch(1, 2, 0.0, 0.1, 0.0),))

    def test_118_bus_case(self, case118):
        assert case118.n == 118
        kinds = {b.kind for b in case118.buses}
        assert kinds == {"slack", "PV", "PQ"}
        assert {b.base_kv for b in case118.buses} == {138.0, 345.0}

    def test_round_trip_serialization(self, case118):
        text = serialize_cdf(case118)
        again = read_cdf(io.StringIO(text))
        assert records_equal(case118.raw, again)
        reparsed = parse_cdf(text)
        assert reparsed.n == case118.n
        for a, b in zip(case118.buses, reparsed.buses):
            assert a == b
        for a, b in zip(case118.branches, reparsed.branches):
            assert a == b

    def test_round_trip_three_bus(self, three_bus_case):
        assert records_equal(
            three_bus_case.raw, read_cdf(serialize_cdf(three_bus_case))
        )


class TestAlphaDistribution:
    def test_feasible_shapes_positive(self):
        d = AlphaDistribution(mean=0.01, sd=0.0053, support_max=0.04)
        a, b = d.beta_shape()
        assert a > 0 and b > 0

    def test_infeasible_sd_rejected(self):
        with pytest.raises(ValidationError):
            AlphaDistribution(mean=0.01, sd=0.02, support_max=0.04)

    def test_mean_outside_support_rejected(self):
        with pytest.raises(ValidationError):
            AlphaDistribution(mean=0.05, sd=0.001, support_max=0.04)

    def test_deterministic_allowed(self):
        d = AlphaDistribution(mean=0.02, sd=0.0, support_max=0.04)
        assert d.deterministic


class TestAttachHarmonicConfig:
    def test_table_spectrum_for_weak_class(self):
        # strong-ish source, large load -> Isc/IL < 20
        case = make_two_bus(p_load=100.0, q_load=30.0, x=0.05)
        study = attach_harmonic_config(case, StudyConfig())
        load = study.loads[2]
        assert load.isc_il_class == "<20"
        spec5 = load.spectrum[5]
        assert spec5.mean == pytest.approx(0.0100)
        assert spec5.sd == pytest.approx(0.0053)

    def test_transformer_rating_least_multiple(self):
        case = make_two_bus(p_load=40.0, q_load=0.0)
        study = attach_harmonic_config(case, StudyConfig(k_e=0.2))
        assert study.loads[2].transformer_mva == 50.0
        case = make_two_bus(p_load=50.0, q_load=0.0)
        study = attach_harmonic_config(case, StudyConfig())
        assert study.loads[2].transformer_mva == 50.0
        case = make_two_bus(p_load=50.1, q_load=0.0)
        study = attach_harmonic_config(case, StudyConfig())
        assert study.loads[2].transformer_mva == 100.0

    def test_zero_ke_zeroes_injections(self):
        case = make_two_bus()
        study = attach_harmonic_config(case, StudyConfig(k_e=0.0))
        assert len(study.injector_indices()) == 0

    def test_all_load_buses_covered(self, study118):
        load_buses = {b.id for b in study118.case.buses if b.s_load_mva > 0}
        assert set(study118.loads) == load_buses
        names = {row.name for row in DEFAULT_LIMITS.current}
        for load in study118.loads.values():
            assert load.isc_il_class in names
            assert set(load.spectrum) == set(study118.harmonics)

    def test_spectrum_feasibility_everywhere(self, study118):
        for load in study118.loads.values():
            for dist in load.spectrum.values():
                a, b = dist.beta_shape()
                assert a > 0 and b > 0

    def test_v_max_propagated(self, study118):
        assert all(b.v_max == 1.05 for b in study118.case.buses)


class TestIscIl:
    def test_hand_circuit_ratio(self):
        # Z_th at the load bus = gen x''d (0.05) + line x (0.05) = 0.1 pu
        # load 100 MVA at 1.0 pu voltage -> I_L = 1.0 pu -> ratio 10
        case = make_two_bus(p_load=100.0, q_load=0.0, x=0.05)
        cfg = StudyConfig(gen_harmonic_x_pu=0.05)
        ratio = isc_il_ratio(case, 2, cfg)
        assert ratio == pytest.approx(10.0, rel=1e-6)
        assert DEFAULT_LIMITS.current_class(ratio).name == "<20"

    def test_zero_load_is_infinite_ratio(self):
        case = make_two_bus(p_load=0.0, q_load=0.0)
        ratio = isc_il_ratio(case, 2, StudyConfig())
        assert math.isinf(ratio)
        assert DEFAULT_LIMITS.current_class(ratio).name == ">1000"

    def test_totality_on_118(self, study118):
        rows = [ld.isc_il_class for ld in study118.loads.values()]
        assert len(rows) == len(study118.loads)

    def test_class_monotonic_in_ratio(self):
        ratios = [5, 25, 60, 200, 5000]
        rows = [DEFAULT_LIMITS.current_class(r) for r in ratios]
        for lo, hi in zip(rows, rows[1:]):
            assert hi.harmonic_pct >= lo.harmonic_pct
            assert hi.tdd_pct >= lo.tdd_pct


class TestStudyConfig:
    def test_bad_harmonics_rejected(self):
        with pytest.raises(ValidationError):
            StudyConfig(harmonics=(1, 5))

    def test_bad_ke_rejected(self):
        with pytest.raises(ValidationError):
            StudyConfig(k_e=1.5)

    def test_config_files(self, tmp_path):
        from harmfilt.grid_model import load_config

        j = tmp_path / "study.json"
        j.write_text('{"harmonics": [5, 7], "k_e": 0.3, "f0_hz": 60.0}')
        cfg = load_config(j)
        assert cfg.harmonics == (5, 7)
        assert cfg.k_e == 0.3
        assert cfg.f0_hz == 60.0

        t = tmp_path / "study.toml"
        t.write_text('harmonics = [3, 5]\nv_max_pu = 1.06\n')
        cfg = load_config(t)
        assert cfg.harmonics == (3, 5)
        assert cfg.v_max_pu == 1.06

        bad = tmp_path / "bad.json"
        bad.write_text('{"no_such_key": 1}')
        with pytest.raises(ValidationError):
            load_config(bad)

    def test_limit_overrides(self, tmp_path):
        from harmfilt.grid_model import load_config

        j = tmp_path / "lim.json"
        j.write_text(
            '{"limits": {"voltage": ['
            '{"kv_max": 69.0, "ihd_pct": 3.0, "thd_pct": 5.0},'
            '{"kv_max": 1e9, "ihd_pct": 1.0, "thd_pct": 1.5}]}}'
        )
        cfg = load_config(j)
        assert cfg.limits.voltage_class(138.0).thd_pct == 1.5
