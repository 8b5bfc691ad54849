"""Command-line entry point.

Subcommands: analyze, place, mcs, modal, filter-design, report.  Data goes
to files under --out (CSV/JSON, dot-decimal, fixed column order);
structured logs go to stderr.  Every run also drops a manifest JSON with
input hashes, seed and stage timings.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import analyze_scenario, standard_violations
from .ctype_filter import design, impedance
from .dist_fit import vhd_p95
from .errors import HarmfiltError
from .fundamental_pf import solve_power_flow
from .grid_model import StudyConfig, attach_harmonic_config, load_config, parse_cdf
from .harmonic_matrix import build_impedance_set
from .modal import sweep_modes
from .monte_carlo import risk_cdf, run_mcs
from .placement import run_search
from .scenario import BASE_SCENARIO, FilterPlacement, PlacementScenario

log = logging.getLogger("harmfilt")


@dataclass
class RunManifest:
    command: str
    version: str
    seed: int | None = None
    config_sha256: str | None = None
    input_sha256: dict[str, str] = field(default_factory=dict)
    timings_s: dict[str, float] = field(default_factory=dict)

    def write(self, out_dir: Path):
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Stage:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.timings_s[self.name] = round(time.perf_counter() - self.t0, 6)
        return False


def _load_study(args, manifest: RunManifest):
    manifest.input_sha256[str(args.case)] = _sha256(args.case)
    with open(args.case, "rb") as fh:
        case = parse_cdf(fh.read())
    if args.config:
        manifest.config_sha256 = _sha256(args.config)
        config = load_config(args.config)
    else:
        config = StudyConfig()
    return attach_harmonic_config(case, config)


def _scenario_from_file(path: str, study) -> PlacementScenario:
    data = json.loads(Path(path).read_text())
    filters = tuple(
        FilterPlacement(int(f["bus"]), float(f["q"]), float(f["q_mvar"]))
        for f in data.get("filters", [])
    )
    return PlacementScenario(filters, scenario_id=data.get("scenario_id", "file"))


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _stats_rows(study, result):
    rows = []
    means, variances, labels = result.stats.moment_matrix()
    for i, bus in enumerate(study.case.buses):
        for j, col in enumerate(labels):
            rows.append([
                bus.id, col,
                f"{means[i, j]:.12e}", f"{variances[i, j]:.12e}",
                f"{result.p95.p95[i, j]:.12e}",
            ])
    return rows


def cmd_analyze(args, manifest: RunManifest, out: Path) -> int:
    study = _load_study(args, manifest)
    scenario = (
        _scenario_from_file(args.scenario, study) if args.scenario else BASE_SCENARIO
    )
    with _Stage(manifest, "analyze"):
        result = analyze_scenario(study, scenario)
    _write_csv(out / "stats.csv", ["bus", "column", "mean_v2", "var_v2", "p95_v"],
               _stats_rows(study, result))
    summary = {
        "scenario_id": scenario.scenario_id,
        "e_sthd": result.stats.e_sthd,
        "var_sthd": result.stats.var_sthd,
        "s_ihd": {str(h): list(v) for h, v in result.stats.s_ihd.items()},
        "violations": [asdict(v) for v in result.violations],
        "n_var_clamped": result.stats.n_var_clamped,
        "pf_iterations": result.pf.iterations,
        "pf_max_mismatch": result.pf.max_mismatch,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if args.dump_z:
        zset = build_impedance_set(study, scenario)
        for h in study.harmonics:
            _write_csv(
                out / f"z_diag_h{h}.csv", ["bus", "re", "im"],
                [[b.id, f"{zset[h][i, i].real:.12e}", f"{zset[h][i, i].imag:.12e}"]
                 for i, b in enumerate(study.case.buses)],
            )
            u = result.basis.u[h]
            _write_csv(
                out / f"u_h{h}.csv", ["bus"] + [str(b.id) for b in study.case.buses],
                [[b.id] + [f"{u[i, j]:.10e}" for j in range(study.n)]
                 for i, b in enumerate(study.case.buses)],
            )
    if args.dump_pf:
        _write_csv(
            out / "pf.csv", ["bus", "v_mag", "v_angle_rad"],
            [[b.id, f"{result.pf.v_mag[i]:.12f}", f"{result.pf.v_angle[i]:.12f}"]
             for i, b in enumerate(study.case.buses)],
        )
    print(f"E[S_THD] = {result.stats.e_sthd:.6e}  "
          f"violations = {len(result.violations)}")
    return 0


def cmd_place(args, manifest: RunManifest, out: Path) -> int:
    study = _load_study(args, manifest)
    overrides = {}
    if args.d_quantile is not None:
        overrides["d_quantile"] = args.d_quantile
    if args.max_filters is not None:
        overrides["max_filters"] = args.max_filters
    if args.candidates:
        overrides["candidate_buses"] = tuple(
            int(b) for b in args.candidates.split(",")
        )
    if args.q_grid:
        overrides["q_grid"] = tuple(float(q) for q in args.q_grid.split(","))
    if args.capacity_grid:
        overrides["capacity_grid_mvar"] = tuple(
            float(c) for c in args.capacity_grid.split(",")
        )
    if overrides:
        study = replace(study, config=replace(study.config, **overrides))
    with _Stage(manifest, "search"):
        solution = run_search(study, threads=args.threads)
    payload = {
        "satisfied": solution.satisfied,
        "e_base": solution.e_base,
        "e_sthd": solution.analysis.e_sthd if solution.analysis else None,
        "levels_explored": solution.levels_explored,
        "apriori_verified": solution.apriori_verified,
        "filters": [
            {"bus": f.bus, "q": f.q, "q_mvar": f.q_mvar}
            for f in solution.scenario.filters
        ],
        "q_opt": {str(b): q for b, q in solution.q_opt.items()},
        "cases": [asdict(c) for c in solution.accepted_cases],
    }
    (out / "solution.json").write_text(json.dumps(payload, indent=2) + "\n")
    _write_csv(
        out / "cases.csv",
        ["case", "n_filters", "buses", "e_sthd", "satisfied"],
        [
            [i, c.level, "+".join(map(str, c.buses)) or "-",
             f"{c.e_sthd:.12e}", c.satisfied]
            for i, c in enumerate(solution.accepted_cases)
        ],
    )
    if solution.analysis is not None:
        _write_csv(out / "stats.csv",
                   ["bus", "column", "mean_v2", "var_v2", "p95_v"],
                   _stats_rows(study, solution.analysis))
    print(
        f"satisfied={solution.satisfied} filters={list(solution.scenario.buses)} "
        f"E[S_THD] {solution.e_base:.4e} -> "
        f"{solution.analysis.e_sthd if solution.analysis else float('nan'):.4e}"
    )
    return 0


def cmd_mcs(args, manifest: RunManifest, out: Path) -> int:
    study = _load_study(args, manifest)
    scenario = (
        _scenario_from_file(args.scenario, study) if args.scenario else BASE_SCENARIO
    )
    with _Stage(manifest, "mcs"):
        run = run_mcs(study, scenario, n_samples=args.samples, seed=args.seed,
                      threads=args.threads)
    rows = []
    for h in study.harmonics:
        for i, bus in enumerate(study.case.buses):
            rows.append([bus.id, f"h{h}", f"{run.mean_ihd2[h][i]:.12e}",
                         f"{run.var_ihd2[h][i]:.12e}"])
    for i, bus in enumerate(study.case.buses):
        rows.append([bus.id, "THD", f"{run.mean_thd2[i]:.12e}",
                     f"{run.var_thd2[i]:.12e}"])
    _write_csv(out / "mcs_stats.csv", ["bus", "column", "mean_v2", "var_v2"], rows)
    summary = {
        "scenario_id": run.scenario_id,
        "n_samples": run.n_samples,
        "seed": run.seed,
        "e_sthd": run.e_sthd(),
        "var_sthd": run.var_sthd(),
    }
    (out / "mcs_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if args.dump_samples:
        cols = [run.s_ihd[h] for h in study.harmonics] + [run.s_thd]
        np.column_stack(cols).astype("<f8").tofile(out / "samples.bin")
    if args.base_scenario is not None:
        base_scen = (
            _scenario_from_file(args.base_scenario, study)
            if args.base_scenario != "base"
            else BASE_SCENARIO
        )
        base_run = run_mcs(study, base_scen, n_samples=args.samples, seed=args.seed,
                           threads=args.threads)
        risk = risk_cdf(base_run, run)
        _write_csv(
            out / "risk.csv", ["column", "risk"],
            [[str(k), f"{v:.6f}"] for k, v in risk.risk.items()],
        )
        summary["risk"] = {str(k): v for k, v in risk.risk.items()}
        (out / "mcs_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"MCS done: n={run.n_samples} seed={run.seed} "
          f"E[S_THD]={run.e_sthd():.6e}")
    return 0


def cmd_modal(args, manifest: RunManifest, out: Path) -> int:
    study = _load_study(args, manifest)
    scenario = (
        _scenario_from_file(args.scenario, study) if args.scenario else BASE_SCENARIO
    )
    with _Stage(manifest, "modal"):
        result = sweep_modes(study, scenario, args.f_start, args.f_stop, args.step)
    rows = []
    for fi, f in enumerate(result.frequencies_hz):
        for col in range(result.mode_ids.shape[1]):
            mid = result.mode_ids[fi, col]
            if mid < 0:
                continue
            rows.append([f"{f:.3f}", mid, f"{result.modal_impedance[fi, col]:.10e}"])
    _write_csv(out / "modes.csv", ["frequency_hz", "mode_id", "modal_impedance"], rows)
    prows = []
    for mode in result.critical:
        if mode.participation is None:
            continue
        pf_mag = mode.participation_magnitude()
        for i, bus in enumerate(study.case.buses):
            prows.append([mode.mode_id, f"{mode.frequency_hz:.3f}", bus.id,
                          f"{pf_mag[i]:.8f}"])
    _write_csv(out / "participation.csv",
               ["mode_id", "frequency_hz", "bus", "participation"], prows)
    print(f"critical modes: {[(m.mode_id, m.frequency_hz) for m in result.critical]}")
    return 0


def cmd_filter_design(args, manifest: RunManifest, out: Path) -> int:
    filt = design(bus=0, v_rated_kv=args.kv, q_mvar=args.mvar, h_t=args.ht,
                  q=args.q, f0_hz=args.f0)
    print(f"Zb  = {filt.z_b:.4f} ohm")
    print(f"Rp  = {filt.r_p:.4f} ohm")
    print(f"C1  = {filt.c1:.6e} F")
    print(f"C2  = {filt.c2:.6e} F")
    print(f"L   = {filt.l:.6e} H")
    _write_csv(
        out / "impedance_sweep.csv", ["h", "re_ohm", "im_ohm"],
        [[h, f"{impedance(filt, h).real:.8f}", f"{impedance(filt, h).imag:.8f}"]
         for h in range(1, args.h_max + 1)],
    )
    return 0


def _read_stats_csv(path: str) -> dict[tuple[int, str], float]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(int(row["bus"]), row["column"])] = float(row["p95_v"])
    return out


def cmd_report(args, manifest: RunManifest, out: Path) -> int:
    base = _read_stats_csv(args.base)
    treated = _read_stats_csv(args.treated)
    if set(base) != set(treated):
        raise HarmfiltError("bus/column sets differ between the two stats files")
    study = _load_study(args, manifest) if args.case else None
    rows = []
    flagged = 0
    for (bus, column) in sorted(base):
        limit_pct = ""
        status = ""
        if study is not None:
            limits = study.config.limits.voltage_class(study.case.bus(bus).base_kv)
            limit = limits.thd_pct if column == "THD" else limits.ihd_pct
            limit_pct = f"{limit:.2f}"
            ok = 100.0 * treated[(bus, column)] <= limit + 1e-12
            status = "pass" if ok else "FAIL"
            flagged += 0 if ok else 1
        rows.append([
            bus, column,
            f"{100.0 * base[(bus, column)]:.6f}",
            f"{100.0 * treated[(bus, column)]:.6f}",
            limit_pct, status,
        ])
    _write_csv(out / "comparison.csv",
               ["bus", "column", "base_p95_pct", "treated_p95_pct", "limit_pct",
                "status"], rows)
    if args.solution:
        data = json.loads(Path(args.solution).read_text())
        _write_csv(out / "index_series.csv", ["case", "e_sthd"],
                   [[i, f"{c['e_sthd']:.12e}"] for i, c in enumerate(data["cases"])])
    print(f"comparison written ({len(rows)} rows, {flagged} flagged)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harmfilt",
        description="Stochastic harmonic analysis and C-type filter placement",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--case", required=True, help="IEEE CDF case file")
        p.add_argument("--config", help="study config (JSON or TOML)")
        p.add_argument("--out", default=".", help="output directory")
        if scenario:
            p.add_argument("--scenario", help="scenario JSON (filter list)")

    p = sub.add_parser("analyze", help="analytical distortion statistics")
    common(p)
    p.add_argument("--dump-z", action="store_true")
    p.add_argument("--dump-pf", action="store_true")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("place", help="run the hierarchical filter search")
    common(p, scenario=False)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--d-quantile", type=float, default=None)
    p.add_argument("--max-filters", type=int, default=None)
    p.add_argument("--candidates", help="comma-separated candidate bus ids")
    p.add_argument("--q-grid", help="comma-separated quality factors")
    p.add_argument("--capacity-grid", help="comma-separated MVAR ratings")
    p.set_defaults(fn=cmd_place)

    p = sub.add_parser("mcs", help="Monte Carlo validation run")
    common(p)
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--dump-samples", action="store_true",
                   help="raw per-sample indices, little-endian float64")
    p.add_argument("--base-scenario",
                   help="'base' or scenario JSON; adds paired risk output")
    p.set_defaults(fn=cmd_mcs)

    p = sub.add_parser("modal", help="resonance mode frequency sweep")
    common(p)
    p.add_argument("--f-start", type=float, default=120.0)
    p.add_argument("--f-stop", type=float, default=480.0)
    p.add_argument("--step", type=float, default=1.0)
    p.set_defaults(fn=cmd_modal)

    p = sub.add_parser("filter-design", help="print C-type element values")
    p.add_argument("--kv", type=float, required=True)
    p.add_argument("--mvar", type=float, required=True)
    p.add_argument("--ht", type=float, default=3.0)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--f0", type=float, default=50.0)
    p.add_argument("--h-max", type=int, default=50)
    p.add_argument("--out", default=".")
    p.set_defaults(fn=cmd_filter_design)

    p = sub.add_parser("report", help="before/after comparison tables")
    p.add_argument("--base", required=True, help="stats.csv of the base case")
    p.add_argument("--treated", required=True, help="stats.csv of the treated case")
    p.add_argument("--case", help="CDF case for limit columns")
    p.add_argument("--config", help="study config for limit overrides")
    p.add_argument("--solution", help="solution.json for the index series")
    p.add_argument("--out", default=".")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=args.command, version=__version__,
                           seed=getattr(args, "seed", None))
    try:
        code = args.fn(args, manifest, out)
    except HarmfiltError as exc:
        log.error("%s", exc)
        return 1
    finally:
        try:
            manifest.write(out)
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
