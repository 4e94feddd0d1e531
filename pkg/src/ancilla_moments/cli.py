"""Command-line scenario runner.

Subcommands write CSV/JSON files into the output directory and log to
standard error.  Exit codes: 0 success, 2 configuration error, 3 runtime
or physics error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import protocol, witness
from .acquisition import SCAN_MODES, expected_probabilities, run_direct, run_scan, scan_profile
from .config import ScenarioConfig
from .errors import AncillaError, ConfigError
from .estimator import estimates_to_csv, measurement_budget, moment_from_counts, scanning_variance, uncertainty
from .gstate import MomentSpec

log = logging.getLogger("ancilla_moments")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

VARIANCE_COLUMNS = ("quantity", "value", "std_error", "target", "deviation_sigma", "units", "T", "method")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "inf" if x == math.inf else repr(x)
    return str(x)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write(out, name, text):
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _deviation(value, error, target):
    if target is None:
        return None
    return float((value - target) / error) if error > 0 else (0.0 if value == target else math.inf)


def _units(letter, power=2):
    return ("mm^%d" if letter in "xy" else "mm^-%d") % power


# ------------------------------------------------------------------ direct


def cmd_direct(cfg, out, seed=None, workers=1, analytic=None):
    seed = cfg.run("seed", 0) if seed is None else seed
    analytic = cfg.run("analytic", False) if analytic is None else analytic
    T = int(cfg.run("T", 100_000))
    section = cfg.section("direct")
    specs = []
    for text in section.get("moments", []):
        specs.append(MomentSpec.parse(text))
    for letter in section.get("variances", []):
        specs += protocol.axis_specs(letter)
    specs = list(dict.fromkeys(specs))
    if not specs:
        raise ConfigError("direct: nothing to measure", ["set direct.moments or direct.variances"])
    ms = protocol.measure(cfg.build_state(), specs, cfg.build_apparatus(), T, seed, analytic,
                          cfg.run("calibrate", True), workers=workers)
    estimates = ms.estimates()
    method = "analytic" if analytic else "direct"
    for e in estimates:
        e.method = method
    targets = section.get("targets", {})
    rows, variances = [], {}
    for letter in section.get("variances", []):
        for key, entry in witness.axis_variances(ms, letter).items():
            variances[key] = entry
            tgt = targets.get(key)
            rows.append((key, entry["value"], entry["error"], tgt, _deviation(entry["value"], entry["error"], tgt),
                         _units(letter), T if not analytic else math.inf, method))
    _write(out, "moments.csv", estimates_to_csv(estimates))
    _write(out, "variances.csv", _csv(VARIANCE_COLUMNS, rows))
    report = {
        "scenario": cfg.name,
        "seed": seed,
        "T_per_setting": None if analytic else T,
        "analytic": bool(analytic),
        "calibrated": bool(cfg.run("calibrate", True)),
        "estimates": [e.to_dict() for e in estimates],
        "variances": variances,
        "budget": {**ms.budget(), "settings_per_joint_moment": measurement_budget(2)},
        "clipped_fraction": {repr(s): t.clipped_fraction for s, t in sorted(ms.tables.items(), key=lambda kv: repr(kv[0]))},
    }
    _write(out, "report.json", _json(report))
    return {"moments": ms, "estimates": estimates, "variances": variances, "report": report}


# -------------------------------------------------------------------- scan


def scan_grid(cfg, state, mode):
    sc = cfg.section("scan")
    if "grid" in sc:
        lo, hi, n = sc["grid"]
        return np.linspace(lo, hi, int(n))
    centre, sigma = scan_profile(state, mode, sc["variable"])
    span = float(sc.get("span_sigma", 6.0))
    return np.linspace(centre - span * sigma, centre + span * sigma, int(sc.get("points", 61)))


def cmd_scan(cfg, out, seed=None, workers=1, analytic=None):
    seed = cfg.run("seed", 0) if seed is None else seed
    sc = cfg.section("scan")
    state = cfg.build_state()
    letter = sc["variable"]
    targets = sc.get("targets", {})
    modes = sc.get("modes", list(SCAN_MODES))
    slit = float(sc.get("slit_width", 0.02))
    budget = float(sc.get("T_budget", 1e6))
    rows, hist_rows, results = [], [], {}
    for mode in modes:
        grid = scan_grid(cfg, state, mode)
        hist = run_scan(state, mode, grid, slit, budget, seed, letter)
        est = scanning_variance(hist, int(sc.get("bootstrap", 200)))
        results[est.label] = {"estimate": est, "histogram": hist}
        tgt = targets.get(est.label)
        rows.append((est.label, est.value, est.std_error, tgt, _deviation(est.value, est.std_error, tgt),
                     _units(letter), hist.T_total, "scanning", hist.settings_hash))
        hist_rows += [(mode, float(x), int(c)) for x, c in zip(hist.positions, hist.counts)]
    _write(out, "scan.csv", _csv(VARIANCE_COLUMNS + ("settings_hash",), rows))
    _write(out, "scan_histograms.csv", _csv(("mode", "position", "counts"), hist_rows))
    return results


# ----------------------------------------------------------------- witness


def cmd_witness(cfg, out, seed=None, workers=1, analytic=None):
    seed = cfg.run("seed", 0) if seed is None else seed
    analytic = cfg.run("analytic", False) if analytic is None else analytic
    ws = cfg.section("witness")
    axes = ws.get("axes", ["x", "y"])
    cross = bool(ws.get("cross_axis", True))
    significance = float(ws.get("significance", 3.0))
    T = int(cfg.run("T", 100_000))
    per_axis = ws.get("T", {})
    state, app = cfg.build_state(), cfg.build_apparatus()
    calibrate = cfg.run("calibrate", True)
    groups, sets = [], []
    for a in axes:
        groups.append((a, witness.witness_labels((a,), cross_axis=False), int(per_axis.get(a, T))))
    if cross:
        groups.append(("cross", witness.witness_labels(axes, cross_axis=True), T))
    for g, (name, labels, t_g) in enumerate(groups):
        log.info("witness group %s: %d moments at T = %d per setting", name, len(labels), t_g)
        sets.append(protocol.measure(state, labels, app, t_g, seed, analytic, calibrate,
                                     workers=workers, index_offset=1000 * g))
    union = protocol.MomentUnion(sets)
    meta = {"scenario": cfg.name, "seed": seed, "analytic": bool(analytic),
            "T_per_setting": {name: (None if analytic else t_g) for name, _, t_g in groups}}
    report = witness.build_report(union, axes, significance, cross, meta)
    refs = {}
    for key, value in ws.get("references", {}).items():
        pair = key.split()[0]
        entry = report.witness.get(pair)
        if entry is not None:
            refs[key] = {"reference": value, "deviation_sigma": _deviation(entry["value"], entry["error"], value)}
    report.meta["references"] = refs
    _write(out, "witness.json", report.to_json(indent=2, sort_keys=True) + "\n")
    _write(out, "correlations.csv", report.correlation_csv())
    est = [e for ms in sets for e in ms.estimates()]
    _write(out, "witness_moments.csv", estimates_to_csv(est))
    return {"report": report, "sets": sets}


# ----------------------------------------------------------------- scaling


def _loglog_slope(T, y):
    return float(np.polyfit(np.log(T), np.log(y), 1)[0])


def scaling_study(state, app, spec, T_grid, repeats, seed, workers=1, backend=None):
    """Raw sign-weighted estimator over repeated runs at each T.

    Returns rows (T, repeats, exact, mean, mse, variance, mean_D2, bound)
    and the log-log slope of the mean squared error against T.
    """
    plan = protocol.statistic_plan(spec, calibrate=False)
    setting, photon = plan[next(iter(plan))]
    masks, lenses = app.setting_objects(setting)
    exact_table = expected_probabilities(state, masks, lenses, app.noise)
    from .estimator import t_statistic

    exact = t_statistic(exact_table, photon)
    rows = []
    for k, T in enumerate(T_grid):
        def one(r, T=T, k=k):
            table = run_direct(state, masks, lenses, app.noise, T, seed, 100_000 * (k + 1) + r, backend)
            value = moment_from_counts(table) if photon is None else t_statistic(table, photon)
            return value, uncertainty(table)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                res = list(pool.map(one, range(repeats)))
        else:
            res = [one(r) for r in range(repeats)]
        vals = np.array([v for v, _ in res])
        d2 = np.array([d for _, d in res])
        rows.append((int(T), repeats, exact, float(vals.mean()), float(np.mean((vals - exact) ** 2)),
                     float(vals.var(ddof=1)), float(d2.mean()), 1.0 / T))
    slope = _loglog_slope([r[0] for r in rows], [r[4] for r in rows])
    return rows, slope


SCALING_COLUMNS = ("T", "repeats", "exact", "mean", "mse", "variance", "mean_D2", "bound_1_over_T")


def cmd_scaling(cfg, out, seed=None, workers=1, analytic=None):
    seed = cfg.run("seed", 0) if seed is None else seed
    sc = cfg.section("scaling")
    spec = MomentSpec.parse(sc.get("moment", "x1 x2"))
    T_grid = [int(t) for t in sc.get("T_grid", [1000, 10000, 100000])]
    repeats = int(sc.get("repeats", 200))
    rows, slope = scaling_study(cfg.build_state(), cfg.build_apparatus(), spec, T_grid, repeats, seed, workers)
    _write(out, "scaling.csv", _csv(SCALING_COLUMNS, rows))
    photons = [int(n) for n in sc.get("photons", [1, 2, 4])]
    budget_rows = [(n, measurement_budget(n)) for n in photons]
    _write(out, "budget.csv", _csv(("photons", "direct_settings_calibrated"), budget_rows))
    d = int(sc.get("dimension", 2))
    direct = measurement_budget(d)
    compare = [(n, d, n**d, direct) for n in (int(v) for v in sc.get("scan_points", [5, 10, 20, 40]))]
    _write(out, "settings_comparison.csv",
           _csv(("points_per_axis", "dimension", "scanning_settings", "direct_settings"), compare))
    summary = {"scenario": cfg.name, "seed": seed, "moment": spec.label, "loglog_slope": slope,
               "max_mse_times_T": max(r[4] * r[0] for r in rows), "budget": dict(budget_rows)}
    _write(out, "scaling.json", _json(summary))
    return {"rows": rows, "slope": slope, "budget": budget_rows, "comparison": compare}


# -------------------------------------------------------------------- main

COMMANDS = {"direct": cmd_direct, "scan": cmd_scan, "witness": cmd_witness, "scaling": cmd_scaling}


def build_parser():
    parser = argparse.ArgumentParser(prog="ancilla-moments", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario TOML file or bundled scenario name")
        if name == "validate":
            continue
        p.add_argument("--seed", type=int, default=None, help="override run.seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--analytic", action="store_true", default=None, help="exact probabilities (T = infinity)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ScenarioConfig.load(args.config)
        if args.command == "validate":
            log.warning("%s: valid", cfg.source)
            return EXIT_OK
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer", [str(args.seed)])
        out = args.out or Path(cfg.section("output").get("dir", f"out/{cfg.name}"))
        COMMANDS[args.command](cfg, Path(out), args.seed, max(1, args.workers), args.analytic)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (AncillaError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
