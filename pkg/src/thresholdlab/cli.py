"""Command-line driver: ``threshold-lab <subcommand> --config run.yaml``.

Every run writes ``<subcommand>.json`` (resolved config, version, results)
and CSV tables into the output directory. Exit codes: 0 success, 1 runtime
failure, 2 invalid configuration, 3 a guaranteed bound failed numerically.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import warnings

import numpy as np

from . import __version__
from .bsreg import WEGOT_BOUND, c0_constant, rtau_norm_bound, wegot_value
from .config import (SUBCOMMANDS, ConfigError, build_system, load_config, pair_index,
                     resolve_config, validate_config)
from .diagnostics import no_clustering_report, size_scaling_report, tail_bound_probe
from .fewbody import (StochasticVariationalSolver, absorption_trace, approach_threshold,
                      critical_coupling_nb, expectation_rho_sq, subsystem_preconditions)
from .jacobi import build_frame
from .twobody import (RadialGrid, bound_states, bs_max_eigenvalue, critical_coupling_2b, defs_probe,
                      resonance_check)

log = logging.getLogger("thresholdlab")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID, EXIT_BOUND = 0, 1, 2, 3


class Outcome:
    """Results of one experiment: JSON payload, CSV tables and violated bounds."""

    def __init__(self):
        self.results: dict = {}
        self.tables: dict[str, tuple[list[str], list[list]]] = {}
        self.bound_failures: list[str] = []


# -- serialisation ----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {(k if isinstance(k, str) else _key(k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _key(k):
    if isinstance(k, tuple) and len(k) == 2 and all(isinstance(i, (int, np.integer)) for i in k):
        return f"{k[0] + 1}{k[1] + 1}"
    return str(k)


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def write_outputs(subcommand: str, cfg: dict, outcome: Outcome, status: str, out_dir: str) -> list[str]:
    formats = cfg["output"]["formats"]
    written = []
    if "json" in formats:
        report = {
            "tool": "threshold-lab",
            "version": __version__,
            "subcommand": subcommand,
            "status": status,
            "bound_failures": outcome.bound_failures,
            "config": cfg,
            "results": outcome.results,
        }
        path = os.path.join(out_dir, f"{subcommand}.json")
        _atomic_write(path, json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
        written.append(path)
    if "csv" in formats:
        for name, (columns, rows) in outcome.tables.items():
            path = os.path.join(out_dir, f"{name}.csv")
            _atomic_write(path, _csv_text(columns, rows))
            written.append(path)
    return written


# -- experiments ------------------------------------------------------------------

def _grid(block: dict) -> RadialGrid:
    return RadialGrid(float(block["r_max"]), int(block["n"]))


def _system(cfg: dict, grid: RadialGrid):
    """Build the system, resolving pins given as ``critical`` to the pair threshold."""
    free = copy.deepcopy(cfg["system"])
    free["pinned"] = []
    base = build_system(free)
    values = {}
    for entry in cfg["system"].get("pinned", []):
        if entry.get("coupling", "critical") == "critical":
            i, j = pair_index(entry["pair"])
            values[(i, j)] = critical_coupling_2b(base.pair_problem(i, j), grid).lambda_cr
    return build_system(cfg["system"], values), values


def run_twobody_threshold(cfg: dict) -> Outcome:
    exp, grid = cfg["experiment"], _grid(cfg["solver"]["grid"])
    system, _ = _system(cfg, grid)
    v = system.pair_problem(*pair_index(exp["pair"]))
    report = critical_coupling_2b(v, grid, lambda_max=exp["lambda_max"])
    log.info("lambda_cr = %.10g", report.lambda_cr)
    rows, checks = [], []
    for factor in exp["factors"]:
        lam = factor * report.lambda_cr
        mu = bs_max_eigenvalue(v, lam, 0.0, grid)
        status = resonance_check(v, lam, exp["tol"], grid)
        n_bound = len(bound_states(v, lam, grid))
        rows.append([float(factor), lam, mu, status, n_bound])
        checks.append({"factor": factor, "lambda": lam, "bs_max": mu, "classification": status,
                       "n_bound": n_bound})
    out = Outcome()
    out.results = {"threshold": report.to_dict(), "pair": exp["pair"], "checks": checks}
    out.tables["twobody-threshold"] = (["factor", "lambda", "bs_max", "classification", "n_bound"], rows)
    return out


def run_defs_probe(cfg: dict) -> Outcome:
    exp, grid = cfg["experiment"], _grid(cfg["solver"]["grid"])
    system, _ = _system(cfg, grid)
    v = system.pair_problem(*pair_index(exp["pair"]))
    lam_cr = critical_coupling_2b(v, grid).lambda_cr
    box = _grid(exp["box"])
    reports, rows = [], []
    for factor in exp["factors"]:
        lam = factor * lam_cr
        rep = defs_probe(v, lam, exp["epsilons"], box, exp["tol"])
        reference = resonance_check(v, lam, grid=grid)
        log.info("factor %g: %s (Birman-Schwinger: %s)", factor, rep.classification, reference)
        d = rep.to_dict()
        d.update(factor=factor, bs_classification=reference)
        reports.append(d)
        for row in rep.rows:
            rows.append([float(factor), lam, row.epsilon, row.def1, row.def2, row.def3])
    out = Outcome()
    out.results = {"lambda_cr": lam_cr, "pair": exp["pair"], "probes": reports}
    out.tables["defs-probe"] = (["factor", "lambda", "epsilon", "def1", "def2", "def3"], rows)
    return out


def run_kernel_bounds(cfg: dict) -> Outcome:
    exp, grid = cfg["experiment"], _grid(cfg["solver"]["grid"])
    system, _ = _system(cfg, grid)
    i, j = pair_index(exp["pair"])
    v = system.pair_problem(i, j)
    lam = exp["lambda_factor"] * critical_coupling_2b(v, grid).lambda_cr
    out = Outcome()

    norm = rtau_norm_bound(v, lam, exp["k_values"], grid, strict=False)
    for row in norm.rows:
        if not row.holds:
            out.bound_failures.append(f"Birman-Schwinger norm {row.norm:.8g} > {row.bound:.8g} at k = {row.k:g}")

    rest = [p for p in range(system.n_particles) if p not in (i, j)]
    frame = build_frame(system.masses, ordering=[i, j, *rest])
    v12 = system.potentials[(i, j)].scaled(lam)
    v23 = system.potentials[pair_index(exp["spectator_pair"])].scaled(lam)
    kernel = c0_constant(v12, v23, frame)

    wegot_rows = []
    for k_n in exp["k_n"]:
        value = wegot_value(k_n)
        wegot_rows.append([float(k_n), value, WEGOT_BOUND])
        if value > WEGOT_BOUND:
            out.bound_failures.append(f"wegot integral {value:.8g} exceeds 4 pi at k_n = {k_n:g}")

    out.results = {"lambda": lam, "norm_bound": norm.to_dict(), "kernel": kernel.to_dict(),
                   "wegot": [{"k_n": r[0], "value": r[1], "bound": r[2]} for r in wegot_rows]}
    out.tables["kernel-bounds_norm"] = (["k", "norm", "bound", "stead_residual"],
                                        [[r.k, r.norm, r.bound, r.stead_residual] for r in norm.rows])
    out.tables["kernel-bounds_wegot"] = (["k_n", "value", "bound"], wegot_rows)
    return out


def run_threebody_absorption(cfg: dict) -> Outcome:
    exp, sol, grid = cfg["experiment"], cfg["solver"], _grid(cfg["solver"]["grid"])
    system, pins = _system(cfg, grid)
    out = Outcome()
    solver = StochasticVariationalSolver(n_basis=sol["basis_size"], pool_size=sol["pool_size"],
                                         b_min=sol["b_min"], b_max=sol["b_max"], seed=sol["seed"])
    threshold = critical_coupling_nb(system, solver, extra=exp["extra"], grid=grid)
    log.info("lambda_cr,3 = %.10g (shift %.2e)", threshold.lambda_cr, threshold.relative_shift)
    lam_cr = approach_threshold(solver, threshold.lambda_cr, exp["approach"], grow=exp["approach_grow"])
    log.info("refined lambda_cr,3 = %.12g with %d elements", lam_cr, len(solver.basis_))
    pre = subsystem_preconditions(system, lam_cr, exp["tol"], grid)
    log.info("subsystem preconditions: %s", pre.message)

    deep_lam = exp["deep_factor"] * lam_cr
    deep = solver.state_at(deep_lam)

    schedule = [lam_cr * (1.0 + eps) for eps in exp["epsilons"]]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        profile = absorption_trace(system, schedule, solver=solver, l_values=exp["l_values"],
                                   grow_per_row=exp["grow_per_row"])
    for w in caught:
        log.warning("%s", w.message)
    for lam, before, after in profile.monotonicity_violations:
        out.bound_failures.append(f"basis growth raised the energy at lambda = {lam:.12g}: "
                                  f"{before:.12g} -> {after:.12g}")

    deep_rho = expectation_rho_sq(deep)
    results = {
        "threshold": threshold.to_dict(),
        "lambda_cr_refined": lam_cr,
        "basis_size": len(solver.basis_),
        "pinned": [{"pair": [i + 1, j + 1], "coupling": c} for (i, j), c in sorted(system.pinned.items())],
        "pinned_resolved": {f"{i + 1}{j + 1}": c for (i, j), c in sorted(pins.items())},
        "preconditions": {"passed": pre.passed, "message": pre.message, "exhaustive": pre.exhaustive,
                          "pairs": [{"pair": [c.pair[0] + 1, c.pair[1] + 1], "coupling": c.coupling,
                                     "bs_max": c.bs_max, "status": c.status} for c in pre.pairs]},
        "deep": {"lambda": deep_lam, "energy": deep.energy, "rho_sq": deep_rho,
                 "smaller_than_trace": bool(len(profile.rows) and deep_rho < profile.rho_sq.min())},
        "trace": {"rows": len(profile.rows), "truncated": len(profile.rows) < len(schedule)},
    }
    if len(profile.rows) >= 2:
        results["size_scaling"] = size_scaling_report(profile).to_dict()
    try:
        results["no_clustering"] = no_clustering_report(profile).to_dict()
    except ValueError as exc:
        results["no_clustering"] = {"error": str(exc)}
    out.results = results
    out.tables["threebody-absorption"] = (profile.columns(), profile.table())
    return out


def run_tail_probe(cfg: dict) -> Outcome:
    exp = cfg["experiment"]
    system, _ = _system(cfg, _grid(cfg["solver"]["grid"]))
    f = system.potentials[pair_index(exp["pair"])]
    norms = tail_bound_probe(f, exp["q_values"], _grid(exp["grid"]))
    out = Outcome()
    out.results = {
        "pair": exp["pair"],
        "norms": norms,
        "non_increasing": bool(all(b <= a for a, b in zip(norms, norms[1:]))),
        "final_over_initial": norms[-1] / norms[0] if norms[0] > 0 else 0.0,
    }
    out.tables["tail-probe"] = (["q", "norm"], [[float(q), n] for q, n in zip(exp["q_values"], norms)])
    return out


RUNNERS = {
    "twobody-threshold": run_twobody_threshold,
    "defs-probe": run_defs_probe,
    "kernel-bounds": run_kernel_bounds,
    "threebody-absorption": run_threebody_absorption,
    "tail-probe": run_tail_probe,
}


# -- entry points -----------------------------------------------------------------

def run(subcommand: str, config_path: str, out_dir: str | None = None, seed: int | None = None) -> int:
    """Validate, run one experiment and write its report; returns the exit code."""
    try:
        cfg = resolve_config(load_config(config_path), subcommand, seed)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_INVALID
    if out_dir is not None:
        cfg["output"]["directory"] = out_dir
    try:
        outcome = RUNNERS[subcommand](cfg)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {subcommand} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    status = "bound_failure" if outcome.bound_failures else "ok"
    for path in write_outputs(subcommand, cfg, outcome, status, cfg["output"]["directory"]):
        log.info("wrote %s", path)
    if outcome.bound_failures:
        for msg in outcome.bound_failures:
            print(f"bound failure: {msg}", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_OK


def validate(config_path: str, subcommand: str | None = None) -> list[str]:
    """Schema violations of a config file (empty when valid); unreadable files raise ``ConfigError``."""
    return validate_config(load_config(config_path), subcommand)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


HELP = {
    "twobody-threshold": "critical coupling of one pair and checks around it",
    "defs-probe": "perturbation probes of the critical-coupling definitions",
    "kernel-bounds": "uniform Birman-Schwinger bound and kernel constants",
    "threebody-absorption": "three-body threshold and the near-threshold trace (needs a seed)",
    "tail-probe": "tail norms of |F| (H_0 + 1)^-1 outside radius q",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threshold-lab",
                                     description="Threshold and eigenvalue-absorption experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=_u64, help="random seed (overrides solver.seed)")
        p.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    p = sub.add_parser("validate", help="check a config file without running anything")
    p.add_argument("--config", required=True)
    p.add_argument("--for", dest="target", choices=SUBCOMMANDS,
                   help="also apply the rules of this subcommand (e.g. the seed requirement)")
    p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.captureWarnings(True)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.subcommand == "validate":
        try:
            violations = validate(args.config, args.target)
        except ConfigError as exc:
            violations = exc.violations
        for v in violations:
            print(v, file=sys.stderr)
        if not violations and not args.quiet:
            print("ok")
        return EXIT_INVALID if violations else EXIT_OK
    return run(args.subcommand, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
