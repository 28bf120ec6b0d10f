"""Experiment configuration: YAML loading, validation and defaults.

Pairs are written 1-based in configuration files (``[1, 2]``) and converted
to 0-based tuples internally.
"""

from __future__ import annotations

import copy
from numbers import Real

import yaml

from .model import KINDS, PairPotential, SystemSpec

SUBCOMMANDS = ("twobody-threshold", "defs-probe", "kernel-bounds", "threebody-absorption", "tail-probe")
STOCHASTIC = ("threebody-absorption",)


class ConfigError(ValueError):
    """Configuration violations; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


SOLVER_DEFAULTS = {
    "grid": {"n": 2000, "r_max": 20.0},
    "basis_size": 60,
    "pool_size": 20,
    "b_min": 0.1,
    "b_max": 50.0,
}

EXPERIMENT_DEFAULTS = {
    "twobody-threshold": {"pair": [1, 2], "tol": 1e-3, "factors": [0.9, 1.0, 1.1], "lambda_max": 1e4},
    "defs-probe": {"pair": [1, 2], "factors": [1.0, 0.95], "epsilons": [0.01, 0.1],
                   "box": {"n": 200000, "r_max": 2000.0}, "tol": 1e-10},
    "kernel-bounds": {"pair": [1, 2], "spectator_pair": [2, 3], "lambda_factor": 0.9,
                      "k_values": [0.0, 0.1, 1.0],
                      "k_n": [0.0, 0.001, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0]},
    "threebody-absorption": {"epsilons": [0.03, 0.01, 0.003, 0.001, 0.0003, 0.0001],
                             "approach": [0.01, 0.001], "approach_grow": 30, "grow_per_row": 50,
                             "extra": 20, "l_values": [5.0], "deep_factor": 1.5, "tol": 1e-3},
    "tail-probe": {"pair": [1, 2], "q_values": [0.0, 2.0, 4.0, 8.0], "grid": {"n": 1500, "r_max": 40.0}},
}

OUTPUT_DEFAULTS = {"directory": "out", "formats": ["json", "csv"]}

TOP_KEYS = {"system", "solver", "experiment", "output"}
SYSTEM_KEYS = {"masses", "potentials", "coupling", "pinned"}
POTENTIAL_KEYS = {"pair", "kind", "depth", "range", "components"}
SOLVER_KEYS = set(SOLVER_DEFAULTS) | {"seed"}
GRID_KEYS = {"n", "r_max"}
OUTPUT_KEYS = set(OUTPUT_DEFAULTS)


def _is_number(x) -> bool:
    return isinstance(x, Real) and not isinstance(x, bool)


def _unknown(block: dict, allowed, where: str, out: list):
    for key in block:
        if key not in allowed:
            out.append(f"{where}.{key}: unknown key")


def _check_pair(pair, n, where, out) -> bool:
    if (not isinstance(pair, (list, tuple)) or len(pair) != 2
            or not all(isinstance(p, int) and not isinstance(p, bool) for p in pair)):
        out.append(f"{where}: pair must be two particle numbers")
        return False
    i, j = pair
    if i == j or not (1 <= i <= n and 1 <= j <= n):
        out.append(f"{where}: pair {list(pair)} out of range 1..{n}")
        return False
    return True


def _check_potential(entry, where, out):
    kind = entry.get("kind")
    if kind is None:
        out.append(f"{where}.kind required")
    elif kind not in KINDS:
        out.append(f"{where}.kind: unknown potential kind {kind!r} (expected one of {', '.join(KINDS)})")
    for key in ("depth", "range"):
        if key in entry and not _is_number(entry[key]):
            out.append(f"{where}.{key}: must be a number")
    if _is_number(entry.get("range", 1.0)) and not entry.get("range", 1.0) > 0:
        out.append(f"{where}.range: range must be > 0")
    if kind == "gaussian-sum":
        comps = entry.get("components")
        if not comps or not isinstance(comps, list):
            out.append(f"{where}.components required for gaussian-sum")
        else:
            for k, c in enumerate(comps):
                if (not isinstance(c, (list, tuple)) or len(c) != 2 or not all(_is_number(x) for x in c)):
                    out.append(f"{where}.components[{k}]: must be [weight, range]")
                elif not c[1] > 0:
                    out.append(f"{where}.components[{k}]: range must be > 0")


def _check_grid(grid, where, out):
    if not isinstance(grid, dict):
        out.append(f"{where}: must be a mapping")
        return
    _unknown(grid, GRID_KEYS, where, out)
    if "n" in grid and not (isinstance(grid["n"], int) and grid["n"] >= 2):
        out.append(f"{where}.n: must be an integer >= 2")
    if "r_max" in grid and not (_is_number(grid["r_max"]) and grid["r_max"] > 0):
        out.append(f"{where}.r_max: r_max must be > 0")


def _check_number_list(values, where, out, positive=False, nonneg=False):
    if not isinstance(values, list) or not values or not all(_is_number(x) for x in values):
        out.append(f"{where}: must be a non-empty list of numbers")
        return
    if positive and any(not x > 0 for x in values):
        out.append(f"{where}: values must be > 0")
    if nonneg and any(x < 0 for x in values):
        out.append(f"{where}: values must be >= 0")


def _check_system(system, out) -> int:
    if not isinstance(system, dict):
        out.append("system required")
        return 0
    _unknown(system, SYSTEM_KEYS, "system", out)
    masses = system.get("masses")
    n = 0
    if masses is None:
        out.append("system.masses required")
    elif not isinstance(masses, list) or len(masses) < 2 or not all(_is_number(m) for m in masses):
        out.append("system.masses: must be a list of at least two numbers")
    elif any(not m > 0 for m in masses):
        out.append("system.masses: masses must be > 0")
    else:
        n = len(masses)
    if "coupling" in system and not (_is_number(system["coupling"]) and system["coupling"] > 0):
        out.append("system.coupling: coupling must be > 0")

    pots = system.get("potentials")
    if pots is None:
        out.append("system.potentials required")
    elif not isinstance(pots, list) or not pots:
        out.append("system.potentials: must be a non-empty list")
    else:
        seen, default = set(), False
        for k, entry in enumerate(pots):
            where = f"system.potentials[{k}]"
            if not isinstance(entry, dict):
                out.append(f"{where}: must be a mapping")
                continue
            _unknown(entry, POTENTIAL_KEYS, where, out)
            _check_potential(entry, where, out)
            if "pair" not in entry:
                if default:
                    out.append(f"{where}: more than one default potential (entries without pair)")
                default = True
            elif n and _check_pair(entry["pair"], n, f"{where}.pair", out):
                key = tuple(sorted(entry["pair"]))
                if key in seen:
                    out.append(f"{where}.pair: duplicate pair {list(entry['pair'])}")
                seen.add(key)
        if n and not default:
            missing = [[i + 1, j + 1] for i in range(n) for j in range(i + 1, n) if (i + 1, j + 1) not in seen]
            if missing:
                out.append(f"system.potentials: missing pairs {missing} (add them or a default entry without pair)")

    pinned = system.get("pinned", [])
    if not isinstance(pinned, list):
        out.append("system.pinned: must be a list")
    else:
        for k, entry in enumerate(pinned):
            where = f"system.pinned[{k}]"
            if not isinstance(entry, dict):
                out.append(f"{where}: must be a mapping")
                continue
            _unknown(entry, {"pair", "coupling"}, where, out)
            if "pair" not in entry:
                out.append(f"{where}.pair required")
            elif n:
                _check_pair(entry["pair"], n, f"{where}.pair", out)
            c = entry.get("coupling", "critical")
            if not (c == "critical" or (_is_number(c) and c >= 0)):
                out.append(f"{where}.coupling: must be 'critical' or a number >= 0")
    return n


def _check_experiment(sub, exp, n, out):
    if not isinstance(exp, dict):
        out.append("experiment: must be a mapping")
        return
    allowed = set(EXPERIMENT_DEFAULTS[sub]) if sub else set().union(*EXPERIMENT_DEFAULTS.values())
    _unknown(exp, allowed, "experiment", out)
    for key in ("pair", "spectator_pair"):
        if key in exp and n:
            _check_pair(exp[key], n, f"experiment.{key}", out)
    for key in ("epsilons", "approach", "l_values", "factors"):
        if key in exp:
            _check_number_list(exp[key], f"experiment.{key}", out, positive=True)
    for key in ("k_values", "k_n", "q_values"):
        if key in exp:
            _check_number_list(exp[key], f"experiment.{key}", out, nonneg=True)
    for key in ("tol", "lambda_factor", "deep_factor", "lambda_max"):
        if key in exp and not (_is_number(exp[key]) and exp[key] > 0):
            out.append(f"experiment.{key}: must be > 0")
    for key in ("approach_grow", "grow_per_row", "extra"):
        if key in exp and not (isinstance(exp[key], int) and exp[key] >= 0):
            out.append(f"experiment.{key}: must be an integer >= 0")
    for key in ("box", "grid"):
        if key in exp:
            _check_grid(exp[key], f"experiment.{key}", out)
    if sub == "threebody-absorption" and "epsilons" in exp and isinstance(exp["epsilons"], list):
        eps = exp["epsilons"]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            out.append("experiment.epsilons: must be strictly decreasing (couplings approach the threshold)")
    if sub == "kernel-bounds" and "lambda_factor" in exp and _is_number(exp["lambda_factor"]):
        if exp["lambda_factor"] >= 1:
            out.append("experiment.lambda_factor: must be < 1 (pair subcritical)")


def validate_config(raw, subcommand: str | None = None, seed_override=None) -> list[str]:
    """All schema violations of a parsed configuration (empty when valid)."""
    out: list[str] = []
    if not isinstance(raw, dict):
        return ["configuration must be a mapping"]
    _unknown(raw, TOP_KEYS, "config", out)
    n = _check_system(raw.get("system"), out)
    solver = raw.get("solver", {})
    if not isinstance(solver, dict):
        out.append("solver: must be a mapping")
        solver = {}
    _unknown(solver, SOLVER_KEYS, "solver", out)
    if "grid" in solver:
        _check_grid(solver["grid"], "solver.grid", out)
    for key in ("basis_size", "pool_size"):
        if key in solver and not (isinstance(solver[key], int) and solver[key] >= 1):
            out.append(f"solver.{key}: must be an integer >= 1")
    for key in ("b_min", "b_max"):
        if key in solver and not (_is_number(solver[key]) and solver[key] > 0):
            out.append(f"solver.{key}: must be > 0")
    if _is_number(solver.get("b_min", 1)) and _is_number(solver.get("b_max", 2)):
        if solver.get("b_min", SOLVER_DEFAULTS["b_min"]) >= solver.get("b_max", SOLVER_DEFAULTS["b_max"]):
            out.append("solver.b_min: must be smaller than solver.b_max")
    if "seed" in solver and not (isinstance(solver["seed"], int) and not isinstance(solver["seed"], bool)
                                 and 0 <= solver["seed"] < 2 ** 64):
        out.append("solver.seed: must be an unsigned 64-bit integer")
    if subcommand in STOCHASTIC and "seed" not in solver and seed_override is None:
        out.append(f"solver.seed required for {subcommand}")
    if subcommand == "threebody-absorption" and n and n != 3:
        out.append("system.masses: threebody-absorption needs exactly three particles")
    if subcommand == "kernel-bounds" and n and n < 3:
        out.append("system.masses: kernel-bounds needs at least three particles")
    _check_experiment(subcommand, raw.get("experiment", {}), n, out)
    output = raw.get("output", {})
    if not isinstance(output, dict):
        out.append("output: must be a mapping")
    else:
        _unknown(output, OUTPUT_KEYS, "output", out)
        fmts = output.get("formats", [])
        if not isinstance(fmts, list) or any(f not in ("json", "csv") for f in fmts):
            out.append("output.formats: must be a list drawn from json, csv")
    return out


def load_config(path) -> dict:
    """Parse a YAML file; raises :class:`ConfigError` if unreadable or malformed."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"cannot parse config {path}: {exc}"]) from None
    return {} if raw is None else raw


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else copy.deepcopy(v)
    return out


def resolve_config(raw: dict, subcommand: str, seed_override=None) -> dict:
    """Validated configuration with every default filled in."""
    violations = validate_config(raw, subcommand, seed_override)
    if violations:
        raise ConfigError(violations)
    cfg = {
        "system": copy.deepcopy(raw["system"]),
        "solver": _merge(SOLVER_DEFAULTS, raw.get("solver", {})),
        "experiment": _merge(EXPERIMENT_DEFAULTS[subcommand], raw.get("experiment", {})),
        "output": _merge(OUTPUT_DEFAULTS, raw.get("output", {})),
    }
    cfg["system"].setdefault("coupling", 1.0)
    cfg["system"].setdefault("pinned", [])
    if seed_override is not None:
        cfg["solver"]["seed"] = int(seed_override)
    return cfg


def pair_index(pair) -> tuple[int, int]:
    i, j = sorted(pair)
    return i - 1, j - 1


def build_system(system_cfg: dict, pinned_values: dict | None = None) -> SystemSpec:
    """``SystemSpec`` from a validated system block.

    ``pinned_values`` supplies numbers for pins given as ``critical``.
    """
    masses = system_cfg["masses"]
    n = len(masses)
    table, default = {}, None
    for entry in system_cfg["potentials"]:
        pot = PairPotential.from_dict(entry)
        if "pair" in entry:
            table[pair_index(entry["pair"])] = pot
        else:
            default = pot
    for i in range(n):
        for j in range(i + 1, n):
            table.setdefault((i, j), default)
    pinned = {}
    for entry in system_cfg.get("pinned", []):
        key = pair_index(entry["pair"])
        c = entry.get("coupling", "critical")
        pinned[key] = (pinned_values or {}).get(key) if c == "critical" else float(c)
        if pinned[key] is None:
            raise ConfigError([f"system.pinned: no critical coupling resolved for pair {entry['pair']}"])
    return SystemSpec(tuple(float(m) for m in masses), table, float(system_cfg.get("coupling", 1.0)), pinned)
