"""Command-line driver: ``solve``, ``sweep``, ``verify`` and ``oracle`` from a JSON config.

Example config::

    {
      "problem": {"domain": {"kind": "interval", "a": 0, "b": 1, "n": 1000},
                  "p": 2, "q": 2, "source": {"kind": "constant", "value": 1}},
      "task": {"alpha": 1.0}
    }
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import DIRICHLET_GRID, ExpansionRegime, NEUMANN_GRID, geometric_grid, sweep, verify_expansion
from .exceptions import ConfigError, RobinError
from .mesh import build_interval_mesh, build_rectangle_mesh, format_mesh, import_mesh
from .oracles import oracle_1d_general_p, oracle_1d_linear
from .problem import Constant, Nodal, Polynomial, ProblemSpec
from .solvers import SOLVERS, Setting, SolverConfig

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2
COMMANDS = ("solve", "sweep", "verify", "oracle")

_SCHEMA = {
    "problem": {"domain": dict, "p": float, "q": float, "source": dict},
    "solver": {"gtol": float, "max_iter": int, "contraction": float, "armijo": float,
               "exact_linear": bool, "direction": str, "max_backtracks": int},
    "task": {"kind": str, "setting": str, "alpha": float, "alphas": (list, dict), "regime": (str, type(None)),
             "tolerances": dict, "warm_start": bool, "richardson": bool},
    "output": {"directory": str, "formats": list},
}
_DOMAIN_KEYS = {
    "interval": {"a": float, "b": float, "n": int},
    "rectangle": {"lx": float, "ly": float, "nx": int, "ny": int},
    "file": {"path": str},
}
_SOURCE_KEYS = {"constant": {"value": float}, "polynomial": {"coefficients": list},
                "nodal": {"values": list}}
_FORMATS = ("field", "csv", "json")


@dataclass
class RunConfig:
    command: str
    problem: dict
    solver: dict
    task: dict
    output: dict

    def resolved(self):
        return {"problem": self.problem, "solver": self.solver, "task": self.task, "output": self.output}


def _check_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    for key, val in block.items():
        if key not in allowed:
            raise ConfigError(f"{where}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})")
        typ = allowed[key]
        ok = (isinstance(val, (int, float)) and not isinstance(val, bool)) if typ is float else \
             (isinstance(val, int) and not isinstance(val, bool)) if typ is int else isinstance(val, typ)
        if not ok:
            name = typ.__name__ if isinstance(typ, type) else " or ".join(t.__name__ for t in typ)
            raise ConfigError(f"{where}.{key}: expected {name}, got {type(val).__name__}")


def _kind(block, table, where):
    kind = block.get("kind")
    if kind not in table:
        raise ConfigError(f"{where}.kind: expected one of {', '.join(table)}, got {kind!r}")
    rest = {k: v for k, v in block.items() if k != "kind"}
    _check_keys(rest, table[kind], where)
    missing = [k for k in table[kind] if k not in rest]
    if missing:
        raise ConfigError(f"{where}: missing {', '.join(missing)}")
    return kind


def parse_config_text(text, command, source="<config>") -> RunConfig:
    """Validate a JSON config (or a manifest written by a previous run)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if isinstance(doc, dict) and set(doc) >= {"command", "version", "config"}:
        if doc["command"] != command:
            raise ConfigError(f"{source}: manifest was written by '{doc['command']}', not '{command}'")
        doc = doc["config"]
    _check_keys(doc, {k: dict for k in _SCHEMA}, "config")
    if "problem" not in doc:
        raise ConfigError("config: missing problem block")
    for name, allowed in _SCHEMA.items():
        _check_keys(doc.get(name, {}), allowed, name)

    problem = copy.deepcopy(doc["problem"])
    for key in ("domain", "p", "q"):
        if key not in problem:
            raise ConfigError(f"problem: missing {key}")
    _kind(problem["domain"], _DOMAIN_KEYS, "problem.domain")
    problem.setdefault("source", {"kind": "constant", "value": 1.0})
    _kind(problem["source"], _SOURCE_KEYS, "problem.source")
    for e in ("p", "q"):
        v = problem[e]
        if not math.isfinite(v) or not v > 1:
            raise ConfigError(f"problem.{e}: {e} must exceed 1 (admissible range 1 < {e} < inf), got {v}")

    solver = {**asdict(SolverConfig()), **doc.get("solver", {})}
    try:
        SolverConfig(**solver)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None

    task = dict(doc.get("task", {}))
    if task.get("kind", command) != command:
        raise ConfigError(f"task.kind: config is for '{task['kind']}', command is '{command}'")
    task["kind"] = command
    if "alpha" in task:
        a = task["alpha"]
        if not math.isfinite(a) or a < 0:
            raise ConfigError(f"task.alpha: alpha must be nonnegative (alpha < 0 gives E = -inf), got {a}")
    if command == "solve":
        task.setdefault("setting", "robin")
        if task["setting"] not in {s.value for s in Setting}:
            raise ConfigError(f"task.setting: unknown setting {task['setting']!r}")
        if task["setting"] == "robin":
            task.setdefault("alpha", 1.0)
            if not task["alpha"] > 0:
                raise ConfigError("task.alpha: the Robin problem needs alpha > 0")
    if command in ("sweep", "verify"):
        task["alphas"] = _alphas(task, command)
    if command == "verify":
        task.setdefault("regime", None)
        if task["regime"] not in (None, *(r.value for r in ExpansionRegime)):
            raise ConfigError(f"task.regime: unknown regime {task['regime']!r}")
        task.setdefault("tolerances", {})
        task.setdefault("richardson", True)
        _check_keys(task["tolerances"], {"exponent": float, "constant": float}, "task.tolerances")
    if command == "sweep":
        task.setdefault("warm_start", True)
    if command == "oracle":
        task.setdefault("alpha", 1.0)

    output = {"directory": "out", "formats": list(_FORMATS), **doc.get("output", {})}
    bad = [f for f in output["formats"] if f not in _FORMATS]
    if bad:
        raise ConfigError(f"output.formats: unknown format(s) {bad}; allowed {list(_FORMATS)}")
    return RunConfig(command=command, problem=problem, solver=solver, task=task, output=output)


def _alphas(task, command):
    spec = task.get("alphas")
    if spec is None:
        regime = task.get("regime")
        return list(DIRICHLET_GRID if regime in (None, "dirichlet") else NEUMANN_GRID)
    if isinstance(spec, dict):
        _check_keys(spec, {"lo": float, "hi": float, "per_decade": int}, "task.alphas")
        if not 0 < spec.get("lo", 0) < spec.get("hi", 0):
            raise ConfigError("task.alphas: need 0 < lo < hi")
        return list(geometric_grid(spec["lo"], spec["hi"], spec.get("per_decade", 4)))
    vals = []
    for i, v in enumerate(spec):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"task.alphas[{i}]: expected a finite number")
        if v <= 0:
            raise ConfigError(f"task.alphas[{i}]: alpha must be positive (alpha < 0 gives E = -inf)")
        vals.append(float(v))
    if any(b <= a for a, b in zip(vals, vals[1:])) or not vals:
        raise ConfigError("task.alphas: must be a non-empty strictly increasing list")
    return vals


def parse_config(path, command) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config_text(text, command, str(path))


def build_spec(problem, alpha=1.0) -> ProblemSpec:
    dom = problem["domain"]
    kind = dom["kind"]
    if kind == "interval":
        mesh = build_interval_mesh(dom["a"], dom["b"], dom["n"])
    elif kind == "rectangle":
        mesh = build_rectangle_mesh(dom["lx"], dom["ly"], dom["nx"], dom["ny"])
    else:
        mesh = import_mesh(dom["path"])
    src = problem["source"]
    if src["kind"] == "constant":
        source = Constant(float(src["value"]))
    elif src["kind"] == "polynomial":
        source = Polynomial(src["coefficients"])
    else:
        source = Nodal(src["values"])
    return ProblemSpec(mesh, float(problem["p"]), float(problem["q"]), float(alpha), source)


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, arrays become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, doc):
    path.write_text(json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n")


def format_field(field):
    lines = [format_mesh(field.mesh).rstrip("\n"), f"values {field.values.size}"]
    lines += [repr(float(v)) for v in field.values]
    return "\n".join(lines) + "\n"


def _solve(cfg, spec, out, workers):
    setting = Setting(cfg.task["setting"])
    sol = SOLVERS[setting](spec, SolverConfig(**cfg.solver))
    if "field" in cfg.output["formats"]:
        (out / "solution.field").write_text(format_field(sol.field))
    e = sol.energy
    report = {"setting": setting.value, "alpha": spec.alpha if setting is Setting.ROBIN else 0.0,
              "energy": {"total": e.total, "bulk": e.bulk, "boundary": e.boundary, "source": e.source},
              "iterations": sol.iterations, "residual_norm": sol.residual_norm,
              "tolerance": sol.tolerance, "fingerprint": spec.fingerprint()}
    return report, True


def _sweep(cfg, spec, out, workers):
    table = sweep(spec, cfg.task["alphas"], SolverConfig(**cfg.solver),
                  warm_start=cfg.task["warm_start"], workers=workers)
    if "csv" in cfg.output["formats"]:
        table.write_csv(out / "sweep.csv")
    report = {"rows": len(table.rows), "all_converged": table.all_ok,
              "monotone": table.is_monotone(), "concave": table.is_concave(),
              "derivative_sandwich": bool(np.all(table.derivative_sandwich())),
              "failures": [{"alpha": r.alpha, "error": r.error} for r in table.rows if not r.ok],
              "fingerprint": table.fingerprint}
    return report, True


def _verify(cfg, spec, out, workers):
    rep = verify_expansion(spec, cfg.task["alphas"], SolverConfig(**cfg.solver), cfg.task["regime"],
                           cfg.task["tolerances"], richardson=cfg.task["richardson"])
    if "csv" in cfg.output["formats"]:
        rep.table.write_csv(out / "sweep.csv")
    return rep.to_dict(), rep.passed and rep.all_checks_ok


def _oracle(cfg, spec, out, workers):
    mesh = spec.mesh
    if mesh.dimension != 1 or mesh.family is None:
        raise ConfigError("oracle: only generated interval domains have a reference solution")
    a, b = mesh.family[1], mesh.family[2]
    alpha = cfg.task["alpha"]
    if not isinstance(spec.source, (Constant, Polynomial)):
        raise ConfigError("oracle: needs a constant or polynomial source")
    if spec.p == 2 and spec.q == 2 and isinstance(spec.source, Constant) and alpha > 0:
        o = oracle_1d_linear(a, b, alpha, spec.source.value)
    else:
        o = oracle_1d_general_p(a, b, spec.p, spec.q, alpha, spec.source)
    report = {"method": o.method, "alpha": alpha, "E_alpha": o.E_alpha, "E_inf": o.E_inf,
              "E_0": o.E_0, "K_f": o.K_f, "dirichlet_prefactor": o.dirichlet_prefactor,
              "neumann_slope": o.neumann_slope, "flux_constant": o.flux_constant,
              "boundary_values": o.boundary_values}
    return report, True


_RUNNERS = {"solve": _solve, "sweep": _sweep, "verify": _verify, "oracle": _oracle}


def run(cfg: RunConfig, workers=1) -> int:
    """Execute a validated config; returns the exit status."""
    out = Path(cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    alpha = cfg.task.get("alpha", 1.0) if cfg.command in ("solve", "oracle") else 1.0
    spec = build_spec(cfg.problem, alpha if alpha > 0 else 1.0)
    report, ok = _RUNNERS[cfg.command](cfg, spec, out, workers)
    if "json" in cfg.output["formats"]:
        _write_json(out / "report.json", report)
    _write_json(out / "manifest.json", {"command": cfg.command, "version": __version__,
                                        "config": cfg.resolved()})
    return EXIT_OK if ok else EXIT_FAILED


def _override_mesh(cfg, n):
    dom = cfg.problem["domain"]
    if dom["kind"] == "interval":
        dom["n"] = n
    elif dom["kind"] == "rectangle":
        dom["nx"] = dom["ny"] = n
    else:
        raise ConfigError("--mesh-n cannot override an imported mesh")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="robin-asymptotics",
                                 description="Robin p-Laplacian energies and their limit expansions.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="JSON config or manifest.json of a previous run")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for cold-started sweeps")
    ap.add_argument("--mesh-n", type=int, help="override the mesh resolution")
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config, args.command)
        if args.out:
            cfg.output["directory"] = args.out
        if args.mesh_n is not None:
            if args.mesh_n < 1:
                raise ConfigError("--mesh-n must be positive")
            _override_mesh(cfg, args.mesh_n)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        return run(cfg, workers=args.threads)
    except (RobinError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
