"""Config ingestion, experiment pipelines, plot-data export, and the command line.

A config is a JSON document. One schema serves every experiment kind:

.. code-block:: json

    {
      "kind": "solve-mfg",
      "population": [
        {"weight": 1.0, "x": 1.0, "gamma": 0.5, "theta": 1.0,
         "coefficients": {"mode": "constant", "h": 0.1, "sigma": 0.2, "sigma0": 0.2}}
      ],
      "grid": {"T": 1.0, "M": 16},
      "scenario": {"n_common": 256, "n_particles": 1, "seed": 7}
    }

Coefficient modes are ``constant`` (scalars), ``time_varying`` (lists, one
value per cell of ``[0, T]``) and ``markov`` (expressions in ``t`` and ``w``
with declared ``bounds``). Optional sections tune the solver and the
individual pipelines. A run manifest embeds the effective config, so the
manifest itself is accepted wherever a config is.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import sympy

from . import __version__
from .bsde import (SolverConfig, common_paths, equilibrium_fields, notation_pack, picard_solve,
                   reconstruct_equilibrium, solve_benchmark)
from .closed_form import equilibrium_report, merton_field, mfg_strategy, mfg_Y_paths, nplayer_strategies
from .errors import (ConfigError, DegenerateGameError, DegeneratePopulationError, InvalidArgumentError,
                     NumericalOverflowError, SolverDivergedError, TransformationDegenerateError)
from .expansion import expand, expansion_order_check
from .market import (GAMMA_MIN, WEIGHT_TOL, AgentType, CoefficientModel, PopulationSpec, StrategyField,
                     TimeGrid, build_scenarios, conditional_log_index, write_rows)
from .verification import (AuditReport, best_response_test, fixed_point_residual, martingale_test,
                           nplayer_convergence)

KINDS = ("solve-mfg", "solve-nplayer", "solve-bsde", "expand", "verify", "convergence")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_DEGENERATE = 4
EXIT_IO = 5
EXIT_OVERFLOW = 6
EXIT_AUDIT_FAILED = 7

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM_OR_LIST = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]}
_NUM_OR_EXPR = {"oneOf": [_NUM, {"type": "string", "minLength": 1}]}
_BOUND = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_COEFFS = {
    "oneOf": [
        _obj({"mode": {"const": "constant"}, "h": _NUM, "sigma": _NUM, "sigma0": _NUM},
             ("mode", "h", "sigma", "sigma0")),
        _obj({"mode": {"const": "time_varying"}, "h": _NUM_OR_LIST, "sigma": _NUM_OR_LIST,
              "sigma0": _NUM_OR_LIST}, ("mode", "h", "sigma", "sigma0")),
        _obj({"mode": {"const": "markov"}, "h": _NUM_OR_EXPR, "sigma": _NUM_OR_EXPR, "sigma0": _NUM_OR_EXPR,
              "bounds": _obj({"h": _BOUND, "sigma": _BOUND, "sigma0": _BOUND}, ("h", "sigma", "sigma0"))},
             ("mode", "h", "sigma", "sigma0", "bounds")),
    ]
}

_TYPE = _obj({
    "weight": {"type": "number", "exclusiveMinimum": 0, "maximum": 1, "description": "weight in (0, 1]"},
    "x": {"type": "number", "exclusiveMinimum": 0, "description": "initial wealth x > 0"},
    "gamma": {"type": "number", "exclusiveMaximum": 1, "description": "gamma < 1 and gamma != 0"},
    "theta": {"type": "number", "minimum": 0, "maximum": 1, "description": "theta in [0, 1]"},
    "coefficients": _COEFFS,
}, ("x", "gamma", "theta", "coefficients"))

SCHEMA = _obj({
    "kind": {"enum": list(KINDS)},
    "population": {"type": "array", "items": _TYPE, "minItems": 1},
    "grid": _obj({"T": _POS, "M": _POS_INT}, ("T", "M")),
    "scenario": _obj({"n_common": _POS_INT, "n_particles": _POS_INT,
                      "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}}),
    "solver": _obj({"tol": _POS, "max_iter": _POS_INT, "basis_degree": {"type": "integer", "minimum": 0},
                    "damping": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}}),
    "players": {"type": "array", "items": _TYPE, "minItems": 2},
    "nplayer": _obj({"N": {"type": "integer", "minimum": 2}}),
    "sweep": _obj({"thetas": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}}}),
    "expansion": _obj({"order": _POS_INT,
                       "thetas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                             "maximum": 1}}}),
    "verify": _obj({"paths": _POS_INT,
                    "perturbations": {"type": "array", "items": _NUM},
                    "fixed_point": _obj({"n_common": _POS_INT, "n_particles": {"type": "integer", "minimum": 2}}),
                    "type_index": {"type": "integer", "minimum": 0}}),
    "convergence": _obj({"N_list": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
                         "repeats": _POS_INT}),
    "output": {"type": "string"},
}, ("population", "grid"))

DEFAULTS = {
    "scenario": {"n_common": 256, "n_particles": 1, "seed": 0},
    "solver": {"tol": 1e-10, "max_iter": 200, "basis_degree": 4, "damping": 0.0},
    "nplayer": {"N": 4},
    "sweep": {"thetas": [0.0, 0.25, 0.5, 0.75, 1.0]},
    "expansion": {"order": 2, "thetas": [0.2, 0.1, 0.05, 0.025]},
    "verify": {"paths": 100000, "perturbations": [0.25, -0.25, 0.5, -0.5],
               "fixed_point": {"n_common": 200, "n_particles": 1000}, "type_index": 0},
    "convergence": {"N_list": [4, 16, 64, 256], "repeats": 64},
}


# --------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config. ``raw`` is the normalized JSON document with defaults filled in."""

    raw: dict
    population: PopulationSpec
    grid: TimeGrid
    solver: SolverConfig
    players: tuple = ()
    kind: str | None = None
    output: str | None = None

    @property
    def seed(self) -> int:
        return int(self.raw["scenario"]["seed"])

    def section(self, name: str) -> dict:
        return self.raw[name]

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _fill_defaults(doc: dict) -> dict:
    out = json.loads(json.dumps(doc))
    for key, dflt in DEFAULTS.items():
        sect = out.setdefault(key, {})
        for k, v in dflt.items():
            if isinstance(v, dict):
                sub = sect.setdefault(k, {})
                for kk, vv in v.items():
                    sub.setdefault(kk, vv)
            else:
                sect.setdefault(k, v)
    return out


_SYM_T, _SYM_W = sympy.symbols("t w")
_EXPR_NAMES = {"t", "w", "exp", "log", "sqrt", "tanh", "sinh", "cosh", "sin", "cos", "atan", "Abs", "Min",
               "Max", "pi", "E"}
_EXPR_CHARS = re.compile(r"^[0-9A-Za-z_.+\-*/()^, ]*$")


def _evaluator(value, where: str, errors: list):
    """Numbers pass through; strings become vectorized functions of ``(t, w)``."""
    if not isinstance(value, str):
        return float(value)
    names = set(re.findall(r"[A-Za-z_][A-Za-z_0-9]*", value))
    if not _EXPR_CHARS.match(value) or "__" in value or not names <= _EXPR_NAMES:
        errors.append((where, f"expression {value!r} may only use t, w, numbers, arithmetic and "
                              f"{sorted(_EXPR_NAMES - {'t', 'w'})}"))
        return None
    try:
        expr = sympy.sympify(value, locals={"t": _SYM_T, "w": _SYM_W})
    except Exception as exc:  # parsing must be total
        errors.append((where, f"cannot parse expression {value!r}: {exc}"))
        return None
    extra = expr.free_symbols - {_SYM_T, _SYM_W}
    if extra:
        errors.append((where, f"expression may only use t and w, found {sorted(map(str, extra))}"))
        return None
    fn = sympy.lambdify((_SYM_T, _SYM_W), expr, "numpy")
    return lambda t, w: np.asarray(fn(t, w), dtype=float) + np.zeros(np.broadcast_shapes(np.shape(t), np.shape(w)))


def _coefficients(spec: dict, horizon: float, where: str, errors: list):
    mode = spec["mode"]
    try:
        if mode == "constant":
            return CoefficientModel.constant(spec["h"], spec["sigma"], spec["sigma0"])
        if mode == "time_varying":
            return CoefficientModel.time_varying(spec["h"], spec["sigma"], spec["sigma0"], horizon)
        evs = [_evaluator(spec[n], f"{where}.{n}", errors) for n in ("h", "sigma", "sigma0")]
        if any(e is None for e in evs):
            return None
        return CoefficientModel.common_noise_markov(*evs, bounds=spec["bounds"])
    except InvalidArgumentError as exc:
        errors.append((where, str(exc)))
        return None


def _agent(spec: dict, horizon: float, where: str, errors: list):
    if abs(spec["gamma"]) < GAMMA_MIN:
        errors.append((f"{where}.gamma", f"|gamma| must be at least {GAMMA_MIN}"))
        return None
    coeffs = _coefficients(spec["coefficients"], horizon, f"{where}.coefficients", errors)
    if coeffs is None:
        return None
    try:
        return AgentType(float(spec["x"]), float(spec["gamma"]), float(spec["theta"]), coeffs)
    except InvalidArgumentError as exc:
        errors.append((where, str(exc)))
        return None


def _unwrap_manifest(doc):
    if isinstance(doc, dict) and "manifest_version" in doc:
        return doc.get("config")
    return doc


def parse_config(text) -> ExperimentConfig:
    """Parse and validate a JSON config (or a run manifest).

    Every problem is reported as a ``(path, reason)`` pair in a single
    :class:`~mfpg.errors.ConfigError`. No other exception escapes.
    """
    try:
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        doc = _unwrap_manifest(json.loads(text))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError([("$", f"not valid UTF-8 JSON: {exc}")]) from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        reason = err.message
        desc = err.schema.get("description") if isinstance(err.schema, dict) else None
        if desc:
            reason += f" (constraint: {desc})"
        errors.append((_json_path(err.absolute_path), reason))
    if errors:
        raise ConfigError(errors)
    doc = _fill_defaults(doc)
    T, M = float(doc["grid"]["T"]), int(doc["grid"]["M"])
    weights = [float(e.get("weight", 1.0 if len(doc["population"]) == 1 else 0.0)) for e in doc["population"]]
    for i, e in enumerate(doc["population"]):
        if "weight" not in e and len(doc["population"]) > 1:
            errors.append((f"$.population[{i}].weight", "required when the population has several types"))
    if not errors and abs(sum(weights) - 1.0) > WEIGHT_TOL:
        errors.append(("$.population[*].weight", f"weights must sum to 1, got {sum(weights)!r}"))
    agents = [_agent(e, T, f"$.population[{i}]", errors) for i, e in enumerate(doc["population"])]
    players = tuple(_agent(e, T, f"$.players[{i}]", errors) for i, e in enumerate(doc.get("players", [])))
    try:
        solver = SolverConfig(**doc["solver"])
    except InvalidArgumentError as exc:
        errors.append(("$.solver", str(exc)))
    if errors:
        raise ConfigError(errors)
    pop = PopulationSpec(tuple(zip(weights, agents)))
    return ExperimentConfig(doc, pop, TimeGrid(T, M), solver, players, doc.get("kind"), doc.get("output"))


def apply_overrides(cfg: ExperimentConfig, kind=None, seed=None, order=None, paths=None,
                    particles=None, steps=None, out=None) -> ExperimentConfig:
    """Return a re-validated config with command-line overrides applied."""
    doc = json.loads(json.dumps(cfg.raw))
    if kind is not None:
        doc["kind"] = kind
    if seed is not None:
        doc["scenario"]["seed"] = int(seed)
    if order is not None:
        doc["expansion"]["order"] = int(order)
    if paths is not None:
        doc["scenario"]["n_common"] = int(paths)
        doc["verify"]["paths"] = int(paths)
    if particles is not None:
        doc["scenario"]["n_particles"] = int(particles)
        doc["verify"]["fixed_point"]["n_particles"] = int(particles)
    if steps is not None:
        doc["grid"]["M"] = int(steps)
    if out is not None:
        doc["output"] = str(out)
    return parse_config(json.dumps(doc))


# --------------------------------------------------------------------------
# pipelines


@dataclass
class Results:
    """Tables produced by a run. ``tables`` maps file names to ``(header, rows)``."""

    tables: dict = field(default_factory=dict)
    writers: dict = field(default_factory=dict)
    verdict: str | None = None
    passed: bool = True
    theta_sweep: list | None = None
    remainder: list | None = None
    convergence: list | None = None


def _require_closed_form(cfg: ExperimentConfig, kind: str):
    if not cfg.population.type_measurable:
        raise InvalidArgumentError(f"{kind} needs type-measurable coefficients; use solve-bsde for Markov ones")


def _theta_sweep(cfg: ExperimentConfig) -> list:
    rows = []
    if not cfg.population.type_measurable:
        return rows
    t0 = cfg.grid.left_nodes[:1]
    for th in cfg.section("sweep")["thetas"]:
        pop = PopulationSpec(tuple((w, a.with_theta(th)) for w, a in cfg.population.entries))
        for k, a in enumerate(pop.types):
            rows.append((float(th), k, float(np.asarray(mfg_strategy(pop, a, t0)).reshape(-1)[0])))
    return rows


def _run_solve_mfg(cfg: ExperimentConfig, res: Results):
    _require_closed_form(cfg, "solve-mfg")
    res.writers["strategy.csv"] = equilibrium_report(cfg.population, cfg.grid).to_csv
    res.theta_sweep = _theta_sweep(cfg)


def _apportion(weights, N: int) -> list[int]:
    """Largest-remainder counts of ``N`` players over the mixture weights."""
    raw = np.asarray(weights) * N
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: N - counts.sum()]] += 1
    return [int(c) for c in counts]


def _run_solve_nplayer(cfg: ExperimentConfig, res: Results):
    """Players come from ``players`` if given, else ``nplayer.N`` players apportioned over the types."""
    players = list(cfg.players)
    if not players:
        counts = _apportion(cfg.population.weights, cfg.section("nplayer")["N"])
        players = [a for a, n in zip(cfg.population.types, counts) for _ in range(n)]
    if not all(p.coeffs.type_measurable for p in players):
        raise InvalidArgumentError("solve-nplayer needs type-measurable coefficients")
    t = cfg.grid.left_nodes
    pis = np.stack([np.broadcast_to(np.asarray(nplayer_strategies(players, tm)), (len(players),)) for tm in t])
    rows = [(i, t[m], pis[m, i]) for i in range(len(players)) for m in range(t.size)]
    res.tables["nplayer.csv"] = (("player_id", "t", "pi"), rows)


def _scenarios(cfg: ExperimentConfig, n_common=None, n_particles=None, seed_offset=0):
    sc = cfg.section("scenario")
    return build_scenarios(cfg.population, cfg.grid,
                           sc["n_common"] if n_common is None else n_common,
                           sc["n_particles"] if n_particles is None else n_particles,
                           (cfg.seed + seed_offset) % 2**64)


def _run_solve_bsde(cfg: ExperimentConfig, res: Results):
    scen = _scenarios(cfg)
    bench = solve_benchmark(scen, cfg.population, cfg.solver)
    sol = picard_solve(scen, cfg.population, bench, cfg.solver)
    res.writers["bsde_diagnostics.csv"] = sol.diagnostics_csv
    res.writers["equilibrium.csv"] = reconstruct_equilibrium(sol, bench).to_csv
    rows = [(k, float(bench.Y[k, :, 0].mean()), float(sol.Y0[k]), int(sol.iterations), float(sol.residual),
             float(sol.ball_ratio)) for k in range(len(cfg.population))]
    res.tables["bsde_summary.csv"] = (("type_id", "Y0_benchmark", "Y0", "iterations", "residual",
                                       "z_norm_over_R"), rows)
    res.theta_sweep = _theta_sweep(cfg)


def _run_expand(cfg: ExperimentConfig, res: Results):
    ex = cfg.section("expansion")
    scen = _scenarios(cfg)
    coeffs = expand(scen, cfg.population, None, ex["order"], cfg.solver)
    res.writers["expansion.csv"] = coeffs.to_csv
    res.remainder = []
    if cfg.population.type_measurable:
        for n in range(1, coeffs.n + 1):
            chk = expansion_order_check(coeffs, ex["thetas"], n=n)
            res.remainder.extend((float(th), float(e), n) for th, e in zip(chk.thetas, chk.errors))
            res.tables.setdefault("expansion_slopes.csv", (("order", "slope", "passed"), []))[1].append(
                (n, chk.slope, int(chk.passed)))


def _markov_merton(bench, scen) -> StrategyField:
    pack = notation_pack(scen.population, bench, common_paths(scen))
    return StrategyField(scen.grid, pack.h_prime * pack.c / pack.A)


def _run_verify(cfg: ExperimentConfig, res: Results):
    v = cfg.section("verify")
    pop, grid = cfg.population, cfg.grid
    k = int(v["type_index"])
    if k >= len(pop):
        raise InvalidArgumentError(f"verify.type_index {k} is out of range")
    big = _scenarios(cfg, n_common=v["paths"], n_particles=1, seed_offset=1)
    fp = _scenarios(cfg, n_common=v["fixed_point"]["n_common"], n_particles=v["fixed_point"]["n_particles"],
                    seed_offset=2)
    if pop.type_measurable:
        strat = StrategyField(grid, equilibrium_report(pop, grid).pi_star)
        Y = mfg_Y_paths(pop, grid, big.dW0)
        strat_big = strat_fp = strat
        merton_fp = merton_field(pop, grid)
    else:
        solve_scen = _scenarios(cfg)
        bench = solve_benchmark(solve_scen, pop, cfg.solver)
        sol = picard_solve(solve_scen, pop, bench, cfg.solver)
        eq_big = equilibrium_fields(sol, bench, big)
        eq_fp = equilibrium_fields(sol, bench, fp)
        strat_big, Y, strat_fp = eq_big.pi, eq_big.Y, eq_fp.pi
        merton_fp = _markov_merton(bench, fp)
    report = AuditReport()
    cand = conditional_log_index(fp, strat_fp)
    report.fixed_point = fixed_point_residual(pop, strat_fp, fp, cand)
    report.negative_control = fixed_point_residual(pop, merton_fp, fp, cand)
    report.martingale = martingale_test(pop, strat_big, Y, big, type_index=k)
    log_mu = conditional_log_index(big, strat_big)
    report.gaps = best_response_test(pop, strat_big, list(v["perturbations"]) or [0.0], big, log_mu, type_index=k)
    res.writers["audit.csv"] = report.to_csv
    res.verdict = report.verdict()
    res.passed = report.passed


def _run_convergence(cfg: ExperimentConfig, res: Results):
    _require_closed_form(cfg, "convergence")
    c = cfg.section("convergence")
    tab = nplayer_convergence(cfg.population, c["N_list"], cfg.seed, repeats=c["repeats"])
    res.tables["convergence.csv"] = (("N", "median_error", "mean_error"), tab.rows())
    res.tables["convergence_fit.csv"] = (("slope",), [(tab.slope,)])
    res.convergence = [(int(n), r, float(e)) for n, row in zip(tab.N, tab.errors) for r, e in enumerate(row)]


PIPELINES = {
    "solve-mfg": _run_solve_mfg,
    "solve-nplayer": _run_solve_nplayer,
    "solve-bsde": _run_solve_bsde,
    "expand": _run_expand,
    "verify": _run_verify,
    "convergence": _run_convergence,
}


def emit_plot_data(results: Results, out) -> list[str]:
    """Write long-format CSVs for external plotting. Returns the file names written.

    * ``theta_sweep.csv``: ``(theta, type_id, pi_star)``;
    * ``remainder.csv``: ``(theta, abs_error, order)``;
    * ``convergence_curve.csv``: ``(N, repeat, abs_error)``.

    Only present result sets are written; an empty set gives a header-only file.
    Rows keep the order in which the pipelines produced them, which is
    sorted by order or ``N`` first, then by ``theta`` or repeat.
    """
    out = Path(out)
    names = []
    specs = (("theta_sweep.csv", ("theta", "type_id", "pi_star"), results.theta_sweep),
             ("remainder.csv", ("theta", "abs_error", "order"), results.remainder),
             ("convergence_curve.csv", ("N", "repeat", "abs_error"), results.convergence))
    for name, header, rows in specs:
        if rows is not None:
            write_rows(out / name, header, rows)
            names.append(name)
    return names


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, SolverDivergedError):
        return EXIT_DIVERGED
    if isinstance(exc, (DegeneratePopulationError, DegenerateGameError, TransformationDegenerateError)):
        return EXIT_DEGENERATE
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, NumericalOverflowError):
        return EXIT_OVERFLOW
    if isinstance(exc, InvalidArgumentError):
        return EXIT_CONFIG
    return EXIT_OTHER


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    return {"mfpg": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "sympy": sympy.__version__}


def run_experiment(cfg: ExperimentConfig, out=None, kind=None) -> tuple[int, list[str]]:
    """Run the pipeline selected by ``kind`` (default ``cfg.kind``) and write its outputs.

    Writes the CSV outputs, plot data, and ``manifest.json`` into ``out``
    (default ``cfg.output``, else the current directory). On failure,
    ``failure.json`` records the error type, message, and exit code. Returns
    ``(exit_code, files)``.
    """
    kind = kind or cfg.kind
    out = Path(out if out is not None else (cfg.output or "."))
    t0 = time.perf_counter()
    files: list[str] = []
    status, code, failure = "ok", EXIT_OK, None
    try:
        if kind not in PIPELINES:
            raise ConfigError([("$.kind", f"experiment kind must be one of {list(KINDS)}, got {kind!r}")])
        out.mkdir(parents=True, exist_ok=True)
        res = Results()
        PIPELINES[kind](cfg, res)
        for name in sorted(res.tables):
            header, rows = res.tables[name]
            write_rows(out / name, header, rows)
            files.append(name)
        for name in sorted(res.writers):
            res.writers[name](out / name)
            files.append(name)
        files.extend(emit_plot_data(res, out))
        if res.verdict is not None:
            (out / "verdict.txt").write_bytes(res.verdict.encode())
            files.append("verdict.txt")
        if not res.passed:
            status, code = "audit-failed", EXIT_AUDIT_FAILED
    except Exception as exc:  # every failure becomes a record and an exit code
        code = _exit_code(exc)
        status = "error"
        failure = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if isinstance(exc, ConfigError):
            failure["errors"] = [{"path": p, "reason": r} for p, r in exc.errors]
        if isinstance(exc, SolverDivergedError):
            failure["residual"] = exc.residual
    raw = dict(cfg.raw, kind=kind)
    raw.pop("output", None)
    manifest = {
        "manifest_version": 1,
        "kind": kind,
        "status": status,
        "exit_code": code,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest(),
        "config": raw,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "outputs": {name: _sha256(out / name) for name in sorted(files) if (out / name).exists()},
    }
    if failure is not None:
        manifest["failure"] = failure
    try:
        out.mkdir(parents=True, exist_ok=True)
        if failure is not None:
            (out / "failure.json").write_text(json.dumps(failure, indent=2, sort_keys=True) + "\n")
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_IO, files
    return code, sorted(files)


# --------------------------------------------------------------------------
# command line


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfpg", description="Mean-field portfolio game experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} pipeline")
        p.add_argument("--config", required=True, help="JSON config or run manifest")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--paths", type=int, help="number of common-noise paths")
        p.add_argument("--particles", type=int, help="particles per type and common path")
        p.add_argument("--steps", type=int, help="number of time steps M")
        if kind == "expand":
            p.add_argument("--order", type=int, help="expansion order n")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_bytes()
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc), "exit_code": EXIT_IO}), file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text)
        cfg = apply_overrides(cfg, kind=args.command, seed=args.seed, order=getattr(args, "order", None),
                              paths=args.paths, particles=args.particles, steps=args.steps, out=args.out)
    except ConfigError as exc:
        record = {"error": "ConfigError", "exit_code": EXIT_CONFIG,
                  "errors": [{"path": p, "reason": r} for p, r in exc.errors]}
        print(json.dumps(record), file=sys.stderr)
        return EXIT_CONFIG
    code, files = run_experiment(cfg, kind=args.command)
    out = Path(cfg.output or ".")
    if code in (EXIT_OK, EXIT_AUDIT_FAILED):
        verdict = out / "verdict.txt"
        if verdict.exists():
            sys.stdout.write(verdict.read_text())
        for name in files:
            print(out / name)
    else:
        sys.stderr.write((out / "failure.json").read_text() if (out / "failure.json").exists() else "")
    return code
