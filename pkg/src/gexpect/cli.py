"""Command-line front door: ``gexpect <command> problem.json [options]``.

Exit codes: 0 success, 2 invalid input or evaluation failure, 3 budget
exhausted, 4 outside engine capability.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import engine as E
from . import paths as P
from .dsl import parse
from .errors import (BudgetExhaustedError, CapabilityError, EvaluationError, GExpectError,
                     GridTooNarrowError, InputError)
from .gnormal import GNormalSpec, abs_moment, scaling_identity_check
from .sublinear import CovarianceSet, GFunction, g_axiom_check

log = logging.getLogger("gexpect")

COMMANDS = ("g-eval", "moment", "expect", "scenario-sup", "gap", "capacity", "norm", "mollify",
            "approx-pipeline", "check-axioms", "check-scaling")
EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_CAPABILITY = 0, 2, 3, 4
DEFAULT_PATHS = 20_000


def load_schema(name: str) -> dict:
    return json.loads(resources.files("gexpect").joinpath("schemas", name).read_text())


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _plain(obj):
    """Convert numpy scalars and arrays to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def apply_overrides(problem: dict, overrides: list[str]) -> dict:
    """``key.sub=value`` assignments; values are parsed as JSON when possible."""
    out = copy.deepcopy(problem)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise InputError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InputError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return out


def load_problem(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read problem file {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"problem file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("problem file must hold a JSON object")
    return doc


def validate_problem(problem: dict) -> None:
    try:
        jsonschema.validate(problem, load_schema("problem.schema.json"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"problem file invalid at {where}: {exc.message}") from None


# -- problem pieces ------------------------------------------------------------------

def _need(problem, key):
    if key not in problem:
        raise InputError(f"problem file needs {key!r} for this command")
    return problem[key]


def make_spec(problem) -> GNormalSpec:
    cov = CovarianceSet.from_json(problem["sigma_set"])
    return GNormalSpec(cov, **problem.get("engine", {}))


def make_functional(problem, spec) -> E.CylinderFunctional:
    times = _need(problem, "times")
    f = parse(_need(problem, "payoff"), len(times), spec.d, problem.get("declared_growth"))
    return E.CylinderFunctional(times, f, d=spec.d)


def make_family(problem, spec, times):
    fam = problem.get("family", {})
    kind = fam.get("kind", "constant")
    refine = fam.get("refine", 4)
    if kind == "constant":
        return E.constant_family(spec.cov, times, refine)
    return E.piecewise_family(spec.cov, times, fam.get("level", 1), refine, fam.get("budget", 256),
                              seed=problem["mc"]["seed"])


def make_event(problem):
    ev = _need(problem, "event")
    if ev["kind"] == "always":
        return E.always
    if ev["kind"] == "never":
        return E.never
    if "level" not in ev:
        raise InputError("max_abs_exceeds needs a level")
    return E.max_abs_exceeds(ev["level"], ev.get("until"))


def make_path_functional(problem, d) -> P.PathFunctional:
    fx = _need(problem, "functional")
    kind = fx["kind"]
    if kind == "sup_capped":
        return P.sup_capped(fx.get("cap", 1.0), fx.get("until") or fx.get("horizon", 1.0))
    if kind == "sup_indicator":
        return P.sup_indicator(fx.get("level", 1.0), fx.get("until"))
    if kind == "constant":
        return P.constant(fx.get("c", 0.0), fx.get("horizon", 1.0))
    times = fx.get("times")
    if not times or "payoff" not in fx or "bound" not in fx:
        raise InputError("cylinder functional needs payoff, times and bound")
    return P.cylinder(parse(fx["payoff"], len(times), d), times, fx["bound"], fx.get("horizon"))


# -- commands -----------------------------------------------------------------

def cmd_g_eval(problem, spec):
    A = np.atleast_2d(np.asarray(_need(problem, "matrix"), dtype=float))
    gf = GFunction(spec.cov)
    return {"value": gf(A), "argmax": gf.argmax(A), "tolerance": 0.0}, {"g_eval": 0.0}


def cmd_moment(problem, spec):
    a = problem.get("a", [1.0] * spec.d)
    p = _need(problem, "p")
    method = "analytic" if float(p).is_integer() and 1 <= p <= 4 else "quadrature"
    tol = 1e-10 if method == "analytic" else 1e-8
    res = {"value": abs_moment(spec, a, p), "method": method, "rel_tolerance": tol}
    if "t" in problem:
        chk = E.increment_moment_check(spec, problem.get("s", 0.0), problem["t"], a, p)
        res["increment"] = chk.to_dict()
    return res, {"abs_moment_rel": tol}


def cmd_expect(problem, spec):
    f = make_functional(problem, spec)
    r = E.cylinder_expectation_report(spec, f, allow_flagged=problem.get("allow_flagged", False))
    return r.to_dict(), {"error_estimate": r.error_estimate}


def _mc(problem):
    mc = problem["mc"]
    return mc.get("paths", DEFAULT_PATHS), mc["seed"], mc.get("sampler", "sobol"), mc.get("crn", True)


def cmd_scenario_sup(problem, spec):
    f = make_functional(problem, spec)
    fam = make_family(problem, spec, f.times)
    n, seed, sampler, crn = _mc(problem)
    rows = E.family_table(lambda b: E._payoff_values(f, b), fam, spec, n, seed, sampler, crn,
                          times=f.times)
    best = max(range(len(rows)), key=lambda i: (rows[i]["estimate"], -i))
    res = {"value": rows[best]["estimate"], "std_error": rows[best]["std_error"],
           "argmax": best, "argmax_label": rows[best]["label"], "rows": rows}
    return res, {"std_error": rows[best]["std_error"]}


def cmd_gap(problem, spec):
    f = make_functional(problem, spec)
    fam = make_family(problem, spec, f.times)
    n, seed, sampler, crn = _mc(problem)
    dp = E.cylinder_expectation_report(spec, f, allow_flagged=problem.get("allow_flagged", False))
    r = E.representation_gap(f, fam, spec, n, seed, sampler=sampler, crn=crn, dp_value=dp.value)
    res = r.to_dict()
    res["dp_error_estimate"] = dp.error_estimate
    return res, {"std_error": r.mc_std_error, "dp_error_estimate": dp.error_estimate}


def cmd_capacity(problem, spec):
    times = _need(problem, "times")
    fam = make_family(problem, spec, times)
    n, seed, sampler, crn = _mc(problem)
    value, rows = E.capacity_estimate(make_event(problem), fam, spec, n, seed, sampler, crn)
    best = max(range(len(rows)), key=lambda i: (rows[i]["probability"], -i))
    return ({"value": value, "std_error": rows[best]["std_error"], "argmax": best, "rows": rows},
            {"std_error": rows[best]["std_error"]})


def cmd_norm(problem, spec):
    f = make_functional(problem, spec)
    fam = make_family(problem, spec, f.times)
    n, seed, sampler, _ = _mc(problem)
    r = E.lp_norm(f, fam, spec, _need(problem, "p"), n, seed, sampler, full=True)
    return r.to_dict(), {"std_error": r.std_error}


def _resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def cmd_mollify(problem, spec, base: Path):
    X = make_path_functional(problem, spec.d)
    cfg = problem["mollify"] if "mollify" in problem else _need(problem, "mollify")
    omega = P.load_path_csv(_resolve(base, _need(cfg, "omega")))
    cands = [P.load_path_csv(_resolve(base, c)) for c in cfg.get("candidates", [])]
    if cfg.get("bank"):
        fam = E.piecewise_family(spec.cov, [omega.horizon], 1, refine=omega.m)
        per = -(-cfg["bank"] // len(fam))
        for s in fam:
            b = E.induce_measure(s, spec, per, problem["mc"]["seed"], "pseudo")
            cands += [P.DiscretePath(omega.horizon, v) for v in b.values[:per]]
    cands += [P.pl_project(omega, k) for k in P._dyadic(omega.m)]
    value = P.lip_mollify(X, cfg["n"], cands, omega)
    return ({"value": value, "x_omega": X(omega), "n": cfg["n"], "candidates": len(cands) + 1,
             "tolerance": 0.0}, {"mollify": 0.0})


def cmd_approx_pipeline(problem, spec):
    X = make_path_functional(problem, spec.d)
    kw = dict(problem.get("pipeline", {}))
    kw.setdefault("seed", problem["mc"]["seed"])
    kw.setdefault("sampler", problem["mc"].get("sampler", "sobol"))
    if "mu_schedule" in kw:
        kw["mu_schedule"] = tuple(kw["mu_schedule"])
    try:
        cfg = P.PipelineConfig(**kw)
    except TypeError as exc:
        raise InputError(f"bad pipeline option: {exc}") from None
    Y, report = P.lip_approx_pipeline(X, _need(problem, "eps"), spec, cfg)
    res = report.to_dict()
    res["y_name"] = Y.name
    return res, {"std_error": report.final.get("std_error", 0.0), "eps": report.eps}


def cmd_check_axioms(problem, spec):
    rng = np.random.default_rng(problem["mc"]["seed"])
    d = spec.d
    pairs = []
    for _ in range(problem.get("samples", 200)):
        A = rng.normal(size=(d, d))
        B = rng.normal(size=(d, d))
        pairs.append((A + A.T, B + B.T))
    g_rep = g_axiom_check(GFunction(spec.cov), pairs)
    res = {"g": g_rep.to_dict()}
    if d <= 2:
        times = problem.get("times", [0.5, 1.0] if d == 1 else [1.0])
        n_pairs = max(1, problem.get("samples", 200) // 20)
        dp = E.dp_axiom_check(spec, times, n_pairs, problem["mc"]["seed"])
        res["dp"] = dp.to_dict()
    res["ok"] = all(v["ok"] for k, v in res.items() if isinstance(v, dict))
    return res, {"g": g_rep.tol, "dp": 1e-8}


def cmd_check_scaling(problem, spec):
    sc = problem.get("scaling", {})
    texts = sc.get("payoffs", ["x1^2", "x1^4", "abs(x1)", "max(x1, 0)"])
    phis = [parse(t, 1, 1) for t in texts]
    r = scaling_identity_check(spec, sc.get("a", 1.0), sc.get("b", 1.0), phis, sc.get("rel_tol", 5e-3))
    return r.to_dict(), {"rel_tol": sc.get("rel_tol", 5e-3)}


HANDLERS = {
    "g-eval": cmd_g_eval, "moment": cmd_moment, "expect": cmd_expect,
    "scenario-sup": cmd_scenario_sup, "gap": cmd_gap, "capacity": cmd_capacity,
    "norm": cmd_norm, "mollify": cmd_mollify, "approx-pipeline": cmd_approx_pipeline,
    "check-axioms": cmd_check_axioms, "check-scaling": cmd_check_scaling,
}


# -- output ---------------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_csv(result: dict) -> str:
    """Per-scenario rows when the result has them, else flattened key/value pairs."""
    buf = io.StringIO()
    rows = result.get("rows")
    if isinstance(rows, list) and rows and all(isinstance(r, dict) for r in rows):
        keys = list(rows[0])
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in keys})
        return buf.getvalue()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["key", "value"])
    for k, v in _flatten(result):
        w.writerow([k, _cell(v)])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return canonical(v)
    return "" if v is None else v


def _flatten(obj, prefix=""):
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def build_record(command: str, problem: dict, seed: int, result: dict, tolerances: dict) -> dict:
    result = _plain(result)
    payload = canonical(result)
    meta = {
        "schema_version": 1,
        "version": __version__,
        "config_hash": hashlib.sha256(canonical({"command": command, "problem": problem}).encode()).hexdigest(),
        "payload_sha256": hashlib.sha256(payload.encode()).hexdigest(),
        "seed": seed,
        "tolerances": _plain(tolerances),
    }
    record = {"command": command, "result": result, "metadata": meta}
    jsonschema.validate(record, load_schema("result.schema.json"))
    return record


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gexpect", description="G-expectation engine")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("problem", help="problem JSON file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a problem entry (dotted keys, JSON values)")
    ap.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (default 0)")
    ap.add_argument("-o", "--output", default=None, help="output file (default: stdout)")
    ap.add_argument("--format", choices=("json", "csv"), default=None,
                    help="output format (default: from the file extension, else json)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="gexpect: %(message)s", stream=sys.stderr)
    try:
        problem = apply_overrides(load_problem(args.problem), args.overrides)
        mc = problem.setdefault("mc", {})
        if args.seed is not None:
            mc["seed"] = args.seed
        elif "seed" not in mc:
            log.info("no seed given; using seed 0")
            mc["seed"] = 0
        validate_problem(problem)
        spec = make_spec(problem)
        handler = HANDLERS[args.command]
        if args.command == "mollify":
            result, tols = handler(problem, spec, Path(args.problem).resolve().parent)
        else:
            result, tols = handler(problem, spec)
        record = build_record(args.command, problem, mc["seed"], result, tols)
    except BudgetExhaustedError as exc:
        log.error("budget exhausted: %s (achieved bound: %s)", exc, exc.achieved)
        return EXIT_BUDGET
    except CapabilityError as exc:
        log.error("not supported: %s", exc)
        return EXIT_CAPABILITY
    except (InputError, EvaluationError, GridTooNarrowError, GExpectError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (ValueError, TypeError, jsonschema.ValidationError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INPUT

    fmt = args.format or ("csv" if args.output and args.output.endswith(".csv") else "json")
    if fmt == "json":
        text = json.dumps(record, indent=2, sort_keys=True, allow_nan=False) + "\n"
    else:
        text = to_csv(record["result"])
    if args.output is None:
        sys.stdout.write(text)
    else:
        out = Path(args.output)
        atomic_write(out, text)
        if fmt == "csv":
            meta = {"command": record["command"], "metadata": record["metadata"]}
            atomic_write(out.with_name(out.name + ".meta.json"),
                         json.dumps(meta, indent=2, sort_keys=True) + "\n")
        log.debug("wrote %s", out)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
