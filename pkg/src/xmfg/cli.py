"""Batch front-end: strict JSON problem files in, CSV/JSON bundles out.

Problem documents are validated against a closed schema (unknown keys are
errors, numbers must be finite) and canonicalized, so parse(emit(parse(f)))
is the identity.  Exit codes: 0 success, 2 ran-but-did-not-converge (an
expected scientific outcome), 1 hard error; errors print one
machine-parseable line ``ERROR <code>: <message>`` on stderr.

The environment variable MFG_THREADS caps worker parallelism; execution is
currently single-threaded, which never exceeds the cap.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as bundles
from .analytic import LQCoefficients, lq_solve, quartic_solve
from .diagnostics import check_L_monotone, check_psi_monotone, check_V_monotone
from .ensembles import Ensemble
from .errors import SchemaError, XmfgError
from .families import (
    LinearTerminal,
    LQFamily,
    MeanSquareVelocityCoupling,
    MomentQuadraticPotential,
    QuadraticCoupledFamily,
    QuadraticFormPotential,
    QuadraticTerminal,
    QuarticFamily,
    ZeroPotential,
)
from .hjb import ValueGrid
from .mfg import (
    ProblemSpec,
    SolverConfig,
    canonical_grid,
    master_consistency_residual,
    solve_mfg,
    uniqueness_probe,
)

SUBCOMMANDS = ("solve", "oracle", "check", "master", "probe-uniqueness")

_SOLVER_KEYS = {
    "N": ("n_particles", int),
    "nx": ("nx", int),
    "M": ("time_steps", int),
    "nv": ("nv", int),
    "v_max": ("v_max", float),
    "damping": ("damping", float),
    "tol_fix": ("tol_fix", float),
    "tol_traj": ("tol_traj", float),
    "max_outer": ("max_outer", int),
}

_POTENTIAL_KINDS = {
    "quadratic": {"zero": (), "moment_quadratic": ("scale",), "quadratic_form": ("a", "b", "c")},
    "lq": {"lq_running": ("A", "B", "C")},
    "quartic": {"zero": (), "mean_square_velocity": ("scale",)},
}

_TERMINAL_KINDS = {
    "quadratic": {
        "zero": (),
        "quadratic": ("m", "n", "q0"),
        "linear": ("slope", "offset"),
        "moment_quadratic": ("scale",),
    },
    "lq": {"lq_terminal": ("M", "N", "Q")},
    "quartic": {"quartic": ("A", "B")},
}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    config_path: Path
    out_dir: Path
    seed: int
    overrides: tuple[str, ...] = ()


@dataclass
class ParsedProblem:
    document: dict
    family_kind: str
    problem: ProblemSpec
    solver: SolverConfig


# ---------------------------------------------------------------------------
# schema validation and canonicalization
# ---------------------------------------------------------------------------


def _require_finite_number(value, where) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(where, "expected a number")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(where, "expected a finite number")
    return value


def _require_int(value, where) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(where, "expected an integer")
    return value


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise SchemaError(f"{where}.{key}" if where else key, "unknown key")


def _validate_block(block, family_kind, table, where) -> dict:
    if not isinstance(block, dict):
        raise SchemaError(where, "expected an object {kind, params}")
    _reject_unknown(block, ("kind", "params"), where)
    kinds = table[family_kind]
    kind = block.get("kind")
    if kind not in kinds:
        raise SchemaError(
            f"{where}.kind", f"expected one of {sorted(kinds)} for family {family_kind!r}"
        )
    params = block.get("params", {})
    if not isinstance(params, dict):
        raise SchemaError(f"{where}.params", "expected an object")
    _reject_unknown(params, kinds[kind], f"{where}.params")
    canonical = {}
    for name in kinds[kind]:
        canonical[name] = _require_finite_number(params.get(name, 0.0), f"{where}.params.{name}")
    return {"kind": kind, "params": canonical}


def _norm_ppf(u: np.ndarray) -> np.ndarray:
    """Acklam's rational approximation of the standard normal quantile."""
    a = [-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00]
    b = [-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01]
    c = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00]
    d = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00]
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    lo, hi = 0.02425, 1 - 0.02425
    low = u < lo
    high = u > hi
    mid = ~(low | high)
    if np.any(mid):
        q = u[mid] - 0.5
        r = q * q
        out[mid] = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
        )
    for mask, sign, uu in ((low, -1.0, u), (high, 1.0, 1 - u)):
        if np.any(mask):
            q = np.sqrt(-2 * np.log(uu[mask]))
            out[mask] = sign * -(
                ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
            ) / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    return out


def _validate_initial(block, base_dir: Path, default_n: int, where="initial") -> tuple[dict, np.ndarray]:
    if not isinstance(block, dict):
        raise SchemaError(where, "expected an object {kind, params[, N]}")
    _reject_unknown(block, ("kind", "params", "N"), where)
    kind = block.get("kind")
    params = block.get("params", {})
    if not isinstance(params, dict):
        raise SchemaError(f"{where}.params", "expected an object")
    if kind == "samples":
        _reject_unknown(params, ("values", "path"), f"{where}.params")
        if "values" in params:
            values = params["values"]
            if not isinstance(values, list) or not values:
                raise SchemaError(f"{where}.params.values", "expected a non-empty list")
            samples = np.array(
                [_require_finite_number(v, f"{where}.params.values[{i}]") for i, v in enumerate(values)]
            )
        elif "path" in params:
            path = base_dir / str(params["path"])
            if not path.exists():
                raise SchemaError(f"{where}.params.path", f"file not found: {path}")
            loaded = Ensemble.from_csv(path.read_text())
            if loaded.dim != 1:
                raise SchemaError(f"{where}.params.path", "expected a 1-column sample file")
            samples = loaded.samples[:, 0]
        else:
            raise SchemaError(f"{where}.params", "samples need either values or path")
        n = samples.size
        canonical = {"kind": "samples", "params": {"values": [float(v) for v in samples]}, "N": n}
        return canonical, samples
    if kind in ("uniform", "gaussian_like"):
        n = _require_int(block.get("N", default_n), f"{where}.N")
        if n < 1:
            raise SchemaError(f"{where}.N", "expected a positive sample count")
        quantiles = (np.arange(n) + 0.5) / n
        if kind == "uniform":
            _reject_unknown(params, ("lo", "hi"), f"{where}.params")
            lo = _require_finite_number(params.get("lo", -1.0), f"{where}.params.lo")
            hi = _require_finite_number(params.get("hi", 1.0), f"{where}.params.hi")
            if not hi > lo:
                raise SchemaError(f"{where}.params.hi", "expected hi > lo")
            samples = lo + (hi - lo) * quantiles
            canonical = {"kind": "uniform", "params": {"lo": lo, "hi": hi}, "N": n}
        else:
            _reject_unknown(params, ("mean", "std"), f"{where}.params")
            mu = _require_finite_number(params.get("mean", 0.0), f"{where}.params.mean")
            sd = _require_finite_number(params.get("std", 1.0), f"{where}.params.std")
            if sd <= 0:
                raise SchemaError(f"{where}.params.std", "expected std > 0")
            samples = mu + sd * _norm_ppf(quantiles)
            canonical = {"kind": "gaussian_like", "params": {"mean": mu, "std": sd}, "N": n}
        return canonical, samples
    raise SchemaError(f"{where}.kind", "expected one of ['samples', 'uniform', 'gaussian_like']")


def _build_potential(kind: str, params: dict):
    if kind == "zero":
        return ZeroPotential()
    if kind == "moment_quadratic":
        return MomentQuadraticPotential(params["scale"])
    if kind == "quadratic_form":
        return QuadraticFormPotential(params["a"], params["b"], params["c"])
    raise AssertionError(kind)


def _build_terminal(kind: str, params: dict):
    if kind == "zero":
        return ZeroPotential()
    if kind == "quadratic":
        return QuadraticTerminal(params["m"], params["n"], params["q0"])
    if kind == "linear":
        return LinearTerminal(params["slope"], params["offset"])
    if kind == "moment_quadratic":
        return MomentQuadraticPotential(params["scale"])
    raise AssertionError(kind)


def parse_problem_document(raw: dict, base_dir: Path = Path(".")) -> ParsedProblem:
    if not isinstance(raw, dict):
        raise SchemaError("<root>", "expected a JSON object")
    _reject_unknown(
        raw, ("family", "beta", "T", "q", "potential", "terminal", "initial", "solver"), ""
    )
    family_kind = raw.get("family")
    if family_kind not in ("quadratic", "lq", "quartic"):
        raise SchemaError("family", "expected one of ['quadratic', 'lq', 'quartic']")
    horizon = _require_finite_number(raw.get("T", None), "T") if "T" in raw else None
    if horizon is None or horizon <= 0:
        raise SchemaError("T", "expected a positive horizon")
    q_exp = _require_finite_number(raw.get("q", 2.0), "q")
    if q_exp < 1.0:
        raise SchemaError("q", "expected a moment exponent >= 1")

    beta = _require_finite_number(raw.get("beta", 0.0), "beta")
    if family_kind == "quartic" and beta != 0.0:
        raise SchemaError("beta", "quartic family has no mean-velocity coupling coefficient")
    if family_kind in ("quadratic", "lq") and beta == -1.0:
        raise SchemaError("beta", "beta = -1 makes the velocity equation singular")

    default_potential = {"lq": {"kind": "lq_running"}, "quartic": {"kind": "zero"}}.get(
        family_kind, {"kind": "zero"}
    )
    default_terminal = {"lq": {"kind": "lq_terminal"}, "quartic": {"kind": "quartic"}}.get(
        family_kind, {"kind": "zero"}
    )
    potential_doc = _validate_block(
        raw.get("potential", default_potential), family_kind, _POTENTIAL_KINDS, "potential"
    )
    terminal_doc = _validate_block(
        raw.get("terminal", default_terminal), family_kind, _TERMINAL_KINDS, "terminal"
    )
    solver_raw = raw.get("solver", {})
    if not isinstance(solver_raw, dict):
        raise SchemaError("solver", "expected an object")
    _reject_unknown(solver_raw, tuple(_SOLVER_KEYS), "solver")
    solver_kwargs = {}
    solver_doc = {}
    for key, (attr, caster) in _SOLVER_KEYS.items():
        if key in solver_raw:
            if key == "v_max" and solver_raw[key] is None:
                continue
            value = (
                _require_int(solver_raw[key], f"solver.{key}")
                if caster is int
                else _require_finite_number(solver_raw[key], f"solver.{key}")
            )
            solver_kwargs[attr] = value
            solver_doc[key] = value
    try:
        solver = SolverConfig(**solver_kwargs)
    except ValueError as exc:
        raise SchemaError("solver", str(exc)) from exc

    if "initial" not in raw:
        raise SchemaError("initial", "required")
    initial_doc, samples = _validate_initial(raw["initial"], base_dir, solver.n_particles)

    if family_kind == "quadratic":
        family = QuadraticCoupledFamily(
            beta=beta,
            potential=_build_potential(potential_doc["kind"], potential_doc["params"]),
            terminal=_build_terminal(terminal_doc["kind"], terminal_doc["params"]),
        )
    elif family_kind == "lq":
        p, t = potential_doc["params"], terminal_doc["params"]
        family = LQFamily(
            beta=beta, a=p["A"], b=p["B"], c=p["C"], m=t["M"], n=t["N"], q0=t["Q"]
        )
    else:
        t = terminal_doc["params"]
        coupling = (
            MeanSquareVelocityCoupling(potential_doc["params"]["scale"])
            if potential_doc["kind"] == "mean_square_velocity"
            else None
        )
        family = QuarticFamily(a=t["A"], b=t["B"], coupling=coupling)
        if np.min(samples) <= 0:
            raise SchemaError("initial", "quartic family needs samples strictly above 0")

    document = {
        "family": family_kind,
        "beta": beta,
        "T": horizon,
        "q": q_exp,
        "potential": potential_doc,
        "terminal": terminal_doc,
        "initial": initial_doc,
        "solver": solver_doc,
    }
    problem = ProblemSpec(
        family=family, horizon=horizon, initial=Ensemble(samples, q=q_exp), q=q_exp
    )
    return ParsedProblem(document=document, family_kind=family_kind, problem=problem, solver=solver)


def parse_problem(path, overrides: tuple[str, ...] = ()) -> ParsedProblem:
    """Load, override, validate and canonicalize a problem document."""
    path = Path(path)
    if not path.exists():
        raise SchemaError("<config>", f"file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<config>", f"invalid JSON: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise SchemaError("<override>", f"expected key=value, got {item!r}")
        dotted, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise SchemaError(dotted, "override path crosses a non-object")
        node[parts[-1]] = value
    return parse_problem_document(raw, base_dir=path.parent)


def emit_problem(parsed: ParsedProblem) -> str:
    """Canonical serialization; parsing it again reproduces the document."""
    return json.dumps(parsed.document, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _meta(parsed: ParsedProblem, run: RunConfig, started: float, **extra) -> dict:
    payload = {
        "subcommand": run.subcommand,
        "seed": run.seed,
        "problem": parsed.document,
        "wall_time_s": round(time.perf_counter() - started, 6),
        "max_workers": _thread_cap(),
    }
    payload.update(extra)
    return payload


def _thread_cap() -> int:
    raw = os.environ.get("MFG_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise SchemaError("MFG_THREADS", f"expected a positive integer, got {raw!r}") from exc
    if cap < 1:
        raise SchemaError("MFG_THREADS", "expected a positive integer")
    return cap


def _cmd_solve(parsed: ParsedProblem, run: RunConfig) -> int:
    started = time.perf_counter()
    sol = solve_mfg(parsed.problem, parsed.solver)
    bundles.write_solution_bundle(
        run.out_dir,
        sol,
        _meta(
            parsed,
            run,
            started,
            converged=sol.converged,
            iterations=sol.iterations,
            phi_residual=sol.final_phi_residual,
        ),
    )
    return 0 if sol.converged else 2


def _cmd_oracle(parsed: ParsedProblem, run: RunConfig) -> int:
    started = time.perf_counter()
    doc = parsed.document
    steps = parsed.solver.time_steps
    if parsed.family_kind == "lq":
        p, t = doc["potential"]["params"], doc["terminal"]["params"]
        coeffs = LQCoefficients(a=p["A"], b=p["B"], c=p["C"], m=t["M"], n=t["N"], q0=t["Q"])
        state, traj = lq_solve(coeffs, parsed.problem.initial, doc["beta"], doc["T"], steps)
        write_coeffs = bundles.write_lq_coefficients_csv
    elif parsed.family_kind == "quartic":
        t = doc["terminal"]["params"]
        coupling = parsed.problem.family.coupling if doc["potential"]["kind"] != "zero" else None
        state, traj = quartic_solve(
            t["A"], t["B"], coupling, parsed.problem.initial, doc["T"], steps
        )
        write_coeffs = bundles.write_quartic_coefficients_csv
    else:
        raise XmfgError("oracle subcommand needs family 'lq' or 'quartic'")

    grid = canonical_grid(parsed.problem, parsed.solver)
    vg = ValueGrid(
        config=grid,
        times=state.times,
        u=state.value_table(grid.nodes()),
        grad=np.gradient(state.value_table(grid.nodes()), grid.dx, axis=1),
    )
    run.out_dir.mkdir(parents=True, exist_ok=True)
    bundles.write_value_csv(run.out_dir / "value.csv", vg)
    bundles.write_trajectory_csv(run.out_dir / "trajectory.csv", traj)
    bundles.write_residuals_csv(run.out_dir / "residuals.csv", [])
    write_coeffs(run.out_dir / "coefficients.csv", state)
    bundles.write_plot_bundle(run.out_dir / "plot", vg, traj, [])
    bundles.write_meta(run.out_dir / "meta.json", _meta(parsed, run, started, converged=True))
    return 0


def _report_payload(report, out_dir: Path, tag: str) -> dict:
    cert_files = []
    if report.certificate:
        for idx, ens in enumerate(report.certificate):
            name = f"certificate_{tag}_{idx}.csv"
            (out_dir / name).write_text(ens.to_csv())
            cert_files.append(name)
    payload = {
        "condition": report.condition,
        "trials": report.trials,
        "min_value": report.min_value,
        "verdict": report.verdict,
        "certificate_files": cert_files,
    }
    if report.note:
        payload["note"] = report.note
    return payload


def _cmd_check(parsed: ParsedProblem, run: RunConfig) -> int:
    started = time.perf_counter()
    run.out_dir.mkdir(parents=True, exist_ok=True)
    fam = parsed.problem.family
    reports = []
    if parsed.family_kind in ("quadratic", "lq"):
        rep = check_V_monotone(fam.potential, trials=2000, rng_seed=run.seed)
        reports.append(("potential", rep))
    rep = check_psi_monotone(fam.terminal, trials=2000, rng_seed=run.seed)
    reports.append(("terminal", rep))
    rep = check_L_monotone(fam, trials=1000, rng_seed=run.seed)
    reports.append(("lagrangian", rep))

    combined = []
    for tag, rep in reports:
        payload = _report_payload(rep, run.out_dir, tag)
        (run.out_dir / f"check_{tag}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )
        combined.append(payload)
    (run.out_dir / "report.json").write_text(json.dumps(combined, indent=2, sort_keys=True) + "\n")
    bundles.write_meta(run.out_dir / "meta.json", _meta(parsed, run, started))
    return 0


def _cmd_master(parsed: ParsedProblem, run: RunConfig) -> int:
    started = time.perf_counter()
    sol = solve_mfg(parsed.problem, parsed.solver)
    cfg = parsed.solver
    horizon = parsed.problem.horizon
    dt = horizon / cfg.time_steps
    probes = []
    for frac in (0.1, 0.3, 0.5, 0.7, 0.9):
        m = min(int(round(frac * cfg.time_steps)), cfg.time_steps - 1)
        xs = np.quantile(sol.traj.states[m, :, 0], [0.2, 0.4, 0.6, 0.8])
        probes.extend((float(x), m * dt) for x in xs)
    residual = master_consistency_residual(sol, parsed.problem, cfg, probes)

    run.out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["x,t"]
    lines += [f"{bundles._fmt(x)},{bundles._fmt(t)}" for x, t in probes]
    (run.out_dir / "probes.csv").write_text("\n".join(lines) + "\n")
    (run.out_dir / "master.json").write_text(
        json.dumps(
            {"residual": residual, "n_probes": len(probes), "converged": sol.converged},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    bundles.write_meta(
        run.out_dir / "meta.json", _meta(parsed, run, started, converged=sol.converged)
    )
    return 0 if sol.converged else 2


def _cmd_probe_uniqueness(parsed: ParsedProblem, run: RunConfig) -> int:
    started = time.perf_counter()
    rep = uniqueness_probe(parsed.problem, parsed.solver, k=3, rng_seed=run.seed)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    (run.out_dir / "uniqueness.json").write_text(
        json.dumps(
            {
                "status": rep.status,
                "max_pairwise": None if math.isnan(rep.max_pairwise) else rep.max_pairwise,
                "run_residuals": rep.run_residuals,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    bundles.write_meta(run.out_dir / "meta.json", _meta(parsed, run, started, status=rep.status))
    return 0 if rep.status == "conclusive" else 2


_HANDLERS = {
    "solve": _cmd_solve,
    "oracle": _cmd_oracle,
    "check": _cmd_check,
    "master": _cmd_master,
    "probe-uniqueness": _cmd_probe_uniqueness,
}


def run(cfg: RunConfig) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        _thread_cap()
        parsed = parse_problem(cfg.config_path, cfg.overrides)
        canonical = parse_problem_document(json.loads(emit_problem(parsed)))
        if canonical.document != parsed.document:
            raise XmfgError("canonical serialization failed to round-trip")
        return _HANDLERS[cfg.subcommand](parsed, cfg)
    except XmfgError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR IO: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="xmfg", description="Batch solver for velocity-coupled mean-field games"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="problem document (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="rng seed for randomized checks")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="key=value",
            help="dotted-path override applied to the document before validation",
        )
    args = parser.parse_args(argv)
    cfg = RunConfig(
        subcommand=args.subcommand,
        config_path=Path(args.config),
        out_dir=Path(args.out),
        seed=args.seed,
        overrides=tuple(args.override),
    )
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
