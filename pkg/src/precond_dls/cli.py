"""Command-line front end.

    precond-dls run      --matrix bcsstm07.mtx --agents 10 --beta 5 --auto-params --tol 1e-4
    precond-dls compare  --matrix bcsstm07.mtx --agents 10 --beta 5 --auto-params --max-iters 2000
    precond-dls rates    --fixture oracle2x2 --beta 1 --delta 1
    precond-dls verify   --seed 3

Exit codes: 0 success, 1 property failure, 2 I/O or parse error, 3 rank-deficient A^T A.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import shlex
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis as an
from . import verify as suite
from .federated import threads_from_env
from .ingest import FIXTURES, MatrixMarketError, Problem, fixture, load_matrix, partition, synthesize_rhs
from .linalg import LinAlgError, gram, is_positive_definite, norm, vector
from .solvers import Method, SolverConfig, StopKind, StoppingRule, Trace, reach_iteration, run

log = logging.getLogger("precond_dls")

EXIT_OK, EXIT_FAILED, EXIT_IO, EXIT_ASSUMPTION = 0, 1, 2, 3

# Published APC figures for the bcsstm07 experiment; APC itself is never run.
APC_REFERENCE = {
    "source": "published reference values, not computed here",
    "iterations_to_1e-4": 4.85e4,
    "decay_rate": 0.9672,
    "gamma_star": 1.08,
    "eta_star": 12.03,
}


class UsageError(Exception):
    """Bad input: missing file, unparsable data, inconsistent flags."""


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# --------------------------------------------------------------------------
# problem loading and parameter resolution
# --------------------------------------------------------------------------


@dataclass
class Loaded:
    problem: Problem
    source: str
    positive_definite: Optional[bool]


def load_problem(args) -> Loaded:
    if bool(args.matrix) == bool(args.fixture):
        raise UsageError("give exactly one of --matrix or --fixture")
    if args.fixture:
        try:
            p = fixture(args.fixture, seed=args.seed)
        except KeyError as exc:
            raise UsageError(str(exc)) from exc
        return Loaded(p, f"fixture:{args.fixture}", None)

    path = Path(args.matrix)
    if not path.is_file():
        raise UsageError(f"matrix file not found: {path}")
    try:
        A = load_matrix(path)
        if args.rhs:
            b = vector(np.loadtxt(args.rhs, delimiter=",", ndmin=1))
            p = Problem(A=A, b=b)
        else:
            p = synthesize_rhs(A, np.ones(A.shape[1]))
    except (OSError, ValueError, MatrixMarketError) as exc:
        raise UsageError(f"cannot load {path}: {exc}") from exc

    pd = None
    if A.shape[0] == A.shape[1] and np.array_equal(A, A.T):
        pd = is_positive_definite(A)
        if not pd:
            print(f"warning: {path} is symmetric but not positive definite; continuing unchanged", file=sys.stderr)
        else:
            log.info("%s is symmetric positive definite", path)
    return Loaded(p, str(path), pd)


@dataclass
class Params:
    alpha: float
    delta: float
    beta: float
    dgd_delta: Optional[float]
    spectrum: Optional[an.SpectralInfo]


def resolve_params(args, problem: Problem, need_spectrum: bool = False) -> Params:
    spec = None
    if args.auto_params or need_spectrum:
        spec = an.spectral_extremes(gram(problem.A))
    beta = args.beta
    if not beta > 0:
        raise UsageError("--beta must be positive")
    alpha, delta, dgd_delta = args.alpha, args.delta, getattr(args, "dgd_delta", None)
    if args.auto_params:
        if alpha is None:
            alpha = an.optimal_alpha(spec, beta)
        if delta is None:
            delta = an.optimal_delta(spec, beta) if args.method == "ipg" else an.dgd_optimal_delta(spec)
        if dgd_delta is None:
            dgd_delta = an.dgd_optimal_delta(spec)
    return Params(alpha=alpha, delta=delta, beta=beta, dgd_delta=dgd_delta, spectrum=spec)


def _stop_rule(args, problem: Problem) -> StoppingRule:
    if args.tol and problem.x_star is not None:
        return StoppingRule(StopKind.RELATIVE_ERROR, min(args.tol))
    if args.grad_tol:
        return StoppingRule(StopKind.GRADIENT_NORM, args.grad_tol)
    return StoppingRule()


def _config(method: str, args, delta: float, alpha: Optional[float], beta: float, stop: StoppingRule) -> SolverConfig:
    if delta is None:
        raise UsageError("--delta is required unless --auto-params is given")
    if method == "ipg" and alpha is None:
        raise UsageError("--alpha is required for ipg unless --auto-params is given")
    return SolverConfig(
        method=Method(method),
        delta=delta,
        alpha=alpha or 0.0,
        beta=beta,
        max_iters=args.max_iters,
        stop=stop,
        stride=args.stride,
        fast=args.fast,
        threads=threads_from_env(),
        seed=args.seed,
        divergence_factor=args.divergence_factor or None,
    )


# --------------------------------------------------------------------------
# writers
# --------------------------------------------------------------------------


def write_trace_csv(path: Path, trace: Trace) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "err_norm", "rel_err", "grad_norm", "flops"])
        for r in trace.records:
            w.writerow([r.t, _fmt(r.err_norm), _fmt(r.rel_err), _fmt(r.grad_norm), r.flops])


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _json_float(v: float):
    return None if v is None or not math.isfinite(v) else float(v)


def trace_summary(trace: Trace, tols: Sequence[float], params: dict) -> dict:
    out = {
        "method": trace.method.value,
        "iterations_run": trace.iterations_run,
        "stop_reason": trace.stop_reason,
        "final_err_norm": _json_float(trace.records[-1].err_norm),
        "final_rel_err": _json_float(trace.records[-1].rel_err),
        "flops_total": trace.records[-1].flops,
        "reach_iteration": {},
        **params,
    }
    if trace.x_star_norm is not None:
        out["reach_iteration"] = {f"{tol:g}": reach_iteration(trace, tol) for tol in tols}
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_run(args) -> int:
    loaded = load_problem(args)
    p = loaded.problem
    params = resolve_params(args, p)
    cfg = _config(args.method, args, params.delta, params.alpha, params.beta, _stop_rule(args, p))
    shards = partition(p, args.agents, cache_gram=args.fast)
    trace = run(p, shards, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / f"trace_{args.method}.csv", trace)
    summary = trace_summary(
        trace,
        args.tol or [],
        {
            "source": loaded.source,
            "agents": args.agents,
            "n": p.n,
            "N": p.N,
            "alpha": cfg.alpha if args.method == "ipg" else None,
            "delta": cfg.delta,
            "beta": cfg.beta if args.method == "ipg" else None,
            "matrix_positive_definite": loaded.positive_definite,
        },
    )
    write_json(out / f"summary_{args.method}.json", summary)
    print(
        f"{args.method}: {trace.stop_reason} after {trace.iterations_run} iterations, "
        f"rel_err={trace.records[-1].rel_err:.3e}"
    )
    for tol, hit in summary["reach_iteration"].items():
        print(f"  reach {tol}: {hit if hit is not None else 'not reached'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    loaded = load_problem(args)
    p = loaded.problem
    if p.x_star is None:
        raise UsageError("compare needs a problem with a known solution")
    args.method = "ipg"
    params = resolve_params(args, p, need_spectrum=True)
    stop = _stop_rule(args, p)
    ipg_cfg = _config("ipg", args, params.delta, params.alpha, params.beta, stop)
    if params.dgd_delta is None:
        raise UsageError("--dgd-delta is required unless --auto-params is given")
    dgd_cfg = _config("dgd", args, params.dgd_delta, None, params.beta, stop)

    shards = partition(p, args.agents, cache_gram=args.fast)
    ipg = run(p, shards, ipg_cfg)
    dgd = run(p, shards, dgd_cfg)

    AtA = gram(p.A)
    K_star = an.kstar_oracle(AtA, params.beta)
    rates = an.compute_rates(params.spectrum, params.beta, params.delta, np.zeros_like(K_star), K_star)
    z0 = norm(p.x_star)  # shared x(0) = 0
    steps = min(len(ipg.err_norms), len(dgd.err_norms))
    aligned = an.bound_sequences(rates, z0, horizon=max(steps - 1, 1))
    theory = an.bound_sequences(rates, z0)
    crossover = an.empirical_crossover(ipg.err_norms, dgd.err_norms)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "compare.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "err_ipg", "err_dgd", "E1", "E2"])
        E1, E2 = aligned.E1, aligned.E2
        for t in range(0, steps, args.stride):
            w.writerow([t, _fmt(ipg.err_norms[t]), _fmt(dgd.err_norms[t]), _fmt(E1[t]), _fmt(E2[t])])
    tols = args.tol or []
    report = {
        "empirical_crossover": crossover,
        "t_sw": theory.t_sw,
        "t_sw_horizon": theory.horizon,
        "iterations_compared": steps,
        "ipg": trace_summary(ipg, tols, {"alpha": params.alpha, "delta": params.delta, "beta": params.beta}),
        "dgd": trace_summary(dgd, tols, {"delta": params.dgd_delta}),
        "rates": rates.to_json(theory.t_sw),
        "source": loaded.source,
        "agents": args.agents,
    }
    if args.annotate_apc:
        report["apc_reference"] = APC_REFERENCE
    write_json(out / "compare.json", report)
    print(f"empirical crossover: {crossover if crossover is not None else 'none'}")
    print(f"theoretical t_sw: {theory.t_sw if theory.t_sw is not None else 'none within horizon'}")
    return EXIT_OK


def cmd_rates(args) -> int:
    loaded = load_problem(args)
    p = loaded.problem
    args.method = "ipg"
    params = resolve_params(args, p, need_spectrum=True)
    if params.delta is None:
        raise UsageError("--delta is required unless --auto-params is given")
    AtA = gram(p.A)
    K_star = an.kstar_oracle(AtA, params.beta)
    K_init = np.zeros_like(K_star)
    rates = an.compute_rates(params.spectrum, params.beta, params.delta, K_init, K_star)
    z0 = norm(p.x_star) if p.x_star is not None else 1.0
    bounds = an.bound_sequences(rates, z0, horizon=args.horizon)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = rates.to_json(bounds.t_sw)
    payload["alpha_star"] = an.optimal_alpha(params.spectrum, params.beta)
    payload["delta_star"] = an.optimal_delta(params.spectrum, params.beta)
    payload["dgd_delta_star"] = an.dgd_optimal_delta(params.spectrum)
    payload["horizon"] = bounds.horizon
    write_json(out / "rates.json", payload)
    with (out / "bounds.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "E1", "E2", "log10_E1", "log10_E2"])
        E1, E2 = bounds.E1, bounds.E2
        ln10 = math.log(10.0)
        for t in range(0, bounds.horizon + 1, args.stride):
            w.writerow([t, _fmt(E1[t]), _fmt(E2[t]), _fmt(bounds.log_E1[t] / ln10), _fmt(bounds.log_E2[t] / ln10)])
    for key in ("lambda", "gamma", "kappa", "rho_gd", "rho_star_k", "rho_star_beta", "sigma0", "t_sw"):
        print(f"{key} = {payload[key]}")
    return EXIT_OK


def cmd_verify(args) -> int:
    fault = suite.FAULTS.get(args.inject_fault) if args.inject_fault else None
    if args.inject_fault and fault is None:
        raise UsageError(f"unknown fault {args.inject_fault!r}")
    results = suite.run_suite(seed=args.seed, count=args.count, rho_star_k=fault)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _problem_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem")
    g.add_argument("--matrix", help="Matrix Market (.mtx, .mtx.gz) or CSV file holding A")
    g.add_argument("--fixture", choices=FIXTURES, help="built-in problem instead of --matrix")
    g.add_argument("--rhs", help="CSV vector b; default b = A * ones (solution known)")
    g.add_argument("--agents", type=int, default=1, help="number of agents m")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="out", help="output directory")
    g.add_argument("--stride", type=int, default=1, help="write every k-th row")


def _solver_flags(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    g = p.add_argument_group("solver")
    if with_method:
        g.add_argument("--method", choices=["ipg", "dgd"], default="ipg")
    g.add_argument("--alpha", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--auto-params", action="store_true", help="optimal steps from the spectrum of A^T A")
    g.add_argument("--tol", type=float, action="append", help="relative error target (repeatable)")
    g.add_argument("--grad-tol", type=float, help="stop when ||sum g|| falls below this")
    g.add_argument("--max-iters", type=int, default=1000)
    g.add_argument("--fast", action="store_true", help="cache local Gram matrices for the K update")
    g.add_argument("--divergence-factor", type=float, default=1e12,
                   help="stop once ||x|| exceeds this times (1 + ||x(0)||); 0 disables the guard")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="precond-dls", description=__doc__.split("\n\n")[0])
    parser.add_argument("--manifest", help="key=value file whose entries act as default flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one solver and write a trace")
    _problem_flags(p_run)
    _solver_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run IPG and DGD from the same start")
    _problem_flags(p_cmp)
    _solver_flags(p_cmp, with_method=False)
    p_cmp.add_argument("--dgd-delta", type=float)
    p_cmp.add_argument("--annotate-apc", action="store_true", help="attach published APC figures")
    p_cmp.set_defaults(func=cmd_compare)

    p_rates = sub.add_parser("rates", help="closed-form rates and bound sequences")
    _problem_flags(p_rates)
    _solver_flags(p_rates, with_method=False)
    p_rates.add_argument("--horizon", type=int)
    p_rates.set_defaults(func=cmd_rates)

    p_ver = sub.add_parser("verify", help="run the seeded property suite")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--count", type=int, default=50, help="random instances")
    p_ver.add_argument("--inject-fault", help=argparse.SUPPRESS)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def manifest_argv(path: str) -> list[str]:
    """Turn ``key = value`` lines into ``--key value`` flags (``key = true`` for switches)."""
    argv = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            argv.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            for v in shlex.split(value) if key == "tol" else [value]:
                argv += [flag, v]
    return argv


def _split_manifest(argv: list[str]) -> tuple[Optional[str], list[str]]:
    rest, manifest = [], None
    it = iter(argv)
    for a in it:
        if a == "--manifest":
            manifest = next(it, None)
        elif a.startswith("--manifest="):
            manifest = a.split("=", 1)[1]
        else:
            rest.append(a)
    return manifest, rest


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        manifest, argv = _split_manifest(argv)
        if manifest:
            if not Path(manifest).is_file():
                raise UsageError(f"manifest not found: {manifest}")
            # command first, then manifest defaults, then explicit flags (later wins)
            cmd = [a for a in argv if not a.startswith("-")][:1]
            rest = list(argv)
            if cmd:
                rest.remove(cmd[0])
            argv = cmd + manifest_argv(manifest) + rest
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except an.AssumptionViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (LinAlgError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
