"""Command-line entry point: ``aqflow pf|opf|hil|replay``.

Exit codes: 0 success, 1 non-convergence or infeasible result, 2 usage
error, 3 I/O or network failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .annealing import BACKENDS
from .cases import CASES, get_case
from .grid import CaseError, Network, load_case
from .hamiltonian.builder import Mode
from .loop import LoopConfig, StepPolicy, compare, run_aqopf, run_aqpf
from .reference import InfeasibleError, PowerFlowError, brute_force_opf, nr_power_flow, write_golden

log = logging.getLogger("aqflow")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _add_case(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", help=f"built-in case ({', '.join(sorted(CASES))})")
    p.add_argument("--case-file", type=Path, help="JSON case file")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", default="sa-hobo", choices=BACKENDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--it-max", type=int)
    p.add_argument("--delta-mu", type=float)
    p.add_argument("--delta-omega", type=float)
    p.add_argument("--readouts", type=int)
    p.add_argument("--sweeps", type=int, help="annealing sweeps per readout")
    p.add_argument("--min-improvement", type=float, help="relative progress below which the steps halve")
    p.add_argument("--feasibility-tol", type=float)
    for k in range(9):
        p.add_argument(f"--lambda{k}", type=float, dest=f"lambda_{k}")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aqflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"aqflow {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("pf", help="power flow by Newton-Raphson or AQPF")
    _add_case(pf)
    pf.add_argument("--method", choices=("nr", "aqpf"), default="nr")
    _add_solver(pf)
    pf.add_argument("--out-dir", type=Path, default=Path("out"))

    opf = sub.add_parser("opf", help="optimal power flow by brute force or AQOPF")
    _add_case(opf)
    opf.add_argument("--method", choices=("brute", "aqopf"), default="aqopf")
    opf.add_argument("--step", type=float, help="dispatch resolution in MW")
    _add_solver(opf)
    opf.add_argument("--out-dir", type=Path, default=Path("out"))

    hil = sub.add_parser("hil", help="closed-loop emulation")
    hsub = hil.add_subparsers(dest="hil_command", required=True)
    serve = hsub.add_parser("serve", help="run the mock grid simulator")
    _add_case(serve)
    serve.add_argument("--profiles", type=Path, required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=7350)
    serve.add_argument("--ticks", type=int)
    serve.add_argument("--tick-timeout", type=float, help="seconds to wait for set points (default: forever)")
    serve.add_argument("--period", type=float, default=0.0, help="minimum wall-clock seconds per tick")
    serve.add_argument("--out-dir", type=Path, default=Path("out"))
    run = hsub.add_parser("run", help="run the OPF middleware against a simulator")
    _add_case(run)
    run.add_argument("--endpoint", required=True, help="host:port of the simulator")
    run.add_argument("--ticks", type=int, default=10)
    run.add_argument("--retries", type=int, default=5)
    run.add_argument("--step", type=float, help="dispatch resolution in MW")
    _add_solver(run)
    run.add_argument("--out-dir", type=Path, default=Path("out"))

    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out-dir", type=Path, help="write outputs here instead of the recorded directory")
    return ap


def _network(args) -> tuple[Network, str]:
    if args.case and args.case_file:
        raise UsageError("give either --case or --case-file, not both")
    if args.case_file:
        try:
            return load_case(args.case_file.read_text()), str(args.case_file)
        except CaseError as exc:
            raise UsageError(f"bad case file: {exc}") from None
    name = args.case or "case9"
    if name not in CASES:
        raise UsageError(f"unknown case {name!r}; available: {', '.join(sorted(CASES))}")
    return get_case(name), name


def _loop_config(args, mode: Mode) -> LoopConfig:
    cfg = LoopConfig(mode=mode, backend=args.backend)
    over = {}
    for flag, key in (("epsilon", "epsilon"), ("it_max", "it_max"),
                      ("delta_mu", "delta_mu"), ("delta_omega", "delta_omega"),
                      ("feasibility_tol", "feasibility_tol")):
        if getattr(args, flag) is not None:
            over[key] = getattr(args, flag)
    anneal = replace(cfg.anneal, seed=args.seed)
    if args.readouts is not None:
        anneal = replace(anneal, readouts=args.readouts)
    if args.sweeps is not None:
        anneal = replace(anneal, sweeps_per_readout=args.sweeps)
    weights = cfg.weights
    lam = {f"lambda_{k}": getattr(args, f"lambda_{k}") for k in range(9) if getattr(args, f"lambda_{k}") is not None}
    if lam:
        weights = replace(weights, **lam)
    step = cfg.step
    if args.min_improvement is not None:
        step = StepPolicy(step.shrink, step.window, args.min_improvement, step.floor_mu, step.floor_omega)
    disc = cfg.discretization
    if getattr(args, "step", None) is not None:
        disc = replace(disc, pg_step=args.step)
    try:
        return replace(cfg, anneal=anneal, weights=weights, step=step, discretization=disc, **over)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text, encoding="utf-8")


def _manifest(args, argv: list[str], case: str) -> dict:
    skip = {"out_dir", "case", "case_file", "command", "hil_command", "verbose"}
    overrides = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
                 if k not in skip and v is not None}
    return {
        "command": list(argv),
        "case": case,
        "backend": getattr(args, "backend", None),
        "seed": getattr(args, "seed", None),
        "overrides": overrides,
        "out_dir": str(args.out_dir),
        "version": __version__,
    }


def _summary(rows: list[tuple[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([k for k, _ in rows])
    w.writerow([v if not isinstance(v, float) else repr(v) for _, v in rows])
    return buf.getvalue()


def cmd_pf(args, net: Network, case: str) -> int:
    out = args.out_dir
    ref = nr_power_flow(net)
    if args.method == "nr":
        _write(out, "solution.csv", write_golden(net, ref))
        _write(out, "summary.csv", _summary([("converged", int(ref.converged)), ("iterations", ref.iterations),
                                             ("mismatch", float(ref.mismatch))]))
        return EXIT_OK if ref.converged else EXIT_FAIL
    tr = run_aqpf(net, _loop_config(args, Mode.AQPF))
    log.info("AQPF: %d iterations, %.1f s", tr.iterations, tr.elapsed)
    _write(out, "solution.csv", write_golden(net, tr.pf))
    _write(out, "trace.csv", tr.trace_csv())
    _write(out, "deviation.csv", compare(tr, ref, net.s_base).to_csv(case, "AQPF", args.backend))
    _write(out, "summary.csv", _summary([("converged", int(tr.converged)), ("iterations", tr.iterations),
                                         ("h_obj", float(tr.h_obj))]))
    return EXIT_OK if tr.converged else EXIT_FAIL


def cmd_opf(args, net: Network, case: str) -> int:
    out = args.out_dir
    if args.method == "brute":
        try:
            sol = brute_force_opf(net, step=args.step if args.step is not None else 1.0)
        except InfeasibleError as exc:
            log.error("%s", exc)
            return EXIT_FAIL
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bus", "p_mw", "q_mvar", "cost"])
        for k, g in enumerate(net.generators):
            w.writerow([g.bus, f"{sol.dispatch[k]:.9g}", f"{sol.pf.q_gen[k]:.9g}", f"{g.cost(sol.dispatch[k]):.9g}"])
        _write(out, "dispatch.csv", buf.getvalue())
        _write(out, "solution.csv", write_golden(net, sol.pf))
        _write(out, "summary.csv", _summary([("total_cost", sol.total_cost), ("candidates", sol.candidates),
                                             ("feasible", int(sol.feasible))]))
        return EXIT_OK
    tr = run_aqopf(net, _loop_config(args, Mode.AQOPF))
    log.info("AQOPF: %d iterations, %.1f s, cost %.2f", tr.iterations, tr.elapsed, tr.total_cost)
    for v in tr.violations:
        log.warning("violation: %s", v)
    _write(out, "dispatch.csv", tr.dispatch_csv(net))
    _write(out, "solution.csv", write_golden(net, tr.pf))
    _write(out, "trace.csv", tr.trace_csv())
    _write(out, "summary.csv", _summary([("converged", int(tr.converged)), ("iterations", tr.iterations),
                                         ("h_obj", float(tr.h_obj)), ("total_cost", float(tr.total_cost)),
                                         ("feasible", int(tr.feasible))]))
    return EXIT_OK if tr.converged and tr.feasible else EXIT_FAIL


def cmd_hil(args, net: Network, case: str) -> int:
    from .hil.middleware import RetryPolicy, log_csv, middleware_run
    from .hil.simulator import GridSimulator, Profile, serve

    out = args.out_dir
    if args.hil_command == "serve":
        try:
            profile = Profile.load(args.profiles)
        except ValueError as exc:
            raise UsageError(f"bad profile file: {exc}") from None
        sim = GridSimulator(net, profile)
        try:
            serve(sim, args.host, args.port, args.ticks, args.tick_timeout, args.period,
                  ready=lambda port: log.info("simulator listening on %s:%d", args.host, port))
        finally:
            _write(out, "plant.csv", sim.log_csv())
        return EXIT_OK
    cfg = _loop_config(args, Mode.AQOPF)
    try:
        logs = middleware_run(args.endpoint, net, cfg, args.ticks, retry=RetryPolicy(attempts=max(1, args.retries)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(out, "middleware.csv", log_csv(net, logs))
    return EXIT_OK if logs and all(t.converged and t.feasible for t in logs) else EXIT_FAIL


def _dispatch(args, argv: list[str]) -> int:
    net, case = _network(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "manifest.json").write_text(json.dumps(_manifest(args, argv, case), indent=2) + "\n")
    return {"pf": cmd_pf, "opf": cmd_opf, "hil": cmd_hil}[args.command](args, net, case)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            recorded = json.loads(args.manifest.read_text())
            argv = list(recorded["command"])
            if args.out_dir is not None:
                argv = _with_out_dir(argv, args.out_dir)
            args = parser.parse_args(argv)
        return _dispatch(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"aqflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConnectionError, OSError) as exc:
        print(f"aqflow: {exc}", file=sys.stderr)
        return EXIT_IO
    except PowerFlowError as exc:
        print(f"aqflow: {exc}", file=sys.stderr)
        return EXIT_FAIL


def _with_out_dir(argv: list[str], out: Path) -> list[str]:
    res, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out-dir":
            skip = True
            continue
        if a.startswith("--out-dir="):
            continue
        res.append(a)
    return res + ["--out-dir", str(out)]


if __name__ == "__main__":
    sys.exit(main())
