"""
coopsched command line: simulations, acceptance checks and the reference solver.

Exit status: 0 on success, 2 on configuration errors (argparse included),
3 when an acceptance property fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, Type, TypeVar

import pandas as pd
from pydantic import BaseModel, ValidationError

from app.core.config import settings
from app.core.exceptions import CoopSchedError, ConfigError, PropertyViolation
from app.core.logging import configure_logging
from app.models import SchedulerKind
from app.schemas.conflict import StabilityCheckRequest
from app.schemas.reference import RateTable, SolveRequest
from app.schemas.simulation import ScalingRequest, SimConfig
from app.services.conflict_service import stability_check
from app.services.phy_service import gap_sweep
from app.services.reference_service import solve_table
from app.services.simulation_service import (
    SimulationService,
    aggregate,
    optimality_certificate,
    scaling_experiment,
    stream_histogram,
)

logger = logging.getLogger("coopsched")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROPERTY = 3

GAP_LOW = -1e-9
GAP_HIGH = 2.0 + 1e-9

ModelT = TypeVar("ModelT", bound=BaseModel)


def load_model(path: str, model: Type[ModelT]) -> ModelT:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return model.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _out_dir(value: Optional[str]) -> Path:
    out = Path(value or settings.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out: Path, results, prefix: str = "") -> None:
    pooled = aggregate(results)
    pooled["throughput"].to_frame().to_csv(out / f"{prefix}throughput_cdf.csv", index=False)
    pooled["relay_fraction"].to_frame().to_csv(out / f"{prefix}relay_cdf.csv", index=False)
    stream_histogram(results).to_csv(out / f"{prefix}stream_hist.csv", index=False)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_model(args.config, SimConfig)
    out = _out_dir(args.out)
    run = SimulationService(threads=args.threads).simulate(config, baseline=args.baseline, keep_trace=args.trace)

    _write_run(out, run.cooperative)
    if run.baseline is not None:
        _write_run(out, run.baseline, prefix="baseline_")
    summary = run.summary()
    (out / "summary.json").write_text(summary.model_dump_json(indent=2))

    if args.trace:
        with open(out / "trace.jsonl", "w") as fh:
            for drop, result in enumerate(run.cooperative):
                for record in result.records:
                    fh.write(json.dumps(record.as_record(drop)) + "\n")
        queues = [r.queue_trace.assign(drop=k) for k, r in enumerate(run.cooperative) if r.queue_trace is not None]
        if queues:
            pd.concat(queues, ignore_index=True).to_csv(out / "queue_trace.csv", index=False)

    coop = summary.cooperative
    print(f"throughput p5={coop.throughput.p5:.4f} median={coop.throughput.median:.4f} mean_streams={coop.mean_streams:.3f}")
    if summary.gains:
        print(f"p5_gain={summary.gains['p5_gain']:.3f} median_gain={summary.gains['median_gain']:.3f}")

    hard_constraint = config.flow_control and config.scheduler.kind != SchedulerKind.BARRIER
    if hard_constraint and not (coop.drift_ok and coop.limsup_ok):
        raise PropertyViolation("relay clique loads broke the flow-control bound")
    return EXIT_OK


def cmd_gap_check(args: argparse.Namespace) -> int:
    rows = gap_sweep(args.trials, args.seed, args.M)
    frame = pd.DataFrame(
        [(trial, M, r.r_mimo, r.cutset, r.gap) for trial, M, r in rows],
        columns=["seed", "M", "rMimo", "cutset", "gap"],
    )
    out = Path(args.out) if args.out else _out_dir(None) / "gap_check.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    max_gap = float(frame["gap"].max())
    print(f"max_gap={max_gap:.6f} ≤ 2")
    bad = frame[(frame["gap"] < GAP_LOW) | (frame["gap"] > GAP_HIGH)]
    if len(bad):
        raise PropertyViolation(f"{len(bad)} instance(s) outside the 2 bit/s/Hz gap")
    return EXIT_OK


def cmd_scaling(args: argparse.Namespace) -> int:
    request = load_model(args.config, ScalingRequest) if args.config else ScalingRequest()
    updates = {}
    if args.n:
        updates["n_list"] = args.n
    if args.trials:
        updates["trials"] = args.trials
    if updates:
        request = ScalingRequest.model_validate({**request.model_dump(), **updates})
    table = scaling_experiment(request.n_list, request.trials, request.network, request.gamma, threads=args.threads)
    out = Path(args.out) if args.out else _out_dir(None) / "scaling.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False)
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_stability_check(args: argparse.Namespace) -> int:
    request = load_model(args.config, StabilityCheckRequest)
    report = stability_check(request)
    print(f"vertices={report.num_vertices} edges={report.num_edges} fill={report.fill_edges} chordal={report.chordal}")
    for k, clique in enumerate(report.cliques):
        members = " ".join(f"({i},{j})" for i, j in clique.members)
        print(f"Q{k}: load={clique.load:.6f} within={clique.within} members={members}")
    print(f"inner_bound={report.inner_bound} brute_force={report.brute_force}")
    if report.inner_bound and report.brute_force is False:
        raise PropertyViolation("inner bound admitted a load the exact check rejects")
    return EXIT_OK


def cmd_solve_ref(args: argparse.Namespace) -> int:
    table = load_model(args.config, RateTable)
    request = SolveRequest(table=table, barrier_index=args.barrier_index, tolerance=args.tolerance, max_iter=args.max_iter)
    report = solve_table(request)
    text = report.model_dump_json(indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_optimality_cert(args: argparse.Namespace) -> int:
    table = load_model(args.config, RateTable)
    cert = optimality_certificate(table, args.frames, seed=args.seed)
    print(f"OPT'={cert.opt_value:.6f} (solver converged={cert.solver_converged})")
    for row in cert.trajectory.itertuples(index=False):
        print(f"t={row.t:>8d} U={row.utility:.6f} |U-OPT'|={row.abs_error:.6f}")
    verdict = "PASS" if cert.passed else "FAIL"
    print(f"{verdict}: final error {cert.final_error:.6f}, tolerance {cert.tolerance:.6f}")
    if not cert.passed:
        raise PropertyViolation("scheduler utility did not reach the reference optimum")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopsched", description="D2D cooperative downlink scheduling")
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--threads", type=int, default=None, help="Overrides COOPSCHED_THREADS")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Run drops and write CDF/histogram CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--baseline", action="store_true", help="Also run the non-cooperative baseline")
    p.add_argument("--trace", action="store_true", help="Write trace.jsonl and queue_trace.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gap-check", help="Capacity gap over random relay instances")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--M", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--out")
    p.set_defaults(func=cmd_gap_check)

    p = sub.add_parser("scaling", help="Weakest-user SNR against n")
    p.add_argument("--config")
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("stability-check", help="Clique loads and membership verdicts")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_stability_check)

    p = sub.add_parser("solve-ref", help="Reference optimum for a rate table")
    p.add_argument("--config", required=True)
    p.add_argument("--barrier-index", type=float)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve_ref)

    p = sub.add_parser("optimality-cert", help="Scheduler utility against the reference optimum")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_optimality_cert)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except PropertyViolation as exc:
        logger.error("%s", exc)
        return EXIT_PROPERTY
    except (CoopSchedError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
