"""Command-line front end.

Subcommands form a pipeline over an artifacts directory:

    gen       generate fleet, traces, workloads; fit clusters (elbow + model)
    train     train the availability forecaster on the generated traces
    simulate  run one scheduler over the generated workload
    compare   run all schedulers across scales; emit comparison CSVs
    report    recompute summary statistics from an existing records.csv

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Output files are written atomically and never overwritten unless --force.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
import tempfile
from dataclasses import replace

from . import __version__
from .clustering import load_model, save_model, write_elbow_csv
from .config import ConfigFileError, ExperimentConfig, file_header, load_config
from .fleet import (
    ConfigurationError,
    generate_fleet,
    generate_traces,
    generate_workloads,
    profile_map,
    read_fleet_csv,
    read_traces_csv,
    read_workloads_csv,
    write_fleet_csv,
    write_traces_csv,
    write_workloads_csv,
)
from .forecast import (
    TrainConfig,
    build_window_dataset,
    evaluate_accuracy,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_curve_csv,
)
from .reports import (
    aggregate_records,
    atomic_write_text,
    build_summary_text,
    comparison_rows,
    read_records_csv,
    records_to_rows,
    write_decision_log_csv,
    write_latency_by_instance_csv,
    write_latency_by_scale_csv,
    write_productivity_csv,
    write_records_csv,
)
from .sim import SCHEDULERS, Artifacts, cluster_fleet, compare_schedulers, run_simulation

FLEET_CSV = "fleet.csv"
TRACES_CSV = "traces.csv"
ELBOW_CSV = "elbow.csv"
CLUSTER_MODEL = "cluster_model.txt"
CHECKPOINT = "rnn_checkpoint.txt"
LOSS_CURVE_CSV = "loss_curve.csv"
RECORDS_CSV = "records.csv"
DECISION_LOG_CSV = "decision_log.csv"
SUMMARY_TXT = "summary.txt"
LATENCY_BY_INSTANCE_CSV = "latency_by_instance.csv"
LATENCY_BY_SCALE_CSV = "latency_by_scale.csv"
PRODUCTIVITY_CSV = "productivity.csv"


def workloads_csv(scale: int) -> str:
    return f"workloads_{scale}.csv"


class UsageError(Exception):
    """Bad invocation that is not a config-file problem (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this CLI reserves 2 for runtime
    failures, so usage errors exit 1 instead."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


@contextlib.contextmanager
def _atomic_path(path: str):
    """Yield a temp path; on success rename it over `path`."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _refuse_overwrite(paths: list[str], force: bool) -> None:
    if force:
        return
    existing = [p for p in paths if os.path.exists(p)]
    if existing:
        raise UsageError(
            "refusing to overwrite existing output (pass --force): " + ", ".join(sorted(existing))
        )


def _load(args) -> ExperimentConfig:
    return load_config(args.config, seed_override=args.seed)


def _require_input(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing input {path} ({hint})")
    return path


def _read_artifacts(out: str, config: ExperimentConfig) -> Artifacts:
    model, standardizer = load_model(
        _require_input(os.path.join(out, CLUSTER_MODEL), "run `vecsim gen` first")
    )
    rnn, encoder = load_checkpoint(
        _require_input(os.path.join(out, CHECKPOINT), "run `vecsim train` first")
    )
    return Artifacts(cluster_model=model, standardizer=standardizer, rnn=rnn, encoder=encoder)


def _read_fleet_and_traces(out: str, config: ExperimentConfig):
    fleet = read_fleet_csv(
        _require_input(os.path.join(out, FLEET_CSV), "run `vecsim gen` first"),
        profile_map(config.fleet),
    )
    traces = read_traces_csv(
        _require_input(os.path.join(out, TRACES_CSV), "run `vecsim gen` first")
    )
    return fleet, traces


def cmd_gen(args) -> int:
    config = _load(args)
    out = args.out
    os.makedirs(out, exist_ok=True)
    planned = [
        os.path.join(out, FLEET_CSV),
        os.path.join(out, TRACES_CSV),
        os.path.join(out, CLUSTER_MODEL),
    ]
    planned += [os.path.join(out, workloads_csv(s)) for s in config.scales]
    if config.k is None:
        planned.append(os.path.join(out, ELBOW_CSV))
    _refuse_overwrite(planned, args.force)

    header = "# " + file_header(config)
    fleet = generate_fleet(config.fleet, config.seed)
    traces = generate_traces(fleet, config.horizon_hours, config.seed, config.start_epoch)
    with _atomic_path(os.path.join(out, FLEET_CSV)) as tmp:
        write_fleet_csv(tmp, fleet, header)
    with _atomic_path(os.path.join(out, TRACES_CSV)) as tmp:
        write_traces_csv(tmp, traces, header)
    for scale in config.scales:
        wl = generate_workloads(
            replace(config.workload, count=scale), config.seed, config.start_epoch
        )
        with _atomic_path(os.path.join(out, workloads_csv(scale))) as tmp:
            write_workloads_csv(tmp, wl, header)

    model, standardizer, elbow = cluster_fleet(
        fleet, config.seed, k=config.k, k_range=range(1, config.k_max + 1)
    )
    if elbow is not None:
        with _atomic_path(os.path.join(out, ELBOW_CSV)) as tmp:
            write_elbow_csv(tmp, elbow, header)
        for warning in elbow.warnings:
            print(f"warning: {warning}", file=sys.stderr)
    with _atomic_path(os.path.join(out, CLUSTER_MODEL)) as tmp:
        save_model(tmp, model, standardizer)

    print(
        f"generated {len(fleet)} nodes, {config.horizon_hours} h traces, "
        f"workload scales {list(config.scales)}, k={model.k} clusters -> {out}"
    )
    return 0


def cmd_train(args) -> int:
    config = _load(args)
    out = args.out
    planned = [os.path.join(out, CHECKPOINT), os.path.join(out, LOSS_CURVE_CSV)]
    _refuse_overwrite(planned, args.force)
    _fleet, traces = _read_fleet_and_traces(out, config)

    train_ds, holdout, encoder = build_window_dataset(
        traces,
        sequence_length=config.train.sequence_length,
        stride=config.train.stride,
        holdout_weeks=config.train.holdout_weeks,
    )
    model = init_model(encoder.width, config.train.hidden_size, config.seed)
    result = train(
        model,
        train_ds,
        TrainConfig(
            epochs=config.train.epochs,
            learning_rate=config.train.learning_rate,
            sequence_length=config.train.sequence_length,
            batch_size=config.train.batch_size,
            seed=config.seed,
        ),
        holdout=holdout,
    )
    header = "# " + file_header(config)
    with _atomic_path(os.path.join(out, CHECKPOINT)) as tmp:
        save_checkpoint(tmp, result.model, encoder, header)
    with _atomic_path(os.path.join(out, LOSS_CURVE_CSV)) as tmp:
        write_loss_curve_csv(tmp, result.loss_curve, header)
    accuracy = evaluate_accuracy(result.model, holdout)
    print(
        f"trained {config.train.epochs} epochs on {len(train_ds)} windows; "
        f"holdout accuracy {accuracy:.4f} over {len(holdout)} windows -> {out}"
    )
    return 0


def cmd_simulate(args) -> int:
    config = _load(args)
    out = args.out
    scheduler = args.scheduler or config.scheduler
    planned = [
        os.path.join(out, RECORDS_CSV),
        os.path.join(out, DECISION_LOG_CSV),
        os.path.join(out, SUMMARY_TXT),
    ]
    _refuse_overwrite(planned, args.force)
    fleet, traces = _read_fleet_and_traces(out, config)
    artifacts = _read_artifacts(out, config)
    workloads = read_workloads_csv(
        _require_input(
            os.path.join(out, workloads_csv(config.instance_scale)), "run `vecsim gen` first"
        )
    )
    report = run_simulation(
        fleet, traces, workloads, scheduler, artifacts, config.sim, config.costs, config.seed
    )
    header = file_header(config, scheduler=scheduler)
    rows = records_to_rows(report, "simulate", len(workloads))
    write_records_csv(rows, os.path.join(out, RECORDS_CSV), header)
    write_decision_log_csv(report.decision_log, os.path.join(out, DECISION_LOG_CSV), header)
    summary = build_summary_text(aggregate_records(rows), meta_lines=[header])
    atomic_write_text(os.path.join(out, SUMMARY_TXT), summary)
    outcomes = report.counters["outcomes"]
    print(
        f"{scheduler}: {outcomes['completed']} completed, {outcomes['failed']} failed, "
        f"{outcomes['rejected']} rejected over {len(workloads)} workflows -> {out}"
    )
    return 0


def cmd_compare(args) -> int:
    config = _load(args)
    out = args.out
    planned = [
        os.path.join(out, RECORDS_CSV),
        os.path.join(out, DECISION_LOG_CSV),
        os.path.join(out, SUMMARY_TXT),
        os.path.join(out, LATENCY_BY_INSTANCE_CSV),
        os.path.join(out, LATENCY_BY_SCALE_CSV),
        os.path.join(out, PRODUCTIVITY_CSV),
    ]
    _refuse_overwrite(planned, args.force)
    fleet, traces = _read_fleet_and_traces(out, config)
    artifacts = _read_artifacts(out, config)
    workloads_by_scale = {
        scale: read_workloads_csv(
            _require_input(os.path.join(out, workloads_csv(scale)), "run `vecsim gen` first")
        )
        for scale in config.scales
    }
    comparison = compare_schedulers(
        fleet,
        traces,
        workloads_by_scale,
        artifacts,
        config.sim,
        config.costs,
        config.seed,
        instance_scale=config.instance_scale,
    )
    header = file_header(config)
    rows = comparison_rows(comparison, config.instance_scale)
    write_records_csv(rows, os.path.join(out, RECORDS_CSV), header)
    write_latency_by_instance_csv(comparison, os.path.join(out, LATENCY_BY_INSTANCE_CSV), header)
    write_latency_by_scale_csv(comparison, os.path.join(out, LATENCY_BY_SCALE_CSV), header)
    write_productivity_csv(comparison, os.path.join(out, PRODUCTIVITY_CSV), header)
    log_rows = []
    for key in sorted(comparison.latency_reports):
        log_rows.extend(comparison.latency_reports[key].decision_log)
    for scheduler in sorted(comparison.productivity_reports):
        log_rows.extend(comparison.productivity_reports[scheduler].decision_log)
    write_decision_log_csv(log_rows, os.path.join(out, DECISION_LOG_CSV), header)
    summary = build_summary_text(aggregate_records(rows), meta_lines=[header])
    atomic_write_text(os.path.join(out, SUMMARY_TXT), summary)

    for scale in sorted(workloads_by_scale):
        veca = comparison.mean_latency_ms(scale, "veca")
        vela = comparison.mean_latency_ms(scale, "vela")
        vecflex = comparison.mean_latency_ms(scale, "vecflex")
        ratio = veca / vela if vela else float("nan")
        print(
            f"scale {scale:>4}: latency veca {veca:.3f} ms, vela {vela:.3f} ms, "
            f"vecflex {vecflex:.3f} ms (veca/vela {ratio:.3f})"
        )
    for scheduler in SCHEDULERS:
        print(f"productivity {scheduler}: {comparison.mean_productivity(scheduler):.2f}%")
    print(f"wrote comparison artifacts -> {out}")
    return 0


def cmd_report(args) -> int:
    rows = read_records_csv(_require_input(args.records, "produce it with simulate or compare"))
    text = build_summary_text(aggregate_records(rows))
    if args.write:
        atomic_write_text(args.write, text)
        print(f"wrote {args.write}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="vecsim",
        description="Volunteer edge-cloud scheduling simulator",
    )
    parser.add_argument("--version", action="version", version=f"vecsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", required=True, help="artifacts directory")
        p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p_gen = sub.add_parser("gen", help="generate fleet, traces, workloads; fit clusters")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train the availability forecaster")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sim = sub.add_parser("simulate", help="simulate one scheduler")
    common(p_sim)
    p_sim.add_argument(
        "--scheduler", choices=SCHEDULERS, default=None, help="override [experiment] scheduler"
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="compare all schedulers across scales")
    common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("report", help="recompute summary statistics from records.csv")
    p_rep.add_argument("--records", required=True, help="records.csv from simulate or compare")
    p_rep.add_argument("--write", default=None, help="write the summary here instead of stdout")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help/--version exit 0; usage errors exit 1
        code = exc.code
        return int(code) if code is not None else 0
    try:
        return args.func(args)
    except (ConfigFileError, ConfigurationError, UsageError) as exc:
        print(f"vecsim: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"vecsim: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort runtime guard
        print(f"vecsim: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
