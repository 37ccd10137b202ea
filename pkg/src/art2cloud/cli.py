"""Command-line experiment runner.

Subcommands:

    gen       synthesize a planted-cluster workload and its pattern vectors
    cluster   train an ART2 network over pattern vectors, session by session
    simulate  run one workload through one provisioning arm
    compare   run the duration x seed x arm x slack matrix and emit report CSVs

Exit codes: 0 ok, 2 usage, 3 invalid input, 4 runtime failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from . import art2, features, simulator, workload
from .art2 import Art2Params
from .simulator import SimConfig, Slack
from .workload import WorkloadSpec

log = logging.getLogger("art2cloud")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4, 5

ARMS = ("baseline", "art2")
REPORT_FIELDS = ["duration", "arm", "slack", "seed", "submitted", "rejected", "completed",
                 "in_flight", "cost_per_task", "prefetch_hit_rate", "total_cost", "art2_nodes"]
# set per cell from the matrix and the workload spec, never from overrides
PER_CELL_KEYS = {"duration", "art2", "prefetch_enabled", "deadline_slack", "seed", "n_clients", "n_objects"}
SUMMARY_FIELDS = ["duration", "arm", "slack", "runs", "rejected", "completed",
                  "cost_per_task", "prefetch_hit_rate"]


class CellError(RuntimeError):
    def __init__(self, cell, cause):
        # args kept positional so the error survives pickling out of a worker
        super().__init__(cell, str(cause))
        self.cell = cell

    def __str__(self):
        return f"cell {self.args[0]} failed: {self.args[1]}"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# run manifest ------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """Everything a ``compare`` run depends on; serialized next to its outputs."""

    out: str = "results"
    arms: tuple[str, ...] = ARMS
    slacks: tuple[str, ...] = ("tight", "relaxed")
    formats: tuple[str, ...] = ("csv",)
    workers: int = 1
    workload_spec: Optional[str] = None
    workload: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    art2: dict = field(default_factory=dict)

    def __post_init__(self):
        arms = ARMS if self.arms in ("both", ("both",)) else tuple(self.arms)
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "slacks", tuple(Slack.parse(s).label for s in self.slacks))
        object.__setattr__(self, "formats", tuple(self.formats))
        if not arms:
            raise ValueError("at least one arm must be selected")
        if set(arms) - set(ARMS):
            raise ValueError(f"unknown arm(s) {sorted(set(arms) - set(ARMS))}; choose from {ARMS}")
        if not self.slacks:
            raise ValueError("at least one slack must be selected")
        if set(self.formats) - {"csv", "json"} or not self.formats:
            raise ValueError("formats must be a non-empty subset of {csv, json}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        allowed = {f.name for f in fields(SimConfig)} - PER_CELL_KEYS
        if set(self.sim) - allowed:
            raise ValueError(f"sim overrides not allowed or unknown: {sorted(set(self.sim) - allowed)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunManifest":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**values)

    def workload_spec_obj(self) -> WorkloadSpec:
        base = {}
        if self.workload_spec:
            base = json.loads(Path(self.workload_spec).read_text())
        base.update(self.workload)
        return WorkloadSpec.from_dict(base)

    def art2_params(self) -> Art2Params:
        return Art2Params(**{**asdict(SimConfig(duration=1).art2), **self.art2})

    def to_dict(self) -> dict:
        doc = asdict(self)
        for k in ("arms", "slacks", "formats"):
            doc[k] = list(doc[k])
        return doc


# comparison matrix -------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    duration: int
    seed: int
    arm: str
    slack: str


def run_cell(cell: Cell, spec: WorkloadSpec, sim: dict, params: Art2Params):
    """Simulate one cell; returns ``(cell, metrics)``."""
    try:
        wl = workload.generate(spec, cell.duration, seed=cell.seed)
        config = SimConfig(
            duration=cell.duration,
            prefetch_enabled=cell.arm == "art2",
            deadline_slack=cell.slack,
            seed=cell.seed,
            art2=params,
            n_clients=spec.n_clients,
            n_objects=spec.n_objects,
            **sim,
        )
        return cell, simulator.run(config, wl.requests)
    except Exception as exc:
        raise CellError(cell, exc) from exc


def _run_cell_args(args):
    return run_cell(*args)


def matrix_cells(spec: WorkloadSpec, manifest: RunManifest) -> list[Cell]:
    return [
        Cell(duration, seed, arm, slack)
        for duration, seed in workload.experiment_matrix(spec)
        for arm in manifest.arms
        for slack in manifest.slacks
    ]


def run_matrix(manifest: RunManifest, cells: Optional[Sequence[Cell]] = None):
    """Run every cell, in parallel when ``workers > 1``; results keep cell order."""
    spec = manifest.workload_spec_obj()
    params = manifest.art2_params()
    cells = list(matrix_cells(spec, manifest) if cells is None else cells)
    jobs = [(c, spec, dict(manifest.sim), params) for c in cells]
    if manifest.workers == 1 or len(jobs) <= 1:
        return [run_cell(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=manifest.workers) as pool:
        return list(pool.map(_run_cell_args, jobs))


def report_rows(results) -> list[dict]:
    rows = []
    for cell, m in results:
        rows.append({
            "duration": cell.duration, "arm": cell.arm, "slack": cell.slack, "seed": cell.seed,
            "submitted": m.submitted, "rejected": m.rejected, "completed": m.completed,
            "in_flight": m.in_flight, "cost_per_task": m.cost_per_task,
            "prefetch_hit_rate": m.prefetch_hit_rate, "total_cost": m.total_cost,
            "art2_nodes": m.art2_nodes,
        })
    return rows


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def summarize(rows: list[dict]) -> list[dict]:
    """Seed-averaged rows per (duration, arm, slack), ordered by duration then arm."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["duration"], row["arm"], row["slack"]), []).append(row)
    out = []
    for (duration, arm, slack), group in sorted(groups.items(), key=lambda kv: (kv[0][0], ARMS.index(kv[0][1]), kv[0][2])):
        out.append({
            "duration": duration, "arm": arm, "slack": slack, "runs": len(group),
            "rejected": _mean([r["rejected"] for r in group]),
            "completed": _mean([r["completed"] for r in group]),
            "cost_per_task": _mean([r["cost_per_task"] for r in group]),
            "prefetch_hit_rate": _mean([r["prefetch_hit_rate"] for r in group]),
        })
    return out


def write_table(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])


def write_series(path: Path, results) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["duration", "arm", "slack", "seed", "time", "cost_per_task"])
        for cell, m in results:
            for t, value in m.cost_per_task_series:
                writer.writerow([cell.duration, cell.arm, cell.slack, cell.seed, _fmt(float(t)), _fmt(value)])


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# subcommands -------------------------------------------------------------

def _load_spec(path: Optional[str], overrides: dict) -> WorkloadSpec:
    doc = json.loads(Path(path).read_text()) if path else {}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return WorkloadSpec.from_dict(doc)


def cmd_gen(args) -> int:
    spec = _load_spec(args.spec, {"seed": args.seed})
    duration = args.duration or max(spec.durations)
    wl = workload.generate(spec, duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "workload.csv", "w", newline="") as fh:
        workload.write_requests(wl.requests, fh)
    with open(out / "labels.csv", "w", newline="") as fh:
        workload.write_labels(wl.labels, fh)
    records = workload.to_log_records(wl.requests)
    (out / "requests.log").write_text(features.format_log(records))
    window = args.window or duration
    patterns = features.session_patterns(records, spec.n_clients, spec.n_objects, window)
    with open(out / "patterns.json", "w") as fh:
        features.dump_patterns(patterns, fh)
    _dump_json(out / "spec.json", {**spec.to_dict(), "duration": duration, "window": window})
    print(f"clients={spec.n_clients} objects={spec.n_objects} requests={len(wl.requests)} "
          f"patterns={len(patterns)} duration={duration} seed={spec.seed}")
    return EXIT_OK


def _art2_overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("a", "b", "c", "d", "e", "theta", "rho", "max_f2_nodes", "learning_rate")
            if getattr(args, k, None) is not None}


def cmd_cluster(args) -> int:
    with open(args.patterns) as fh:
        patterns = features.load_patterns(fh)
    if not patterns:
        raise ValueError("no pattern vectors in input")
    m = patterns[0].values.size
    for p in patterns:
        if p.values.size != m:
            raise ValueError(f"pattern for client {p.client_id} session {p.session_id} has "
                             f"dimension {p.values.size}, expected {m}")
    params = Art2Params(**_art2_overrides(args))
    net = art2.new_network(params, m)
    order = sorted(range(len(patterns)), key=lambda i: (patterns[i].session_id, patterns[i].client_id))
    nodes = [art2.UNCLASSIFIED] * len(patterns)
    for _ in range(args.epochs):
        for i in order:
            nodes[i] = art2.present(net, patterns[i].values, learning=True).node
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "network.json").write_text(net.dumps() + "\n")
    with open(out / "assignments.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["session_id", "client_id", "node"])
        for i in order:
            writer.writerow([patterns[i].session_id, patterns[i].client_id, nodes[i]])
    print(f"patterns={len(patterns)} clusters={net.committed} rho={params.rho}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    with open(args.workload) as fh:
        requests = workload.read_requests(fh)
    duration = args.duration or (max((r.ready_time for r in requests), default=0.0) + 1.0)
    sim = {k: getattr(args, k) for k in ("startup_delay", "fetch_delay", "rate", "session_window",
                                         "prefetch_top_k", "n_clients", "n_objects")
           if getattr(args, k) is not None}
    params = Art2Params(**{**asdict(SimConfig(duration=1).art2), **_art2_overrides(args)})
    config = SimConfig(duration=duration, prefetch_enabled=args.arm == "art2",
                       deadline_slack=args.slack, seed=args.seed, art2=params, **sim)
    m = simulator.run(config, requests)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "metrics.json", {"arm": args.arm, "slack": config.deadline_slack.label,
                                      "duration": duration, **m.as_dict()})
    with open(out / "series.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "cost_per_task"])
        for t, value in m.cost_per_task_series:
            writer.writerow([_fmt(float(t)), _fmt(value)])
    print(f"arm={args.arm} slack={config.deadline_slack.label} submitted={m.submitted} "
          f"completed={m.completed} rejected={m.rejected} in_flight={m.in_flight} "
          f"cost_per_task={_fmt(m.cost_per_task)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    doc = json.loads(Path(args.manifest).read_text()) if args.manifest else {}
    for key in ("out", "workers"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    if args.arms is not None:
        doc["arms"] = ARMS if args.arms == "both" else [args.arms]
    workload_overrides = dict(doc.get("workload", {}))
    if args.durations:
        workload_overrides["durations"] = args.durations
    if args.replications is not None:
        workload_overrides["replications"] = args.replications
    if args.seed is not None:
        workload_overrides["seed"] = args.seed
    doc["workload"] = workload_overrides
    manifest = RunManifest.from_dict(doc)

    results = run_matrix(manifest)
    rows = report_rows(results)
    for row in rows:
        if row["submitted"] != row["completed"] + row["rejected"] + row["in_flight"]:
            raise simulator.SimulationError(f"conservation violated in cell {row}")
    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    if "csv" in manifest.formats:
        write_table(out / "compare.csv", REPORT_FIELDS, rows)
        write_table(out / "summary.csv", SUMMARY_FIELDS, summary)
        write_series(out / "series.csv", results)
    if "json" in manifest.formats:
        _dump_json(out / "compare.json", {"cells": rows, "summary": summary})
    _dump_json(out / "manifest.json", manifest.to_dict())
    for row in summary:
        print(f"duration={row['duration']} arm={row['arm']} slack={row['slack']} "
              f"rejected={row['rejected']:.1f} cost_per_task={_fmt(row['cost_per_task'])}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="art2cloud", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a planted-cluster workload")
    p.add_argument("--spec", help="workload spec JSON (defaults apply to missing keys)")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="trace length (default: longest spec duration)")
    p.add_argument("--window", type=float, help="session window for patterns (default: whole trace)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    def art2_flags(p, rho_default=None):
        for name in ("a", "b", "c", "d", "e", "theta"):
            p.add_argument(f"--{name}", type=float)
        p.add_argument("--rho", type=float, default=rho_default)
        p.add_argument("--max-f2-nodes", dest="max_f2_nodes", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)

    p = sub.add_parser("cluster", help="train ART2 over pattern vectors")
    p.add_argument("patterns", help="patterns.json from 'gen'")
    art2_flags(p)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("simulate", help="run one workload through one arm")
    p.add_argument("workload", help="workload.csv from 'gen'")
    p.add_argument("--arm", choices=ARMS, default="baseline")
    p.add_argument("--slack", choices=["tight", "relaxed"], default="tight")
    p.add_argument("--duration", type=float)
    p.add_argument("--seed", type=int, default=0)
    for name in ("startup_delay", "fetch_delay", "rate", "session_window"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    for name in ("prefetch_top_k", "n_clients", "n_objects"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    art2_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run the baseline vs art2 experiment matrix")
    p.add_argument("--manifest", help="run manifest JSON")
    p.add_argument("--arms", choices=["baseline", "art2", "both"])
    p.add_argument("--durations", type=int, nargs="+")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
