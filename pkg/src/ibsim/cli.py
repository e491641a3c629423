"""Experiment harness: generate, partition, simulate, sweep, and re-report.

Subcommands:
  gen-workload  write a workload JSON from generator parameters
  partition     write an IB assignment JSON for a workload
  run           simulate one workload under one configuration
  sweep         run a parameter grid and emit one CSV row per cell and seed
  report        recompute run metrics from an event-trace file

Every run is deterministic in (workload seed, config); sweep rows come out in
grid order no matter how many workers execute the cells.
"""

from __future__ import annotations

import argparse
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import partition, workload as wl
from .engine import SimConfig, Simulator
from .partition import IBAssignment, jain_fairness


class ParseError(ValueError):
    """An input file could not be parsed."""


class ConfigError(ValueError):
    """Configuration values are missing or inconsistent."""


CSV_NOTE = ("# blocked counts suspension episodes: a transaction suspended "
            "twice contributes two")
CSV_COLUMNS = ("run_id,seed,strategy,k,pi,delta,lambda,affected,blocked,"
               "mean_recovery,mean_response,boundary,fairness")


@dataclass
class SimReport:
    """Per-run metrics; arithmetic fields are recomputable from the trace."""

    affected_count: int
    blocked_count: int
    mean_recovery_ticks: float | None
    mean_response_ticks: float | None
    throughput: list[int]
    boundary_tuples: int
    fairness: float
    event_histogram: dict[str, int]
    cross_ib_leaks: int = 0

    def to_json_dict(self) -> dict:
        return {
            "affected": self.affected_count,
            "blocked": self.blocked_count,
            "mean_recovery": self.mean_recovery_ticks,
            "mean_response": self.mean_response_ticks,
            "throughput": self.throughput,
            "boundary": self.boundary_tuples,
            "fairness": self.fairness,
            "histogram": dict(sorted(self.event_histogram.items())),
            "cross_ib_leaks": self.cross_ib_leaks,
        }


@dataclass
class ExperimentGrid:
    k: list[int]
    pi: list[float]
    delta: list[int]
    lam: list[float]
    strategy: list[str]
    seeds: list[int]
    workload: dict = field(default_factory=dict)
    delayed_access: bool = True

    def cells(self) -> list[dict]:
        out = []
        for strategy in self.strategy:
            for k in self.k:
                for pi in self.pi:
                    for delta in self.delta:
                        for lam in self.lam:
                            for seed in self.seeds:
                                out.append({
                                    "strategy": strategy, "k": k, "pi": pi,
                                    "delta": delta, "lam": lam, "seed": seed,
                                    "workload": self.workload,
                                    "delayed_access": self.delayed_access,
                                })
        return out


def build_assignment(workload: wl.Workload, strategy: str, k: int,
                     seed: int = 0) -> IBAssignment:
    """Assignment for a named strategy; single-IB baselines force k to 1."""
    strategy = strategy.upper()
    if strategy in ("ONEIB", "ITDB"):
        return partition.bfa_assign(workload, 1, seed)
    builders = {
        "BFA": partition.bfa_assign,
        "BA": partition.ba_assign,
        "RA": partition.ra_assign,
        "SA": partition.sa_assign,
        "EXACT": partition.exact_solve,
    }
    if strategy not in builders:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if strategy == "EXACT":
        return partition.exact_solve(workload, k)
    return builders[strategy](workload, k, seed)


def report_from_simulator(sim: Simulator) -> SimReport:
    response_times = [
        sim.commit_tick[t] - sim.arrival_tick[t] for t in sim.commit_tick
        if t in sim.arrival_tick
    ]
    recovery_times = [
        r.end_tick - r.start_tick for r in sim.recovery_reports
    ]
    windows = sim.commits_per_window
    throughput = [windows.get(w, 0) for w in range(max(windows) + 1)] if windows else []
    return SimReport(
        affected_count=sim.affected_count,
        blocked_count=sim.blocked_count,
        mean_recovery_ticks=(
            sum(recovery_times) / len(recovery_times) if recovery_times else None),
        mean_response_ticks=(
            sum(response_times) / len(response_times) if response_times else None),
        throughput=throughput,
        boundary_tuples=sum(sim.assignment.boundary),
        fairness=jain_fairness(sim.assignment.ib_txn_counts()),
        event_histogram=dict(sim.histogram),
        cross_ib_leaks=sim.cross_ib_leaks,
    )


def run_simulation(workload: wl.Workload, assignment: IBAssignment,
                   config: SimConfig) -> tuple[SimReport, Simulator]:
    sim = Simulator(workload, assignment, config)
    sim.run()
    return report_from_simulator(sim), sim


def write_trace(sim: Simulator, path: str | Path) -> None:
    with open(path, "w") as fh:
        for ev in sim.trace:
            fh.write(json.dumps(ev.to_json_dict()) + "\n")


def report_from_trace(path: str | Path) -> SimReport:
    """Recompute run arithmetic from an event-trace file alone.

    Boundary and fairness are assignment properties, not trace arithmetic;
    they come back as 0/1.0 placeholders here.
    """
    arrivals: dict[int, int] = {}
    commits: dict[int, int] = {}
    detections: dict[int, int] = {}
    recoveries: list[int] = []
    affected = blocked = leaks = 0
    histogram: dict[str, int] = {}
    windows: dict[int, int] = {}
    with open(path) as fh:
        for line in fh:
            try:
                ev = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad trace line: {exc}") from exc
            kind, tick, txn = ev["kind"], ev["tick"], ev["txn"]
            histogram[kind] = histogram.get(kind, 0) + 1
            if kind == "Arrival":
                arrivals.setdefault(txn, tick)
            elif kind == "Commit":
                commits.setdefault(txn, tick)
                windows[tick // 1000] = windows.get(tick // 1000, 0) + 1
            elif kind == "Detection":
                detections[txn] = tick
            elif kind == "RecoveryDone":
                recoveries.append(tick - detections[txn])
            elif kind == "AffectedIdentified":
                affected += 1
            elif kind.startswith("Suspended"):
                blocked += 1
            elif kind == "CrossIBLeak":
                leaks += 1
    response_times = [commits[t] - arrivals[t] for t in commits if t in arrivals]
    return SimReport(
        affected_count=affected,
        blocked_count=blocked,
        mean_recovery_ticks=(
            sum(recoveries) / len(recoveries) if recoveries else None),
        mean_response_ticks=(
            sum(response_times) / len(response_times) if response_times else None),
        throughput=[windows.get(w, 0) for w in range(max(windows) + 1)] if windows else [],
        boundary_tuples=0,
        fairness=1.0,
        event_histogram=histogram,
        cross_ib_leaks=leaks,
    )


def _load_structured(path: str | Path) -> dict:
    text = Path(path).read_bytes()
    if str(path).endswith(".toml"):
        try:
            return tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def sim_config_from_dict(data: dict) -> SimConfig:
    data = dict(data.get("sim", data))
    if "lambda" in data:
        data["arrival_rate"] = data.pop("lambda")
    known = {f for f in SimConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown sim config keys: {sorted(unknown)}")
    try:
        return SimConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def workload_spec_from_dict(data: dict) -> wl.WorkloadSpec:
    data = dict(data.get("workload", data))
    if "pi" in data:
        data["attack_intensity"] = data.pop("pi")
    if "gamma_range" in data:
        data["gamma_range"] = tuple(data["gamma_range"])
    known = {f for f in wl.WorkloadSpec.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown workload keys: {sorted(unknown)}")
    try:
        spec = wl.WorkloadSpec(**data)
        spec.check()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def run_cell(cell: dict) -> str:
    """One sweep cell to one CSV row; pure function of the cell dict."""
    spec = workload_spec_from_dict(dict(
        cell["workload"], attack_intensity=cell["pi"], seed=cell["seed"],
    ))
    workload = wl.generate(spec)
    strategy = cell["strategy"]
    k = 1 if strategy.upper() in ("ONEIB", "ITDB") else cell["k"]
    assignment = build_assignment(workload, strategy, k, cell["seed"])
    config = SimConfig(
        delta=cell["delta"], arrival_rate=cell["lam"], k=k,
        strategy=strategy, seed=cell["seed"],
        delayed_access=cell.get("delayed_access", True),
    )
    report, _ = run_simulation(workload, assignment, config)
    run_id = (f"{strategy}-k{k}-pi{cell['pi']}-d{cell['delta']}"
              f"-l{cell['lam']}-s{cell['seed']}")
    fields = [
        run_id, cell["seed"], strategy, k, cell["pi"], cell["delta"],
        cell["lam"], report.affected_count, report.blocked_count,
        report.mean_recovery_ticks, report.mean_response_ticks,
        report.boundary_tuples, report.fairness,
    ]
    return ",".join(_fmt(f) for f in fields)


def run_sweep(grid: ExperimentGrid, workers: int = 1) -> tuple[list[str], list[str]]:
    """All grid cells in deterministic order; failures recorded, not fatal."""
    cells = grid.cells()
    rows: list[str | None] = [None] * len(cells)
    failures: list[str] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, result in enumerate(pool.map(_safe_cell, cells)):
                rows[idx] = result
    else:
        rows = [_safe_cell(cell) for cell in cells]
    out = [CSV_NOTE, CSV_COLUMNS]
    for cell, row in zip(cells, rows):
        if row.startswith("!"):
            failures.append(f"cell {cell['strategy']} k={cell['k']} "
                            f"pi={cell['pi']} seed={cell['seed']}: {row[1:]}")
        else:
            out.append(row)
    return out, failures


def _safe_cell(cell: dict) -> str:
    try:
        return run_cell(cell)
    except Exception as exc:  # noqa: BLE001 - partial failure by contract
        return f"!{exc}"


# -- command implementations -------------------------------------------------


def _cmd_gen_workload(args: argparse.Namespace) -> int:
    spec = wl.WorkloadSpec(
        m=args.m, n=args.n, beta=args.beta, tx_max=args.tx_max,
        size_max=args.size_max, group_size=args.group_size,
        seed=args.seed, attack_intensity=args.pi,
    )
    spec.check()
    wl.save_workload(wl.generate(spec), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_partition(args: argparse.Namespace) -> int:
    workload = wl.load_workload(args.workload)
    assignment = build_assignment(workload, args.strategy, args.k, args.seed)
    Path(args.out).write_text(
        json.dumps(assignment.to_json_dict()) + "\n")
    q = partition.quality(assignment, workload)
    print(f"wrote {args.out}: boundary={q.f1_simple} weighted={q.f1_weighted} "
          f"fairness={q.fairness:.4f}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    workload = wl.load_workload(args.workload)
    if args.assignment:
        data = _load_structured(args.assignment)
        assignment = IBAssignment.from_json_dict(data, workload.txns)
        k = assignment.k
        strategy = args.strategy or "BFA"
    else:
        strategy = args.strategy or "BFA"
        k = 1 if strategy.upper() in ("ONEIB", "ITDB") else args.k
        assignment = build_assignment(workload, strategy, k, args.seed)
    overrides = _load_structured(args.config) if args.config else {}
    sim_part = dict(overrides.get("sim", overrides))
    sim_part.setdefault("delta", args.delta)
    sim_part.setdefault("arrival_rate", args.arrival_rate)
    sim_part.setdefault("seed", args.seed)
    sim_part.setdefault("k", k)
    sim_part.setdefault("strategy", strategy)
    sim_part.setdefault("delayed_access", not args.no_delayed_access)
    config = sim_config_from_dict(sim_part)
    report, sim = run_simulation(workload, assignment, config)
    if args.trace:
        write_trace(sim, args.trace)
    if args.log:
        sim.log.export_csv(args.log)
    payload = json.dumps(report.to_json_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    data = _load_structured(args.grid)
    try:
        grid = ExperimentGrid(
            k=list(data.get("k", [1])),
            pi=list(data.get("pi", [0.0])),
            delta=list(data.get("delta", [0])),
            lam=list(data.get("lambda", data.get("lam", [1.0]))),
            strategy=list(data.get("strategy", ["BFA"])),
            seeds=list(data.get("seeds", [0])),
            workload=dict(data.get("workload", {})),
            delayed_access=bool(data.get("delayed_access", True)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    rows, failures = run_sweep(grid, workers=args.workers)
    Path(args.out).write_text("\n".join(rows) + "\n")
    print(f"wrote {args.out}: {len(rows) - 2} rows")
    for failure in failures:
        print(f"FAILED {failure}", file=sys.stderr)
    return 3 if failures else 0


def _cmd_report(args: argparse.Namespace) -> int:
    report = report_from_trace(args.trace)
    print(json.dumps(report.to_json_dict(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-workload", help="generate a workload file")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--beta", type=float, required=True)
    g.add_argument("--tx-max", type=int, default=5, dest="tx_max")
    g.add_argument("--size-max", type=int, default=8, dest="size_max")
    g.add_argument("--group-size", type=int, default=50, dest="group_size")
    g.add_argument("--pi", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_workload)

    p = sub.add_parser("partition", help="build an IB assignment")
    p.add_argument("--workload", required=True)
    p.add_argument("--strategy", required=True,
                   choices=["bfa", "ba", "ra", "sa", "exact"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_partition)

    r = sub.add_parser("run", help="simulate one configuration")
    r.add_argument("--workload", required=True)
    r.add_argument("--assignment")
    r.add_argument("--strategy")
    r.add_argument("--k", type=int, default=1)
    r.add_argument("--delta", type=int, default=0)
    r.add_argument("--lambda", type=float, default=1.0, dest="arrival_rate")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--no-delayed-access", action="store_true")
    r.add_argument("--config")
    r.add_argument("--trace")
    r.add_argument("--log", help="export the read/write log as CSV")
    r.add_argument("--out")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run an experiment grid to CSV")
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=_cmd_sweep)

    t = sub.add_parser("report", help="recompute metrics from a trace")
    t.add_argument("--trace", required=True)
    t.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
