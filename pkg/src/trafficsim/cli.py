"""Command-line entry points.

    trafficsim run CONFIG [--steps N] [--report PATH]
    trafficsim bench CONFIG [--steps N] [--threads 1,2,4]
    trafficsim gen-grid ROWS COLS --out DIR [--volume V] [...]
    trafficsim serve CONFIG [--port P] [--pace S | --max-speed]

Exit codes: 0 success, 1 user error (bad paths, unparseable documents,
invalid arguments), 2 internal invariant failure (cross-thread replay
divergence, audit violations).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, replace

from .config import load_config
from .errors import InvariantViolation, TrafficSimError

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


@dataclass
class RunReport:
    steps: int
    wallSeconds: float
    stepsPerSecond: float
    finishedVehicles: int
    averageTravelTime: float


def _run_engine(config, steps: int, debug: bool = False) -> RunReport:
    from .engine import Engine

    with Engine(config, debug=debug) as eng:
        t0 = time.perf_counter()
        for _ in range(steps):
            eng.next_step()
        wall = time.perf_counter() - t0
        return RunReport(
            steps=steps,
            wallSeconds=wall,
            stepsPerSecond=steps / wall if wall > 0 else 0.0,
            finishedVehicles=eng.stats["finished"],
            averageTravelTime=eng.get_average_travel_time(),
        )


def cmd_run(args) -> int:
    config = load_config(args.config)
    report = _run_engine(config, args.steps, debug=args.debug)
    text = json.dumps(asdict(report), indent=2)
    print(text)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    """Identical run per thread count; replay digests must match exactly.

    saveReplay is forced on (each thread count writes its own file): the
    byte comparison is the point of the command, throughput is the report.
    """
    base = load_config(args.config)
    thread_counts = args.threads
    reports = {}
    digests = {}
    for t in thread_counts:
        replay_path = f"{args.config}.bench-t{t}.replay.txt"
        cfg = replace(base, threads=t, save_replay=True,
                      replay_file=replay_path, roadnet_log_file=None)
        reports[t] = _run_engine(cfg, args.steps)
        h = hashlib.sha256()
        with open(replay_path, "rb") as f:
            h.update(f.read())
        digests[t] = h.hexdigest()
    for t in thread_counts:
        r = reports[t]
        print(f"threads={t}: {r.stepsPerSecond:.1f} steps/s "
              f"({r.steps} steps in {r.wallSeconds:.2f}s), "
              f"replay sha256 {digests[t][:16]}")
    if len(set(digests.values())) > 1:
        print("DETERMINISM FAILURE: replay files differ across thread "
              f"counts {thread_counts}: {digests}", file=sys.stderr)
        return EXIT_INTERNAL
    if len(thread_counts) > 1:
        base_r = reports[thread_counts[0]].stepsPerSecond
        for t in thread_counts[1:]:
            print(f"speedup({t})/speedup({thread_counts[0]}): "
                  f"{reports[t].stepsPerSecond / base_r:.2f}")
    return EXIT_OK


def cmd_gen_grid(args) -> int:
    from .grid import GridParams, write_grid_scenario

    params = GridParams(
        road_length=args.road_length,
        lanes_per_road=args.lanes,
        max_speed=args.max_speed,
        all_green=args.all_green,
    )
    paths = write_grid_scenario(
        args.out, args.rows, args.cols, args.volume, params=params,
        turn_volume=args.turn_volume, seed=args.seed, threads=args.threads,
        save_replay=args.save_replay)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .serve import run_server

    run_server(args.config, host=args.host, port=args.port,
               pace=args.pace, max_speed=args.max_speed)
    return EXIT_OK


def _parse_threads(text: str):
    out = [int(x) for x in text.split(",") if x.strip()]
    if not out or any(t < 1 for t in out):
        raise argparse.ArgumentTypeError(
            f"thread list must be positive integers, got {text!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="trafficsim",
        description="Deterministic parallel microscopic traffic simulation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and print a report")
    p.add_argument("config")
    p.add_argument("--steps", type=int, default=3600)
    p.add_argument("--report", help="also write the report to this path")
    p.add_argument("--debug", action="store_true",
                   help="audit every step and fail on invariant violations")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser(
        "bench", help="repeat a run per thread count; replays must match")
    p.add_argument("config")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--threads", type=_parse_threads, default=[1, 2, 4])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-grid", help="write a runnable grid scenario")
    p.add_argument("rows", type=int)
    p.add_argument("cols", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--volume", type=float, default=300.0,
                   help="vehicles/hour per straight entry flow")
    p.add_argument("--turn-volume", type=float, default=0.0,
                   help="vehicles/hour per turn flow (left and right each)")
    p.add_argument("--lanes", type=int, default=1)
    p.add_argument("--road-length", type=float, default=300.0)
    p.add_argument("--max-speed", type=float, default=16.67)
    p.add_argument("--all-green", action="store_true",
                   help="single permissive phase (unsignalized stress)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--save-replay", action="store_true")
    p.set_defaults(func=cmd_gen_grid)

    p = sub.add_parser("serve", help="serve a live engine for the viewer")
    p.add_argument("config")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--pace", type=float, default=10.0,
                   help="steps per wall second")
    p.add_argument("--max-speed", action="store_true",
                   help="step as fast as possible")
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrafficSimError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL if isinstance(e, InvariantViolation) \
            else EXIT_USER
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
