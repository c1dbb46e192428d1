"""Command-line entry point.

Exit codes::

    0  success
    1  domain failure (scenario fails validation, protocol conformance violation)
    2  IO or usage error (missing, unwritable, malformed or corrupt files; bad arguments)
    3  a slot failed to converge and ``--strict`` was given
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import export
from .engine import run_day
from .replay import format_report, replay_slot
from .scenario import (ScenarioError, ScenarioParseError, ScenarioValidationError,
                       default_paper_scenario, dumps_scenario, read_scenario)

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_NONCONVERGED = 0, 1, 2, 3
OUT_ENV = "P2PGRID_OUT"
FORMATS = ("csv", "json", "trace")

log = logging.getLogger("p2pgrid")


@dataclass(frozen=True)
class RunConfig:
    scenario_path: str | None
    output_dir: str
    p2p_enabled: bool = True
    seed: int | None = None
    strict: bool = False
    verbosity: int = 0
    formats: tuple = ("csv", "json")

    def __post_init__(self):
        unknown = set(self.formats) - set(FORMATS)
        if unknown:
            raise ValueError(f"unknown export format(s): {', '.join(sorted(unknown))}")


def _fail(code, msg):
    print(f"p2pgrid: {msg}", file=sys.stderr)
    return code


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV, "results")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_scenario(seed: int, out_path) -> int:
    s = default_paper_scenario(seed)
    try:
        path = Path(out_path)
        path.write_text(dumps_scenario(s))
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write {out_path}: {exc.strerror or exc}")
    kinds = [a.kind for a in s.agents]
    print(f"wrote {out_path}: {len(s.agents)} agents ({kinds.count('DG')} DG, "
          f"{kinds.count('Prosumer')} prosumers, {kinds.count('Consumer')} consumers), "
          f"{s.horizon_slots} slots, seed {seed}")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    if cfg.scenario_path is None:
        s = default_paper_scenario(0 if cfg.seed is None else cfg.seed)
    else:
        try:
            s = read_scenario(cfg.scenario_path)
        except OSError as exc:
            return _fail(EXIT_IO, f"cannot read {cfg.scenario_path}: {exc.strerror or exc}")
        except ScenarioValidationError as exc:
            for v in exc.violations:
                print(f"p2pgrid: {cfg.scenario_path}: {v}", file=sys.stderr)
            return EXIT_DOMAIN
        except ScenarioParseError as exc:
            return _fail(EXIT_IO, f"{cfg.scenario_path}: {exc}")
        if cfg.seed is not None:
            # the seed only drives synthesis; for a given file it is metadata
            s = replace(s, seed=cfg.seed)

    want_trace = "trace" in cfg.formats
    try:
        res = run_day(s, p2p_enabled=cfg.p2p_enabled, record=True)
    except ScenarioError as exc:
        return _fail(EXIT_DOMAIN, str(exc))
    for d in res.diagnostics:
        log.warning(d)
    try:
        files = export.write_result(res, s, cfg.output_dir, cfg.formats, trace=want_trace)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write results to {cfg.output_dir}: {exc.strerror or exc}")
    log.info("wrote %s to %s", ", ".join(files), cfg.output_dir)

    stalled = [r.slot for r in res.slots if not (r.clearing_converged and r.auction_converged)]
    if stalled:
        msg = f"non-converged slots: {', '.join(map(str, stalled))}"
        if cfg.strict:
            return _fail(EXIT_NONCONVERGED, msg)
        log.warning(msg)
    return EXIT_OK


def _fmt(x):
    return "nan" if x is None else f"{x:.6g}"


def _metrics_rows(doc):
    m = doc["metrics"]
    return [("PAR", m.get("par")), ("fairness", m.get("fairness")), ("total ERB ($)", m.get("total_erb")),
            ("P2P volume (kWh)", m.get("p2p_volume_kwh")), ("trades", m.get("n_trades")),
            ("grid import (kWh)", m.get("grid_import_kwh")), ("mean price ($/kWh)", m.get("mean_price"))]


def cmd_metrics(result_dir, compare=None) -> int:
    try:
        doc = export.read_summary(result_dir)
        other = export.read_summary(compare) if compare is not None else None
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, f"no run summary found: {exc.filename}")
    except (OSError, ValueError) as exc:
        return _fail(EXIT_IO, f"unreadable run summary: {exc}")

    try:
        if other is None:
            print(f"{doc['scenario']} (seed {doc['seed']}, p2p {'on' if doc['p2p_enabled'] else 'off'})")
            for name, v in _metrics_rows(doc):
                print(f"{name:<20}{_fmt(v)}")
            print()
            print(f"{'agent':<8}{'kind':<10}{'cash ($)':>14}{'unit cost ($/kWh)':>20}")
            for aid, a in doc["agents"].items():
                print(f"{aid:<8}{a['kind']:<10}{_fmt(a['cash']):>14}{_fmt(a['unit_cost']):>20}")
            print(f"{'MCS':<8}{'':<10}{_fmt(doc['mcs_cash']):>14}")
            return EXIT_OK

        print(f"{'metric':<20}{'run':>14}{'compare':>14}{'delta':>14}")
        for (name, a), (_, b) in zip(_metrics_rows(doc), _metrics_rows(other)):
            d = None if a is None or b is None else a - b
            print(f"{name:<20}{_fmt(a):>14}{_fmt(b):>14}{_fmt(d):>14}")
        print()
        print(f"{'agent':<8}{'cash ($)':>14}{'compare':>14}{'delta':>14}")
        for aid, a in doc["agents"].items():
            b = other["agents"].get(aid)
            cb = None if b is None else b["cash"]
            d = None if cb is None else a["cash"] - cb
            print(f"{aid:<8}{_fmt(a['cash']):>14}{_fmt(cb):>14}{_fmt(d):>14}")
    except (KeyError, TypeError) as exc:
        return _fail(EXIT_IO, f"corrupt run summary: missing {exc}")
    return EXIT_OK


def cmd_auction_replay(trace_path, slot: int) -> int:
    try:
        rows = export.read_trace(trace_path)
    except FileNotFoundError:
        return _fail(EXIT_IO, f"no such trace: {trace_path}")
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_IO, f"malformed trace {trace_path}: {exc}")
    rep = replay_slot(rows, slot)
    print(format_report(rep))
    return EXIT_OK if rep.ok else EXIT_DOMAIN


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output")

    p = _Parser(prog="p2pgrid", description="Microgrid retail clearing with peer-to-peer trading.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scenario", parents=[common], help="write the reference scenario")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="scenario file to write")

    r = sub.add_parser("run", parents=[common], help="simulate one day and export results")
    r.add_argument("--scenario", help="scenario file (default: reference scenario)")
    r.add_argument("--out", default=None, help=f"result directory (default: ${OUT_ENV} or ./results)")
    r.add_argument("--seed", type=int, default=None, help="seed override")
    r.add_argument("--no-p2p", action="store_true", help="disable peer-to-peer trading")
    r.add_argument("--strict", action="store_true", help="exit 3 if any slot fails to converge")
    r.add_argument("--trace", action="store_true", help="also write the message trace")
    r.add_argument("--formats", default="csv,json", help="comma list from csv,json,trace")

    m = sub.add_parser("metrics", parents=[common], help="report day metrics of a run")
    m.add_argument("result_dir", nargs="?", default=None)
    m.add_argument("--compare", metavar="OTHER_DIR", default=None)

    a = sub.add_parser("auction-replay", parents=[common], help="replay one slot of a trace")
    a.add_argument("trace")
    a.add_argument("--slot", type=int, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="p2pgrid: %(message)s", stream=sys.stderr)

    if args.command == "gen-scenario":
        return cmd_gen_scenario(args.seed, args.out)
    if args.command == "run":
        formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
        if args.trace and "trace" not in formats:
            formats += ("trace",)
        try:
            cfg = RunConfig(args.scenario, args.out or default_out_dir(), not args.no_p2p,
                            args.seed, args.strict, args.verbose, formats)
        except ValueError as exc:
            return _fail(EXIT_IO, str(exc))
        return cmd_run(cfg)
    if args.command == "metrics":
        return cmd_metrics(args.result_dir or default_out_dir(), args.compare)
    return cmd_auction_replay(args.trace, args.slot)


if __name__ == "__main__":
    sys.exit(main())
