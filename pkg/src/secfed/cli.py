"""Command-line entry point.

Subcommands:
  simulate   run a configured federation and write reports
  bench      run a timing suite and print its rows
  complexity evaluate the analytic execution-time model
  verify     re-verify a chain dump
  gen-data   emit a synthetic traffic CSV from a generator spec

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

import argparse
import json
import sys

from . import benchmarks, flcore, ledger
from .config import ConfigError, SimulationConfig, load_config
from .simulate import SimulationError, export_reports, run_simulation
from .synth import SyntheticTrafficSpec, generate_synthetic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = SimulationConfig.from_dict({**config.to_dict(), "seed": args.seed})
    result = run_simulation(config)
    files = export_reports(result, args.out)
    for report in result.reports:
        flags = " timeout" if report.timeout_fired else ""
        print(f"round {report.round_index} [{report.region_id}] "
              f"updates={report.n_updates} bl_height={report.bl_height} "
              f"tl_height={report.tl_height} dhfa={report.dhfa_wall_ms:.0f}ms{flags}")
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    kwargs = {}
    if args.reps is not None:
        kwargs["reps"] = args.reps
    report = benchmarks.bench(args.suite, **kwargs)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_complexity(args) -> int:
    print(benchmarks.complexity_model(args.w, args.p))
    return EXIT_OK


def _cmd_verify(args) -> int:
    with open(args.chain) as handle:
        chain = ledger.replay_chain(handle.read())
    ok, violation = ledger.verify_chain(chain)
    if ok:
        print(f"chain ok: {chain.height} blocks")
        return EXIT_OK
    print(f"chain INVALID: {violation}")
    return EXIT_RUNTIME


def _cmd_gen_data(args) -> int:
    with open(args.spec) as handle:
        spec_doc = json.load(handle)
    detectors = spec_doc.get("detectors")
    if not detectors:
        raise ConfigError("generator spec needs a nonempty 'detectors' list")
    spec = SyntheticTrafficSpec.from_dict(spec_doc.get("synthetic", {}))
    streams = generate_synthetic(spec, detectors, args.days, args.seed)
    samples = [s for detector in detectors for s in streams[detector]]
    samples.sort(key=lambda s: (s.timestamp, s.detector_id))
    text = flcore.traffic_to_csv(samples)
    if args.out:
        with open(args.out, "w") as handle:
            handle.write(text)
        print(f"wrote {sum(len(v) for v in streams.values())} samples to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="secfed",
        description="Encrypted federated traffic prediction, desk-scale simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a configured federation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("bench", help="run a timing suite")
    p.add_argument("--suite", required=True, choices=sorted(benchmarks.SUITES))
    p.add_argument("--reps", type=int, default=None)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("complexity", help="analytic execution-time model")
    p.add_argument("--w", type=int, required=True, help="parameter count")
    p.add_argument("--p", type=int, required=True, help="participants")
    p.set_defaults(fn=_cmd_complexity)

    p = sub.add_parser("verify", help="re-verify a chain dump")
    p.add_argument("--chain", required=True)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("gen-data", help="emit synthetic traffic CSV")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(fn=_cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, ledger.LedgerError, OSError, ValueError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
