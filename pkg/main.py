import argparse
import logging
import sys
from pathlib import Path

project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.bench import (cmd_ablate_conv, cmd_ablate_steps, cmd_bench_scaling, cmd_fit, cmd_map, cmd_query,
                       cmd_verify, load_run_config)
from src.bench.util import (attach_console_listeners, banner, detach_console_listeners, visualize_config,
                            visualize_records, visualize_suites)
from src.errors import ConfigError, ContractViolation, FingerprintMismatch, OracleFailure, RunError

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3

# flag -> RunConfig key; values stay strings and are parsed against the config field types
OVERRIDE_FLAGS = [
    "modes", "frames", "tokens-per-frame", "dim", "heads", "layers", "expansion", "steps", "lr", "seed",
    "precision", "workers", "strategy", "resident-limit", "threads", "repeats", "warmup", "out", "suite",
    "scene", "query-frames", "query-seed", "csv", "mode", "conv-target", "loss", "ablate-steps", "conv-configs",
]


def bench(cfg):
    records = cmd_bench_scaling(cfg)
    print(visualize_records(records))
    return EXIT_OK


def verify(cfg):
    results, code = cmd_verify(cfg)
    print(visualize_suites(results))
    return code


def map_scene(cfg):
    cmd_map(cfg)
    return EXIT_OK


def query_scene(cfg):
    cmd_query(cfg)
    return EXIT_OK


def fit(cfg):
    cmd_fit(cfg)
    return EXIT_OK


def ablate_steps(cfg):
    records = cmd_ablate_steps(cfg)
    print(f"wrote {len(records)} rows to {cfg.output_path('ablate-steps')}")
    return EXIT_OK


def ablate_conv(cfg):
    records = cmd_ablate_conv(cfg)
    print(f"wrote {len(records)} rows to {cfg.output_path('ablate-conv')}")
    return EXIT_OK


COMMANDS = {
    "bench": bench,
    "verify": verify,
    "map": map_scene,
    "query": query_scene,
    "fit": fit,
    "ablate-steps": ablate_steps,
    "ablate-conv": ablate_conv,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Linear-time global attention via test-time-trained fast weights")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", help="key=value config file; flags override it")
        sub.add_argument("--verbose", action="store_true", help="print progress events")
        for flag in OVERRIDE_FLAGS:
            sub.add_argument(f"--{flag}", dest=flag.replace("-", "_"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {flag.replace("-", "_"): getattr(args, flag.replace("-", "_")) for flag in OVERRIDE_FLAGS}
    flags = {k: v for k, v in flags.items() if v is not None}

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    listeners = attach_console_listeners() if args.verbose else {}
    try:
        cfg = load_run_config(args.config, flags)
        print(banner(args.command.upper()))
        print(visualize_config(cfg.echo()))
        return COMMANDS[args.command](cfg)
    except (ConfigError, FingerprintMismatch, ContractViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (RunError, OracleFailure) as e:
        print(f"run failed: {e}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    finally:
        detach_console_listeners(listeners)


if __name__ == "__main__":
    sys.exit(main())
