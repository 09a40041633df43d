"""Command line entry point: `tiltcouple <command> [flags]`.

Exit codes: 0 when every asserted check passed, 1 when an asserted check
failed (or a replay differs), 2 for configuration or geometry errors and bad
flags. Results go to `--out`: `<command>.jsonl` (appended), `<command>.csv`,
`<command>.cfg` and PNG plots.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .records import RunRecord, append_jsonl, dumps, read_jsonl, write_csv
from .suite import MODES, MODULE_ORDER, run_verification_suite

SEED_ENV = "TILTCOUPLE_SEED"
OUT_ENV = "TILTCOUPLE_OUT"

COMMAND_MODULES = {
    "spectrum": ("spectrum",),
    "capacity": ("potential",),
    "chains": ("chains",),
    "slt": ("slt",),
    "estimates": ("estimates",),
    "couple": ("couple",),
    "suite": MODULE_ORDER,
}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    """Bad flag values detected after argparse accepted them."""


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default", help="config file path or 'default'")
    common.add_argument("--seed", type=_u64, default=None, help=f"master seed (env {SEED_ENV})")
    common.add_argument("--out", default=None, help=f"output directory (env {OUT_ENV})")
    common.add_argument("--trials", type=int, default=None, help="coupling trials per N")
    common.add_argument("--mode", choices=MODES, default="bracket",
                        help="capacity route: bracketed solve, Monte Carlo, or both")
    common.add_argument("--json", action="store_true", help="print check records as JSON lines")

    parser = argparse.ArgumentParser(prog="tiltcouple", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, modules in COMMAND_MODULES.items():
        sub.add_parser(name, parents=[common], help=f"run the {', '.join(modules)} checks")
    replay = sub.add_parser("replay", parents=[common], help="rerun a recorded run and compare")
    replay.add_argument("record", help="JSONL file written by an earlier run")
    replay.add_argument("--index", type=int, default=-1, help="which run in the file (default: last)")
    return parser


def _resolve(args) -> tuple[ExperimentConfig, int, Path]:
    config = load_config(args.config)
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = _u64(os.environ[SEED_ENV])
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{SEED_ENV}: {exc}") from exc
    seed = config.seed if seed is None else seed
    out = Path(args.out or os.environ.get(OUT_ENV) or "results")
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be at least 1")
    return config, seed, out


def _printer(as_json: bool):
    def emit(record):
        if as_json:
            print(dumps(record.as_dict()), flush=True)
        else:
            status = "report" if not record.asserted else ("PASS" if record.passed else "FAIL")
            where = "" if record.N is None else f" N={record.N}"
            extra = f"  ({record.error})" if record.error else ""
            print(f"{status:6s} {record.module}.{record.name}{where}{extra}", flush=True)
    return emit


def _geometry_failed(record: RunRecord) -> bool:
    return any(c.metrics.get("error_class") == "geometry" for c in record.checks)


def _write_outputs(record: RunRecord, config: ExperimentConfig, out: Path) -> None:
    from .plots import write_plots

    out.mkdir(parents=True, exist_ok=True)
    stem = record.command
    (out / f"{stem}.cfg").write_text(config.dumps())
    append_jsonl(out / f"{stem}.jsonl", [record])
    write_csv(out / f"{stem}.csv", record.checks)
    write_plots([c.as_dict() for c in record.checks], out, prefix=f"{stem}_")


def _run(args, config, seed, out) -> int:
    config.warn()
    record = run_verification_suite(config, COMMAND_MODULES[args.command], seed=seed,
                                    mode=args.mode, trials=args.trials, command=args.command,
                                    on_record=_printer(args.json))
    _write_outputs(record, config, out)
    if _geometry_failed(record):
        return EXIT_CONFIG
    return EXIT_OK if record.passed else EXIT_FAIL


def _replay(args) -> int:
    runs = [r for r in read_jsonl(args.record) if r.get("kind") == "run"]
    if not runs:
        raise UsageError(f"no run records in {args.record}")
    old = runs[args.index]
    cfg_path = Path(args.record).with_suffix(".cfg")
    config = parse_config(cfg_path.read_text()) if cfg_path.exists() else load_config(args.config)
    if config.hash() != old["config_hash"]:
        raise UsageError(f"config hash {config.hash()} does not match the record ({old['config_hash']})")
    command = old["command"]
    if command not in COMMAND_MODULES:
        raise UsageError(f"cannot replay command {command!r}")
    trials = args.trials
    record = run_verification_suite(config, COMMAND_MODULES[command], seed=old["seed"],
                                    mode=args.mode, trials=trials, command=command,
                                    on_record=_printer(args.json) if args.json else None)
    old_payload = {k: old[k] for k in ("command", "config_hash", "seed", "checks")}
    same = json.loads(dumps(record.payload())) == old_payload
    print(f"replay {'identical' if same else 'DIFFERS'}: {command} seed={old['seed']} "
          f"config={old['config_hash']}")
    return EXIT_OK if same else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return _replay(args)
        return _run(args, *_resolve(args))
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"tiltcouple: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
