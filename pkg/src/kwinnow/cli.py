"""Command line entry point.

Exit codes: 0 on success, 2 for configuration problems, 3 for data
problems (missing or corrupt files, failed downloads), 1 for anything
else. Experiment subcommands start from the protocol's preset, overlay
the --config file, then apply --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as D
from . import harness, presets
from .errors import ConfigError, DataError, KwinnowError

_PROTOCOL_OF = {
    "train": "train",
    "imp": "imp",
    "noise-eval": "noise",
    "continual": "continual",
    "grid": "grid",
}


def _common_flags(parser):
    parser.add_argument("--config", metavar="FILE.json",
                        help="JSON config overlaid on the preset")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override the config seed")
    parser.add_argument("--out", metavar="DIR",
                        help="directory for the run record and artifacts")
    parser.add_argument("--full", action="store_true",
                        help="start from the full-scale preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kwinnow",
        description="sparse-network training and pruning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("data", help="dataset management")
    data_sub = p_data.add_subparsers(dest="data_command", required=True)
    p_fetch = data_sub.add_parser("fetch", help="download and verify")
    p_fetch.add_argument("--data-dir", default="data", metavar="DIR")
    p_fetch.add_argument("--dataset", default="mnist",
                         choices=["mnist", "cifar100", "all"])
    p_fetch.add_argument("--base-url", default=None,
                         help="alternate download location")

    for name in _PROTOCOL_OF:
        p = sub.add_parser(name, help=f"run the {name} protocol")
        _common_flags(p)

    p_plot = sub.add_parser(
        "plotdata", help="turn run records into plottable tables")
    p_plot.add_argument("records", nargs="+", metavar="RECORD",
                        help="record.jsonl files or run directories")
    p_plot.add_argument("--out", required=True, metavar="DIR")
    return parser


def load_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {p} must hold a JSON object")
    return cfg


def _run_protocol(args, protocol: str) -> int:
    config = presets.default_config(protocol, full=args.full)
    if args.config:
        config = presets.merge_config(config, load_config_file(args.config))
    if config.get("protocol", protocol) != protocol:
        raise ConfigError(
            f"config says protocol {config['protocol']!r} but the "
            f"{protocol!r} subcommand was invoked")
    config["protocol"] = protocol
    if args.seed is not None:
        config["seed"] = args.seed
    record, _ = harness.run_experiment(config, out_dir=args.out)
    _print_outcome(record)
    if args.out:
        print(f"record: {Path(args.out) / 'record.jsonl'}")
    record.close()
    return 0


def _print_outcome(record) -> None:
    summaries = record.events_of("summary")
    if not summaries:
        print("done (no summary event)")
        return
    parts = []
    for key, value in summaries[-1].items():
        if key == "kind":
            continue
        if isinstance(value, float):
            value = f"{value:.4f}"
        parts.append(f"{key}={value}")
    print("done " + " ".join(parts))


def _fetch(args) -> int:
    data_dir = args.data_dir
    if args.dataset in ("mnist", "all"):
        kwargs = {"base_url": args.base_url} if args.base_url else {}
        D.fetch_mnist(data_dir, **kwargs)
        print(f"mnist ready under {data_dir}")
    if args.dataset in ("cifar100", "all"):
        kwargs = {"url": args.base_url} if args.base_url else {}
        D.fetch_cifar100(data_dir, **kwargs)
        print(f"cifar100 ready under {data_dir}")
    return 0


def _plotdata(args) -> int:
    paths = []
    for raw in args.records:
        p = Path(raw)
        if p.is_dir():
            p = p / "record.jsonl"
        if not p.exists():
            raise DataError(f"no run record at {p}")
        paths.append(p)
    manifest = harness.emit_plotdata(paths, args.out)
    for entry in manifest["files"]:
        print(f"wrote {entry['file']} ({entry['rows']} rows)")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "data":
            return _fetch(args)
        if args.command == "plotdata":
            return _plotdata(args)
        return _run_protocol(args, _PROTOCOL_OF[args.command])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except KwinnowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
