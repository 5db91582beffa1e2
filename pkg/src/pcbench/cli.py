"""Command-line entry point: ``pcbench <subcommand> --config FILE --out DIR [--seed S]``."""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import KeyValueConfig
from .errors import PCBenchError
from .experiments import CSV_SCHEMAS, SUBCOMMANDS

EXIT_USAGE = 2
EXIT_RUNTIME = 1
PATH_KEYS = ("mnist_dir", "mnist_images", "mnist_labels", "mnist_test_images", "mnist_test_labels")


def _schema_text(name: str) -> str:
    lines = ["output files:"]
    for filename, columns in CSV_SCHEMAS[name].items():
        lines.append(f"  {filename}: {', '.join(columns)}")
    lines.append("  manifest.json: config echo, versions, timings, outputs")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcbench", description="Predictive-coding network experiments.")
    parser.add_argument("--version", action="version", version=f"pcbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in SUBCOMMANDS.items():
        p = sub.add_parser(
            name,
            help=(fn.__doc__ or "").strip().splitlines()[0],
            description=(fn.__doc__ or "").strip(),
            epilog=_schema_text(name),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", required=True, type=Path, help="key = value settings file")
        p.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config 'seed' key (default 0)")
    return parser


def _check_paths(cfg: KeyValueConfig) -> None:
    for key in PATH_KEYS:
        if key in cfg and not Path(cfg.get_str(key)).exists():
            raise FileNotFoundError(f"config key '{key}' points to a missing path: {cfg.get_str(key)}")


def _write_manifest(out: Path, command: str, cfg: KeyValueConfig, seed: int, seconds: float, summary: dict) -> None:
    manifest = {
        "subcommand": command,
        "seed": seed,
        "config": cfg.as_dict(),
        "versions": {"pcbench": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "timings": {"total_seconds": round(seconds, 3)},
        "outputs": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = KeyValueConfig.load(args.config)
        seed = args.seed if args.seed is not None else cfg.get_int("seed", 0)
        _check_paths(cfg)
    except (OSError, ValueError, KeyError) as exc:
        print(f"pcbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args.out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        summary = SUBCOMMANDS[args.command](cfg, args.out, seed)
    except (ValueError, KeyError) as exc:
        print(f"pcbench {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PCBenchError, ArithmeticError, OSError) as exc:
        print(f"pcbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_manifest(args.out, args.command, cfg, seed, time.perf_counter() - start, summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
