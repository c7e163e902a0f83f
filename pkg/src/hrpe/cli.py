"""Command-line harness: run scenarios, validate configs, inspect tensors.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
Set HRPE_OUTPUT_ROOT to re-root scenario output directories.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

import numpy as np

from .config import ConfigError, load_config
from .tensorio import TensorFormatError, read_tensor


def _cmd_run(args) -> int:
    from .scenarios import run_scenario, resolve_output_dir

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        out_dir = resolve_output_dir(cfg, args.output)
        summary = run_scenario(cfg, out_dir)
    except Exception:
        traceback.print_exc()
        return 2
    print(f"scenario {cfg.name!r} finished; outputs in {summary['out_dir']}")
    return 0


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(f"ok: scenario {cfg.name!r}, seed {cfg.seed}, "
          f"config hash {cfg.hash()[:12]}")
    return 0


def _cmd_inspect(args) -> int:
    try:
        data, axes = read_tensor(args.tensor)
    except (TensorFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    info = {
        "axes": [{"name": name, "length": length} for name, length in axes],
        "dtype": str(data.dtype),
        "elements": int(data.size),
        "max_abs": float(np.max(np.abs(data))) if data.size else 0.0,
        "mean_abs": float(np.mean(np.abs(data))) if data.size else 0.0,
    }
    print(json.dumps(info, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hrpe",
        description="Channel-sounder calibration and path-estimation scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config")
    run.add_argument("config", help="TOML scenario configuration")
    run.add_argument("--output", help="output directory (overrides config/env)")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="validate a scenario config")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)

    ins = sub.add_parser("inspect", help="describe a tensor file")
    ins.add_argument("tensor")
    ins.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
