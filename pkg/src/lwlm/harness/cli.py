"""Command-line entry point: ``lwlm <command> --config FILE [--profile] [--seed] [--out]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import COMMANDS, PROFILES, TASKS, build_config, load_config_file
from .pipeline import run

OUT_ROOT_ENV = "LWLM_OUT_ROOT"


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lwlm", description="Large wireless localization model toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--profile", choices=PROFILES, help="model/scene profile (default: desk)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default: ${OUT_ROOT_ENV}/default or runs/default)")
    p.add_argument("--dataset", help="dataset directory (default: OUT/dataset)")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--pretrained", help="pretraining checkpoint to initialize the encoder from")
    p.add_argument("--checkpoint", help="fine-tuning checkpoint for `evaluate`")
    p.add_argument("--n-pilot", type=int, dest="n_pilot")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (YAML-parsed value); repeatable")
    return p


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items() if k not in ("report", "predictions")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = load_config_file(args.config) if args.config else {}
        out = args.out
        if out is None and "out" not in file_values:
            out = str(Path(os.environ.get(OUT_ROOT_ENV, "runs")) / "default")
        cfg = build_config(
            file_values,
            profile=args.profile,
            command=args.command,
            seed=args.seed,
            out=out,
            dataset=args.dataset,
            task=args.task,
            pretrained=args.pretrained,
            checkpoint=args.checkpoint,
            n_pilot=args.n_pilot,
            **_parse_set(args.set),
        )
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        print(f"lwlm: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        result = run(cfg)
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"lwlm {cfg.command}: {exc}", file=sys.stderr)
        return 1
    if cfg.command == "iblab":
        result = {k: v for k, v in result.items() if k != "worlds"}
    print(json.dumps(_jsonable(result), indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
