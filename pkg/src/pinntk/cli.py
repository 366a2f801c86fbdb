"""``pinntk <command> --config <path> [--seed N] [--out DIR] [--jobs K]``.

Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O failure.
Without ``--out`` results go to ``$PINNTK_OUT/<command>-<digest>`` (default
root ``results``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import COMMANDS, ExperimentConfig, validate
from .dynamics import FlowError, TrainingDiverged
from .experiments import run
from .spectral import SpectrumError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "PINNTK_OUT"

log = logging.getLogger("pinntk")

NUMERIC_ERRORS = (FlowError, TrainingDiverged, SpectrumError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinntk", description="Operator NTK experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the seed (and any seed lists)")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(data: dict, command: str, seed: int | None) -> dict:
    data = dict(data)
    if data.get("command", command) != command:
        raise ValueError(f"config is for command {data['command']!r}, not {command!r}")
    data["command"] = command
    if seed is not None:
        data["seed"] = seed
        for block in ("converge", "train"):
            if isinstance(data.get(block), dict) and "seeds" in data[block]:
                data[block] = {**data[block], "seeds": [seed]}
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        data = json.loads(args.config.read_text())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(data, dict):
        print("error: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    try:
        data = _apply_overrides(data, args.command, args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = ExperimentConfig.from_dict(data)
    violations = validate(cfg)
    if args.jobs < 1:
        violations.append("--jobs: must be >= 1")
    if violations:
        for v in violations:
            print(f"invalid config: {v}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out
    if out is None:
        out = Path(cfg.get("out") or Path(os.environ.get(OUT_ENV, "results")) / f"{cfg.command}-{cfg.digest()}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return EXIT_IO

    log.info("running %s into %s", cfg.command, out)
    try:
        result = run(cfg, out, args.jobs)
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except NUMERIC_ERRORS as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in result.files:
        print(f)
    print(out / "manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
