"""``multisl`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 tolerance
failure.  Reports are JSON with every float written to 17 significant
digits; with ``--out`` they go to ``<out>/<command>.json`` (plus a CSV
table), otherwise to standard output.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import BUILTIN_CONFIGS, load_config
from .errors import MultiSLError
from .experiments import COMMANDS

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_TOLERANCE = 0, 2, 3, 4


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits (NaN and inf become null)."""
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    elif isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    pad = "\n" + " " * (indent * (_level + 1))
    end = "\n" + " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [dumps(v, indent, _level + 1) for v in obj]
        # keep numeric rows on one line
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(parts) + "]"
        return "[" + pad + ("," + pad).join(parts) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt_float(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multisl", description="Coupled-channel Sturm-Liouville spectra and inversion.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument(
        "--config",
        required=True,
        help=f"JSON config path, or a built-in example: {', '.join(sorted(BUILTIN_CONFIGS))}",
    )
    p.add_argument("--out", help="directory for <command>.json and <command>.csv (default: print JSON)")
    p.add_argument("--n-max", type=int, help="truncation N (overrides run.n_max)")
    p.add_argument("--seed", type=int, help="seed for randomized checks (overrides seed)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp field")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _emit(report: dict, out: str | None, command: str, csv_rows=None, header=()) -> None:
    text = dumps(report) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{command}.json").write_text(text)
    if csv_rows:
        (d / f"{command}.csv").write_text(csv_text(header, csv_rows))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    stamp = {} if args.no_timestamp else {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    try:
        cfg = load_config(args.config, n_max=args.n_max, seed=args.seed)
        outcome = COMMANDS[args.command](cfg)
    except MultiSLError as exc:
        report = {"command": args.command, "status": "error", "exit_code": exc.exit_code, **exc.to_dict(), **stamp}
        _emit(report, args.out, args.command)
        print(f"multisl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    code = EXIT_OK if outcome.passed else EXIT_TOLERANCE
    report = {**outcome.report, "status": "ok" if outcome.passed else "tolerance_failure", "exit_code": code, **stamp}
    if outcome.csv_rows is not None and not cfg.csv:
        outcome.csv_rows = None
    _emit(report, args.out, args.command, outcome.csv_rows, outcome.csv_header)
    if args.out is not None:
        print(f"multisl {args.command}: {report['status']} -> {args.out}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
