#!/usr/bin/env python3
"""Run every config under configs/ and collect the summary lines.

    python3 scripts/run_all_configs.py [--configs DIR] [--out DIR]

Each config writes into <out>/<config stem>/ regardless of its output.dir.
"""
import argparse
import io
import sys
import time
from contextlib import redirect_stdout
from pathlib import Path

from mlqmcfe.cli import run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", default=Path(__file__).resolve().parents[1] / "configs", type=Path)
    ap.add_argument("--out", default=Path("out"), type=Path)
    args = ap.parse_args(argv)
    failed = 0
    for cfg in sorted(args.configs.glob("*.cfg")):
        t0 = time.perf_counter()
        buf = io.StringIO()
        try:
            with redirect_stdout(buf):
                run_experiment(cfg, str(args.out / cfg.stem))
        except Exception as exc:  # keep going, report at the end
            failed += 1
            print(f"{cfg.stem:24s} ERROR {exc}")
            continue
        lines = buf.getvalue().strip().splitlines()
        print(f"{cfg.stem:24s} {time.perf_counter() - t0:7.2f}s  {lines[0] if lines else ''}")
        for line in lines[1:]:
            print(f"{'':34s}{line}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
