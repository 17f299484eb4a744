"""Standalone executable: factor-series export in, exchange CSV out."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .forecaster import BridgeConfig, ModelUnavailable, bridge_forecast


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chronos-bridge",
                                     description="quantile forecasts for factor-series exports")
    parser.add_argument("--in", dest="input_path", required=True,
                        help="period,factor_id,value CSV")
    parser.add_argument("--out", dest="output_path", required=True,
                        help="exchange CSV to write")
    parser.add_argument("--model", default="builtin:ar1",
                        help="builtin:ar1 or chronos:<checkpoint>")
    parser.add_argument("--context", type=int, default=None,
                        help="max history length fed per forecast (default: all)")
    parser.add_argument("--rolling", type=int, default=1,
                        help="forecast the last N one-step targets causally")
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not Path(args.input_path).is_file():
        print(f"error: input not found: {args.input_path}", file=sys.stderr)
        return 1
    config = BridgeConfig(model=args.model, context_length=args.context,
                          input_path=args.input_path, output_path=args.output_path,
                          device=args.device, rolling_targets=max(1, args.rolling))
    try:
        rows = bridge_forecast(config)
    except ModelUnavailable as exc:
        print(f"error: model unavailable: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {rows} rows to {args.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
