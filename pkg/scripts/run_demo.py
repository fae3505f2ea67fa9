#!/usr/bin/env python3
"""Run the bundled offline scenario and print the per-round trajectory.

Usage: python scripts/run_demo.py [OUT_DIR] [--seed N] [--rounds R]
"""

import argparse
import json

from s3synth import demo


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", nargs="?", default="demo-out")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--rounds", type=int, default=2)
    args = parser.parse_args()

    result = demo.run_demo(args.out_dir, args.seed, args.rounds)
    for report in result["reports"]:
        print(json.dumps(report.to_json()))
    print(
        f"test accuracy: {result['seed_only_test_accuracy']:.2f} (seed only) -> "
        f"{result['final_test_accuracy']:.2f} (after error extrapolation)"
    )
    print(f"artifacts in {args.out_dir}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
