#!/usr/bin/env python3
"""Audit the bound inequalities on a batch of random finite instances.

Thin wrapper over `dilkit verify-bounds`: composes a config from flags and
leaves a JSON report in the output directory.  Exit code 1 means at least
one inequality was violated (which would falsify the implementation).
"""
import argparse
import os
import sys
import tempfile

from dilkit.expcli.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=1000)
    ap.add_argument("--domains", type=int, default=3)
    ap.add_argument("--points-per-domain", type=int, default=6)
    ap.add_argument("--class-size", type=int, default=64)
    ap.add_argument("--grid-resolution", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output-dir", default="runs/bounds")
    ap.add_argument("--selftest-flip-sign", action="store_true",
                    help="negative control; must exit 1")
    args = ap.parse_args()

    text = (f"instances = {args.instances}\n"
            f"bound_domains = {args.domains}\n"
            f"points_per_domain = {args.points_per_domain}\n"
            f"class_size = {args.class_size}\n"
            f"grid_resolution = {args.grid_resolution}\n"
            f"bounds_seed = {args.seed}\n"
            f"output_dir = {args.output_dir}\n")
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as f:
        f.write(text)
        path = f.name
    argv = ["verify-bounds", path]
    if args.selftest_flip_sign:
        argv.append("--selftest-flip-sign")
    code = cli_main(argv)
    os.unlink(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
