"""Compare the compiled kernels with the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--targets M] [--out DIR]
"""
import argparse
import sys

from activecls import cli


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    p.add_argument("--targets", type=int, default=40)
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    bench_argv = ["bench", "--repeat", str(args.repeat), "--targets", str(args.targets)]
    if args.out:
        bench_argv += ["--out", args.out]
    return cli.main(bench_argv)


if __name__ == "__main__":
    sys.exit(main())
