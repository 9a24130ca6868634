"""Single-threaded fit+predict time of naive vs site-hierarchical GP against N."""

import argparse

from threadpoolctl import threadpool_limits

from _common import table
from wafergp.experiments import runtime_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024, 2048])
    ap.add_argument("--sites", type=int, default=16)
    args = ap.parse_args()
    rows = []
    with threadpool_limits(1):
        for n in args.sizes:
            t = runtime_pair(n, args.sites)
            rows.append([n, f"{t['naive']:.3f}", f"{t['site-hier']:.3f}",
                         f"{t['site-hier'] / t['naive']:.3f}"])
            table(["N", "naive s", "site-hier s", "ratio"], rows[-1:])


if __name__ == "__main__":
    main()
