"""Naive, 2-step and site-hierarchical GP on one wafer at a fixed sampling rate."""

import numpy as np

from _common import config, dump, parser, table
from wafergp.experiments import compare_methods
from wafergp.metrics import summary_stats


def main():
    ap = parser(__doc__)
    ap.add_argument("--lot", type=int, default=6)
    ap.add_argument("--rate", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    res = compare_methods(config(args), args.lot, args.rate, range(args.seeds))
    rows, out = [], {}
    for m, runs in res.items():
        (s,) = summary_stats([r.report for r in runs])
        med = float(np.median([r.mean_abs for r in runs]))
        out[m] = {"median_mean_abs": med, **{k: s[k] for k in ("min", "q25", "median", "mean",
                                                                "q75", "max")}}
        rows.append([m, f"{med:.3%}", f"{s['min']:+.3f}", f"{s['q25']:+.3f}", f"{s['median']:+.3f}",
                     f"{s['mean']:+.4f}", f"{s['q75']:+.3f}", f"{s['max']:+.3f}"])
    table(["method", "mean|d|", "min", "q25", "median", "mean", "q75", "max"], rows)
    dump(args, out)


if __name__ == "__main__":
    main()
