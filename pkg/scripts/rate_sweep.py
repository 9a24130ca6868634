"""Mean |delta| against the spatial sampling rate, with nested training sets."""

from _common import config, dump, parser, table
from wafergp.experiments import METHODS, rate_sweep


def main():
    ap = parser(__doc__)
    ap.add_argument("--lot", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rates", type=float, nargs="+", default=[r / 10 for r in range(1, 11)])
    args = ap.parse_args()
    res = rate_sweep(config(args), args.lot, tuple(args.rates), args.seed)
    table(["rate", *METHODS], [[f"{r:.0%}", *(f"{res[m][r].mean_abs:.3%}" for m in METHODS)]
                               for r in args.rates])
    dump(args, {m: {str(r): x.mean_abs for r, x in by.items()} for m, by in res.items()})


if __name__ == "__main__":
    main()
