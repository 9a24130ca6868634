"""Mean |delta| per lot at a fixed sampling rate; 2-step is calibrated on lot 1."""

from _common import config, dump, parser, table
from wafergp.experiments import METHODS, lot_sweep


def main():
    ap = parser(__doc__)
    ap.add_argument("--lots", type=int, default=6)
    ap.add_argument("--rate", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = lot_sweep(config(args), range(1, args.lots + 1), args.rate, args.seed)
    table(["lot", *METHODS], [[lot, *(f"{res[m][lot].mean_abs:.3%}" for m in METHODS)]
                              for lot in range(1, args.lots + 1)])
    dump(args, {m: {str(lot): r.mean_abs for lot, r in by.items()} for m, by in res.items()})


if __name__ == "__main__":
    main()
