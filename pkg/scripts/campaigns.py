"""Active vs random touchdown campaigns: touchdowns needed to reach a mean |delta| target."""

import numpy as np

from _common import config, dump, parser, table
from wafergp.active import run_campaign
from wafergp.synth import generate_wafer
from wafergp.wafer import build_tiling


def main():
    ap = parser(__doc__)
    ap.set_defaults(preset="small")
    ap.add_argument("--lot", type=int, default=6)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--budget", type=int, default=50)
    ap.add_argument("--target", type=float, default=0.01)
    args = ap.parse_args()
    cfg = config(args)
    tiling = build_tiling(cfg.geometry, cfg.layout)
    truth = generate_wafer(cfg, args.lot, 1)
    rows, out = [], []
    for seed in range(args.seeds):
        k = {}
        for strat in ("active", "random"):
            log = run_campaign(truth, tiling, strat, args.budget, seed)
            k[strat] = log.steps_to_reach(args.target)
        out.append({"seed": seed, **k})
        rows.append([seed, k["active"], k["random"]])
        table(["seed", "active", "random"], rows[-1:])
    miss = args.budget + 1
    a = [miss if r["active"] is None else r["active"] for r in out]
    r = [miss if x["random"] is None else x["random"] for x in out]
    print(f"median active {np.median(a):g}, random {np.median(r):g}; "
          f"active <= random on {np.mean([x <= y for x, y in zip(a, r)]):.0%} of seeds")
    dump(args, out)


if __name__ == "__main__":
    main()
