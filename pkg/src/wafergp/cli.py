"""Command-line front end.

    wafergp synth --config default --lots 6 --out data/
    wafergp calibrate-2step --wafer data/lot1_wafer1.csv --out cal/
    wafergp fit-predict --truth data/lot6_wafer1.csv --method site-hier --rate 0.1 --out run/
    wafergp sample --truth data/lot6_wafer1.csv --strategy active --budget 18 --out camp/
    wafergp evaluate --pred run/predictions.csv --truth data/lot6_wafer1.csv --out ev/

Every command writes its outputs atomically plus a ``manifest.json`` holding
the resolved parameters.  Only the manifest carries timestamps and timings,
so re-running a command reproduces every other file byte for byte.  Exit
status is 0 on success, 2 on usage errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .active import run_campaign
from .baselines import ClusterMap, two_step_calibrate
from .experiments import METHODS, predict, split
from .gp import GPOptions
from .metrics import delta_error
from .synth import PRESET_RADII, SynthConfig, generate_lot_series, preset
from .wafer import MeasurementSet, build_tiling, read_csv


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_config(spec: str | None) -> tuple[SynthConfig, GPOptions, dict]:
    """Preset name or JSON file.  The file may hold SynthConfig fields, a
    ``preset`` to start from and a ``gp`` section of GP options."""
    spec = spec or "default"
    if spec in PRESET_RADII:
        return preset(spec), GPOptions(), {"preset": spec}
    try:
        with open(spec, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise UsageError(f"cannot read config {spec}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config {spec} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    raw = dict(raw)
    gp = GPOptions.from_dict(raw.pop("gp", None))
    return SynthConfig.from_dict(raw), gp, raw


def write_manifest(out: Path, command: str, args: argparse.Namespace, extra: dict) -> None:
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("func",)}
    manifest = {
        "command": command,
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "args": params,
        **extra,
    }
    write_atomic(out / "manifest.json", dump_json(manifest))


def _fmt(v: float) -> str:
    return repr(float(v))


def _read_truth(path, cfg: SynthConfig) -> MeasurementSet:
    return read_csv(path, cfg.layout, cfg.geometry)


def heatmap_csv(geometry, coords, values) -> str:
    """Dense y-by-x matrix; first row holds the x values, first column y."""
    x0, y0, x1, y1 = geometry.bounds
    grid = [[""] * (x1 - x0 + 1) for _ in range(y1 - y0 + 1)]
    for (x, y), v in zip(np.asarray(coords).tolist(), np.asarray(values).tolist()):
        grid[y - y0][x - x0] = _fmt(v)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y\\x"] + list(range(x0, x1 + 1)))
    for j, row in enumerate(grid):
        w.writerow([y0 + j] + row)
    return buf.getvalue()


def predictions_csv(coords, sites, mu, var) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "site", "mu", "var"])
    for (x, y), s, m, v in zip(np.asarray(coords).tolist(), np.asarray(sites).tolist(),
                               np.asarray(mu).tolist(), np.asarray(var).tolist()):
        w.writerow([x, y, s, _fmt(m), _fmt(v)])
    return buf.getvalue()


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    if rows and not {"x", "y", "mu"} <= set(rows[0]):
        raise ValueError("prediction CSV needs columns x, y, mu")
    coords = np.array([(int(r["x"]), int(r["y"])) for r in rows], dtype=np.int64).reshape(-1, 2)
    return coords, np.array([float(r["mu"]) for r in rows])


def evaluation_dict(report, **fields) -> dict:
    d = dict(fields)
    if report is None:
        d.update({"n": 0, "mean_abs_delta": 0.0, "max_abs_delta": 0.0, "mean_delta": 0.0,
                  "quantiles": {k: 0.0 for k in ("min", "q25", "median", "q75", "max")}})
    else:
        d.update(report.to_dict())
    return d


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg, _, raw = load_config(args.config)
    out = Path(args.out)
    t0 = time.perf_counter()
    files = []
    for w in generate_lot_series(cfg, args.lots):
        name = f"lot{w.lot}_wafer{w.wafer}.csv"
        write_atomic(out / name, w.to_csv())
        files.append(name)
    write_atomic(out / "config.json", cfg.to_json())
    write_manifest(out, "synth", args, {"config": cfg.to_dict(), "files": files,
                                        "wall_seconds": time.perf_counter() - t0})
    return 0


def cmd_calibrate(args) -> int:
    cfg, _, _ = load_config(args.config)
    wafer = _read_truth(args.wafer, cfg)
    t0 = time.perf_counter()
    cmap = two_step_calibrate(wafer, (args.g_min, args.g_max), args.criterion, args.seed,
                              require_complete=not args.allow_missing)
    out = Path(args.out)
    write_atomic(out / "cluster_map.json", cmap.to_json())
    write_manifest(out, "calibrate-2step", args, {"k": cmap.k,
                                                  "wall_seconds": time.perf_counter() - t0})
    return 0


def cmd_fit_predict(args) -> int:
    if not 0.0 < args.rate <= 1.0:
        raise UsageError("rate out of range (0, 1]")
    if args.method == "2step" and not args.cluster_map:
        raise UsageError("method 2step requires --cluster-map")
    cfg, opts, _ = load_config(args.config)
    tiling = build_tiling(cfg.geometry, cfg.layout)
    truth = _read_truth(args.truth, cfg)
    truth.check_sites(tiling)
    cmap = None
    if args.cluster_map:
        with open(args.cluster_map, encoding="utf-8") as f:
            cmap = ClusterMap.from_dict(json.load(f))

    if args.train:
        train = _read_truth(args.train, cfg)
        have = {tuple(c) for c in train.coords.tolist()}
        te = np.array([i for i, c in enumerate(truth.coords.tolist()) if tuple(c) not in have],
                      dtype=np.int64)
        rate = len(train) / len(truth)
    else:
        tr, te = split(truth, args.rate, args.seed)
        train = truth.subset(tr)
        rate = args.rate

    t0 = time.perf_counter()
    if len(te):
        pred = predict(args.method, train, truth.coords[te], tiling, opts, cmap)
        mu, var = pred.means, pred.variances
        report = delta_error(pred, truth.values[te], truth.value_range())
    else:
        mu = var = np.zeros(0)
        report = None
    secs = time.perf_counter() - t0

    out = Path(args.out)
    write_atomic(out / "predictions.csv", predictions_csv(truth.coords[te], truth.sites[te], mu, var))
    ev = evaluation_dict(report, method=args.method, lot=truth.lot, wafer=truth.wafer,
                         sampling_rate=rate, seed=args.seed, n_train=len(train))
    if args.timing:
        ev["wall_seconds"] = secs
    write_atomic(out / "evaluation.json", dump_json(ev))
    if args.heatmap:
        full = np.concatenate([train.values, mu])
        coords = np.vstack([train.coords, truth.coords[te]])
        write_atomic(Path(args.heatmap), heatmap_csv(cfg.geometry, coords, full))
    write_manifest(out, "fit-predict", args, {"gp": opts.to_dict(), "config": cfg.to_dict(),
                                              "wall_seconds": secs})
    return 0


def cmd_sample(args) -> int:
    cfg, opts, _ = load_config(args.config)
    tiling = build_tiling(cfg.geometry, cfg.layout)
    truth = _read_truth(args.truth, cfg)
    truth.check_sites(tiling)
    if not truth.is_complete():
        raise ValueError("campaigns need a fully measured truth wafer")
    mode = "refit" if args.refit_per_candidate else args.mode
    log = run_campaign(truth, tiling, args.strategy, args.budget, args.seed, opts,
                       args.stop_var_norm, mode)
    out = Path(args.out)
    write_atomic(out / "campaign.csv", log.to_csv())
    if log.truncated:
        print(f"budget exceeds the {tiling.n_anchors} touchdowns; log truncated", file=sys.stderr)
    write_manifest(out, "sample", args, {"gp": opts.to_dict(), "truncated": log.truncated,
                                         "steps": len(log.rows), "wall_seconds": log.wall_seconds})
    return 0


def cmd_evaluate(args) -> int:
    cfg, _, _ = load_config(args.config)
    truth = _read_truth(args.truth, cfg)
    full = _read_truth(args.d_spec_from, cfg) if args.d_spec_from else truth
    coords, mu = read_predictions(args.pred)
    index = {tuple(c): i for i, c in enumerate(truth.coords.tolist())}
    missing = [tuple(c) for c in coords.tolist() if tuple(c) not in index]
    if missing:
        shown = ", ".join(f"({x},{y})" for x, y in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise ValueError(f"join mismatch: {len(missing)} prediction coordinate(s) missing "
                         f"from truth: {shown}{more}")
    idx = np.array([index[tuple(c)] for c in coords.tolist()], dtype=np.int64)
    report = delta_error(mu, truth.values[idx], full.value_range())
    out = Path(args.out)
    write_atomic(out / "evaluation.json", dump_json(evaluation_dict(report, lot=truth.lot,
                                                                    wafer=truth.wafer)))
    write_manifest(out, "evaluate", args, {})
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config(p):
    p.add_argument("--config", default=None,
                   help="preset (default, medium, small) or JSON file; may contain a 'gp' section")
    p.add_argument("--small", action="store_true", help="shorthand for --config small")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wafergp", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic lot series")
    _add_config(p)
    p.add_argument("--lots", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate-2step", help="cluster a fully measured wafer")
    _add_config(p)
    p.add_argument("--wafer", required=True)
    p.add_argument("--criterion", choices=("ch", "silhouette"), default="ch")
    p.add_argument("--g-min", type=int, default=2)
    p.add_argument("--g-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--allow-missing", action="store_true",
                   help="accept an incomplete wafer; missing dies take the nearest label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit-predict", help="predict unsampled dies of a wafer")
    _add_config(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--train", help="explicit training CSV (overrides --rate)")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cluster-map")
    p.add_argument("--heatmap", help="write the reconstructed wafer as a y-by-x CSV matrix")
    p.add_argument("--timing", action="store_true", help="add wall_seconds to evaluation.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_predict)

    p = sub.add_parser("sample", help="run a touchdown campaign")
    _add_config(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--strategy", choices=("active", "random"), default="active")
    p.add_argument("--budget", type=int, default=18)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stop-var-norm", type=float)
    p.add_argument("--mode", choices=("fast", "frozen", "refit"), default="fast")
    p.add_argument("--refit-per-candidate", action="store_true", help="same as --mode refit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="score a prediction CSV against the truth")
    _add_config(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--d-spec-from", help="fully measured wafer defining the value range")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "small", False):
        if args.config not in (None, "small"):
            ap.error("--small conflicts with --config")
        args.config = "small"
    try:
        return args.func(args)
    except UsageError as e:
        ap.error(str(e))
    except (ValueError, OSError, KeyError, RuntimeError) as e:
        print(f"wafergp {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
