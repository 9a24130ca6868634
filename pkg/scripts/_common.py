"""Shared bits for the experiment scripts."""

import argparse
import json
import sys

from wafergp.synth import PRESET_RADII, preset


def parser(doc: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--preset", choices=sorted(PRESET_RADII), default="default")
    ap.add_argument("--json", help="also write the results here")
    return ap


def config(args):
    return preset(args.preset)


def dump(args, obj) -> None:
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")


def table(header, rows) -> None:
    w = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    for line in [header, *rows]:
        print("  ".join(str(c).rjust(n) for c, n in zip(line, w)))
    sys.stdout.flush()
