"""Command-line front end.

Exit codes: 0 success, 2 usage or validation error, 1 internal error.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .absvr import AbsvrParams, absvr_apply, segment_frames, spectral_report, write_spectrum_csv
from .config import load_config
from .errors import ConfigurationError, NarrativeAttnError
from .grounding import (
    GcaParams,
    GroundingBox,
    MaskStrategy,
    PatchGrid,
    mask_to_pgm,
    mask_variant,
    overlap_fraction,
    radii_from_strength,
)
from .numkernel import read_matrix_csv, thin_svd, write_matrix_csv
from .pipeline import ablation_matrix, run_story

SEED_ENV = "NARRATIVE_ATTN_SEED"


class UsageError(Exception):
    pass


def _tau(text):
    tau = float(text)
    if not 0 < tau <= 1:
        raise UsageError(f"--tau must lie in (0, 1], got {text}")
    return tau


def _gca_overrides(items):
    fields = GcaParams.__dataclass_fields__
    kw = {}
    for item in items or ():
        k, _, v = item.partition("=")
        if k not in fields or not v:
            raise UsageError(f"unknown or empty GCA override {item!r}")
        kw[k] = float(v)
    return GcaParams(**kw)


def cmd_mask(args):
    grid = PatchGrid.parse(args.grid)
    try:
        raw = json.loads(Path(args.boxes).read_text(encoding="utf-8"))
        boxes = [GroundingBox.from_any(b) for b in raw]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.boxes}: {exc}") from exc
    if not boxes:
        raise UsageError(f"{args.boxes}: no boxes")
    params = _gca_overrides(args.set)
    masks = mask_variant(args.strategy, boxes, grid, params, strengths=[args.strength] * len(boxes))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (b, m) in enumerate(zip(boxes, masks)):
        (out / f"subject_{i}.pgm").write_bytes(mask_to_pgm(m.values, grid))
        radii = radii_from_strength(args.strength, b, params, overlap_fraction(boxes, i))
        centers = " ".join(f"({x:.4f},{y:.4f})" for x, y in m.centers)
        print(f"subject {i}: centers {centers} radii in=({radii[0]:.4f},{radii[1]:.4f}) "
              f"out=({radii[2]:.4f},{radii[3]:.4f})")
    composite = np.max(np.vstack([m.values for m in masks]), axis=0)
    (out / "composite.pgm").write_bytes(mask_to_pgm(composite, grid))
    return 0


def cmd_spectrum(args):
    x = read_matrix_csv(args.matrix)
    report = spectral_report(thin_svd(x).sigma, args.tau)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_spectrum_csv(out / "spectrum.csv", report)
    print(f"k={report.k} knees={list(report.knees)}")
    return 0


def cmd_svr(args):
    x = read_matrix_csv(args.matrix)
    bounds = [int(b) for b in args.boundaries.split(",")] if args.boundaries else []
    params = AbsvrParams(tau=args.tau, gain_exp=args.gain_exp, gain_sup=args.gain_sup)
    segments, report = absvr_apply(segment_frames(x, bounds, args.current), params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "reweighted.csv", segments.stacked())
    write_spectrum_csv(out / "spectrum.csv", report)
    print(f"k={report.k} knees={list(report.knees)}")
    return 0


def _story_config(args):
    cfg = load_config(args.config, args.set)
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer") from exc
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if getattr(args, "strategy", None) and args.command == "simulate":
        cfg = replace(cfg, strategy=MaskStrategy.parse(args.strategy))
    return cfg


def cmd_simulate(args):
    cfg = _story_config(args)
    stats, _ = run_story(cfg, out_dir=args.out, timing=not args.no_timing)
    for fs in stats:
        print(f"frame {fs.frame}: k={fs.k} history_mass={np.mean(fs.history_mass):.4f} "
              f"occupancy={max(fs.occupancy)}")
    return 0


def cmd_ablate(args):
    cfg = _story_config(args)
    names = (args.strategy or "BoxBinary,XorSplit,StaticTwoStage,SingleStage,Gca").split(",")
    table = ablation_matrix(cfg, [MaskStrategy.parse(n.strip()) for n in names], out_dir=args.out)
    for row in table:
        print(f"{row['strategy']:>15} out_of_box={row['out_of_box_mass']:.5f} coactivation={row['coactivation']:.5f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="narrative-attn", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="render subject masks as PGM images")
    p.add_argument("boxes", help="box list JSON")
    p.add_argument("--grid", default="64x64")
    p.add_argument("--strategy", default="Gca")
    p.add_argument("--strength", type=float, default=0.5)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="GcaParams override")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("spectrum", help="singular-value spectrum report of a matrix CSV")
    p.add_argument("matrix")
    p.add_argument("--tau", type=str, default="0.85")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("svr", help="apply AB-SVR to a D x T token matrix CSV")
    p.add_argument("matrix")
    p.add_argument("--boundaries", default="", help="comma-separated column boundaries")
    p.add_argument("--current", type=int, default=0)
    p.add_argument("--tau", type=str, default="0.85")
    p.add_argument("--gain-exp", type=float, default=1.1)
    p.add_argument("--gain-sup", type=float, default=0.9)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_svr)

    for name, func in (("simulate", cmd_simulate), ("ablate", cmd_ablate)):
        p = sub.add_parser(name, help=f"{name} a story from a config JSON")
        p.add_argument("config")
        p.add_argument("--seed", type=int)
        p.add_argument("--strategy", help="mask strategy (comma list for ablate)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
        p.add_argument("--out", default="out")
        p.add_argument("--no-timing", action="store_true", help="zero the ms column")
        p.set_defaults(func=func)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "tau"):
            args.tau = _tau(args.tau)
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        fields = getattr(exc, "fields", None)
        msg = f"error: {exc}"
        if fields:
            msg += f" (fields: {', '.join(fields)})"
        print(msg, file=sys.stderr)
        return 2
    except (NarrativeAttnError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
