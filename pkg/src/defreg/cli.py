"""Command-line interface: synth, augment, register, eval, ablate, diff.

Flags may also come from a JSON config file (``--config``); explicit flags win
over the file, the file wins over built-in defaults. Resolved parameters are
echoed into every JSON report. Exit codes: 0 success, 1 domain/configuration
error, 2 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as regio
from .errors import ConfigurationError, DomainError, NumericalError
from .image import Image2D, LabelMap, normalize_intensity
from .lossterms import LossWeights
from .metrics import difference_image, evaluate_pair
from .phantom import PhantomSpec, augment_pairs, make_pair
from .solver import RegistrationConfig, ablate, register

DEFAULTS = {
    "delta": 1.0,
    "alpha": 1.0e3,
    "beta": 5.0e4,
    "epsilon": 0.1,
    "levels": 3,
    "spacing": 8.0,
    "max_iters": 100,
    "seed": 0,
}


def _resolve(args, config_file_values, key):
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in config_file_values:
        return config_file_values[key]
    if key == "seed" and "REGVAR_SEED" in os.environ:
        return int(os.environ["REGVAR_SEED"])
    return DEFAULTS[key]


def _load_config_file(args):
    path = getattr(args, "config", None)
    if not path:
        return {}
    values = json.loads(Path(path).read_text())
    if not isinstance(values, dict):
        raise ConfigurationError(f"{path}: config file must be a JSON object")
    return values


def _build_config(args, cfg_file):
    weights = LossWeights(
        delta=float(_resolve(args, cfg_file, "delta")),
        alpha=float(_resolve(args, cfg_file, "alpha")),
        beta=float(_resolve(args, cfg_file, "beta")),
        epsilon=float(_resolve(args, cfg_file, "epsilon")),
    )
    return RegistrationConfig(
        weights=weights,
        num_levels=int(_resolve(args, cfg_file, "levels")),
        finest_control_spacing_px=float(_resolve(args, cfg_file, "spacing")),
        max_iters_per_level=int(_resolve(args, cfg_file, "max_iters")),
        seed=int(_resolve(args, cfg_file, "seed")),
    )


def _read_image(path) -> Image2D:
    path = str(path)
    if path.endswith(".pgm"):
        return regio.read_pgm(path)
    return regio.read_raw_image(path)


def _read_labels(path) -> LabelMap:
    return regio.read_label_pgm(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg_file = _load_config_file(args)
    seed = int(_resolve(args, cfg_file, "seed"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # scale the default 112-px geometry to the requested size
    s = min(args.width, args.height) / 112.0
    spec = PhantomSpec(width=args.width, height=args.height, seed=seed,
                       center=(62.0 * s, 56.0 * s), lv_radius=13.0 * s,
                       myo_outer_radius=22.0 * s, rv_thickness=8.0 * s,
                       noise_amplitude=args.noise)
    entries = []
    for i in range(args.pairs):
        pair = make_pair(spec, deform_magnitude_px=args.magnitude, seed=seed + i)
        pid = f"pair_{i:03d}"
        regio.write_raw_image(out / f"{pid}_fixed.raw", pair.fixed_image)
        regio.write_raw_image(out / f"{pid}_moving.raw", pair.moving_image)
        regio.write_label_pgm(out / f"{pid}_fixed_labels.pgm", pair.fixed_labels)
        regio.write_label_pgm(out / f"{pid}_moving_labels.pgm", pair.moving_labels)
        regio.write_field(out / f"{pid}_gt_field.raw", pair.true_field)
        entries.append({
            "id": pid,
            "fixed_image": f"{pid}_fixed.raw",
            "moving_image": f"{pid}_moving.raw",
            "fixed_labels": f"{pid}_fixed_labels.pgm",
            "moving_labels": f"{pid}_moving_labels.pgm",
            "gt_field": f"{pid}_gt_field.raw",
        })
    regio.write_manifest(out / "manifest.json", entries)
    print(str(out / "manifest.json"))
    return 0


def cmd_augment(args):
    cfg_file = _load_config_file(args)
    seed = int(_resolve(args, cfg_file, "seed"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = regio.read_manifest(args.manifest)
    from .bspline import densify, random_smooth_deformation, warp_image, warp_labels

    new_entries = []
    for e in entries:
        fixed = _read_image(e["fixed_image"])
        fixed_lab = _read_labels(e["fixed_labels"]) if e.get("fixed_labels") else None
        seq = np.random.SeedSequence((seed, zlib.crc32(e["id"].encode())))
        child = [int(s.generate_state(1)[0]) for s in seq.spawn(args.factor)]
        for j, s in enumerate(child):
            grid = random_smooth_deformation(fixed.width, fixed.height,
                                             args.magnitude, seed=s)
            fld = densify(grid, fixed.width, fixed.height)
            pid = f"{e['id']}_aug{j}"
            new_e = dict(e)
            new_e["id"] = pid
            new_e.pop("gt_field", None)  # composition invalidates the stored ground truth
            regio.write_raw_image(out / f"{pid}_fixed.raw", warp_image(fixed, fld))
            new_e["fixed_image"] = f"{pid}_fixed.raw"
            if fixed_lab is not None:
                regio.write_label_pgm(out / f"{pid}_fixed_labels.pgm",
                                      warp_labels(fixed_lab, fld))
                new_e["fixed_labels"] = f"{pid}_fixed_labels.pgm"
            new_entries.append(new_e)
    regio.write_manifest(out / "manifest.json", new_entries)
    print(str(out / "manifest.json"))
    return 0


def _register_one(fixed_p, moving_p, flab_p, mlab_p, cfg, out_dir, normalize):
    fixed = _read_image(fixed_p)
    moving = _read_image(moving_p)
    if normalize:
        fixed = normalize_intensity(fixed)
        moving = normalize_intensity(moving)
    flab = _read_labels(flab_p) if flab_p else None
    mlab = _read_labels(mlab_p) if mlab_p else None
    result = register(fixed, moving, flab, mlab, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    regio.write_field(out_dir / "field.raw", result.field)
    regio.write_grid(out_dir / "grid.raw", result.grid)
    report = result.report_dict()
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(f"{out_dir}: final loss {report['final_loss']:.6g}, "
          f"folding {report['folding_fraction'] * 100:.3f}% "
          f"({result.duration_s:.2f}s)", file=sys.stderr)
    return result


def cmd_register(args):
    cfg_file = _load_config_file(args)
    cfg = _build_config(args, cfg_file)
    out = Path(args.out)
    if args.manifest:
        entries = regio.read_manifest(args.manifest)

        def run(e):
            return _register_one(e["fixed_image"], e["moving_image"],
                                 e.get("fixed_labels"), e.get("moving_labels"),
                                 cfg, out / e["id"], args.normalize)

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(run, entries))
        return 0
    if not (args.fixed and args.moving):
        raise ConfigurationError("register needs --fixed/--moving or --manifest")
    if (args.fixed_labels is None) != (args.moving_labels is None):
        raise DomainError("supply both label maps or neither")
    _register_one(args.fixed, args.moving, args.fixed_labels, args.moving_labels,
                  cfg, out, args.normalize)
    return 0


def cmd_eval(args):
    if args.manifest:
        entries = regio.read_manifest(args.manifest)
        fields_dir = Path(args.fields_dir)

        def run(e):
            flab = _read_labels(e["fixed_labels"])
            mlab = _read_labels(e["moving_labels"])
            fld = regio.read_field(fields_dir / e["id"] / "field.raw")
            rep = evaluate_pair(flab, mlab, fld)
            return e["id"], rep

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run, entries))
        with open(args.out, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["pair_id", "dice_lvc", "dice_rvc", "dice_myo",
                         "dice_mean", "folding_pct"])
            for pid, rep in results:
                wr.writerow([pid,
                             f"{rep.per_label_dice.get(1, float('nan')):.6f}",
                             f"{rep.per_label_dice.get(3, float('nan')):.6f}",
                             f"{rep.per_label_dice.get(2, float('nan')):.6f}",
                             f"{rep.mean_dice:.6f}",
                             f"{rep.folding_percent:.6f}"])
        return 0
    flab = _read_labels(args.fixed_labels)
    mlab = _read_labels(args.moving_labels)
    fld = regio.read_field(args.field)
    rep = evaluate_pair(flab, mlab, fld)
    payload = rep.as_dict()
    payload["defaults"] = DEFAULTS
    Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_ablate(args):
    cfg_file = _load_config_file(args)
    cfg = _build_config(args, cfg_file)
    entries = regio.read_manifest(args.manifest)
    dataset = []
    for e in entries:
        dataset.append((
            _read_image(e["fixed_image"]),
            _read_image(e["moving_image"]),
            _read_labels(e["fixed_labels"]),
            _read_labels(e["moving_labels"]),
        ))
    factors = [float(f) for f in args.factors.split(",")]
    rows = ablate(dataset, cfg, args.param, factors, jobs=args.jobs)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["factor", "dice_mean", "folding_pct"])
        for factor, dice_mean, folding_pct in rows:
            wr.writerow([f"{factor:g}", f"{dice_mean:.6f}", f"{folding_pct:.6f}"])
    return 0


def cmd_diff(args):
    a = _read_image(args.a)
    b = _read_image(args.b)
    regio.write_pgm(args.out, difference_image(a, b))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--seed", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="defreg",
                                     description="2D deformable image registration engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit labeled phantom pairs and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=1)
    p.add_argument("--width", type=int, default=112)
    p.add_argument("--height", type=int, default=112)
    p.add_argument("--magnitude", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=0.02)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="expand a manifest by deforming each pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=int, default=8)
    p.add_argument("--magnitude", type=float, default=2.0)
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("register", help="register one pair or every manifest entry")
    p.add_argument("--fixed")
    p.add_argument("--moving")
    p.add_argument("--fixed-labels")
    p.add_argument("--moving-labels")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--normalize", action="store_true",
                   help="min-max normalize intensities before registering")
    for flag, typ in [("--delta", float), ("--alpha", float), ("--beta", float),
                      ("--epsilon", float), ("--levels", int), ("--spacing", float),
                      ("--max-iters", int)]:
        p.add_argument(flag, type=typ, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="score a solved field against label maps")
    p.add_argument("--field")
    p.add_argument("--fixed-labels")
    p.add_argument("--moving-labels")
    p.add_argument("--manifest")
    p.add_argument("--fields-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="vary one loss weight over a factor list")
    p.add_argument("--manifest", required=True)
    p.add_argument("--param", required=True, choices=["delta", "alpha", "beta"])
    p.add_argument("--factors", default="100,10,1,0.1,0.01,0")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    for flag, typ in [("--delta", float), ("--alpha", float), ("--beta", float),
                      ("--epsilon", float), ("--levels", int), ("--spacing", float),
                      ("--max-iters", int)]:
        p.add_argument(flag, type=typ, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diff", help="write a grey-centered difference image as PGM")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diff)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DomainError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc} (level={exc.level}, iteration={exc.iteration}, "
              f"weights={exc.weights})", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
