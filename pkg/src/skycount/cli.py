"""``skycount`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._io import write_atomic
from .annotations import (PointRecord, SplitManifest, centroid, count_statistics,
                          parse_quad_file, read_manifest, read_pointfile, sample_id,
                          write_manifest, write_pointfile)
from .config import RunConfig, load_run_config
from .density import (DEFAULT_SIGMA, DensityMap, downsample_preserving_count,
                      generate_density_map, save_dmap, save_preview)
from .errors import NumericError, SkycountError
from .evaluation import evaluate, multi_trial, run_ablation
from .model import build_model, check_params, forward, infer_config
from .tensor import Tensor, make_rng, no_grad
from .train import train
from .transforms import (Sample, augment, image_size, load_image, pad_to_multiple,
                         resize_with_points, save_image)
from .weights import load_weights, save_weights

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("skycount")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skycount", description="Density-map object counting for overhead imagery.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("convert", help="oriented-quad label files -> point file")
    c.add_argument("labels", nargs="+", type=Path)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--image-dir", type=Path, default=None,
                   help="where images live; used for clipping and as the record's image path")
    c.add_argument("--image-ext", default=".png")

    d = sub.add_parser("density", help="point file -> DMAP density maps")
    d.add_argument("points", type=Path)
    d.add_argument("--out", type=Path, required=True, help="output directory")
    d.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    d.add_argument("--downsample", type=int, default=1)
    d.add_argument("--preview", action="store_true", help="also write 8-bit PNG previews")
    d.add_argument("--size", type=int, nargs=2, metavar=("HEIGHT", "WIDTH"),
                   help="image size to use when images are not on disk")

    s = sub.add_parser("stats", help="per-image instance statistics of a point file")
    s.add_argument("points", type=Path)
    s.add_argument("--json", action="store_true")

    t = sub.add_parser("train", help="train from a run config")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path, help="final weights (default: [io] weights)")

    e = sub.add_parser("eval", help="MAE / RMSE on the test split")
    e.add_argument("--config", type=Path, required=True)
    e.add_argument("--weights", type=Path)
    e.add_argument("--trials", type=int, help="train and evaluate this many seeds")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", type=Path, help="write the report as JSON")

    r = sub.add_parser("predict", help="count objects in one image")
    r.add_argument("image", type=Path)
    r.add_argument("--weights", type=Path, required=True)
    r.add_argument("--config", type=Path)
    r.add_argument("--out", type=Path, help="write the predicted density map (DMAP)")

    a = sub.add_parser("ablate", help="train/evaluate the four ablation variants")
    a.add_argument("--config", type=Path, required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--out", type=Path, help="write the table here too")

    y = sub.add_parser("synth", help="write a synthetic blob dataset")
    y.add_argument("--out", type=Path, required=True)
    y.add_argument("--n", type=int, default=10)
    y.add_argument("--size", type=int, default=64)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--test", type=int, default=0, help="how many samples go to the test split")
    return p


# -- helpers -------------------------------------------------------------------


def _records_with_base(points_path: Path):
    return read_pointfile(points_path), points_path.parent


def load_split(run: RunConfig) -> Tuple[List[Sample], List[Sample]]:
    if run.data.points is None:
        raise SkycountError("config needs [data] points")
    records, base = _records_with_base(run.data.points)
    base = run.data.image_dir or base
    samples = []
    for rec in records:
        s = Sample(load_image(base / rec.image), rec.points, rec.image, run.data.subset)
        if run.data.resize:
            s = resize_with_points(s)
        samples.append(s)
    if run.data.manifest is None:
        return samples, samples
    manifest = read_manifest(run.data.manifest)
    roles = dict(manifest.entries)
    missing = [s.id for s in samples if s.id not in roles]
    if missing:
        raise SkycountError(f"images not in the split manifest: {', '.join(missing[:5])}")
    tr = [s for s in samples if roles[s.id] == "train"]
    te = [s for s in samples if roles[s.id] == "test"]
    return tr, te


def _training_set(run: RunConfig, samples: List[Sample], seed: int) -> List[Sample]:
    if run.data.augment:
        samples = augment(samples, make_rng(seed))
    return samples


def _train_once(run: RunConfig, train_samples, seed: int):
    cfg = run.model
    tc = run.train
    tc = type(tc)(**{**tc.__dict__, "seed": seed})
    params = build_model(cfg, make_rng(seed))
    result = train(params, cfg, tc, _training_set(run, train_samples, seed), sigma=run.data.sigma)
    return params, result


# -- commands ------------------------------------------------------------------


def cmd_convert(args) -> int:
    records, total_rejects = [], 0
    for label_path in args.labels:
        stem = label_path.stem
        image_ref = (args.image_dir / f"{stem}{args.image_ext}") if args.image_dir else Path(
            f"{stem}{args.image_ext}")
        size = image_size(image_ref) if image_ref.exists() else None
        parsed = parse_quad_file(label_path.read_text(encoding="utf-8"), size)
        for rej in parsed.rejects:
            print(f"{label_path}: rejected {rej}", file=sys.stderr)
        total_rejects += len(parsed.rejects)
        pts = np.array([centroid(q) for q in parsed.quads]).reshape(-1, 2)
        records.append(PointRecord(str(image_ref), pts))
    write_pointfile(records, args.out)
    print(f"wrote {len(records)} records to {args.out} ({total_rejects} rejected lines)")
    return EXIT_OK


def cmd_density(args) -> int:
    records, base = _records_with_base(args.points)
    args.out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        if args.size:
            h, w = args.size
        else:
            h, w = image_size(base / rec.image)
        dmap = generate_density_map(rec.points, h, w, args.sigma)
        if args.downsample > 1:
            dmap = downsample_preserving_count(pad_dmap(dmap, args.downsample), args.downsample)
        stem = sample_id(rec.image)
        save_dmap(dmap, args.out / f"{stem}.dmap")
        if args.preview:
            save_preview(dmap, args.out / f"{stem}.png")
    print(f"wrote {len(records)} density maps to {args.out}")
    return EXIT_OK


def pad_dmap(dmap: DensityMap, multiple: int) -> DensityMap:
    ph, pw = (-dmap.height) % multiple, (-dmap.width) % multiple
    if ph or pw:
        return DensityMap(np.pad(dmap.values, ((0, ph), (0, pw))), dmap.sigma, dmap.downsample)
    return dmap


def format_stats(stats: dict) -> str:
    head = f"{'Images':>8} {'Total':>10} {'Min':>8} {'Average':>10} {'Max':>8}"
    row = (f"{stats['images']:>8} {stats['total']:>10} {stats['min']:>8} "
           f"{stats['average']:>10.2f} {stats['max']:>8}")
    return head + "\n" + row


def cmd_stats(args) -> int:
    records = read_pointfile(args.points)
    stats = count_statistics([r.count for r in records])
    print(json.dumps(stats) if args.json else format_stats(stats))
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    tr, _ = load_split(run)
    seed = run.train.seed if args.seed is None else args.seed
    params, result = _train_once(run, tr, seed)
    losses = result.epoch_losses()
    out = args.out or run.io.weights
    if out is not None:
        save_weights(params, out)
    print(f"trained {len(losses)} epochs: loss {losses[0]:.6g} -> {losses[-1]:.6g}"
          + (f"; weights in {out}" if out else ""))
    return EXIT_OK


def cmd_eval(args) -> int:
    run = load_run_config(args.config)
    tr, te = load_split(run)
    if args.trials:
        base = run.train.seed if args.seed is None else args.seed

        def trial(seed):
            params, _ = _train_once(run, tr, seed)
            return evaluate(params, run.model, te)

        summary = multi_trial(trial, k=args.trials, base_seed=base)
        print(summary)
        if args.out:
            payload = {"trials": [r.to_dict() for r in summary.reports],
                       "mae": list(summary.mae), "rmse": list(summary.rmse)}
            write_atomic(args.out, json.dumps(payload, indent=2))
        return EXIT_OK
    weights = args.weights or run.io.weights
    if weights is None:
        raise UsageError("eval needs --weights (or [io] weights) unless --trials is given")
    params = load_weights(weights, run.model)
    report = evaluate(params, run.model, te)
    print(f"MAE {report.mae:.4f}  RMSE {report.rmse:.4f}  ({report.n} images)")
    if args.out:
        write_atomic(args.out, report.to_json())
    return EXIT_OK


def cmd_predict(args) -> int:
    params = load_weights(args.weights)
    if args.config:
        cfg = load_run_config(args.config).model
        check_params(params, cfg)
    else:
        cfg = infer_config(params)
    sample = pad_to_multiple(Sample(load_image(args.image), np.zeros((0, 2))))
    image = Tensor(sample.image.transpose(2, 0, 1)[None])
    with no_grad():
        dmap = forward(params, cfg, image)
    dmap.check_finite("predicted density map")
    raw = float(dmap.data.sum())
    print(f"count {raw:.4f} (clamped {max(raw, 0.0):.4f})")
    if args.out:
        save_dmap(DensityMap(dmap.data[0, 0], 0.0, 8), args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = load_run_config(args.config)
    tr, te = load_split(run)
    seed = run.train.seed if args.seed is None else args.seed
    tc = type(run.train)(**{**run.train.__dict__, "seed": seed, "checkpoint_every": 0,
                            "log_path": None})
    report = run_ablation(run.model, tc, _training_set(run, tr, seed), te, run.data.sigma)
    table = report.table()
    print(table)
    if args.out:
        write_atomic(args.out, table + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import blob_samples

    args.out.mkdir(parents=True, exist_ok=True)
    samples = blob_samples(args.n, size=args.size, seed=args.seed)
    records, entries = [], []
    for i, s in enumerate(samples):
        save_image(s.image, args.out / s.path)
        records.append(PointRecord(s.path, s.points))
        entries.append((s.id, "test" if i >= args.n - args.test else "train"))
    write_pointfile(records, args.out / "points.txt")
    write_manifest(SplitManifest(entries), args.out / "split.txt")
    print(f"wrote {args.n} images, points.txt and split.txt to {args.out}")
    return EXIT_OK


COMMANDS = {"convert": cmd_convert, "density": cmd_density, "stats": cmd_stats,
            "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "ablate": cmd_ablate, "synth": cmd_synth}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{exc}\n\n{parser.format_usage()}", file=sys.stderr, end="")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except NumericError as exc:
        print(f"skycount: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SkycountError, OSError, ValueError) as exc:
        print(f"skycount: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
