"""Command-line front end: decompose | evaluate | stats | synth | loss.

Exit codes: 0 success, 1 data error, 2 usage error.  Diagnostics go to
stderr; machine-readable output goes to files or stdout.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .branches import DEFAULT_M, BranchTable
from .io import atomic_write_bytes, load_volume, save_volume
from .losses import DEFAULT_TAU, contrastive_loss, contrastive_terms
from .metrics import SKELETONIZER, evaluate
from .phantom import PhantomSpec, generate_tree
from .pipeline import DEFAULT_SCALES, decompose
from .scales import ESTIMATOR, STATS_FIELDS, radius_statistics, stats_row
from .skeleton import DIRECTION_NAMES
from .volume import MASK, Volume, resample_nearest

log = logging.getLogger("vesselscale")

PARAMETER_NOTES = {
    "connectivity": "skeleton foreground 26, background 6; surface uses 6-neighbours",
    "thinning_order": ",".join(DIRECTION_NAMES),
    "quantile_estimator": ESTIMATOR,
    "scale_bins": "(-inf, t1], (t1, t2], ..., (t_last, inf)",
    "radius_tie_rule": "m nearest surface voxels ordered by (distance, linear index)",
    "branch_junction_rule": "junction voxels join the adjacent branch with the lowest id",
    "reconstruction_tie_rule": "nearest skeleton voxel; ties -> lower branch id, then lower linear index",
    "median_rule": "even count -> mean of the two middle values",
}


class DataError(Exception):
    pass


def _ext(fmt: str) -> str:
    return ".nrrd" if fmt == "nrrd" else ".raw"


def _stem(path: Path) -> str:
    name = path.name
    for suffix in (".nrrd", ".nhdr", ".raw", ".json"):
        if name.lower().endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _decompose_one(path, m, n_scales, resample, fmt, staging):
    """Run the pipeline on one input; write outputs into ``staging``."""
    t0 = time.perf_counter()
    path = Path(path)
    vol = load_volume(path)
    if vol.kind != MASK:
        raise DataError(f"{path}: expected a binary uint8 mask, got {vol.kind} payload")
    if resample:
        vol = resample_nearest(vol, resample)
    result = decompose(vol, m=m, n_scales=n_scales)
    stem = _stem(path)
    staging = Path(staging)
    ext = _ext(fmt)
    outputs = {
        "skeleton": f"{stem}_skeleton{ext}",
        "branch_labels": f"{stem}_branches{ext}",
        "branch_table": f"{stem}_branches.csv",
        "stats": f"{stem}_stats.json",
    }
    save_volume(result.skeleton.to_volume(vol.spacing), staging / outputs["skeleton"])
    save_volume(result.branch_labels, staging / outputs["branch_labels"])
    _write_text(staging / outputs["branch_table"], result.table.to_csv())
    for s, mask in enumerate(result.scales.masks, start=1):
        outputs[f"scale{s}"] = f"{stem}_scale{s}{ext}"
        save_volume(mask, staging / outputs[f"scale{s}"])
    stats = dict(result.stats, volume=stem, thresholds_mm=list(result.scales.thresholds.values))
    _write_text(staging / outputs["stats"], json.dumps(stats, indent=2) + "\n")
    files = []
    for name in outputs.values():
        files.append(name)
        if fmt == "raw" and name.endswith(".raw"):
            files.append(name[:-4] + ".json")
    return {
        "input": str(path),
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing),
        "n_branches": int(result.labeled.n_branches),
        "outputs": files,
        "seconds": round(time.perf_counter() - t0, 3),
    }


def cmd_decompose(args) -> int:
    for p in args.input:
        if not Path(p).exists():
            raise DataError(f"input not found: {p}")
    stems = [_stem(Path(p)) for p in args.input]
    if len(set(stems)) != len(stems):
        raise DataError("input files must have distinct names")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        jobs = [(p, args.m, args.scales, args.resample, args.format, str(staging)) for p in args.input]
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                runs = list(pool.map(_decompose_one, *zip(*jobs)))
        else:
            runs = [_decompose_one(*j) for j in jobs]
        for run in runs:
            for name in run["outputs"]:
                (staging / name).replace(out / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    manifest = {
        "tool": "vesselscale",
        "version": __version__,
        "command": "decompose",
        "parameters": dict(
            m=args.m, scales=args.scales, resample=args.resample, format=args.format, **PARAMETER_NOTES
        ),
        "volumes": runs,
        "seconds": round(time.perf_counter() - t0, 3),
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    log.info("decomposed %d volume(s) into %s", len(runs), out)
    return 0


def _emit(text: str, dest: str | None) -> None:
    if dest in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        _write_text(Path(dest), text)


def _load_mask(path) -> Volume:
    if not Path(path).exists():
        raise DataError(f"input not found: {path}")
    vol = load_volume(path)
    if vol.kind != MASK:
        raise DataError(f"{path}: expected a binary uint8 mask, got {vol.kind} payload")
    return vol


def cmd_evaluate(args) -> int:
    if len(args.gt) != len(args.pred):
        raise DataError("--gt and --pred need the same number of files")
    rows = []
    for g, p in zip(args.gt, args.pred):
        gt, pred = _load_mask(g), _load_mask(p)
        if gt.dims != pred.dims:
            raise DataError(f"dims mismatch: {g} {gt.dims} vs {p} {pred.dims}")
        if gt.spacing != pred.spacing:
            raise DataError(f"spacing mismatch: {g} {gt.spacing} vs {p} {pred.spacing}")
        rows.append((g, p, evaluate(gt, pred).to_dict()))
    if args.csv is not None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gt", "pred", "dsc", "jacc", "cldsc", "hd_mm"])
        for g, p, r in rows:
            writer.writerow([g, p, r["dsc"], r["jacc"], r["cldsc"], r["hd_mm"]])
        _emit(buf.getvalue(), args.csv)
    if args.json is not None or args.csv is None:
        payload = rows[0][2] if len(rows) == 1 else [dict(gt=g, pred=p, **r) for g, p, r in rows]
        _emit(json.dumps(payload, separators=(",", ":")) + "\n", args.json)
    log.info("skeletonizer: %s", SKELETONIZER)
    return 0


def _stats_for(path, m, n_scales):
    path = Path(path)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    if path.suffix.lower() == ".csv":
        table = BranchTable.from_csv(path.read_text())
    else:
        vol = _load_mask(path)
        table = decompose(vol, m=m, n_scales=n_scales).table
    return _stem(path).removesuffix("_branches"), radius_statistics(table)


def cmd_stats(args) -> int:
    if args.jobs > 1 and len(args.input) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_stats_for, args.input, [args.m] * len(args.input),
                                    [args.scales] * len(args.input)))
    else:
        results = [_stats_for(p, args.m, args.scales) for p in args.input]
    if args.json:
        _emit(json.dumps([dict(volume=n, **s) for n, s in results], indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(STATS_FIELDS)
        for name, s in results:
            writer.writerow(stats_row(name, s))
        _emit(buf.getvalue(), args.out)
    return 0


def cmd_synth(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise DataError(f"spec not found: {spec_path}")
    try:
        spec = PhantomSpec.from_json(spec_path.read_text())
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{spec_path}: invalid phantom spec ({exc})") from None
    mask, labels, table = generate_tree(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.name or _stem(spec_path)
    ext = _ext(args.format)
    save_volume(mask, out / f"{stem}_mask{ext}")
    save_volume(labels, out / f"{stem}_labels{ext}")
    _write_text(out / f"{stem}_table.csv", table.to_csv())
    log.info("wrote phantom %s with %d foreground voxels", stem, mask.count())
    return 0


def cmd_loss(args) -> int:
    src = sys.stdin.read() if args.input == "-" else Path(args.input).read_text()
    try:
        doc = json.loads(src)
        vectors = np.asarray(doc["vectors"], dtype=np.float64)
        scales = np.asarray(doc["scales"])
        tau = float(doc.get("tau", DEFAULT_TAU))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid embeddings JSON ({exc})") from None
    terms = contrastive_terms(vectors, scales, tau)
    result = {"tau": tau, "loss": terms.loss, "anchor_terms": terms.anchor_terms,
              "skipped_anchors": terms.skipped_anchors}
    if args.gradient:
        result["gradient"] = contrastive_loss(vectors, scales, tau)[1].tolist()
    _emit(json.dumps(result, indent=2) + "\n", args.out)
    return 0


def _dims(text):
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three integers, e.g. 256,256,128")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not integers: {text!r}") from None
    if min(dims) < 1:
        raise argparse.ArgumentTypeError("dims must be positive")
    return dims


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vesselscale", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose vessel masks into branches and scales")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--m", type=_positive_int, default=DEFAULT_M, help="surface neighbours per local radius")
    p.add_argument("--scales", type=int, default=DEFAULT_SCALES, choices=range(2, 33), metavar="S")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("nrrd", "raw"), default="nrrd")
    p.add_argument("--resample", type=_dims, help="nearest-neighbour resample to NX,NY,NZ first")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("evaluate", help="DSC, Jaccard, clDice and Hausdorff distance")
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--json", nargs="?", const="-", help="JSON output path or - for stdout")
    p.add_argument("--csv", nargs="?", const="-", help="CSV output path or - for stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="per-volume branch radius statistics")
    p.add_argument("--input", nargs="+", required=True, help="masks or *_branches.csv tables")
    p.add_argument("--m", type=_positive_int, default=DEFAULT_M)
    p.add_argument("--scales", type=int, default=DEFAULT_SCALES, choices=range(2, 33), metavar="S")
    p.add_argument("--json", action="store_true", help="JSON records instead of CSV")
    p.add_argument("--out", default="-")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="rasterize a phantom spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name")
    p.add_argument("--format", choices=("nrrd", "raw"), default="nrrd")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("loss", help="multi-scale contrastive loss of an embedding batch")
    p.add_argument("--input", required=True, help="embeddings JSON or - for stdin")
    p.add_argument("--gradient", action="store_true")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_loss)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (DataError, ValueError, OSError) as exc:
        print(f"vesselscale {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
