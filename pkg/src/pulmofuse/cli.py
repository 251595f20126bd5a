"""``pulmofuse`` command-line entry point.

Exit codes: 0 success, 1 invalid arguments or inputs, 2 unreadable or
malformed files. Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from . import ensemble, metrics, morphology, nifti_io, patching, synth, volume_ops
from .config import PipelineConfig, load_config, parse_clip, parse_triple
from .errors import CountMismatch, FormatError, UnknownSubcommand, ValidationError
from .nifti_io import Volume

log = logging.getLogger("pulmofuse")

SUBCOMMANDS = (
    "info", "validate", "preprocess", "plan-patches", "fuse", "cca",
    "decompose", "evaluate", "project", "phantom", "mock",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UnknownSubcommand(message)


def read_scores(path) -> list[tuple[str, float]]:
    """Parse ``model_id,dice`` lines; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row]
            if not row or not any(row) or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{i + 1}: expected 'model_id,dice'")
            try:
                rows.append((row[0], float(row[1])))
            except ValueError:
                if i == 0 and not rows:
                    continue
                raise ValidationError(f"{path}:{i + 1}: dice {row[1]!r} is not a number") from None
    return rows


def _config(args) -> PipelineConfig:
    return load_config(args.config) if args.config else PipelineConfig()


def _save_mask(mask: np.ndarray, like: Volume, path) -> None:
    nifti_io.save(like.with_data(np.asfortranarray(mask.astype(np.uint8))), path)


# -- subcommands ------------------------------------------------------------


def cmd_info(args, out) -> int:
    hdr = nifti_io.read_header(args.file)
    out.write(nifti_io.dumps_header(hdr))
    return 0


def cmd_validate(args, out) -> int:
    vol = nifti_io.load(args.file)
    norm = nifti_io.validate_labels(vol)
    out.write(f"ok file={args.file} kind={vol.element_kind} foreground="
              f"{int(np.count_nonzero(norm.data))}\n")
    if args.out:
        nifti_io.save(norm, args.out)
    return 0


def cmd_preprocess(args, out) -> int:
    cfg = _config(args).merged(clip=parse_clip(args.clip) if args.clip else None).validate()
    vol = nifti_io.load(args.input)
    record = None
    if args.crop:
        vol, record = volume_ops.crop_uninformative_slices(vol)
    norm = volume_ops.clip_scale_hu(vol, *cfg.clip)
    if args.augment_seed is not None:
        spec = volume_ops.random_augmentation(args.augment_seed)
        norm = volume_ops.apply_augmentation(norm, spec, hu_range=cfg.clip[1] - cfg.clip[0])
    nifti_io.save(norm, args.output)
    if args.crop_record:
        payload = {"original_shape": list(record.original_shape) if record else list(vol.shape),
                   "kept": [list(k) for k in record.kept] if record else
                   [[0, n] for n in vol.shape]}
        nifti_io.atomic_write(args.crop_record, (json.dumps(payload) + "\n").encode())
    if args.external_infer:
        # inference is external: print the filled-in command for the caller to run
        out.write(args.external_infer.format(input=shlex.quote(str(args.output))) + "\n")
    return 0


def cmd_plan_patches(args, out) -> int:
    cfg = _config(args)
    patch = parse_triple(args.patch) if args.patch else cfg.patch
    stride = parse_triple(args.stride) if args.stride else (cfg.stride or patch)
    grid = patching.plan_patches(parse_triple(args.shape), patch, stride)
    out.write("x,y,z\n")
    for x, y, z in grid.origins:
        out.write(f"{x},{y},{z}\n")
    return 0


def cmd_fuse(args, out) -> int:
    cfg = _config(args).merged(scores=args.scores).validate()
    if not cfg.scores:
        raise ValidationError("--scores is required (flag or config file)")
    scores = read_scores(cfg.scores)
    if len(scores) != len(args.preds):
        raise CountMismatch(
            f"{len(scores)} model scores in {cfg.scores} but {len(args.preds)} prediction files"
        )
    weights = ensemble.compute_weights([d for _, d in scores])
    headers = [nifti_io.read_header(p) for p in args.preds]
    shapes = {h.shape for h in headers}
    if len(shapes) != 1:
        raise ValidationError(f"prediction maps differ in shape: {sorted(shapes)}")
    nz = headers[0].shape[2]
    threshold = args.slab_threshold or cfg.slab_threshold
    if nz > threshold:
        _fuse_streaming(args, headers[0], weights, slab=args.slab or 64)
    else:
        vols = [nifti_io.load(p) for p in args.preds]
        maps = [v.data for v in vols]
        mask = ensemble.fuse_and_binarize(maps, weights)
        _save_mask(mask, vols[0], args.out)
        if args.soft_out:
            nifti_io.save(vols[0].with_data(np.asfortranarray(ensemble.fuse(maps, weights))),
                          args.soft_out)
    for (model_id, _), w in zip(scores, weights):
        log.info("weight %s = %.12f", model_id, w)
    return 0


def _fuse_streaming(args, header, weights, slab: int) -> None:
    geometry = (header.shape, header.volume_spacing(), header.affine())
    mask_hdr = nifti_io.header_from_geometry(*geometry, "uint8")
    soft_hdr = nifti_io.header_from_geometry(*geometry, "float32")
    streams = [nifti_io.iter_slabs(p, slab) for p in args.preds]
    mask_w = nifti_io.SlabWriter(args.out, mask_hdr)
    soft_w = nifti_io.SlabWriter(args.soft_out, soft_hdr) if args.soft_out else None
    try:
        for _, soft, mask in ensemble.fuse_slabs(streams, weights):
            mask_w.write(mask)
            if soft_w:
                soft_w.write(soft)
    except BaseException:
        mask_w.abort()
        if soft_w:
            soft_w.abort()
        raise
    mask_w.close()
    if soft_w:
        soft_w.close()


def cmd_cca(args, out) -> int:
    cfg = _config(args).merged(connectivity=args.connectivity).validate()
    vol = nifti_io.validate_labels(nifti_io.load(args.input))
    if args.keep_largest:
        result = morphology.largest_component(vol.data, cfg.connectivity)
    else:
        lm = morphology.connected_components(vol.data, cfg.connectivity)
        if lm.count > np.iinfo(np.int16).max:
            raise ValidationError(f"{lm.count} components exceed the int16 label range")
        result = lm.labels.astype(np.int16)
        out.write("label,size\n")
        for k, size in enumerate(lm.sizes, 1):
            out.write(f"{k},{size}\n")
    nifti_io.save(vol.with_data(np.asfortranarray(result)), args.output)
    return 0


def cmd_decompose(args, out) -> int:
    cfg = _config(args).merged(alpha=args.alpha).validate()
    vol = nifti_io.validate_labels(nifti_io.load(args.input))
    regions = morphology.decompose_main_vs_branches(vol.data, vol.spacing, cfg.alpha)
    nifti_io.save(vol.with_data(np.asfortranarray(regions)), args.output)
    return 0


def evaluate_case(gt: Volume, pred: Volume, regions: np.ndarray | None, cfg: PipelineConfig,
                  cca_report: bool):
    if regions is None:
        regions = morphology.decompose_main_vs_branches(gt.data, gt.spacing, cfg.alpha)
    if cca_report:
        return metrics.cca_tradeoff_report(pred.data, gt.data, regions, cfg.w_branch,
                                           gt.spacing, cfg.connectivity)
    return (metrics.multi_level_dice(pred.data, gt.data, regions, cfg.w_branch, gt.spacing),)


def cmd_evaluate(args, out) -> int:
    cfg = _config(args).merged(w_branch=args.w_branch, alpha=args.alpha,
                               connectivity=args.connectivity).validate()
    if len(args.gt) != len(args.pred):
        raise CountMismatch(f"{len(args.gt)} --gt files but {len(args.pred)} --pred files")
    if args.regions and len(args.regions) != len(args.gt):
        raise CountMismatch(f"{len(args.regions)} --regions files for {len(args.gt)} cases")
    case_ids = args.case_id or [Path(p).name.split(".")[0] for p in args.pred]
    if len(case_ids) != len(args.pred):
        raise CountMismatch(f"{len(case_ids)} --case-id values for {len(args.pred)} cases")
    rows, before, after = [], [], []
    for i, (g, p) in enumerate(zip(args.gt, args.pred)):
        gt = nifti_io.validate_labels(nifti_io.load(g))
        pred = nifti_io.validate_labels(nifti_io.load(p))
        if gt.shape != pred.shape:
            raise ValidationError(f"case {case_ids[i]}: gt {gt.shape} vs pred {pred.shape}")
        regions = nifti_io.load(args.regions[i]).data if args.regions else None
        reports = evaluate_case(gt, pred, regions, cfg, args.cca_report)
        rows.append((case_ids[i], reports[0]))
        before.append(reports[0])
        if args.cca_report:
            rows.append((f"{case_ids[i]}/cca", reports[1]))
            after.append(reports[1])
    rows.append(("mean", metrics.average_reports(before)))
    if after:
        rows.append(("mean/cca", metrics.average_reports(after)))
    text = metrics.format_csv(rows)
    if args.out:
        nifti_io.atomic_write(args.out, text.encode())
    else:
        out.write(text)
    return 0


def cmd_project(args, out) -> int:
    vol = nifti_io.load(args.input)
    image = volume_ops.project_sum(vol, args.plane)
    volume_ops.write_pgm(image, args.output)
    return 0


def cmd_phantom(args, out) -> int:
    cfg = _config(args).merged(seed=args.seed, out_dir=args.out_dir).validate()
    if args.preset not in synth.PRESETS:
        raise ValidationError(f"unknown preset {args.preset!r}; choose from {sorted(synth.PRESETS)}")
    spec = synth.PRESETS[args.preset](cfg.seed)
    hu, gt, regions = synth.rasterize_phantom(spec)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nifti_io.save(hu, out_dir / "hu.nii.gz")
    nifti_io.save(hu.with_data(gt), out_dir / "gt.nii.gz")
    nifti_io.save(hu.with_data(regions), out_dir / "regions.nii.gz")
    return 0


def cmd_mock(args, out) -> int:
    cfg = _config(args).merged(seed=args.seed).validate()
    gt = nifti_io.validate_labels(nifti_io.load(args.gt))
    corruption = synth.Corruption(args.flip_prob, args.blobs)
    prob = synth.mock_predict(gt.data, corruption, cfg.seed)
    nifti_io.save(gt.with_data(prob), args.output)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pulmofuse", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="file of 'key = value' defaults; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("info", help="print NIfTI header fields as key=value")
    s.add_argument("file")

    s = sub.add_parser("validate", help="check a label volume holds only 0 and 1")
    s.add_argument("file")
    s.add_argument("--out", help="write the label volume normalised to uint8")

    s = sub.add_parser("preprocess", help="clip/scale HU, optionally crop and augment")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--clip", help="LO:HI window in HU (default -1000:1000)")
    s.add_argument("--crop", action="store_true", help="drop uninformative boundary z-slices")
    s.add_argument("--crop-record", help="write the kept index ranges as JSON")
    s.add_argument("--augment-seed", type=int, help="apply a random augmentation drawn from SEED")
    s.add_argument("--external-infer", metavar="TEMPLATE",
                   help="command template printed with {input} filled in; "
                        "inference itself runs outside pulmofuse")

    s = sub.add_parser("plan-patches", help="print patch origins as x,y,z CSV")
    s.add_argument("--shape", required=True)
    s.add_argument("--patch")
    s.add_argument("--stride")

    s = sub.add_parser("fuse", help="dice-weighted fusion of per-model prediction maps")
    s.add_argument("preds", nargs="+")
    s.add_argument("--scores", help="CSV of model_id,dice in prediction order")
    s.add_argument("--out", required=True)
    s.add_argument("--soft-out")
    s.add_argument("--slab", type=int, help="z-slices per slab when streaming (default 64)")
    s.add_argument("--slab-threshold", type=int,
                   help="stream slab-wise above this many z-slices (default 256)")

    s = sub.add_parser("cca", help="connected components / keep the largest")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--keep-largest", action="store_true")
    s.add_argument("--connectivity", type=int, choices=(6, 18, 26))

    s = sub.add_parser("decompose", help="label a mask as main trunk (1) / branch (2)")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--alpha", type=float)

    s = sub.add_parser("evaluate", help="overall, main, branch and multi-level dice")
    s.add_argument("--gt", action="append", required=True)
    s.add_argument("--pred", action="append", required=True)
    s.add_argument("--regions", action="append")
    s.add_argument("--case-id", action="append")
    s.add_argument("--w-branch", type=float)
    s.add_argument("--alpha", type=float, help="decomposition alpha when --regions is absent")
    s.add_argument("--connectivity", type=int, choices=(6, 18, 26))
    s.add_argument("--cca-report", action="store_true",
                   help="also report scores after keeping the largest component")
    s.add_argument("--out", help="write CSV here instead of stdout")

    s = sub.add_parser("project", help="sum projection exported as PGM")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--plane", choices=sorted(volume_ops.PLANES), default="axial")

    s = sub.add_parser("phantom", help="write a synthetic vessel phantom")
    s.add_argument("--preset", default="y-bifurcation")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir")

    s = sub.add_parser("mock", help="seeded mock prediction from a ground-truth mask")
    s.add_argument("gt")
    s.add_argument("output")
    s.add_argument("--seed", type=int)
    s.add_argument("--flip-prob", type=float, default=0.0)
    s.add_argument("--blobs", type=int, default=0)
    return p


HANDLERS = {
    "info": cmd_info,
    "validate": cmd_validate,
    "preprocess": cmd_preprocess,
    "plan-patches": cmd_plan_patches,
    "fuse": cmd_fuse,
    "cca": cmd_cca,
    "decompose": cmd_decompose,
    "evaluate": cmd_evaluate,
    "project": cmd_project,
    "phantom": cmd_phantom,
    "mock": cmd_mock,
}


def _join_negative_values(argv: list[str]) -> list[str]:
    # "--clip -1000:1000" would otherwise parse -1000:1000 as an option
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--clip" and i + 1 < len(argv):
            out.append(f"--clip={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def run_subcommand(argv=None, out=None) -> int:
    out = out or sys.stdout
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UnknownSubcommand(f"a command is required: {', '.join(SUBCOMMANDS)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s", stream=sys.stderr)
        return HANDLERS[args.command](args, out)
    except ValidationError as exc:
        print(f"pulmofuse: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"pulmofuse: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
