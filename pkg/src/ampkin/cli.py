"""Command-line surface.

Subcommands: forward, amputate, quantize, eval, synth, export-obj, validate.
Global flags: --config (declarative JSON), --seed (override), --strict
(JSON parsing mode). AMPKIN_THREADS caps batch parallelism; results are
written in input order regardless of completion order. Exit codes: 0 on
success, 1 on validation failure, 2 on I/O or schema errors. Errors are
emitted as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import amputation, annotations, body, metrics, report, rotations, synth, tokenizer
from .config import Config, load_config
from .errors import AmpkinError, ConfigurationError, InvalidInputError, SchemaError


def _emit_error(exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


def _dump_json(data, path=None):
    text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _thread_count():
    raw = os.environ.get("AMPKIN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"AMPKIN_THREADS must be an integer, got {raw!r}") from None


def _ordered_map(fn, items):
    """Apply fn over items, optionally in parallel, preserving input order."""
    workers = _thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _resolve_template(cfg, path_arg):
    path = path_arg or cfg.template.path
    if path:
        return body.load_template(path)
    return body.make_toy_template(cfg.template.n_vertices, cfg.template.seed)


def _load_pose_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"pose parse error at byte offset {exc.pos}: {exc.msg}") from exc
    if "pose_aa" not in data:
        raise SchemaError("pose file must contain a pose_aa field")
    pose_aa = np.asarray(data["pose_aa"], dtype=np.float64)
    if pose_aa.shape != (body.NUM_JOINTS, 3):
        raise SchemaError(f"pose_aa must be 24 x 3, got {pose_aa.shape}")
    mask = np.asarray(data.get("pose_mask", [False] * body.NUM_JOINTS), dtype=bool)
    if mask.shape != (body.NUM_JOINTS,):
        raise SchemaError("pose_mask must have 24 entries")
    pose = rotations.axis_angle_to_matrix(pose_aa)
    pose[mask] = 0.0
    return pose_aa, mask, pose


def _load_array(path, field):
    """Read a 2-D float array from .npy or a JSON file with the given field."""
    path = str(path)
    if path.endswith(".npy"):
        return np.load(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"array parse error at byte offset {exc.pos}: {exc.msg}") from exc
    if field not in data:
        raise SchemaError(f"array file must contain a {field!r} field")
    return np.asarray(data[field], dtype=np.float64)


def _collect_records(path, strict):
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.json"))
        if not files:
            raise SchemaError(f"no .json records found in {path}")
    else:
        files = [p]
    return [(str(f), annotations.read_record(f, strict=strict)) for f in files]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_forward(cfg, args):
    tmpl = _resolve_template(cfg, args.template)
    if args.record:
        rec = annotations.read_record(args.record, strict=args.strict)
        pose, betas = rec.masked_pose(), rec.betas
    else:
        _, _, pose = _load_pose_json(args.pose)
        betas = np.zeros(body.NUM_BETAS)
        if args.betas:
            betas = np.asarray([float(v) for v in args.betas.split(",")], dtype=np.float64)
    mesh = body.forward(tmpl, pose, betas)
    out = {
        "joints3d": [[float(v) for v in row] for row in mesh.joints_posed],
        "vertices": [[float(v) for v in row] for row in mesh.vertices],
    }
    _dump_json(out, args.out)
    if args.obj:
        body.export_obj(mesh.vertices, tmpl.faces, args.obj)
    return 0


def cmd_amputate(cfg, args):
    label = amputation.parse_label(args.label)
    pose_aa, mask, _ = _load_pose_json(args.pose)
    new_mask = mask | amputation.mask_bits(label)
    out = {
        "pose_aa": [[float(v) for v in row] for row in pose_aa],
        "pose_mask": [bool(v) for v in new_mask],
        "amputation": amputation.format_label(label),
    }
    _dump_json(out, args.out)
    return 0


def cmd_quantize(cfg, args):
    if args.codebook:
        cb = tokenizer.load_codebook(args.codebook)
        z = _load_array(args.latents, "z")
        indices, z_tilde = tokenizer.quantize(z, cb)
        out = {
            "indices": [int(i) for i in indices],
            "z_tilde": [[float(v) for v in row] for row in z_tilde],
        }
        _dump_json(out, args.out)
        return 0

    cb_amp = tokenizer.load_codebook(args.codebook_amp)
    cb_non = tokenizer.load_codebook(args.codebook_non)
    logits = _load_array(args.logits, "logits")
    y_hat = np.asarray([int(v) for v in args.binary.split(",")], dtype=np.int64)
    if args.mode == "soft":
        z, kind = tokenizer.switch_and_decode(logits, y_hat, cb_amp, cb_non)
        out = {"kind": kind, "latents": [[float(v) for v in row] for row in z]}
    else:
        cb = cb_amp if int(y_hat.sum()) > 0 else cb_non
        indices = np.argmax(logits, axis=1)
        out = {
            "kind": cb.kind,
            "indices": [int(i) for i in indices],
            "latents": [[float(v) for v in row] for row in cb.codes[indices]],
        }
    _dump_json(out, args.out)
    return 0


def _eval_sample(tmpl, include_amputated, pa_scale, pair):
    (_, pred), (gt_name, gt) = pair
    mesh_pred = body.forward(tmpl, pred.masked_pose(), pred.betas)
    mesh_gt = body.forward(tmpl, gt.masked_pose(), gt.betas)

    pred_js = metrics.joint_set_for_label(
        mesh_pred.joints_posed * 1000.0, gt.label, include_amputated)
    gt_js = metrics.joint_set_for_label(
        mesh_gt.joints_posed * 1000.0, gt.label, include_amputated)

    vmask = None
    if not include_amputated:
        vmask = metrics.surviving_vertex_mask(tmpl, gt.label)
    return {
        "image": gt.image_ref or gt_name,
        "mve_mm": metrics.mve(mesh_pred.vertices * 1000.0, mesh_gt.vertices * 1000.0,
                              tmpl.joint_regressor, vertex_mask=vmask),
        "mpjpe_mm": metrics.mpjpe(pred_js, gt_js),
        "pa_mpjpe_mm": metrics.pa_mpjpe(pred_js, gt_js, with_scale=pa_scale),
    }


def cmd_eval(cfg, args):
    tmpl = _resolve_template(cfg, args.template)
    preds = _collect_records(args.pred, args.strict)
    gts = _collect_records(args.gt, args.strict)
    if len(preds) != len(gts):
        raise SchemaError(f"prediction and ground-truth sets differ in size "
                          f"({len(preds)} vs {len(gts)})")

    include = args.include_amputated or cfg.metrics.include_amputated
    samples = _ordered_map(
        lambda pair: _eval_sample(tmpl, include, cfg.metrics.pa_scale, pair),
        list(zip(preds, gts)))

    counts = report.limb_confusion_counts(
        [p.label for _, p in preds], [g.label for _, g in gts])
    confusion = {limb: (cm, metrics.confusion_stats(cm)) for limb, cm in counts.items()}

    rep = report.build_report(samples, confusion)
    report.write_report(rep, args.out_dir, figures=not args.no_figures)
    _dump_json(rep["aggregate"])
    return 0


def _synth_sample(tmpl, cfg, out_dir, render, heatmaps, index):
    rng = np.random.default_rng(cfg.seed ^ index)

    aa = rng.normal(size=(body.NUM_JOINTS, 3))
    aa /= np.linalg.norm(aa, axis=1, keepdims=True)
    aa *= rng.uniform(0.0, 0.6, size=(body.NUM_JOINTS, 1))
    pose = rotations.axis_angle_to_matrix(aa)
    betas = rng.normal(0.0, 0.3, size=body.NUM_BETAS)

    if rng.uniform() < cfg.amputee_fraction:
        label = amputation.label_from_index(int(rng.integers(0, 12)))
    else:
        label = amputation.AmputationLabel.intact()

    cam = synth.WeakPerspectiveCamera(
        scale=float(rng.uniform(0.8, 1.0)),
        tx=float(rng.uniform(-0.05, 0.05)),
        ty=float(-0.85 + rng.uniform(-0.05, 0.05)),
    )
    rec = annotations.emit_record(
        tmpl, pose, betas, label, cam,
        image_ref=f"synth_{index:04d}.png", image_size=cfg.image_size)

    outputs = {"record": (out_dir / f"record_{index:04d}.json", rec)}
    if render:
        mesh = body.forward(tmpl, amputation.apply_mask(pose, label), betas)
        background = np.full((cfg.image_height, cfg.image_width, 3), 0.35)
        outputs["overlay"] = (
            out_dir / f"overlay_{index:04d}.png",
            synth.composite_overlay(background, mesh.vertices, tmpl.faces, cam),
        )
    if heatmaps:
        kps = rec.kp2d
        if cfg.noise.ratio > 0:
            sigma_px = cfg.noise.sigma_px
            if sigma_px is None:
                sigma_px = 0.05 * float(np.hypot(rec.bbox[2], rec.bbox[3]))
            kps = synth.inject_keypoint_noise(
                kps, cfg.noise.ratio, sigma_px, seed=cfg.seed ^ index,
                model=cfg.noise.model)
        outputs["heatmaps"] = (
            out_dir / f"heatmap_{index:04d}.bin",
            synth.rasterize_heatmaps(kps, cfg.image_size, cfg.heatmap_sigma),
        )
    return outputs


def cmd_synth(cfg, args):
    tmpl = _resolve_template(cfg, args.template)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = _ordered_map(
        lambda i: _synth_sample(tmpl, cfg, out_dir, args.render, args.heatmaps, i),
        list(range(args.count)),
    )
    for outputs in results:  # write in input order
        path, rec = outputs["record"]
        bad = annotations.validate_record(rec, tmpl)
        if bad:
            raise AmpkinError(f"synthesized record failed validation: {bad[0]}")
        annotations.write_record(rec, path)
        if "overlay" in outputs:
            path, image = outputs["overlay"]
            synth.save_png(image, path)
        if "heatmaps" in outputs:
            path, stack = outputs["heatmaps"]
            synth.save_heatmaps(stack, path)
    _dump_json({"count": args.count, "out_dir": str(out_dir)})
    return 0


def cmd_export_obj(cfg, args):
    tmpl = _resolve_template(cfg, args.template)
    if args.record:
        rec = annotations.read_record(args.record, strict=args.strict)
        mesh = body.forward(tmpl, rec.masked_pose(), rec.betas)
        vertices = mesh.vertices
    else:
        vertices = tmpl.rest_vertices
    body.export_obj(vertices, tmpl.faces, args.out)
    return 0


def cmd_validate(cfg, args):
    tmpl = _resolve_template(cfg, args.template)
    failures = {}
    for path in args.records:
        rec = annotations.read_record(path, strict=args.strict)
        violations = annotations.validate_record(rec, tmpl)
        if violations:
            failures[path] = [
                {"invariant": v.invariant, "joints": list(v.joints), "message": v.message}
                for v in violations
            ]
    _dump_json({"checked": len(args.records), "failures": failures})
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="ampkin",
        description="Amputation-aware body model, tokenizer, metrics, and synthesis tools",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--strict", action="store_true",
                        help="reject unknown fields when parsing records")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="run the body model forward pass")
    p.add_argument("--template", help="AMPKIN01 template file (default: toy template)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pose", help="pose JSON with pose_aa and optional pose_mask")
    src.add_argument("--record", help="annotation record JSON")
    p.add_argument("--betas", help="comma-separated 10 shape coefficients")
    p.add_argument("--out", help="output JSON path (default: stdout)")
    p.add_argument("--obj", help="also export the mesh as OBJ")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("amputate", help="apply an amputation label to a pose")
    p.add_argument("--label", required=True, help='e.g. "Larm:0,Rarm:0,Lleg:0,Rleg:2"')
    p.add_argument("--pose", required=True, help="pose JSON with pose_aa")
    p.add_argument("--out", help="output JSON path (default: stdout)")
    p.set_defaults(func=cmd_amputate)

    p = sub.add_parser("quantize", help="codebook quantization / switched decoding")
    p.add_argument("--codebook", help="single codebook for hard nearest-code quantization")
    p.add_argument("--latents", help="latent rows (.npy or JSON with field z)")
    p.add_argument("--codebook-amp", help="amp-kind codebook for switched decoding")
    p.add_argument("--codebook-non", help="non_amp-kind codebook for switched decoding")
    p.add_argument("--logits", help="token logits (.npy or JSON with field logits)")
    p.add_argument("--binary", default="0,0,0,0", help="binary amputation 4-vector")
    p.add_argument("--mode", choices=("soft", "hard"), default="soft",
                   help="switched decoding mode")
    p.add_argument("--out", help="output JSON path (default: stdout)")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction record file or directory")
    p.add_argument("--gt", required=True, help="ground-truth record file or directory")
    p.add_argument("--template", help="AMPKIN01 template file (default: toy template)")
    p.add_argument("--out-dir", required=True, help="report output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.add_argument("--include-amputated", action="store_true",
                   help="keep amputated joints/vertices in the metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="synthesize annotation records")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--template", help="AMPKIN01 template file (default: toy template)")
    p.add_argument("--render", action="store_true", help="write composited overlay PNGs")
    p.add_argument("--heatmaps", action="store_true", help="write keypoint heatmap files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-obj", help="export a mesh as Wavefront OBJ")
    p.add_argument("--template", help="AMPKIN01 template file (default: toy template)")
    p.add_argument("--record", help="annotation record to pose the mesh")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_obj)

    p = sub.add_parser("validate", help="check annotation records against a template")
    p.add_argument("records", nargs="+", help="record JSON files")
    p.add_argument("--template", help="AMPKIN01 template file (default: toy template)")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else Config().validate()
        cfg = cfg.with_overrides(seed=args.seed)
        if args.command == "quantize":
            single = args.codebook is not None
            switched = args.codebook_amp is not None and args.codebook_non is not None
            if single == switched:
                raise ConfigurationError(
                    "quantize needs either --codebook + --latents or "
                    "--codebook-amp + --codebook-non + --logits")
            if single and not args.latents:
                raise ConfigurationError("--codebook requires --latents")
            if switched and not args.logits:
                raise ConfigurationError("switched decoding requires --logits")
        return args.func(cfg, args)
    except (SchemaError, ConfigurationError, InvalidInputError, OSError) as exc:
        _emit_error(exc)
        return 2
    except AmpkinError as exc:
        _emit_error(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
