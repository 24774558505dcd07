"""Command-line interface.

Every subcommand reads tensors from ``.ten`` containers and images from
PPM/PGM, and prints its report as ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import affinity, attention, cam, losses
from .evaluation import ConfusionMatrix, accumulate, class_names, format_report, miou
from .gradcheck import GradcheckSizes, gradcheck, passed
from .par import ParConfig
from .pipeline import (
    PipelineConfig,
    StageError,
    format_report as format_kv,
    load_stack,
    parse_kv,
    run_pipeline,
    stage_aff_loss,
    stage_affinity,
    stage_affinity_label,
    stage_cam,
    stage_final_labels,
    stage_par,
    stage_propagate,
)
from .synthetic import COLOR_COMBINER, Blob, SceneSpec, color_attention, make_synthetic, two_blob_scene
from .tensor_io import TensorIOError, read_image, read_labels, read_tensor, write_image, write_labels, write_tensor

log = logging.getLogger("pseudorefine")


def _int_list(s):
    return [int(x) for x in s.split(",") if x.strip()]


def _float_list(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _emit(pairs):
    sys.stdout.write(format_kv(dict(pairs)))


def _add_affinity_source(p):
    src = p.add_argument_group("affinity source (one of)")
    src.add_argument("--affinity", type=Path, help="affinity logits [hw, hw]")
    src.add_argument("--attention", type=Path, help="attention stack [hw, hw, m]")
    src.add_argument("--height", type=int, help="grid height for --attention")
    src.add_argument("--width", type=int, help="grid width for --attention")
    src.add_argument("--head-weights", type=_float_list, help="per-head weights (default 1/m)")
    src.add_argument("--head-bias", type=float, default=0.0)


def _load_affinity(args):
    if (args.affinity is None) == (args.attention is None):
        raise ValueError("give exactly one of --affinity or --attention")
    if args.affinity is not None:
        return read_tensor(args.affinity).array
    if args.height is None or args.width is None:
        raise ValueError("--attention needs --height and --width")
    stack = load_stack(args.attention, args.height, args.width)
    comb = (attention.HeadCombiner.uniform(stack.num_heads) if args.head_weights is None
            else attention.HeadCombiner(np.array(args.head_weights), args.head_bias))
    return stage_affinity(stack, comb)


# --------------------------------------------------------------------------
# subcommands

def cmd_cam(args):
    features = read_tensor(args.features).array
    weights = read_tensor(args.weights).array
    m = stage_cam(features, weights, args.classes)
    if args.out_map:
        write_tensor(m, args.out_map)
    pairs = [("height", m.shape[0]), ("width", m.shape[1]), ("classes", m.shape[2])]
    if args.out_labels:
        yp = cam.threshold_dual(m, args.beta_low, args.beta_high)
        write_labels(yp, args.out_labels)
        pairs.append(("ignored_pixels", int((yp.labels == 255).sum())))
    if args.topk is not None:
        pooled = cam.top_k_pool(features, args.topk)
        pairs += [(f"pool_{i}", float(v)) for i, v in enumerate(pooled)]
    _emit(pairs)


def cmd_par(args):
    image = read_image(args.image)
    m = read_tensor(args.map).array
    cfg = ParConfig(tuple(args.dilations), args.w1, args.w2, args.w3, args.iters, args.sigma_floor)
    out = stage_par(image, m, cfg)
    write_tensor(out, args.out)
    pairs = [("iterations", cfg.iterations), ("max", float(out.max())), ("min", float(out.min()))]
    if args.out_labels:
        if args.label_mode == "dual":
            lab = cam.threshold_dual(out, args.beta_low, args.beta_high)
        else:
            lab = stage_final_labels(out, args.beta)
        write_labels(lab, args.out_labels)
    _emit(pairs)


def cmd_affinity_label(args):
    yp = read_labels(args.labels, args.num_classes)
    h = args.height or yp.height
    w = args.width or yp.width
    codes = stage_affinity_label(yp, args.radius, h, w)
    write_tensor(codes, args.out)
    _emit([("positive", int((codes == affinity.POSITIVE).sum())),
           ("negative", int((codes == affinity.NEGATIVE).sum())),
           ("ignored", int((codes == affinity.IGNORED).sum()))])


def cmd_aff_loss(args):
    a = _load_affinity(args)
    codes = read_tensor(args.labels).array
    res, grad = stage_aff_loss(a, codes)
    if args.out_grad:
        write_tensor(grad, args.out_grad)
    _emit([("loss", res.loss), ("positive", res.num_positive), ("negative", res.num_negative),
           ("grad_norm", float(np.linalg.norm(res.grad))), ("degenerate", int(res.degenerate))])


def cmd_rw_propagate(args):
    a = _load_affinity(args)
    m = read_tensor(args.map).array
    out = stage_propagate(a, m, args.alpha)
    write_tensor(out, args.out)
    _emit([("alpha", args.alpha), ("max", float(out.max()))])


def cmd_loss(args):
    pairs = []
    l_cls = l_seg = l_aff = 0.0
    if args.probs or args.targets:
        if not (args.probs and args.targets):
            raise ValueError("--probs and --targets go together")
        l_cls, g = losses.classification_loss(read_tensor(args.probs).array.reshape(-1),
                                              read_tensor(args.targets).array.reshape(-1))
        pairs += [("l_cls", l_cls), ("grad_norm_cls", float(np.linalg.norm(g)))]
    if args.seg_logits or args.seg_target:
        if not (args.seg_logits and args.seg_target):
            raise ValueError("--seg-logits and --seg-target go together")
        l_seg, g = losses.segmentation_loss(read_tensor(args.seg_logits).array, read_labels(args.seg_target))
        pairs += [("l_seg", l_seg), ("grad_norm_seg", float(np.linalg.norm(g)))]
    if args.aff_labels:
        res, _ = stage_aff_loss(_load_affinity(args), read_tensor(args.aff_labels).array)
        l_aff = res.loss
        pairs += [("l_aff", l_aff), ("grad_norm_aff", float(np.linalg.norm(res.grad)))]
    elif args.aff_loss is not None:
        l_aff = args.aff_loss
        pairs.append(("l_aff", l_aff))
    pairs.append(("l_reg", args.reg))
    w = losses.LossWeights(args.lambda1, args.lambda2, args.lambda3)
    pairs.append(("total", losses.combine(l_cls, l_seg, l_aff, args.reg, w)))
    _emit(pairs)


def cmd_eval_miou(args):
    truth_files = sorted(Path(args.truth_dir).glob("*.pgm"))
    if not truth_files:
        raise ValueError(f"no .pgm files in {args.truth_dir}")
    cm = ConfusionMatrix(args.classes)
    for tf in truth_files:
        pf = Path(args.pred_dir) / tf.name
        if not pf.exists():
            raise ValueError(f"missing prediction for {tf.name}")
        cm = accumulate(read_labels(pf, args.classes), read_labels(tf, args.classes), cm)
    per_class, mean = miou(cm)
    print(f"images={len(truth_files)}")
    print(format_report(per_class, mean, class_names(args.classes)))


def cmd_pipeline(args):
    overrides = {}
    for item in args.set or []:
        overrides.update(parse_kv(item))
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.dump_stages:
        overrides["dump_stages"] = True
    cfg = PipelineConfig.from_file(args.config, **overrides) if args.config else PipelineConfig.from_dict(overrides)
    result = run_pipeline(cfg)
    _emit([("out_dir", cfg.out_dir)] + list(result.report.items()))


def cmd_gradcheck(args):
    sizes = GradcheckSizes(args.instances, args.affinity_hw, args.classes, args.seg_size, args.seg_size, args.seg_classes)
    report = gradcheck(args.seed, sizes)
    ok = passed(report, args.tol)
    _emit([(f"max_rel_err_{k}", v) for k, v in report.items()] + [("passed", int(ok))])
    return 0 if ok else 1


def _parse_blob(s):
    parts = s.split(",")
    if len(parts) != 8:
        raise argparse.ArgumentTypeError("blob is top,left,height,width,r,g,b,class")
    t, l, h, w = (int(x) for x in parts[:4])
    r, g, b = (float(x) for x in parts[4:7])
    return Blob(t, l, h, w, (r, g, b), int(parts[7]))


def cmd_synth(args):
    if args.blob:
        h, w = args.size
        spec = SceneSpec(h, w, tuple(args.blob), noise=args.noise, cam_coverage=args.cam_coverage, seed=args.seed)
    else:
        spec = two_blob_scene(args.noise, args.cam_coverage, args.seed)
    scene = make_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(scene.image, out / "image.ppm")
    write_tensor(scene.features, out / "features.ten")
    write_tensor(scene.weights, out / "weights.ten")
    write_labels(scene.truth, out / "truth.pgm")
    stack = color_attention(scene.image, args.sharpness)
    write_tensor(stack.scores.astype(np.float32), out / "attention.ten")
    cfg = PipelineConfig(
        image="image.ppm", features="features.ten", weights="weights.ten", attention="attention.ten",
        truth="truth.pgm", out_dir="run", classes=tuple(scene.classes),
        head_weights=tuple(COLOR_COMBINER.weights), head_bias=COLOR_COMBINER.bias,
        dilations=(1, 2, 4),
    )
    (out / "pipeline.cfg").write_text(cfg.to_text())
    _emit([("height", spec.height), ("width", spec.width), ("blobs", len(spec.blobs)), ("out_dir", out)])


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pseudorefine", description="Pseudo-label refinement from attention affinity.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cam", help="class activation maps and dual-threshold pseudo labels")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--weights", type=Path, required=True)
    p.add_argument("--classes", type=_int_list, required=True, help="comma-separated 1-based class ids")
    p.add_argument("--beta-low", type=float, default=0.35)
    p.add_argument("--beta-high", type=float, default=0.55)
    p.add_argument("--out-map", type=Path)
    p.add_argument("--out-labels", type=Path)
    p.add_argument("--topk", type=float, help="also report top-k pooled features (percent)")
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("par", help="pixel-adaptive refinement of a map")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--map", type=Path, required=True)
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--dilations", type=_int_list, default=[1, 2, 4, 8, 12, 24])
    p.add_argument("--w1", type=float, default=0.3)
    p.add_argument("--w2", type=float, default=0.3)
    p.add_argument("--w3", type=float, default=0.01)
    p.add_argument("--sigma-floor", type=float, default=1e-8)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--out-labels", type=Path, help="also threshold the refined map")
    p.add_argument("--label-mode", choices=("final", "dual"), default="final",
                   help="final: min-max normalise then --beta; dual: --beta-low/--beta-high")
    p.add_argument("--beta", type=float, default=0.45)
    p.add_argument("--beta-low", type=float, default=0.35)
    p.add_argument("--beta-high", type=float, default=0.55)
    p.set_defaults(func=cmd_par)

    p = sub.add_parser("affinity-label", help="pairwise affinity labels from a pseudo-label map")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--radius", type=int, default=8)
    p.add_argument("--height", type=int, help="target grid height (default: label height)")
    p.add_argument("--width", type=int, help="target grid width (default: label width)")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_affinity_label)

    p = sub.add_parser("aff-loss", help="affinity loss and its gradient")
    _add_affinity_source(p)
    p.add_argument("--labels", type=Path, required=True, help="affinity label codes [hw, hw]")
    p.add_argument("--out-grad", type=Path)
    p.set_defaults(func=cmd_aff_loss)

    p = sub.add_parser("rw-propagate", help="random-walk propagation of a map")
    _add_affinity_source(p)
    p.add_argument("--map", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_rw_propagate)

    p = sub.add_parser("loss", help="classification / segmentation / affinity losses and their weighted sum")
    p.add_argument("--probs", type=Path)
    p.add_argument("--targets", type=Path)
    p.add_argument("--seg-logits", type=Path)
    p.add_argument("--seg-target", type=Path)
    _add_affinity_source(p)
    p.add_argument("--aff-labels", type=Path)
    p.add_argument("--aff-loss", type=float)
    p.add_argument("--reg", type=float, default=0.0, help="externally computed regularisation loss")
    p.add_argument("--lambda1", type=float, default=0.1)
    p.add_argument("--lambda2", type=float, default=0.1)
    p.add_argument("--lambda3", type=float, default=0.01)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval-miou", help="per-class IoU and mIoU over a directory of label maps")
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--truth-dir", type=Path, required=True)
    p.add_argument("--classes", type=int, default=21)
    p.set_defaults(func=cmd_eval_miou)

    p = sub.add_parser("pipeline", help="run the full refinement pipeline")
    p.add_argument("--config", type=Path)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--dump-stages", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--affinity-hw", type=int, default=16)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seg-size", type=int, default=3)
    p.add_argument("--seg-classes", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic blob scene and matching pipeline config")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--blob", type=_parse_blob, action="append", help="top,left,height,width,r,g,b,class")
    p.add_argument("--size", type=lambda s: tuple(int(x) for x in s.lower().split("x")), default=(32, 32))
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--cam-coverage", type=float, default=0.5)
    p.add_argument("--sharpness", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = args.func(args)
    except (TensorIOError, StageError, ValueError, OSError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        print(f"error[{code}]: {exc}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
