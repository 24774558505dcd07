"""End-to-end pseudo-label refinement.

Dataflow: CAM -> PAR -> dual threshold (Y_p) -> pair labels (Y_aff) ->
attention affinity + loss -> transition matrix -> propagate the initial CAM ->
PAR -> min-max normalise -> single threshold.

Every stage output is rounded to float32, the container precision, so
feeding dumped artifacts through the per-stage CLI commands reproduces the
pipeline bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import affinity, attention, cam, par
from .evaluation import ConfusionMatrix, accumulate, miou
from .losses import LossWeights
from .tensor_io import LabelImage, read_image, read_labels, read_tensor, write_labels, write_tensor


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


def f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


# --------------------------------------------------------------------------
# stage functions shared with the CLI

def stage_cam(features, weights, classes):
    return f32(cam.generate_cam(features, weights, classes))


def stage_par(image, maps, cfg: par.ParConfig):
    return f32(par.par_refine(image, maps, cfg))


def stage_final_labels(maps, beta: float) -> LabelImage:
    return cam.threshold_single(cam.minmax_normalize(maps), beta)


def stage_affinity_label(yp, radius: int, height: int, width: int):
    lab = affinity.derive_affinity_label(yp, radius, height, width)
    return f32(lab.labels)


def stage_affinity(stack, comb):
    return f32(attention.symmetrize_combine(stack, comb))


def stage_aff_loss(a, codes):
    res = affinity.affinity_loss(a, np.asarray(codes).astype(np.uint8))
    return res, f32(res.grad)


def stage_propagate(a, maps, alpha: float):
    return f32(affinity.propagate(maps, affinity.transition_matrix(a, alpha)))


def load_stack(path, height: int, width: int) -> attention.AttentionStack:
    arr = read_tensor(path).array
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return attention.AttentionStack(arr, height, width)


# --------------------------------------------------------------------------
# config

def _floats(v):
    if isinstance(v, str):
        return tuple(float(x) for x in v.split(",") if x.strip())
    return tuple(float(x) for x in v)


def _ints(v):
    if isinstance(v, str):
        return tuple(int(x) for x in v.split(",") if x.strip())
    return tuple(int(x) for x in v)


def _bool(v):
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


_PATH_KEYS = ("image", "features", "weights", "attention", "truth", "out_dir")


@dataclass
class PipelineConfig:
    image: Path | None = None
    features: Path | None = None
    weights: Path | None = None
    attention: Path | None = None
    truth: Path | None = None
    out_dir: Path = Path("out")
    classes: tuple[int, ...] = ()
    beta: float = 0.45
    beta_low: float = 0.35
    beta_high: float = 0.55
    dilations: tuple[int, ...] = (1, 2, 4, 8, 12, 24)
    w1: float = 0.3
    w2: float = 0.3
    w3: float = 0.01
    iterations: int = 15
    sigma_floor: float = 1e-8
    radius: int = 8
    alpha: float = 2.0
    head_weights: tuple[float, ...] | None = None
    head_bias: float = 0.0
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.01
    num_classes: int | None = None
    dump_stages: bool = False

    def __post_init__(self):
        for k in _PATH_KEYS:
            v = getattr(self, k)
            if v is not None and not isinstance(v, Path):
                setattr(self, k, Path(v))
        self.classes = _ints(self.classes)
        self.dilations = _ints(self.dilations)
        if self.head_weights is not None:
            self.head_weights = _floats(self.head_weights)
            if not self.head_weights:
                self.head_weights = None
        for k in ("beta", "beta_low", "beta_high", "w1", "w2", "w3", "sigma_floor", "alpha", "head_bias",
                  "lambda1", "lambda2", "lambda3"):
            setattr(self, k, float(getattr(self, k)))
        self.iterations = int(self.iterations)
        self.radius = int(self.radius)
        if self.num_classes is not None:
            self.num_classes = int(self.num_classes)
        self.dump_stages = _bool(self.dump_stages)
        # component invariants
        cam.BackgroundThresholds(self.beta, self.beta_low, self.beta_high)
        self.par_config()
        self.loss_weights()
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")

    def par_config(self) -> par.ParConfig:
        return par.ParConfig(self.dilations, self.w1, self.w2, self.w3, self.iterations, self.sigma_floor)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def combiner(self, num_heads: int) -> attention.HeadCombiner:
        if self.head_weights is None:
            return attention.HeadCombiner.uniform(num_heads)
        return attention.HeadCombiner(np.array(self.head_weights), self.head_bias)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        """Parse a flat ``key = value`` file; ``#`` starts a comment.

        Relative paths resolve against the config file's directory.
        """
        path = Path(path)
        values = parse_kv(path.read_text())
        for k in _PATH_KEYS:
            if k in values and not Path(values[k]).is_absolute():
                values[k] = str(path.parent / values[k])
        values.update(overrides)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


# --------------------------------------------------------------------------
# driver

@dataclass
class PipelineResult:
    final: LabelImage
    stages: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)


def _require(path, stage, what):
    if path is None:
        raise StageError(stage, f"no {what} path configured")
    if not Path(path).exists():
        raise StageError(stage, f"{what} file not found: {path}")
    return path


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    stage = "load"
    try:
        image = read_image(_require(cfg.image, stage, "image"))
        features = read_tensor(_require(cfg.features, stage, "features")).array
        weights = read_tensor(_require(cfg.weights, stage, "weights")).array
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    s = {}
    report = {}
    try:
        stage = "cam"
        classes = cfg.classes or tuple(range(1, weights.shape[1] + 1))
        s["cam"] = stage_cam(features, weights, classes)
        h, w = s["cam"].shape[:2]
        if (image.height, image.width) != (h, w):
            raise ValueError(f"image is {image.height}x{image.width} but features are {h}x{w}")

        stage = "par"
        pcfg = cfg.par_config()
        s["cam_par"] = stage_par(image, s["cam"], pcfg)

        stage = "pseudo-label"
        s["pseudo_label"] = cam.threshold_dual(s["cam_par"], cfg.beta_low, cfg.beta_high)

        stage = "affinity"
        stack = load_stack(_require(cfg.attention, stage, "attention"), h, w)
        s["affinity_label"] = stage_affinity_label(s["pseudo_label"], cfg.radius, h, w)
        s["affinity"] = stage_affinity(stack, cfg.combiner(stack.num_heads))
        res, s["affinity_grad"] = stage_aff_loss(s["affinity"], s["affinity_label"])
        report.update(aff_loss=res.loss, aff_pos=res.num_positive, aff_neg=res.num_negative,
                      aff_grad_norm=float(np.linalg.norm(res.grad)))

        stage = "propagate"
        s["propagated"] = stage_propagate(s["affinity"], s["cam"], cfg.alpha)

        stage = "refine"
        s["refined"] = stage_par(image, s["propagated"], pcfg)
        final = stage_final_labels(s["refined"], cfg.beta)
        s["final"] = final
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    if cfg.truth is not None:
        truth = read_labels(cfg.truth)
        n = cfg.num_classes or int(max(weights.shape[1] + 1, truth.labels[truth.labels != 255].max(initial=0) + 1))
        initial = cam.threshold_single(s["cam"], cfg.beta)
        _, report["miou_initial"] = miou(accumulate(initial, truth, ConfusionMatrix(n)))
        _, report["miou_final"] = miou(accumulate(final, truth, ConfusionMatrix(n)))

    result = PipelineResult(final, s, report)
    write_outputs(result, cfg)
    return result


STAGE_FILES = {
    "cam": "cam.ten",
    "cam_par": "cam_par.ten",
    "pseudo_label": "pseudo_label.pgm",
    "affinity_label": "affinity_label.ten",
    "affinity": "affinity.ten",
    "affinity_grad": "affinity_grad.ten",
    "propagated": "propagated.ten",
    "refined": "refined.ten",
}


def format_report(report: dict) -> str:
    return "\n".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in report.items()) + "\n"


def write_outputs(result: PipelineResult, cfg: PipelineConfig) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(result.final, out / "final.pgm")
    (out / "report.txt").write_text(format_report(result.report))
    if not cfg.dump_stages:
        return
    for key, name in STAGE_FILES.items():
        v = result.stages[key]
        if isinstance(v, LabelImage):
            write_labels(v, out / name)
        else:
            write_tensor(v, out / name)
