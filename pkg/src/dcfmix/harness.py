"""Desk-scale self-training pipeline around the depth-guided filter.

A per-pixel linear model over eight handcrafted image features stands in for
the segmentation network: two independent classification heads (so the full
five-term objective is exercised) plus a scalar depth-regression head. Each
training step draws one labeled source scene and one unlabeled target scene,
pseudo-labels the target, class-mixes source onto target, optionally filters
the paste with the depth-guided filter (after a warmup), and applies plain
SGD with analytic gradients. Everything is deterministic under the config
seed; the per-step log is line-for-line reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from . import afo
from .dcf import THING_TAU, ThresholdTable, dcf_filter, default_thresholds
from .depth_stats import DepthBinning, make_binning
from .errors import ConfigError, IoFailure
from .losses import LossValue, berhu, cross_entropy, softmax, total_loss
from .mixer import build_mask, composite, select_classes
from .scene import IGNORE, LabelMap, SceneSample

N_FEATURES = 8
FEATURE_NAMES = (
    "red",
    "green",
    "blue",
    "x_norm",
    "y_norm",
    "local_mean",
    "local_std",
    "gray",
)
HEADS = ("hr", "vis")
WEIGHTINGS = ("hard", "proportion")


def extract_features(sample: SceneSample) -> np.ndarray:
    """Handcrafted (8, H, W) per-pixel features in roughly [0, 1].

    RGB, normalized column/row position, 3x3 local gray mean and deviation,
    and gray intensity. Position features let a linear model express the
    depth-correlated vertical layout of the synthetic scenes.
    """
    img = sample.image.data.astype(np.float64) / 255.0
    h, w = img.shape[:2]
    gray = img.mean(axis=2)
    x = np.broadcast_to(np.linspace(0.0, 1.0, w), (h, w))
    y = np.broadcast_to(np.linspace(0.0, 1.0, h)[:, None], (h, w))
    local_mean = uniform_filter(gray, size=3, mode="nearest")
    local_sq = uniform_filter(gray * gray, size=3, mode="nearest")
    local_std = np.sqrt(np.maximum(local_sq - local_mean * local_mean, 0.0))
    return np.stack(
        [img[..., 0], img[..., 1], img[..., 2], x, y, local_mean, local_std, gray]
    )


@dataclass(eq=False)
class ToyModel:
    """Linear per-pixel heads over the handcrafted features.

    Two class heads share nothing but the features; `hr` doubles as the
    pseudo-labeler and the evaluation head.
    """

    hr_w: np.ndarray
    hr_b: np.ndarray
    vis_w: np.ndarray
    vis_b: np.ndarray
    depth_w: np.ndarray
    depth_b: float

    def __post_init__(self):
        for name in ("hr_w", "hr_b", "vis_w", "vis_b", "depth_w"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        self.depth_b = float(self.depth_b)
        if self.hr_w.shape != self.vis_w.shape or self.hr_w.shape[1] != N_FEATURES:
            raise ConfigError("class heads must be (C, 8) with matching shapes")
        if self.depth_w.shape != (N_FEATURES,):
            raise ConfigError("depth head must have 8 weights")

    @property
    def classes(self) -> int:
        return self.hr_w.shape[0]

    @classmethod
    def init(cls, classes: int, seed: int = 0, scale: float = 0.01) -> "ToyModel":
        rng = np.random.default_rng([seed, 0xD0])
        return cls(
            hr_w=rng.normal(0.0, scale, (classes, N_FEATURES)),
            hr_b=np.zeros(classes),
            vis_w=rng.normal(0.0, scale, (classes, N_FEATURES)),
            vis_b=np.zeros(classes),
            depth_w=rng.normal(0.0, scale, N_FEATURES),
            depth_b=0.0,
        )

    def logits(self, feats: np.ndarray, head: str) -> np.ndarray:
        w, b = (self.hr_w, self.hr_b) if head == "hr" else (self.vis_w, self.vis_b)
        c = w.shape[0]
        flat = feats.reshape(N_FEATURES, -1)
        return (w @ flat + b[:, None]).reshape(c, *feats.shape[1:])

    def predict_depth(self, feats: np.ndarray) -> np.ndarray:
        flat = feats.reshape(N_FEATURES, -1)
        return (self.depth_w @ flat + self.depth_b).reshape(feats.shape[1:])

    def save(self, path) -> None:
        try:
            np.savez(
                path,
                hr_w=self.hr_w,
                hr_b=self.hr_b,
                vis_w=self.vis_w,
                vis_b=self.vis_b,
                depth_w=self.depth_w,
                depth_b=np.float64(self.depth_b),
            )
        except OSError as exc:
            raise IoFailure(f"cannot write model to {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ToyModel":
        try:
            with np.load(path) as data:
                return cls(
                    hr_w=data["hr_w"],
                    hr_b=data["hr_b"],
                    vis_w=data["vis_w"],
                    vis_b=data["vis_b"],
                    depth_w=data["depth_w"],
                    depth_b=float(data["depth_b"]),
                )
        except (OSError, KeyError) as exc:
            raise IoFailure(f"cannot read model from {path}: {exc}") from exc


DEFAULT_PSEUDO_THRESHOLD = 0.968
WARMUP_FRACTION = 0.25


def _default_binning() -> DepthBinning:
    # 16 bins over 80 m: coarse enough that a 30 m class shift concentrates
    # the density difference instead of smearing it across many fine bins
    return make_binning(16, 80.0, "linear")


@dataclass
class TrainConfig:
    """Hyperparameters for one self-training run."""

    iterations: int
    batch_size: int = 1
    lr: float = 0.5
    warmup_iter: int | None = None
    pseudo_threshold: float = DEFAULT_PSEUDO_THRESHOLD
    lambda_depth: float = 1e-3
    dcf_enabled: bool = False
    dcf_mode: str = "whole_class"
    thresholds: ThresholdTable | None = None
    binning: DepthBinning = field(default_factory=_default_binning)
    seed: int = 0
    confidence_weighting: str = "hard"
    use_afo: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.warmup_iter is None:
            # scaled-down analogue of a 10k warmup inside a 40k-step schedule
            self.warmup_iter = round(WARMUP_FRACTION * self.iterations)
        if not 0 <= self.warmup_iter <= self.iterations:
            raise ConfigError("need 0 <= warmup_iter <= iterations")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.pseudo_threshold <= 1:
            raise ConfigError("pseudo_threshold must be in (0, 1]")
        if self.confidence_weighting not in WEIGHTINGS:
            raise ConfigError(f"confidence_weighting must be one of {WEIGHTINGS}")
        if self.dcf_mode not in ("whole_class", "per_bin"):
            raise ConfigError("dcf_mode must be whole_class or per_bin")


def pseudo_label(
    model: ToyModel,
    target: SceneSample,
    threshold: float = DEFAULT_PSEUDO_THRESHOLD,
    feats: np.ndarray | None = None,
) -> tuple[LabelMap, np.ndarray]:
    """Argmax labels plus a confidence weight map (1 where max prob >= t).

    Low-confidence pixels keep their argmax label but carry zero weight.
    """
    if feats is None:
        feats = extract_features(target)
    probs = softmax(model.logits(feats, "hr")).probs
    labels = probs.argmax(axis=0).astype(np.uint8)
    weights = (probs.max(axis=0) >= threshold).astype(np.float64)
    return LabelMap(labels, classes=model.classes), weights


def _ce_grad(probs, labels_data, pixel_weights):
    """d(masked mean CE)/d(logits), shape (C, H, W)."""
    valid = labels_data != IGNORE
    n = int(valid.sum())
    g = np.zeros_like(probs)
    if n == 0:
        return g
    h, w = np.nonzero(valid)
    lab = labels_data[h, w].astype(np.int64)
    g[:, h, w] = probs[:, h, w]
    g[lab, h, w] -= 1.0
    if pixel_weights is not None:
        g[:, h, w] *= pixel_weights[h, w]
    return g / n


def _berhu_grad(pred, true):
    """d(berhu)/d(pred); the cutoff is treated as a constant per call."""
    valid = true > 0
    n = int(valid.sum())
    g = np.zeros_like(pred)
    if n == 0:
        return g
    e = pred[valid] - true[valid]
    cutoff = 0.2 * float(np.abs(e).max())
    if cutoff == 0.0:
        return g
    g[valid] = np.where(np.abs(e) <= cutoff, np.sign(e), e / cutoff) / n
    return g


def _head_grads(dlogits, feats):
    flat_g = dlogits.reshape(dlogits.shape[0], -1)
    flat_f = feats.reshape(N_FEATURES, -1)
    return flat_g @ flat_f.T, flat_g.sum(axis=1)


class _FeatureBank:
    """Per-sample feature cache; optionally routes through the fusion gate."""

    def __init__(self, use_afo: bool, seed: int):
        self.cache: dict[str, np.ndarray] = {}
        self.params = (
            afo.init_params(N_FEATURES // 2, n_blocks=1, seed=seed) if use_afo else None
        )

    def transform(self, feats: np.ndarray) -> np.ndarray:
        if self.params is None:
            return feats
        half = N_FEATURES // 2
        vis, aux = afo.multimodal_communicate(
            afo.FeatureMap(feats[:half]),
            afo.FeatureMap(feats[half:]),
            self.params,
            iterations=1,
        )
        return np.concatenate([vis.data, aux.data], axis=0)

    def get(self, sample: SceneSample) -> np.ndarray:
        feats = self.cache.get(sample.id)
        if feats is None:
            feats = self.transform(extract_features(sample))
            self.cache[sample.id] = feats
        return feats


def train(
    config: TrainConfig,
    source_samples: list[SceneSample],
    target_samples: list[SceneSample],
    class_names: list[str] | None = None,
    stuff_classes: set[str] | None = None,
) -> tuple[ToyModel, list[dict]]:
    """Self-training loop; returns the trained model and the per-step log.

    The RNG consumption per step is identical whether or not the filter is
    enabled, so a filtered run and a naive run share their trajectory exactly
    until the warmup ends.
    """
    if not source_samples or not target_samples:
        raise ConfigError("both corpora must be non-empty")
    c = source_samples[0].labels.classes
    for s in source_samples + target_samples:
        if s.labels.classes != c:
            raise ConfigError("all samples must agree on the class count")
    if config.thresholds is not None:
        thresholds = config.thresholds
    elif class_names is not None and stuff_classes is not None:
        thresholds = default_thresholds(class_names, stuff_classes)
    else:
        thresholds = ThresholdTable.uniform(c, THING_TAU)
    if thresholds.values.shape[0] != c:
        raise ConfigError("threshold table does not cover the class count")

    model = ToyModel.init(c, seed=config.seed)
    bank = _FeatureBank(config.use_afo, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    log: list[dict] = []

    for step in range(1, config.iterations + 1):
        dcf_active = config.dcf_enabled and step > config.warmup_iter
        grads = {
            "hr_w": np.zeros_like(model.hr_w),
            "hr_b": np.zeros_like(model.hr_b),
            "vis_w": np.zeros_like(model.vis_w),
            "vis_b": np.zeros_like(model.vis_b),
            "depth_w": np.zeros_like(model.depth_w),
            "depth_b": 0.0,
        }
        terms = {k: 0.0 for k in ("l_hr_s", "l_vis_s", "l_depth_s", "l_hr_f", "l_vis_f")}
        step_total = 0.0
        pasted = removed = 0

        for _ in range(config.batch_size):
            src = source_samples[int(rng.integers(len(source_samples)))]
            tgt = target_samples[int(rng.integers(len(target_samples)))]
            mix_seed = int(rng.integers(2**31))

            f_src = bank.get(src)
            probs_hr_s = softmax(model.logits(f_src, "hr"))
            probs_vis_s = softmax(model.logits(f_src, "vis"))
            depth_pred_s = model.predict_depth(f_src)
            l_hr_s = cross_entropy(probs_hr_s, src.labels)
            l_vis_s = cross_entropy(probs_vis_s, src.labels)
            l_depth_s = berhu(depth_pred_s, src.depth.data)

            f_tgt = bank.get(tgt)
            labels_pl, conf = pseudo_label(
                model, tgt, config.pseudo_threshold, feats=f_tgt
            )
            tgt_pl = SceneSample(
                id=tgt.id, image=tgt.image, labels=labels_pl, depth=tgt.depth
            )

            selection = select_classes(src.labels, seed=mix_seed)
            mask = build_mask(src.labels, selection)
            if dcf_active:
                mask_used, report = dcf_filter(
                    tgt_pl, src, mask, config.binning, thresholds, config.dcf_mode
                )
                pasted += report.pasted_total
                removed += report.removed_total
            else:
                mask_used = mask
                pasted += mask.count()
            mixed = composite(src, tgt_pl, mask_used)

            if config.confidence_weighting == "hard":
                w_target = conf
            else:
                w_target = np.full_like(conf, conf.mean())
            w_mixed = np.where(mask_used.data, 1.0, w_target)

            f_mix = bank.transform(extract_features(mixed))
            probs_hr_f = softmax(model.logits(f_mix, "hr"))
            probs_vis_f = softmax(model.logits(f_mix, "vis"))
            l_hr_f = cross_entropy(probs_hr_f, mixed.labels, w_mixed)
            l_vis_f = cross_entropy(probs_vis_f, mixed.labels, w_mixed)

            total = total_loss(
                l_hr_s, l_vis_s, l_depth_s, l_hr_f, l_vis_f, config.lambda_depth
            )

            dhrs = _ce_grad(probs_hr_s.probs, src.labels.data, None)
            dw, db = _head_grads(dhrs, f_src)
            grads["hr_w"] += dw
            grads["hr_b"] += db
            dvis = _ce_grad(probs_vis_s.probs, src.labels.data, None)
            dw, db = _head_grads(dvis, f_src)
            grads["vis_w"] += dw
            grads["vis_b"] += db
            dhrf = _ce_grad(probs_hr_f.probs, mixed.labels.data, w_mixed)
            dw, db = _head_grads(dhrf, f_mix)
            grads["hr_w"] += dw
            grads["hr_b"] += db
            dvisf = _ce_grad(probs_vis_f.probs, mixed.labels.data, w_mixed)
            dw, db = _head_grads(dvisf, f_mix)
            grads["vis_w"] += dw
            grads["vis_b"] += db
            ddep = _berhu_grad(depth_pred_s, src.depth.data) * config.lambda_depth
            grads["depth_w"] += (
                ddep.reshape(-1) @ f_src.reshape(N_FEATURES, -1).T
            )
            grads["depth_b"] += float(ddep.sum())

            for key, lv in (
                ("l_hr_s", l_hr_s),
                ("l_vis_s", l_vis_s),
                ("l_depth_s", l_depth_s),
                ("l_hr_f", l_hr_f),
                ("l_vis_f", l_vis_f),
            ):
                terms[key] += lv.value
            step_total += total.value

        inv = 1.0 / config.batch_size
        model.hr_w -= config.lr * grads["hr_w"] * inv
        model.hr_b -= config.lr * grads["hr_b"] * inv
        model.vis_w -= config.lr * grads["vis_w"] * inv
        model.vis_b -= config.lr * grads["vis_b"] * inv
        model.depth_w -= config.lr * grads["depth_w"] * inv
        model.depth_b -= config.lr * grads["depth_b"] * inv

        entry = {
            "step": step,
            "dcf_active": dcf_active,
            "pasted": int(pasted),
            "removed": int(removed),
            "total": step_total * inv,
        }
        entry.update({k: v * inv for k, v in terms.items()})
        log.append(entry)

    return model, log


@dataclass(eq=False)
class EvalResult:
    """Per-class IoU (NaN where a class has no ground truth), mIoU, confusion."""

    iou: np.ndarray
    miou: float
    confusion: np.ndarray

    def to_json(self, class_names: list[str] | None = None) -> dict:
        names = class_names or [str(i) for i in range(self.iou.shape[0])]
        per_class = {
            name: (None if np.isnan(v) else float(v))
            for name, v in zip(names, self.iou)
        }
        return {
            "miou": self.miou,
            "iou": per_class,
            "confusion": self.confusion.tolist(),
        }


def evaluate(model: ToyModel, samples: list[SceneSample]) -> EvalResult:
    """Confusion-matrix IoU of the hr head against ground-truth labels.

    IoU_i = TP / (TP + FP + FN); classes without any ground-truth pixel are
    reported as NaN and excluded from the mean.
    """
    c = model.classes
    confusion = np.zeros((c, c), dtype=np.int64)
    for sample in samples:
        feats = extract_features(sample)
        pred = model.logits(feats, "hr").argmax(axis=0)
        gt = sample.labels.data
        valid = gt != IGNORE
        confusion += np.bincount(
            gt[valid].astype(np.int64) * c + pred[valid], minlength=c * c
        ).reshape(c, c)
    tp = np.diag(confusion).astype(np.float64)
    fn = confusion.sum(axis=1) - tp
    fp = confusion.sum(axis=0) - tp
    union = tp + fp + fn
    supported = confusion.sum(axis=1) > 0
    iou = np.full(c, np.nan)
    np.divide(tp, union, out=iou, where=union > 0)
    iou[~supported] = np.nan
    miou = float(iou[supported].mean()) if supported.any() else 0.0
    return EvalResult(iou=iou, miou=miou, confusion=confusion)


def write_log(log: list[dict], path) -> None:
    """Training log as JSON lines, one step per line."""
    path = Path(path)
    try:
        with path.open("w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write log to {path}: {exc}") from exc


def read_log(path) -> list[dict]:
    try:
        with Path(path).open() as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read log from {path}: {exc}") from exc
