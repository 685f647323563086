"""Command-line front end: corpus generation, depth stats, mixing, filtering,
self-training, evaluation, and report rendering.

Every command works on manifest-indexed corpora of PNG triplets, so the whole
pipeline can be driven from a shell without writing any Python.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .dcf import STUFF_TAU, THING_TAU, apply_filtered_mask, dcf_filter, default_thresholds
from .depth_stats import ClassDepthHistogram, class_depth_histogram, histogram_to_json, make_binning
from .harness import ToyModel, TrainConfig, evaluate, train, write_log, read_log
from .mixer import build_mask, composite, select_classes
from .scene import (
    CorpusManifest,
    SceneSample,
    load_mask,
    load_sample,
    overlay_mask,
    save_mask,
    save_sample,
)
from .synth import desk_scene_spec, generate, load_spec

# DCF-facing commands default to the coarse binning the filter is calibrated
# for; `stats` defaults to the fine-grained general-purpose binning.
FILTER_BINS = 16
STATS_BINS = 64
D_MAX = 80.0


def _load_corpus(path) -> tuple[CorpusManifest, list[SceneSample]]:
    manifest = CorpusManifest.load(path)
    samples = [load_sample(e, manifest.classes) for e in manifest.entries]
    return manifest, samples


def _write_corpus(samples, role, classes, class_names, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [save_sample(s, out_dir) for s in samples]
    manifest = CorpusManifest(
        role=role, classes=classes, class_names=list(class_names), entries=entries
    )
    path = out_dir / "manifest.json"
    manifest.save(path)
    return path


def _rename(sample: SceneSample, new_id: str) -> SceneSample:
    return SceneSample(
        id=new_id, image=sample.image, labels=sample.labels, depth=sample.depth
    )


def _save_image(image, path: Path) -> None:
    PILImage.fromarray(np.asarray(image.data)).save(path)


def cmd_synth(args) -> int:
    spec = desk_scene_spec() if args.desk else load_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    samples = generate(spec, args.role, args.n, args.start_index)
    out = Path(args.out)
    path = _write_corpus(samples, args.role, len(spec.classes), spec.class_names, out)
    (out / "scene_spec.json").write_text(json.dumps(spec.to_json(), indent=1))
    print(f"wrote {len(samples)} {args.role} samples to {path}")
    return 0


def cmd_stats(args) -> int:
    manifest, samples = _load_corpus(args.manifest)
    binning = make_binning(args.n_bins, args.d_max, args.scale)
    counts = np.zeros((manifest.classes, binning.n_bins))
    support = np.zeros(manifest.classes, dtype=np.int64)
    for s in samples:
        h = class_depth_histogram(s.labels, s.depth, binning)
        counts += h.densities * h.support[:, None]
        support += h.support
    densities = np.zeros_like(counts)
    nz = support > 0
    densities[nz] = counts[nz] / support[nz, None]
    agg = ClassDepthHistogram(densities=densities, support=support, binning=binning)
    payload = histogram_to_json(agg, manifest.class_names)
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote per-class depth stats for {len(samples)} samples to {args.out}")
    else:
        print(text)
    return 0


def _draw_pairs(rng, sources, targets, n):
    for i in range(n):
        s = sources[int(rng.integers(len(sources)))]
        t = targets[int(rng.integers(len(targets)))]
        yield i, s, t, int(rng.integers(2**31))


def cmd_mix(args) -> int:
    src_m, sources = _load_corpus(args.source)
    tgt_m, targets = _load_corpus(args.target)
    if src_m.classes != tgt_m.classes:
        print("error: source and target corpora disagree on class count", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    mixed_samples, pairs = [], []
    for i, s, t, mix_seed in _draw_pairs(rng, sources, targets, args.n):
        selection = select_classes(s.labels, mix_seed)
        mask = build_mask(s.labels, selection)
        mixed = _rename(composite(s, t, mask), f"mix-{i:04d}")
        mixed_samples.append(mixed)
        save_mask(mask, out / f"{mixed.id}_mask.png")
        if args.overlay:
            _save_image(overlay_mask(mixed.image, mask), out / f"{mixed.id}_overlay.png")
        pairs.append(
            {
                "id": mixed.id,
                "source": s.id,
                "target": t.id,
                "chosen_classes": sorted(selection.chosen),
                "seed": mix_seed,
            }
        )
    _write_corpus(mixed_samples, "target", src_m.classes, src_m.class_names, out)
    (out / "pairs.json").write_text(json.dumps(pairs, indent=1))
    print(f"wrote {len(mixed_samples)} mixed samples to {out}")
    return 0


def _thresholds_from(args, class_names):
    cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    stuff = set(cfg.get("stuff_classes", []))
    if args.stuff:
        stuff |= {s for s in args.stuff.split(",") if s}
    return (
        default_thresholds(
            class_names,
            stuff,
            stuff_tau=cfg.get("tau_stuff", args.tau_stuff),
            thing_tau=cfg.get("tau_thing", args.tau_thing),
            overrides=cfg.get("threshold_overrides"),
        ),
        cfg,
    )


def cmd_filter(args) -> int:
    src_m, sources = _load_corpus(args.source)
    tgt_m, targets = _load_corpus(args.target)
    if src_m.classes != tgt_m.classes:
        print("error: source and target corpora disagree on class count", file=sys.stderr)
        return 2
    thresholds, cfg = _thresholds_from(args, src_m.class_names)
    binning = make_binning(
        cfg.get("n_bins", args.n_bins), cfg.get("d_max", args.d_max),
        cfg.get("scale", args.scale),
    )
    mode = cfg.get("mode", args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    filtered_samples = []
    pasted = removed = 0
    for i, s, t, mix_seed in _draw_pairs(rng, sources, targets, args.n):
        selection = select_classes(s.labels, mix_seed)
        mask = build_mask(s.labels, selection)
        mask_f, report = dcf_filter(t, s, mask, binning, thresholds, mode)
        sample = _rename(apply_filtered_mask(s, t, mask_f), f"filtered-{i:04d}")
        filtered_samples.append(sample)
        save_mask(mask, out / f"{sample.id}_mask_naive.png")
        save_mask(mask_f, out / f"{sample.id}_mask.png")
        payload = report.to_json(src_m.class_names)
        payload.update({"source": s.id, "target": t.id, "seed": mix_seed})
        (out / f"{sample.id}_report.json").write_text(json.dumps(payload, indent=1))
        pasted += report.pasted_total
        removed += report.removed_total
    _write_corpus(filtered_samples, "target", src_m.classes, src_m.class_names, out)
    print(
        f"wrote {len(filtered_samples)} filtered samples to {out} "
        f"({removed}/{pasted} pasted pixels removed)"
    )
    return 0


def cmd_train(args) -> int:
    src_m, sources = _load_corpus(args.source)
    tgt_m, targets = _load_corpus(args.target)
    cfg = json.loads(Path(args.config).read_text()) if args.config else {}

    def pick(flag, key, fallback):
        if flag is not None:
            return flag
        return cfg.get(key, fallback)

    stuff = set(cfg.get("stuff_classes", []))
    if args.stuff:
        stuff |= {s for s in args.stuff.split(",") if s}
    binning = make_binning(
        pick(args.n_bins, "n_bins", FILTER_BINS),
        pick(args.d_max, "d_max", D_MAX),
        pick(args.scale, "scale", "linear"),
    )
    thresholds = default_thresholds(
        src_m.class_names,
        stuff,
        stuff_tau=pick(args.tau_stuff, "tau_stuff", STUFF_TAU),
        thing_tau=pick(args.tau_thing, "tau_thing", THING_TAU),
        overrides=cfg.get("threshold_overrides"),
    )
    config = TrainConfig(
        iterations=pick(args.iterations, "iterations", 2000),
        batch_size=pick(args.batch_size, "batch_size", 1),
        lr=pick(args.lr, "lr", 0.5),
        warmup_iter=pick(args.warmup, "warmup_iter", None),
        pseudo_threshold=pick(args.pseudo_threshold, "pseudo_threshold", 0.968),
        lambda_depth=pick(args.lambda_depth, "lambda_depth", 1e-3),
        dcf_enabled=pick(args.dcf, "dcf_enabled", False),
        dcf_mode=pick(args.mode, "dcf_mode", "whole_class"),
        thresholds=thresholds,
        binning=binning,
        seed=pick(args.seed, "seed", 0),
        confidence_weighting=pick(args.weighting, "confidence_weighting", "hard"),
        use_afo=pick(args.use_afo or None, "use_afo", False),
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    model, log = train(config, sources, targets)
    elapsed = time.perf_counter() - started
    model.save(out / "model.npz")
    write_log(log, out / "train_log.jsonl")
    resolved = {
        "iterations": config.iterations,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "warmup_iter": config.warmup_iter,
        "pseudo_threshold": config.pseudo_threshold,
        "lambda_depth": config.lambda_depth,
        "dcf_enabled": config.dcf_enabled,
        "dcf_mode": config.dcf_mode,
        "n_bins": binning.n_bins,
        "d_max": binning.d_max,
        "scale": binning.scale,
        "seed": config.seed,
        "confidence_weighting": config.confidence_weighting,
        "use_afo": config.use_afo,
        "stuff_classes": sorted(stuff),
        "thresholds": thresholds.values.tolist(),
    }
    (out / "config.json").write_text(json.dumps(resolved, indent=1))
    print(
        f"trained {config.iterations} steps in {elapsed:.1f}s "
        f"(final loss {log[-1]['total']:.4f}), model at {out / 'model.npz'}"
    )
    return 0


def cmd_eval(args) -> int:
    model = ToyModel.load(args.model)
    manifest, samples = _load_corpus(args.manifest)
    result = evaluate(model, samples)
    payload = result.to_json(manifest.class_names)
    for name, iou in payload["iou"].items():
        shown = "  (no ground truth)" if iou is None else f"{iou:.4f}"
        print(f"  {name:<12s} {shown}")
    print(f"mIoU {result.miou:.4f} over {len(samples)} samples")
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1))
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# Self-training run report", ""]
    if args.log:
        log = read_log(args.log)
        active = [e for e in log if e["dcf_active"]]
        removed = sum(e["removed"] for e in active)
        pasted = sum(e["pasted"] for e in active)
        lines += [
            "## Training",
            "",
            f"- steps: {len(log)}",
            f"- first/final total loss: {log[0]['total']:.4f} / {log[-1]['total']:.4f}",
            f"- filter active from step: "
            f"{active[0]['step'] if active else 'never'}",
            f"- pasted pixels removed while active: {removed} of {pasted}",
            "",
        ]
    if args.eval:
        payload = json.loads(Path(args.eval).read_text())
        lines += ["## Evaluation", "", "| class | IoU |", "| --- | --- |"]
        for name, iou in payload["iou"].items():
            lines.append(f"| {name} | {'-' if iou is None else f'{iou:.4f}'} |")
        lines += [f"| **mean** | **{payload['miou']:.4f}** |", ""]
    if args.mix_dir:
        mix_dir = Path(args.mix_dir)
        manifest = CorpusManifest.load(mix_dir / "manifest.json")
        lines += ["## Mask overlays", ""]
        for entry in manifest.entries[: args.max_overlays]:
            sample = load_sample(entry, manifest.classes)
            mask = load_mask(mix_dir / f"{entry.id}_mask.png")
            name = f"{entry.id}_overlay.png"
            _save_image(overlay_mask(sample.image, mask), out / name)
            lines.append(f"![{entry.id}]({name})")
        lines.append("")
    (out / "report.md").write_text("\n".join(lines))
    print(f"wrote report to {out / 'report.md'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcfmix",
        description="Depth-guided contextual filtering toolkit for class-mix "
        "self-training on synthetic two-domain corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    spec_src = p.add_mutually_exclusive_group(required=True)
    spec_src.add_argument("--spec", help="scene spec JSON")
    spec_src.add_argument("--desk", action="store_true", help="use the built-in six-class spec")
    p.add_argument("--role", choices=("source", "target"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--start-index", type=int, default=0)
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="per-class depth histogram of a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-bins", type=int, default=STATS_BINS)
    p.add_argument("--d-max", type=float, default=D_MAX)
    p.add_argument("--scale", choices=("linear", "log"), default="linear")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mix", help="naive class-mix of source onto target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overlay", action="store_true", help="also write mask overlays")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("filter", help="depth-filtered class-mix of source onto target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("whole_class", "per_bin"), default="whole_class")
    p.add_argument("--n-bins", type=int, default=FILTER_BINS)
    p.add_argument("--d-max", type=float, default=D_MAX)
    p.add_argument("--scale", choices=("linear", "log"), default="linear")
    p.add_argument("--stuff", default="", help="comma-separated stuff class names")
    p.add_argument("--tau-stuff", type=float, default=STUFF_TAU)
    p.add_argument("--tau-thing", type=float, default=THING_TAU)
    p.add_argument("--config", help="JSON overriding binning/threshold settings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="run the self-training loop")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config", help="JSON with any TrainConfig fields")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--pseudo-threshold", type=float)
    p.add_argument("--lambda-depth", type=float)
    p.add_argument("--dcf", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--mode", choices=("whole_class", "per_bin"))
    p.add_argument("--n-bins", type=int)
    p.add_argument("--d-max", type=float)
    p.add_argument("--scale", choices=("linear", "log"))
    p.add_argument("--seed", type=int)
    p.add_argument("--weighting", choices=("hard", "proportion"))
    p.add_argument("--use-afo", action="store_true")
    p.add_argument("--stuff", default="", help="comma-separated stuff class names")
    p.add_argument("--tau-stuff", type=float)
    p.add_argument("--tau-thing", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class IoU of a model on a labeled corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="markdown summary with mask overlays")
    p.add_argument("--log", help="training log (JSON lines)")
    p.add_argument("--eval", help="evaluation JSON from `eval --out`")
    p.add_argument("--mix-dir", help="output directory of `mix` or `filter`")
    p.add_argument("--max-overlays", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
