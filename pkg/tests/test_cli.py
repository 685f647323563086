"""End-to-end command-line runs against temporary corpora."""

import json

import numpy as np
import pytest

from dcfmix import ClassSpec, CorpusManifest, SceneSpec, load_mask
from dcfmix.cli import main


def synth(out, role, n=6, extra=()):
    assert main(["synth", "--desk", "--role", role, "--n", str(n),
                 "--out", str(out), *extra]) == 0
    return out / "manifest.json"


def test_full_pipeline(tmp_path):
    src = synth(tmp_path / "src", "source")
    tgt = synth(tmp_path / "tgt", "target")

    src_manifest = CorpusManifest.load(src)
    assert len(src_manifest.entries) == 6
    assert (tmp_path / "src" / "scene_spec.json").exists()

    stats_path = tmp_path / "stats.json"
    assert main(["stats", "--manifest", str(src), "--n-bins", "13",
                 "--d-max", "65", "--out", str(stats_path)]) == 0
    stats = json.loads(stats_path.read_text())
    assert len(stats["edges"]) == 14
    sky = stats["class_names"].index("sky")
    assert stats["support"][sky] > 0
    assert sum(stats["densities"][sky]) == pytest.approx(1.0)

    mix_dir = tmp_path / "mixed"
    assert main(["mix", "--source", str(src), "--target", str(tgt), "--n", "4",
                 "--seed", "5", "--overlay", "--out", str(mix_dir)]) == 0
    mixed = CorpusManifest.load(mix_dir / "manifest.json")
    assert len(mixed.entries) == 4
    assert json.loads((mix_dir / "pairs.json").read_text())
    for entry in mixed.entries:
        assert (mix_dir / f"{entry.id}_mask.png").exists()
        assert (mix_dir / f"{entry.id}_overlay.png").exists()

    filt_dir = tmp_path / "filtered"
    assert main(["filter", "--source", str(src), "--target", str(tgt),
                 "--n", "4", "--seed", "5", "--stuff", "sky,building,road",
                 "--out", str(filt_dir)]) == 0
    for entry in CorpusManifest.load(filt_dir / "manifest.json").entries:
        naive = load_mask(filt_dir / f"{entry.id}_mask_naive.png")
        kept = load_mask(filt_dir / f"{entry.id}_mask.png")
        assert np.all(naive.data[kept.data])  # filtering only removes
        report = json.loads((filt_dir / f"{entry.id}_report.json").read_text())
        assert report["removed_total"] <= report["pasted_total"]
        assert set(report["per_class"]) <= set(src_manifest.class_names)

    run_dir = tmp_path / "run"
    assert main(["train", "--source", str(src), "--target", str(tgt),
                 "--iterations", "8", "--warmup", "2", "--dcf",
                 "--stuff", "sky,building,road", "--seed", "0",
                 "--out", str(run_dir)]) == 0
    assert (run_dir / "model.npz").exists()
    log_lines = (run_dir / "train_log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == 8
    resolved = json.loads((run_dir / "config.json").read_text())
    assert resolved["dcf_enabled"] is True
    assert resolved["warmup_iter"] == 2
    assert len(resolved["thresholds"]) == 6

    eval_path = tmp_path / "eval.json"
    assert main(["eval", "--model", str(run_dir / "model.npz"),
                 "--manifest", str(tgt), "--out", str(eval_path)]) == 0
    scores = json.loads(eval_path.read_text())
    assert set(scores["iou"]) == set(src_manifest.class_names)
    assert 0.0 <= scores["miou"] <= 1.0

    rep_dir = tmp_path / "report"
    assert main(["report", "--log", str(run_dir / "train_log.jsonl"),
                 "--eval", str(eval_path), "--mix-dir", str(mix_dir),
                 "--max-overlays", "2", "--out", str(rep_dir)]) == 0
    text = (rep_dir / "report.md").read_text()
    assert "mean" in text and "IoU" in text
    assert len(list(rep_dir.glob("*_overlay.png"))) == 2


def test_synth_from_spec_file(tmp_path):
    spec = SceneSpec(
        width=16, height=16,
        classes=(
            ClassSpec("near", "stuff", 8.0, 1.0, 5.0, 12.0, 0.5, (10, 10, 10)),
            ClassSpec("far", "stuff", 40.0, 3.0, 30.0, 50.0, 0.4, (200, 200, 200)),
        ),
        seed=11)
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec.to_json()))
    out = tmp_path / "corpus"
    assert main(["synth", "--spec", str(spec_path), "--role", "target",
                 "--n", "3", "--out", str(out)]) == 0
    manifest = CorpusManifest.load(out / "manifest.json")
    assert manifest.classes == 2
    assert manifest.class_names == ["near", "far"]


def test_synth_requires_a_spec_source(tmp_path):
    with pytest.raises(SystemExit):
        main(["synth", "--role", "source", "--n", "1", "--out", str(tmp_path)])


def test_start_index_continues_the_stream(tmp_path):
    a = synth(tmp_path / "a", "source", n=4)
    b = synth(tmp_path / "b", "source", n=2, extra=("--start-index", "2"))
    tail = [e.id for e in CorpusManifest.load(a).entries[2:]]
    cont = [e.id for e in CorpusManifest.load(b).entries]
    assert tail == cont


def test_config_file_supplies_train_defaults(tmp_path):
    src = synth(tmp_path / "src", "source", n=3)
    tgt = synth(tmp_path / "tgt", "target", n=3)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "iterations": 4, "n_bins": 8, "lr": 0.25,
        "stuff_classes": ["sky"], "tau_stuff": 0.4,
    }))
    run = tmp_path / "run"
    assert main(["train", "--source", str(src), "--target", str(tgt),
                 "--config", str(cfg_path), "--iterations", "5",
                 "--out", str(run)]) == 0
    resolved = json.loads((run / "config.json").read_text())
    assert resolved["iterations"] == 5  # flag beats config file
    assert resolved["n_bins"] == 8
    assert resolved["lr"] == 0.25
    assert resolved["stuff_classes"] == ["sky"]
    assert max(resolved["thresholds"]) == pytest.approx(0.4)
