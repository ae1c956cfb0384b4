"""Batch command-line front-end for the pipeline.

Exit codes: 0 success, 2 invalid config, 3 data error, 4 numeric failure.
Failures emit a machine-readable JSON object on stderr. Log level comes from
the ADCUE_LOG environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import audio_prep as ap
from . import embedding_store as es
from . import feature_head as fh
from . import nn_core as nn
from . import task_keywords as tk
from . import train_eval as te

log = logging.getLogger("adcue.cli")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_SECTIONS = {"segment", "augment", "head", "train",
                    "manifest", "out_dir", "keywords_path", "tag"}


class PipelineConfig:
    """Declarative experiment config: one JSON document, flat sections per
    module; unknown keys are rejected up front."""

    def __init__(self, doc: dict, base_dir: Path):
        unknown = set(doc) - _CONFIG_SECTIONS
        if unknown:
            raise nn.ConfigError(f"unknown config keys: {sorted(unknown)}")
        self.base_dir = base_dir
        seg = doc.get("segment", {})
        self.segment = ap.SegmentSpec(**seg)
        aug = dict(doc.get("augment", {}))
        for k in ("pitch_cents_range", "speed_rate_range"):
            if k in aug:
                aug[k] = tuple(aug[k])
        self.augment = ap.AugmentConfig(**aug)
        self.head = fh.HeadConfig.from_dict(doc.get("head", {}))
        self.train = te.TrainConfig.from_dict(doc.get("train", {}))
        self.manifest_path = self._resolve(doc.get("manifest"))
        self.out_dir = self._resolve(doc.get("out_dir")) or base_dir / "out"
        self.keywords_path = self._resolve(doc.get("keywords_path"))
        self.tag = doc.get("tag", "run")

    def _resolve(self, p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise nn.ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise nn.ConfigError(f"{path}: config must be a JSON object")
        return cls(doc, path.parent)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_segment(args) -> int:
    spec = ap.SegmentSpec(window_s=args.window, hop_ratio=args.hop_ratio,
                          min_tail_s=args.min_tail)
    in_dir = Path(args.input_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    speakers = []
    for wav_path in sorted(in_dir.glob("*.wav")):
        sid = wav_path.stem
        w = ap.normalize(ap.read_wav(wav_path))
        segs = []
        for i, seg in enumerate(ap.segment(w, spec)):
            rel = f"{sid}_seg{i:03d}.wav"
            ap.write_wav(out_dir / rel, seg.waveform)
            segs.append({"path": rel, "start_s": seg.start_s,
                         "duration_s": seg.true_length / seg.waveform.sample_rate})
        speakers.append({"speaker_id": sid, "label": "UNKNOWN",
                         "split": "train", "audio_segments": segs,
                         "text_segments": []})
    if not speakers:
        raise FileNotFoundError(f"no .wav files in {in_dir}")
    # skeleton: labels/splits must be filled in before validation passes
    _write_json(out_dir / "manifest_skeleton.json",
                {"version": 1, "speakers": speakers})
    print(json.dumps({"speakers": len(speakers), "out_dir": str(out_dir)}))
    return 0


def cmd_augment(args) -> int:
    manifest = es.validate_manifest(args.manifest)
    cfg = ap.AugmentConfig(
        pitch_cents_range=(-args.pitch_cents, args.pitch_cents),
        speed_rate_range=(-args.speed_rate, args.speed_rate),
        dither_amplitude=args.dither, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for sp in manifest.split_speakers("train"):
        for i, seg in enumerate(sp.audio_segments):
            w = ap.read_wav(manifest.resolve(seg.path))
            rng = nn.derive_rng(cfg.seed, sp.speaker_id, i, args.epoch)
            out = ap.augment(w, cfg, rng)
            ap.write_wav(out_dir / Path(seg.path).name, out)
            count += 1
    print(json.dumps({"augmented": count, "out_dir": str(out_dir)}))
    return 0


def cmd_synth(args) -> int:
    spec = es.SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
    manifest = es.generate_synthetic_dataset(spec, args.out_dir,
                                             modality=args.modality)
    print(json.dumps({"speakers": len(manifest.speakers),
                      "manifest": str(Path(args.out_dir) / "manifest.json")}))
    return 0


def _load_for_config(cfg: PipelineConfig):
    if cfg.manifest_path is None:
        raise nn.ConfigError("config is missing 'manifest'")
    manifest = es.validate_manifest(cfg.manifest_path)
    kwargs = {}
    if cfg.train.modality == "corr":
        if cfg.keywords_path is None:
            raise nn.ConfigError("corr modality requires 'keywords_path' "
                                 "pointing at a directory of keyword tensors")
        kw_paths = sorted(Path(cfg.keywords_path).glob("*.adem"))
        kwargs["corr_keywords"] = [es.read_embedding(p) for p in kw_paths]
        kwargs["corr_layer"] = cfg.head.ms_layer
    return manifest, te.load_dataset(manifest, cfg.train.modality, **kwargs)


def cmd_train(args) -> int:
    cfg = PipelineConfig.load(args.config)
    seed = args.seed if args.seed is not None else cfg.train.seeds[0]
    _, data = _load_for_config(cfg)
    head_cfg = _sized_head(cfg, data)
    params, losses = te.train_on(data["train"], head_cfg, cfg.train, seed)
    metrics = te.evaluate_on(params, head_cfg, data["test"])
    run_dir = cfg.out_dir / cfg.tag
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt = run_dir / f"seed{seed}.adhp"
    fh.save_checkpoint(params, head_cfg, ckpt)
    feats = {split: {sid: vec.tolist() for sid, vec in
                     te.compute_speaker_features(params, head_cfg,
                                                 data[split]).items()}
             for split in ("train", "test")}
    labels = {split: {sp.speaker_id: sp.label for sp in data[split]}
              for split in ("train", "test")}
    _write_json(run_dir / f"seed{seed}_features.json",
                {"modality": cfg.train.modality, "features": feats,
                 "labels": labels})
    report = {"seed": seed, "metrics": metrics.to_dict(),
              "final_train_loss": losses[-1],
              "head_config": head_cfg.to_dict(),
              "train_config": cfg.train.to_dict(),
              "checkpoint": str(ckpt)}
    _write_json(run_dir / f"seed{seed}_report.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def _sized_head(cfg: PipelineConfig, data) -> fh.HeadConfig:
    layers, hidden = te.infer_head_dims(data["train"])
    head = cfg.head
    if head.layers != layers or head.hidden_in != hidden:
        head = fh.HeadConfig.from_dict(
            {**head.to_dict(), "layers": layers, "hidden_in": hidden,
             "ms_layer": min(head.ms_layer, layers - 1)})
    return head


def cmd_eval(args) -> int:
    params, head_cfg = fh.load_checkpoint(args.checkpoint)
    manifest = es.validate_manifest(args.manifest)
    metrics = te.evaluate(params, head_cfg, manifest, args.split,
                          modality=args.modality)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = PipelineConfig.load(args.config)
    cfg.train.modality = args.modality
    _, data = _load_for_config(cfg)
    head_cfg = _sized_head(cfg, data)
    seed = args.seed if args.seed is not None else cfg.train.seeds[0]
    best, curve = te.layer_sweep(data["train"], head_cfg, cfg.train, seed)
    run_dir = cfg.out_dir / cfg.tag
    run_dir.mkdir(parents=True, exist_ok=True)
    csv_path = run_dir / f"sweep_{args.modality}_seed{seed}.csv"
    csv_path.write_text(te.sweep_curve_csv(curve))
    print(json.dumps({"chosen_layer": best, "curve_csv": str(csv_path)}))
    return 0


def cmd_combine(args) -> int:
    cfg = PipelineConfig.load(args.train_config)
    features = {}
    labels = None
    for path in args.features:
        doc = json.loads(Path(path).read_text())
        modality = doc["modality"]
        features[modality] = {
            split: {sid: np.asarray(vec, dtype=np.float32)
                    for sid, vec in by_speaker.items()}
            for split, by_speaker in doc["features"].items()}
        labels = doc["labels"]
    if labels is None:
        raise nn.ConfigError("no feature files given")
    report = te.fused_multi_run(features, labels, cfg.train)
    run_dir = cfg.out_dir / cfg.tag
    run_dir.mkdir(parents=True, exist_ok=True)
    report.save(run_dir / "fused_report.json")
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adcue",
                                description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="normalize and slice WAVs into windows")
    s.add_argument("--input-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--window", type=float, default=30.0,
                   help="window length in seconds (default 30)")
    s.add_argument("--hop-ratio", type=float, default=0.25,
                   help="hop / window ratio (default 0.25)")
    s.add_argument("--min-tail", type=float, default=5.0,
                   help="minimum trailing partial-segment length in seconds")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("augment", help="pitch/speed/dither augmentation")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epoch", type=int, default=0)
    s.add_argument("--pitch-cents", type=float, default=100.0,
                   help="pitch shift drawn from +/- this many cents")
    s.add_argument("--speed-rate", type=float, default=0.05,
                   help="speed rate drawn from +/- this value")
    s.add_argument("--dither", type=float, default=1e-4,
                   help="TPDF dither peak amplitude")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    s.add_argument("--spec", required=True, help="SynthSpec JSON file")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--modality", choices=("audio", "text"), default="audio")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a feature head on one seed")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", choices=("train", "test"), default="test")
    s.add_argument("--modality", choices=("audio", "text"), default="audio")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="per-layer CV sweep on the train split")
    s.add_argument("--config", required=True)
    s.add_argument("--modality", choices=("audio", "text"), default="audio")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("combine", help="train a fused classifier on "
                                       "concatenated per-modality features")
    s.add_argument("--features", nargs="+", required=True,
                   help="feature JSON files exported by the train command")
    s.add_argument("--train-config", required=True)
    s.set_defaults(func=cmd_combine)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ADCUE_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (nn.ConfigError, TypeError) as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    except es.ManifestError as e:
        return _fail(EXIT_DATA, "manifest", "; ".join(e.errors))
    except (es.EmbeddingFormatError, ap.AudioError, FileNotFoundError,
            ValueError, OSError) as e:
        return _fail(EXIT_DATA, "data", str(e))
    except (nn.TrainingError, FloatingPointError) as e:
        return _fail(EXIT_NUMERIC, "numeric", str(e))


if __name__ == "__main__":
    sys.exit(main())
