"""Training loop, metrics, multi-seed protocol, per-layer sweep, and feature
combination.

The training unit is the speaker: segment features are averaged before the
classifier, so each speaker contributes one BCE term. Layer selection for MS
mode uses k-fold cross-validation on the train split only; test labels are
never read before the final evaluate().
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import feature_head as fh
from . import nn_core as nn
from . import task_keywords as tk
from .embedding_store import Manifest, read_embedding

log = logging.getLogger("adcue.train_eval")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_speakers: int = 16
    epochs: int = 50
    dropout: float = 0.25
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    augmentation: bool = False  # applied upstream, on waveforms; recorded here
    modality: str = "audio"

    def __post_init__(self):
        if self.lr <= 0 or self.batch_speakers <= 0 or self.epochs <= 0:
            raise nn.ConfigError("lr, batch_speakers and epochs must be positive")
        if not self.seeds:
            raise nn.ConfigError("seeds must be nonempty")

    def to_dict(self) -> dict:
        return {"lr": self.lr, "weight_decay": self.weight_decay,
                "batch_speakers": self.batch_speakers, "epochs": self.epochs,
                "dropout": self.dropout, "seeds": list(self.seeds),
                "augmentation": self.augmentation, "modality": self.modality}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)


@dataclass
class SpeakerData:
    speaker_id: str
    label: str  # "AD" or "HC"
    segments: list[np.ndarray]
    true_lens: list[int] | None = None


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    confusion: list[list[int]]  # rows true [AD, HC], cols predicted [AD, HC]

    @classmethod
    def from_predictions(cls, truth: list[str], pred: list[str]) -> "Metrics":
        classes = ("AD", "HC")
        conf = [[0, 0], [0, 0]]
        for t, p in zip(truth, pred):
            conf[classes.index(t)][classes.index(p)] += 1
        n = len(truth)
        correct = conf[0][0] + conf[1][1]
        f1s = []
        for c in range(2):
            tp = conf[c][c]
            fp = conf[1 - c][c]
            fn = conf[c][1 - c]
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        return cls(correct / n, sum(f1s) / 2, conf)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "confusion": self.confusion}


@dataclass
class RunReport:
    per_seed: list[Metrics]
    seeds: list[int]
    mean_accuracy: float
    std_accuracy: float
    mean_macro_f1: float
    std_macro_f1: float
    head_config: dict
    train_config: dict
    layer_used: int | None = None
    feature_tag: str = ""

    @classmethod
    def from_metrics(cls, metrics: list[Metrics], seeds, head_cfg: fh.HeadConfig,
                     train_cfg: TrainConfig, layer_used=None,
                     feature_tag="") -> "RunReport":
        accs = [m.accuracy for m in metrics]
        f1s = [m.macro_f1 for m in metrics]
        return cls(metrics, list(seeds),
                   float(np.mean(accs)), float(np.std(accs)),
                   float(np.mean(f1s)), float(np.std(f1s)),
                   head_cfg.to_dict(), train_cfg.to_dict(),
                   layer_used, feature_tag)

    def to_dict(self) -> dict:
        return {"per_seed": [m.to_dict() for m in self.per_seed],
                "seeds": self.seeds,
                "mean_accuracy": self.mean_accuracy,
                "std_accuracy": self.std_accuracy,
                "mean_macro_f1": self.mean_macro_f1,
                "std_macro_f1": self.std_macro_f1,
                "head_config": self.head_config,
                "train_config": self.train_config,
                "layer_used": self.layer_used,
                "feature_tag": self.feature_tag}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls([Metrics(m["accuracy"], m["macro_f1"], m["confusion"])
                    for m in d["per_seed"]],
                   d["seeds"], d["mean_accuracy"], d["std_accuracy"],
                   d["mean_macro_f1"], d["std_macro_f1"], d["head_config"],
                   d["train_config"], d.get("layer_used"),
                   d.get("feature_tag", ""))


# ---------------------------------------------------------------------------
# Data loading


def load_dataset(manifest: Manifest, modality: str = "audio",
                 corr_keywords: list[np.ndarray] | None = None,
                 corr_layer: int = 0) -> dict[str, list[SpeakerData]]:
    """Load all segment tensors into memory, keyed by split.

    modality "audio"/"text" reads the manifest's segment files; "corr"
    builds per-speaker (1, 1, H) correlation tensors from the text segments
    and a pooled keyword embedding (corr_keywords tensors, same layer)."""
    out: dict[str, list[SpeakerData]] = {"train": [], "test": []}
    z_k = None
    for split in out:
        for sp in manifest.split_speakers(split):
            if modality == "audio":
                segs = [read_embedding(manifest.resolve(s.path))
                        for s in sorted(sp.audio_segments, key=lambda s: s.start_s)]
            elif modality == "text":
                segs = [read_embedding(manifest.resolve(s.path))
                        for s in sp.text_segments]
            elif modality == "corr":
                if corr_keywords is None:
                    raise nn.ConfigError("corr modality needs keyword tensors")
                texts = [read_embedding(manifest.resolve(s.path))
                         for s in sp.text_segments]
                if not texts:
                    raise nn.ConfigError(
                        f"speaker '{sp.speaker_id}' has no text segments")
                if z_k is None:
                    hidden = texts[0].shape[2]
                    z_k = tk.keyword_embedding(corr_keywords, corr_layer, hidden)
                segs = [tk.correlation_tensor(texts, z_k, corr_layer)]
            else:
                raise nn.ConfigError(f"unknown modality {modality!r}")
            if not segs:
                raise nn.ConfigError(
                    f"speaker '{sp.speaker_id}' has no {modality} segments")
            out[split].append(SpeakerData(sp.speaker_id, sp.label, segs))
    return out


def infer_head_dims(data: list[SpeakerData]) -> tuple[int, int]:
    t = data[0].segments[0]
    return t.shape[0], t.shape[2]


# ---------------------------------------------------------------------------
# Training / evaluation


def _label01(label: str) -> int:
    return 1 if label == "AD" else 0


def train_on(data: list[SpeakerData], head_cfg: fh.HeadConfig,
             train_cfg: TrainConfig, seed: int) -> tuple[fh.HeadParams, list[float]]:
    """Train a head on preloaded speakers; deterministic in (data, configs, seed)."""
    if not data:
        raise nn.ConfigError("training split is empty")
    cfg = replace(head_cfg, dropout_rate=train_cfg.dropout)
    params = fh.init_head_params(cfg, nn.derive_rng(seed, "init"))
    trainable = params.trainable(cfg)
    states = nn.init_adamw_states(trainable)
    hp = nn.HyperParams(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    speakers = sorted(data, key=lambda s: s.speaker_id)
    epoch_losses: list[float] = []
    for epoch in range(train_cfg.epochs):
        order = nn.derive_rng(seed, "shuffle", epoch).permutation(len(speakers))
        total, count = 0.0, 0
        for b0 in range(0, len(order), train_cfg.batch_speakers):
            batch = order[b0:b0 + train_cfg.batch_speakers]
            for p in trainable:
                p.zero_grad()
            for idx in batch:
                sp = speakers[idx]
                rng = nn.derive_rng(seed, "dropout", epoch, sp.speaker_id)
                logit, cache = fh.forward_speaker(
                    sp.segments, cfg, params, rng, training=True,
                    true_lens=sp.true_lens)
                loss, dlogit = nn.bce_with_logits(logit, _label01(sp.label))
                if not math.isfinite(loss):
                    raise nn.TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {b0}, "
                        f"speaker '{sp.speaker_id}'")
                fh.backward_speaker(cache, dlogit / len(batch), cfg, params)
                total += loss
                count += 1
            nn.adamw_step(trainable, states, hp)
        epoch_losses.append(total / count)
    return params, epoch_losses


def train(manifest: Manifest, head_cfg: fh.HeadConfig, train_cfg: TrainConfig,
          seed: int, **load_kwargs) -> tuple[fh.HeadParams, list[float]]:
    data = load_dataset(manifest, train_cfg.modality, **load_kwargs)
    return train_on(data["train"], head_cfg, train_cfg, seed)


def evaluate_on(params: fh.HeadParams, head_cfg: fh.HeadConfig,
                data: list[SpeakerData]) -> Metrics:
    """Deterministic evaluation: dropout off, no augmentation."""
    if not data:
        raise nn.ConfigError("evaluation split is empty")
    truth, pred = [], []
    for sp in sorted(data, key=lambda s: s.speaker_id):
        logit, _ = fh.forward_speaker(sp.segments, head_cfg, params,
                                      rng=None, training=False,
                                      true_lens=sp.true_lens)
        truth.append(sp.label)
        pred.append(fh.decide(logit))
    return Metrics.from_predictions(truth, pred)


def evaluate(params: fh.HeadParams, head_cfg: fh.HeadConfig,
             manifest: Manifest, split: str, modality: str = "audio",
             **load_kwargs) -> Metrics:
    data = load_dataset(manifest, modality, **load_kwargs)
    return evaluate_on(params, head_cfg, data[split])


def multi_run(data: dict[str, list[SpeakerData]], head_cfg: fh.HeadConfig,
              train_cfg: TrainConfig, feature_tag: str = "") -> RunReport:
    """Train and evaluate once per seed; report mean and std."""
    metrics = []
    for seed in train_cfg.seeds:
        params, _ = train_on(data["train"], head_cfg, train_cfg, seed)
        metrics.append(evaluate_on(params, head_cfg, data["test"]))
    layer = head_cfg.ms_layer if head_cfg.agg_mode == "MS" else None
    return RunReport.from_metrics(metrics, train_cfg.seeds, head_cfg,
                                  train_cfg, layer, feature_tag)


# ---------------------------------------------------------------------------
# Layer sweep (train-split cross-validation only)


def layer_sweep(train_data: list[SpeakerData], base_cfg: fh.HeadConfig,
                train_cfg: TrainConfig, seed: int,
                k: int = 5) -> tuple[int, list[tuple[int, float, float]]]:
    """Per layer l: k-fold speaker-level CV with MS(l) on the train split.
    Returns (argmax layer, curve of (layer, mean_acc, std_acc))."""
    L = base_cfg.layers
    if L < 2:
        raise nn.ConfigError("layer sweep needs at least 2 layers")
    speakers = sorted(train_data, key=lambda s: s.speaker_id)
    if len(speakers) < 2 * k:
        k_new = max(2, len(speakers) // 2)
        log.warning("too few speakers for %d folds, reducing to %d", k, k_new)
        k = k_new
    order = nn.derive_rng(seed, "cv").permutation(len(speakers))
    folds = [list(order[i::k]) for i in range(k)]
    curve = []
    for layer in range(L):
        cfg = replace(base_cfg, agg_mode="MS", ms_layer=layer)
        accs = []
        for f, held in enumerate(folds):
            held_set = set(held)
            tr = [speakers[i] for i in range(len(speakers)) if i not in held_set]
            va = [speakers[i] for i in held]
            params, _ = train_on(tr, cfg, train_cfg,
                                 nn.derive_seed(seed, "fold", f))
            accs.append(evaluate_on(params, cfg, va).accuracy)
        curve.append((layer, float(np.mean(accs)), float(np.std(accs))))
    best = max(curve, key=lambda row: (row[1], -row[0]))[0]
    return best, curve


def sweep_curve_csv(curve: list[tuple[int, float, float]]) -> str:
    lines = ["layer,mean_accuracy,std_accuracy"]
    lines += [f"{l},{m:.6f},{s:.6f}" for l, m, s in curve]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Feature export, combination, fusion


def compute_speaker_features(params: fh.HeadParams, head_cfg: fh.HeadConfig,
                             data: list[SpeakerData]) -> dict[str, np.ndarray]:
    """Pooled, speaker-averaged feature vectors (classifier input) per speaker."""
    out = {}
    for sp in data:
        _, cache = fh.forward_speaker(sp.segments, head_cfg, params,
                                      rng=None, training=False,
                                      true_lens=sp.true_lens)
        out[sp.speaker_id] = cache[1].copy()
    return out


def combine_features(per_modality: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Concatenate per-speaker vectors in the given modality order."""
    if not per_modality:
        raise nn.ConfigError("no feature sets to combine")
    ids = set(per_modality[0])
    for feats in per_modality[1:]:
        missing = ids.symmetric_difference(feats)
        if missing:
            raise nn.ConfigError(
                f"speakers missing from some modalities: {sorted(missing)}")
    return {sid: np.concatenate([feats[sid] for feats in per_modality])
            for sid in sorted(ids)}


def train_fused_classifier(features: dict[str, np.ndarray],
                           labels: dict[str, str], train_cfg: TrainConfig,
                           seed: int) -> tuple[nn.Param, nn.Param]:
    """Linear classifier (BCE + AdamW) on concatenated speaker features."""
    ids = sorted(features)
    d = features[ids[0]].size
    rng = nn.derive_rng(seed, "fused_init")
    w, b = nn.init_linear(rng, d, 1, "fused_cls")
    states = nn.init_adamw_states([w, b])
    hp = nn.HyperParams(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    for epoch in range(train_cfg.epochs):
        order = nn.derive_rng(seed, "fused_shuffle", epoch).permutation(len(ids))
        for b0 in range(0, len(order), train_cfg.batch_speakers):
            batch = order[b0:b0 + train_cfg.batch_speakers]
            w.zero_grad()
            b.zero_grad()
            for idx in batch:
                sid = ids[idx]
                f = features[sid].astype(np.float32)
                logit = fh.classify(f, w, b)
                _, dlogit = nn.bce_with_logits(logit, _label01(labels[sid]))
                fh.classify_backward(f, w, b, dlogit / len(batch))
            nn.adamw_step([w, b], states, hp)
    return w, b


def evaluate_fused(w: nn.Param, b: nn.Param, features: dict[str, np.ndarray],
                   labels: dict[str, str]) -> Metrics:
    truth, pred = [], []
    for sid in sorted(features):
        logit = fh.classify(features[sid].astype(np.float32), w, b)
        truth.append(labels[sid])
        pred.append(fh.decide(logit))
    return Metrics.from_predictions(truth, pred)


def fused_multi_run(features_per_modality: dict[str, dict[str, dict[str, np.ndarray]]],
                    labels: dict[str, dict[str, str]],
                    train_cfg: TrainConfig) -> RunReport:
    """features_per_modality: modality -> split -> speaker -> vector.
    Modalities combine in sorted-key order unless callers pass an ordered dict."""
    modalities = list(features_per_modality)
    train_feats = combine_features(
        [features_per_modality[m]["train"] for m in modalities])
    test_feats = combine_features(
        [features_per_modality[m]["test"] for m in modalities])
    metrics = []
    for seed in train_cfg.seeds:
        w, b = train_fused_classifier(train_feats, labels["train"], train_cfg, seed)
        metrics.append(evaluate_fused(w, b, test_feats, labels["test"]))
    dummy_cfg = fh.HeadConfig(hidden_in=1, layers=1, agg_mode="MS", ms_layer=0)
    return RunReport.from_metrics(metrics, train_cfg.seeds, dummy_cfg, train_cfg,
                                  feature_tag="+".join(modalities))


def speaker_labels(data: dict[str, list[SpeakerData]]) -> dict[str, dict[str, str]]:
    return {split: {sp.speaker_id: sp.label for sp in speakers}
            for split, speakers in data.items()}


# ---------------------------------------------------------------------------
# Pooling ablation


def pooling_ablation(data: dict[str, list[SpeakerData]],
                     base_cfg: fh.HeadConfig,
                     train_cfg: TrainConfig) -> dict[str, dict]:
    """4-cell comparison: {WS, MS} x {mean pooling, attentive pooling}.
    Mean pooling is attentive pooling with attention frozen at zero."""
    table = {}
    for agg in ("WS", "MS"):
        for pool, frozen in (("mean", True), ("attentive", False)):
            cfg = replace(base_cfg, agg_mode=agg, freeze_attention=frozen)
            report = multi_run(data, cfg, train_cfg,
                               feature_tag=f"{agg}/{pool}")
            table[f"{agg}/{pool}"] = {"mean_accuracy": report.mean_accuracy,
                                      "std_accuracy": report.std_accuracy,
                                      "mean_macro_f1": report.mean_macro_f1,
                                      "std_macro_f1": report.std_macro_f1}
    return table
