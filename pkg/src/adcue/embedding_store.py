"""On-disk layer-stacked embedding tensors, the dataset manifest, and a
synthetic-dataset generator for end-to-end testing without corpus access.

Embedding file layout (little-endian, no padding):
    magic "ADEM" | version u16 = 1 | dtype u8 = 1 (float32) | rank u8 = 3
    dims 3 x u64 (L, T, H) | payload L*T*H float32

Layers are outermost so a single-layer slice is one contiguous read.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn_core import derive_rng

MAGIC = b"ADEM"
VERSION = 1
_HEADER = struct.Struct("<4sHBB3Q")

LABELS = ("AD", "HC")
SPLITS = ("train", "test")


class EmbeddingFormatError(ValueError):
    """Malformed embedding file (bad magic, version, truncation, values)."""


class ManifestError(ValueError):
    """Manifest failed validation; .errors lists every violation."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _validate_tensor(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 3:
        raise EmbeddingFormatError(f"tensor must be rank 3, got {data.ndim}")
    if any(d < 1 for d in data.shape):
        raise EmbeddingFormatError(f"all dims must be >= 1, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise EmbeddingFormatError("tensor contains non-finite values")
    return data


def write_embedding(data: np.ndarray, path) -> None:
    """Write an (L, T, H) float32 tensor. Byte-identical for identical input."""
    data = _validate_tensor(data)
    L, T, H = data.shape
    header = _HEADER.pack(MAGIC, VERSION, 1, 3, L, T, H)
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_embedding(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise EmbeddingFormatError(f"{path}: truncated header")
        magic, version, dtype, rank, L, T, H = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported version {version}")
        if dtype != 1 or rank != 3:
            raise EmbeddingFormatError(f"{path}: unsupported dtype/rank {dtype}/{rank}")
        n = L * T * H
        payload = f.read(4 * n)
        if len(payload) < 4 * n:
            raise EmbeddingFormatError(f"{path}: truncated payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(L, T, H)
    if not np.all(np.isfinite(data)):
        raise EmbeddingFormatError(f"{path}: non-finite values in payload")
    return np.ascontiguousarray(data)


def read_embedding_layer(path, layer: int) -> np.ndarray:
    """Read one (T, H) layer slab without loading the full payload."""
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise EmbeddingFormatError(f"{path}: truncated header")
        magic, version, dtype, rank, L, T, H = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
        if not (0 <= layer < L):
            raise EmbeddingFormatError(f"{path}: layer {layer} out of range (L={L})")
        f.seek(_HEADER.size + 4 * T * H * layer)
        payload = f.read(4 * T * H)
        if len(payload) < 4 * T * H:
            raise EmbeddingFormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(T, H).copy()


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class Segment:
    path: str
    start_s: float = 0.0
    duration_s: float = 0.0


@dataclass
class TextSegment:
    path: str
    token_count: int = 0


@dataclass
class Speaker:
    speaker_id: str
    label: str
    split: str
    audio_segments: list[Segment] = field(default_factory=list)
    text_segments: list[TextSegment] = field(default_factory=list)
    transcript_path: str | None = None


@dataclass
class Manifest:
    speakers: list[Speaker]
    root: Path = field(default_factory=Path)

    def split_speakers(self, split: str) -> list[Speaker]:
        return sorted((s for s in self.speakers if s.split == split),
                      key=lambda s: s.speaker_id)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "speakers": [
                {
                    "speaker_id": s.speaker_id,
                    "label": s.label,
                    "split": s.split,
                    "audio_segments": [
                        {"path": a.path, "start_s": a.start_s,
                         "duration_s": a.duration_s}
                        for a in s.audio_segments
                    ],
                    "text_segments": [
                        {"path": t.path, "token_count": t.token_count}
                        for t in s.text_segments
                    ],
                    **({"transcript_path": s.transcript_path}
                       if s.transcript_path else {}),
                }
                for s in s_sorted(self.speakers)
            ],
        }

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def s_sorted(speakers: list[Speaker]) -> list[Speaker]:
    return sorted(speakers, key=lambda s: s.speaker_id)


def validate_manifest(path) -> Manifest:
    """Parse and validate; raises ManifestError listing every violation."""
    path = Path(path)
    errors: list[str] = []
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError([f"cannot read manifest: {e}"]) from e
    if doc.get("version") != 1:
        errors.append(f"unsupported manifest version {doc.get('version')!r}")
    root = path.parent
    speakers: list[Speaker] = []
    seen_ids: set[str] = set()
    for i, entry in enumerate(doc.get("speakers", [])):
        sid = entry.get("speaker_id")
        if not sid:
            errors.append(f"speaker #{i}: missing speaker_id")
            continue
        if sid in seen_ids:
            errors.append(f"duplicate speaker id '{sid}'")
        seen_ids.add(sid)
        label = entry.get("label")
        if label not in LABELS:
            errors.append(f"speaker '{sid}': unknown label {label!r}")
        split = entry.get("split")
        if split not in SPLITS:
            errors.append(f"speaker '{sid}': unknown split {split!r}")
        audio = [Segment(a["path"], a.get("start_s", 0.0), a.get("duration_s", 0.0))
                 for a in entry.get("audio_segments", [])]
        text = [TextSegment(t["path"], t.get("token_count", 0))
                for t in entry.get("text_segments", [])]
        for seg in audio:
            if not (root / seg.path).exists():
                errors.append(f"speaker '{sid}': missing file {seg.path}")
        for seg in text:
            if not (root / seg.path).exists():
                errors.append(f"speaker '{sid}': missing file {seg.path}")
        tp = entry.get("transcript_path")
        if tp and not (root / tp).exists():
            errors.append(f"speaker '{sid}': missing transcript {tp}")
        speakers.append(Speaker(sid, label, split, audio, text, tp))
    for split in SPLITS:
        if not any(s.split == split for s in speakers):
            errors.append(f"split '{split}' is empty")
    if errors:
        raise ManifestError(errors)
    return Manifest(speakers, root)


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SynthSpec:
    """Planted-signal dataset: Gaussian noise everywhere, plus a class-mean
    shift of +/- delta*sigma/2 on chosen dims of one layer.

    temporal_fraction < 1 confines the shift to the leading fraction of
    frames in each segment (signal concentrated in few frames, which favors
    attentive over mean pooling).
    """

    n_train_speakers: int = 20
    n_test_speakers: int = 10
    layers: int = 4
    hidden: int = 16
    segments_per_speaker: tuple[int, int] = (1, 3)
    frames_per_segment: tuple[int, int] = (8, 16)
    informative_layer: int = 0
    informative_dims: int = 4
    class_separation: float = 2.0
    noise_sigma: float = 1.0
    temporal_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.informative_layer < self.layers):
            raise ValueError("informative_layer out of range")
        if not (0 <= self.informative_dims <= self.hidden):
            raise ValueError("informative_dims out of range")
        if not (0 < self.temporal_fraction <= 1):
            raise ValueError("temporal_fraction must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for k in ("segments_per_speaker", "frames_per_segment"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _synth_tensor(spec: SynthSpec, rng, label: str) -> np.ndarray:
    T = int(rng.integers(spec.frames_per_segment[0], spec.frames_per_segment[1] + 1))
    data = rng.normal(0.0, spec.noise_sigma,
                      size=(spec.layers, T, spec.hidden)).astype(np.float32)
    shift = spec.class_separation * spec.noise_sigma / 2.0
    if label == "HC":
        shift = -shift
    t_sig = max(1, int(round(T * spec.temporal_fraction)))
    data[spec.informative_layer, :t_sig, :spec.informative_dims] += shift
    return data


def generate_synthetic_dataset(spec: SynthSpec, out_dir,
                               modality: str = "audio") -> Manifest:
    """Write per-speaker segment tensors plus a manifest. Deterministic in
    (spec, modality). Labels are balanced within each split; manifest paths
    point at the embedding files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    speakers: list[Speaker] = []
    counts = {"train": spec.n_train_speakers, "test": spec.n_test_speakers}
    for split, n in counts.items():
        for i in range(n):
            label = "AD" if i % 2 == 0 else "HC"
            sid = f"{split}_{i:03d}"
            rng = derive_rng(spec.seed, "synth", modality, split, i)
            n_seg = int(rng.integers(spec.segments_per_speaker[0],
                                     spec.segments_per_speaker[1] + 1))
            audio, text = [], []
            for k in range(n_seg):
                data = _synth_tensor(spec, rng, label)
                rel = f"{sid}_{modality}_{k}.adem"
                write_embedding(data, out_dir / rel)
                if modality == "text":
                    text.append(TextSegment(rel, token_count=data.shape[1]))
                else:
                    audio.append(Segment(rel, start_s=k * 7.5,
                                         duration_s=30.0))
            speakers.append(Speaker(sid, label, split, audio, text))
    manifest = Manifest(speakers, out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


def generate_keyword_tensors(spec: SynthSpec, out_dir, n_keywords: int = 4,
                             tokens_per_keyword: int = 2) -> list[Path]:
    """Keyword embedding tensors whose informative dims carry a constant
    positive pattern, so the elementwise product with planted utterance
    embeddings preserves the class shift."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = derive_rng(spec.seed, "synth", "keywords")
    paths = []
    for k in range(n_keywords):
        data = rng.normal(0.0, 0.05,
                          size=(spec.layers, tokens_per_keyword,
                                spec.hidden)).astype(np.float32)
        data[:, :, :spec.informative_dims] += 1.0
        p = out_dir / f"keyword_{k:02d}.adem"
        write_embedding(data, p)
        paths.append(p)
    return paths
