"""Numpy implementations of the two default encoder architectures.

Whisper-small encoder (audio) and BERT-base-uncased (text), faithful in
architecture and tensor shapes: 768 hidden, 12 heads, 3072 FFN, 12 blocks,
all-layer hidden-state output. Weights come from a local .npz directory when
one is supplied; otherwise each parameter is drawn deterministically from a
seed derived from (model name, parameter name), so runs are reproducible and
every shape/format contract holds without network access.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adcue.nn_core import derive_rng

SAMPLE_RATE = 16000
AUDIO_SECONDS = 30
N_SAMPLES = SAMPLE_RATE * AUDIO_SECONDS
N_FFT = 400
HOP = 160
N_MELS = 80
MAX_TEXT_POSITIONS = 512


class ModelLoadError(RuntimeError):
    pass


@dataclass
class ExtractorConfig:
    audio_model: str = "whisper-small"
    text_model: str = "bert-base-uncased"
    device: str = "cpu"
    batch_size: int = 1
    include_embedding_layer: bool = True
    weights_dir: str | None = None
    hidden: int = 768
    heads: int = 12
    ffn: int = 3072
    audio_blocks: int = 12
    text_blocks: int = 12

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden must divide evenly into heads")


class ParamStore:
    """Named parameters; random-initialized or loaded from <weights_dir>/<model>.npz."""

    def __init__(self, model_name: str, weights_dir: str | None):
        self.model_name = model_name
        self._loaded = None
        if weights_dir is not None:
            path = Path(weights_dir) / f"{model_name}.npz"
            if not path.exists():
                raise ModelLoadError(f"no weights file {path}")
            self._loaded = np.load(path)

    def get(self, name: str, shape: tuple, kind: str = "weight") -> np.ndarray:
        if self._loaded is not None:
            if name not in self._loaded.files:
                raise ModelLoadError(
                    f"{self.model_name}: missing parameter '{name}'")
            arr = np.asarray(self._loaded[name], dtype=np.float32)
            if arr.shape != shape:
                raise ModelLoadError(
                    f"{self.model_name}: '{name}' has shape {arr.shape}, "
                    f"expected {shape}")
            return arr
        if kind == "zeros":
            return np.zeros(shape, dtype=np.float32)
        if kind == "ones":
            return np.ones(shape, dtype=np.float32)
        rng = derive_rng(0, "adex", self.model_name, name)
        return rng.normal(0.0, 0.02, size=shape).astype(np.float32)


def gelu(x):
    c = np.sqrt(2.0 / np.pi).astype(np.float32)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def attention(x, p, prefix, heads):
    t, h = x.shape
    d = h // heads
    q = x @ p[f"{prefix}.q.w"] + p[f"{prefix}.q.b"]
    k = x @ p[f"{prefix}.k.w"] + p[f"{prefix}.k.b"]
    v = x @ p[f"{prefix}.v.w"] + p[f"{prefix}.v.b"]
    q = q.reshape(t, heads, d)
    k = k.reshape(t, heads, d)
    v = v.reshape(t, heads, d)
    q = q.transpose(1, 0, 2)  # (heads, t, d)
    k = k.transpose(1, 0, 2)
    v = v.transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d).astype(np.float32)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = (w @ v).transpose(1, 0, 2).reshape(t, h)
    return out @ p[f"{prefix}.o.w"] + p[f"{prefix}.o.b"]


def _block_params(store, prefix, hidden, ffn):
    p = {}
    for proj in ("q", "k", "v", "o"):
        p[f"{prefix}.{proj}.w"] = store.get(f"{prefix}.{proj}.w",
                                            (hidden, hidden))
        p[f"{prefix}.{proj}.b"] = store.get(f"{prefix}.{proj}.b", (hidden,),
                                            "zeros")
    p[f"{prefix}.fc1.w"] = store.get(f"{prefix}.fc1.w", (hidden, ffn))
    p[f"{prefix}.fc1.b"] = store.get(f"{prefix}.fc1.b", (ffn,), "zeros")
    p[f"{prefix}.fc2.w"] = store.get(f"{prefix}.fc2.w", (ffn, hidden))
    p[f"{prefix}.fc2.b"] = store.get(f"{prefix}.fc2.b", (hidden,), "zeros")
    for ln in ("ln1", "ln2"):
        p[f"{prefix}.{ln}.g"] = store.get(f"{prefix}.{ln}.g", (hidden,), "ones")
        p[f"{prefix}.{ln}.b"] = store.get(f"{prefix}.{ln}.b", (hidden,), "zeros")
    return p


# ---------------------------------------------------------------------------
# Audio frontend


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sr=SAMPLE_RATE):
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0, sr / 2, n_bins)
    mels = np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2), n_mels + 2)
    pts = mel_to_hz(mels)
    fb = np.zeros((n_mels, n_bins), dtype=np.float32)
    for i in range(n_mels):
        lo, mid, hi = pts[i], pts[i + 1], pts[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel_spectrogram(samples: np.ndarray) -> np.ndarray:
    """(N_SAMPLES,) float32 -> (3000, 80) log-mel features."""
    x = np.pad(samples.astype(np.float32), N_FFT // 2, mode="reflect")
    n_frames = 1 + (len(samples) // HOP)
    window = np.hanning(N_FFT + 1)[:-1].astype(np.float32)
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(n_frames)[:, None]
    frames = x[idx] * window
    spec = np.abs(np.fft.rfft(frames, axis=-1)) ** 2
    mel = spec @ mel_filterbank().T
    logmel = np.log10(np.maximum(mel, 1e-10))
    logmel = np.maximum(logmel, logmel.max() - 8.0)
    logmel = (logmel + 4.0) / 4.0
    return logmel[:-1].astype(np.float32)  # drop the trailing frame -> 3000


def _conv1d(x, w, b, stride=1):
    """x (T, C_in), w (k, C_in, C_out); pad 1 each side."""
    k = w.shape[0]
    xp = np.pad(x, ((k // 2, k // 2), (0, 0)))
    t_out = (x.shape[0] + 2 * (k // 2) - k) // stride + 1
    out = np.zeros((t_out, w.shape[2]), dtype=np.float32)
    for j in range(k):
        out += xp[j:j + t_out * stride:stride] @ w[j]
    return out + b


def sinusoid_positions(length, channels):
    half = channels // 2
    scale = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    args = np.arange(length)[:, None] * scale[None, :]
    return np.concatenate([np.sin(args), np.cos(args)],
                          axis=1).astype(np.float32)


class WhisperEncoder:
    """Whisper-small encoder: conv frontend -> 12 pre-LN transformer blocks."""

    def __init__(self, cfg: ExtractorConfig):
        self.cfg = cfg
        store = ParamStore(cfg.audio_model, cfg.weights_dir)
        h = cfg.hidden
        self.p = {
            "conv1.w": store.get("conv1.w", (3, N_MELS, h)),
            "conv1.b": store.get("conv1.b", (h,), "zeros"),
            "conv2.w": store.get("conv2.w", (3, h, h)),
            "conv2.b": store.get("conv2.b", (h,), "zeros"),
            "ln_post.g": store.get("ln_post.g", (h,), "ones"),
            "ln_post.b": store.get("ln_post.b", (h,), "zeros"),
        }
        for i in range(cfg.audio_blocks):
            self.p.update(_block_params(store, f"block{i}", h, cfg.ffn))

    @property
    def n_layers(self) -> int:
        return self.cfg.audio_blocks + (1 if self.cfg.include_embedding_layer
                                        else 0)

    def hidden_states(self, samples: np.ndarray) -> np.ndarray:
        """30 s of 16 kHz audio -> (L, 1500, 768) stacked hidden states."""
        if samples.shape[0] != N_SAMPLES:
            raise ValueError(f"expected {N_SAMPLES} samples, "
                             f"got {samples.shape[0]}")
        mel = log_mel_spectrogram(samples)
        x = gelu(_conv1d(mel, self.p["conv1.w"], self.p["conv1.b"]))
        x = gelu(_conv1d(x, self.p["conv2.w"], self.p["conv2.b"], stride=2))
        x = x + sinusoid_positions(x.shape[0], self.cfg.hidden)
        states = [x] if self.cfg.include_embedding_layer else []
        for i in range(self.cfg.audio_blocks):
            pre = f"block{i}"
            h1 = layer_norm(x, self.p[f"{pre}.ln1.g"], self.p[f"{pre}.ln1.b"])
            x = x + attention(h1, self.p, pre, self.cfg.heads)
            h2 = layer_norm(x, self.p[f"{pre}.ln2.g"], self.p[f"{pre}.ln2.b"])
            x = x + (gelu(h2 @ self.p[f"{pre}.fc1.w"] + self.p[f"{pre}.fc1.b"])
                     @ self.p[f"{pre}.fc2.w"] + self.p[f"{pre}.fc2.b"])
            states.append(x)
        states[-1] = layer_norm(states[-1], self.p["ln_post.g"],
                                self.p["ln_post.b"])
        return np.stack(states).astype(np.float32)


class BertEncoder:
    """BERT-base-uncased: embeddings -> 12 post-LN transformer blocks."""

    def __init__(self, cfg: ExtractorConfig, vocab_size: int):
        self.cfg = cfg
        store = ParamStore(cfg.text_model, cfg.weights_dir)
        h = cfg.hidden
        self.p = {
            "emb.word": store.get("emb.word", (vocab_size, h)),
            "emb.pos": store.get("emb.pos", (MAX_TEXT_POSITIONS, h)),
            "emb.type": store.get("emb.type", (2, h)),
            "emb.ln.g": store.get("emb.ln.g", (h,), "ones"),
            "emb.ln.b": store.get("emb.ln.b", (h,), "zeros"),
        }
        for i in range(cfg.text_blocks):
            self.p.update(_block_params(store, f"block{i}", h, cfg.ffn))

    @property
    def n_layers(self) -> int:
        return self.cfg.text_blocks + (1 if self.cfg.include_embedding_layer
                                       else 0)

    def hidden_states(self, token_ids: list[int]) -> np.ndarray:
        """Token ids (specials included) -> (L, tokens, 768)."""
        n = len(token_ids)
        if n > MAX_TEXT_POSITIONS:
            raise ValueError(
                f"sequence of {n} tokens exceeds the "
                f"{MAX_TEXT_POSITIONS}-token limit; split the text upstream")
        ids = np.asarray(token_ids)
        x = (self.p["emb.word"][ids] + self.p["emb.pos"][:n]
             + self.p["emb.type"][0])
        x = layer_norm(x, self.p["emb.ln.g"], self.p["emb.ln.b"])
        states = [x] if self.cfg.include_embedding_layer else []
        for i in range(self.cfg.text_blocks):
            pre = f"block{i}"
            a = attention(x, self.p, pre, self.cfg.heads)
            x = layer_norm(x + a, self.p[f"{pre}.ln1.g"],
                           self.p[f"{pre}.ln1.b"])
            f = (gelu(x @ self.p[f"{pre}.fc1.w"] + self.p[f"{pre}.fc1.b"])
                 @ self.p[f"{pre}.fc2.w"] + self.p[f"{pre}.fc2.b"])
            x = layer_norm(x + f, self.p[f"{pre}.ln2.g"],
                           self.p[f"{pre}.ln2.b"])
            states.append(x)
        return np.stack(states).astype(np.float32)
