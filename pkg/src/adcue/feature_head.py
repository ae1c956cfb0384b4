"""Trainable feature extractor head: layer aggregation (weighted-sum or
single-layer), two-layer projector with layer norm, dropout, attentive
temporal pooling, per-speaker averaging, and a linear binary classifier.

Forward passes return caches; backward_speaker replays them in reverse,
accumulating into the shared Param grads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core as nn
from .nn_core import Param, ShapeError, ConfigError

CKPT_MAGIC = b"ADHP"
CKPT_VERSION = 1


@dataclass
class HeadConfig:
    hidden_in: int = 768
    layers: int = 12
    agg_mode: str = "WS"          # "WS" or "MS"
    ms_layer: int = 0
    proj_dims: tuple[int, ...] = (8, 8)
    dropout_rate: float = 0.25
    attn_dim: int = 8
    freeze_attention: bool = False  # zero, untrained attention == mean pooling

    def __post_init__(self):
        if self.agg_mode not in ("WS", "MS"):
            raise ConfigError(f"agg_mode must be WS or MS, got {self.agg_mode!r}")
        if self.agg_mode == "MS" and not (0 <= self.ms_layer < self.layers):
            raise ConfigError(f"ms_layer {self.ms_layer} out of range (L={self.layers})")
        if not self.proj_dims:
            raise ConfigError("proj_dims must be nonempty")

    @property
    def feature_dim(self) -> int:
        return self.proj_dims[-1]

    def to_dict(self) -> dict:
        return {
            "hidden_in": self.hidden_in, "layers": self.layers,
            "agg_mode": self.agg_mode, "ms_layer": self.ms_layer,
            "proj_dims": list(self.proj_dims), "dropout_rate": self.dropout_rate,
            "attn_dim": self.attn_dim, "freeze_attention": self.freeze_attention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        d = dict(d)
        if "proj_dims" in d:
            d["proj_dims"] = tuple(d["proj_dims"])
        return cls(**d)


@dataclass
class ProjLayer:
    w: Param
    b: Param
    gamma: Param
    beta: Param

    def params(self) -> list[Param]:
        return [self.w, self.b, self.gamma, self.beta]


@dataclass
class HeadParams:
    layer_logits: Param | None
    proj: list[ProjLayer]
    w_att: Param
    v_att: Param
    w_cls: Param
    b_cls: Param

    def named(self) -> list[tuple[str, Param]]:
        out = []
        if self.layer_logits is not None:
            out.append(("layer_logits", self.layer_logits))
        for i, layer in enumerate(self.proj):
            out += [(f"proj{i}.w", layer.w), (f"proj{i}.b", layer.b),
                    (f"proj{i}.gamma", layer.gamma), (f"proj{i}.beta", layer.beta)]
        out += [("w_att", self.w_att), ("v_att", self.v_att),
                ("w_cls", self.w_cls), ("b_cls", self.b_cls)]
        return out

    def all_params(self) -> list[Param]:
        return [p for _, p in self.named()]

    def trainable(self, cfg: HeadConfig) -> list[Param]:
        frozen = {id(self.w_att), id(self.v_att)} if cfg.freeze_attention else set()
        return [p for p in self.all_params() if id(p) not in frozen]

    def zero_grads(self) -> None:
        for p in self.all_params():
            p.zero_grad()


def init_head_params(cfg: HeadConfig, rng: np.random.Generator,
                     classifier_in: int | None = None,
                     dtype=np.float32) -> HeadParams:
    """Deterministic initialization: linear weights uniform +/- sqrt(1/fan_in),
    biases zero, layer-norm gamma=1 / beta=0, layer logits zero."""
    logits = None
    if cfg.agg_mode == "WS":
        logits = Param.zeros(1, cfg.layers, "layer_logits", dtype=dtype)
    proj = []
    d_in = cfg.hidden_in
    for i, d_out in enumerate(cfg.proj_dims):
        w, b = nn.init_linear(rng, d_in, d_out, f"proj{i}", dtype=dtype)
        gamma = Param(np.ones((1, d_out), dtype=dtype),
                      np.zeros((1, d_out), dtype=dtype), f"proj{i}.gamma")
        beta = Param.zeros(1, d_out, f"proj{i}.beta", dtype=dtype)
        proj.append(ProjLayer(w, b, gamma, beta))
        d_in = d_out
    if cfg.freeze_attention:
        w_att = Param.zeros(d_in, cfg.attn_dim, "w_att", dtype=dtype)
        v_att = Param.zeros(cfg.attn_dim, 1, "v_att", dtype=dtype)
    else:
        w_att, _ = nn.init_linear(rng, d_in, cfg.attn_dim, "w_att", dtype=dtype)
        v_att, _ = nn.init_linear(rng, cfg.attn_dim, 1, "v_att", dtype=dtype)
    d_feat = classifier_in if classifier_in is not None else d_in
    w_cls, b_cls = nn.init_linear(rng, d_feat, 1, "cls", dtype=dtype)
    return HeadParams(logits, proj, w_att, v_att, w_cls, b_cls)


# ---------------------------------------------------------------------------
# Stages


def aggregate_layers_ws(e: np.ndarray, layer_logits: Param):
    """Softmax-weighted sum over the layer axis of an (L, T, H) tensor."""
    e = np.asarray(e)
    if e.ndim != 3:
        raise ShapeError(f"embedding tensor must be rank 3, got {e.shape}")
    if layer_logits.value.shape != (1, e.shape[0]):
        raise ShapeError(
            f"layer_logits {layer_logits.value.shape} vs L={e.shape[0]}")
    weights = nn.softmax(layer_logits.value)[0]
    out = np.tensordot(weights, e, axes=(0, 0))
    return out, weights


def aggregate_layers_ws_backward(e: np.ndarray, weights: np.ndarray,
                                 layer_logits: Param,
                                 grad_out: np.ndarray) -> None:
    d_weights = np.tensordot(e, grad_out, axes=([1, 2], [0, 1]))
    layer_logits.grad += nn.softmax_backward(weights, d_weights)[None, :]


def aggregate_layers_ms(e: np.ndarray, layer: int) -> np.ndarray:
    """One layer slab, verbatim."""
    e = np.asarray(e)
    if e.ndim != 3:
        raise ShapeError(f"embedding tensor must be rank 3, got {e.shape}")
    if not (0 <= layer < e.shape[0]):
        raise ShapeError(f"layer {layer} out of range (L={e.shape[0]})")
    return e[layer]


def project(x: np.ndarray, proj: list[ProjLayer]):
    """(linear -> layer norm) per projector layer. Returns (out, caches)."""
    caches = []
    for layer in proj:
        z = nn.linear_forward(x, layer.w, layer.b)
        out, ln_cache = nn.layer_norm_forward(z, layer.gamma, layer.beta)
        caches.append((x, ln_cache))
        x = out
    return x, caches


def project_backward(proj: list[ProjLayer], caches, grad_out: np.ndarray):
    for layer, (x_in, ln_cache) in zip(reversed(proj), reversed(caches)):
        grad_out = nn.layer_norm_backward(ln_cache, layer.gamma, layer.beta, grad_out)
        grad_out = nn.linear_backward(x_in, layer.w, layer.b, grad_out)
    return grad_out


def attentive_pool(x: np.ndarray, w_att: Param, v_att: Param,
                   true_len: int | None = None):
    """Additive attention over time: scores v^T tanh(x W), masked softmax,
    convex combination of rows. Returns (pooled, alpha, cache)."""
    x = np.asarray(x)
    T = x.shape[0]
    if T < 1:
        raise ShapeError("attentive_pool needs at least one frame")
    h = np.tanh(x @ w_att.value)          # (T, a)
    s = (h @ v_att.value)[:, 0]           # (T,)
    if true_len is not None and true_len < T:
        mask = np.zeros(T, dtype=bool)
        mask[:max(1, true_len)] = True
    else:
        mask = np.ones(T, dtype=bool)
    s_masked = np.where(mask, s, -np.inf)
    alpha = np.zeros(T, dtype=x.dtype)
    alpha[mask] = nn.softmax(s_masked[mask])
    pooled = alpha @ x
    return pooled, alpha, (x, h, mask)


def attentive_pool_backward(cache, alpha: np.ndarray, w_att: Param,
                            v_att: Param, grad_out: np.ndarray) -> np.ndarray:
    x, h, mask = cache
    grad_x = alpha[:, None] * grad_out[None, :]
    d_alpha = x @ grad_out
    d_s = np.zeros_like(alpha)
    d_s[mask] = nn.softmax_backward(alpha[mask], d_alpha[mask])
    d_h = d_s[:, None] * v_att.value[:, 0][None, :]
    v_att.grad += (h.T @ d_s)[:, None]
    d_u = d_h * (1 - h * h)
    w_att.grad += x.T @ d_u
    grad_x += d_u @ w_att.value.T
    return grad_x


def speaker_average(pooled: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of segment vectors in the given (caller-sorted) order."""
    if not pooled:
        raise ShapeError("speaker_average needs at least one segment vector")
    acc = np.zeros_like(pooled[0], dtype=np.float64)
    for v in pooled:
        acc += v
    return (acc / len(pooled)).astype(pooled[0].dtype)


def classify(f: np.ndarray, w_cls: Param, b_cls: Param) -> float:
    """Linear logit; probability sigmoid(logit); AD iff probability >= 0.5."""
    f = np.asarray(f)
    if f.shape != (w_cls.value.shape[0],):
        raise ShapeError(f"feature {f.shape} vs classifier {w_cls.value.shape}")
    return float(f @ w_cls.value[:, 0] + b_cls.value[0, 0])


def classify_backward(f: np.ndarray, w_cls: Param, b_cls: Param,
                      dlogit: float) -> np.ndarray:
    w_cls.grad += (f * dlogit)[:, None]
    b_cls.grad += dlogit
    return dlogit * w_cls.value[:, 0]


def decide(logit: float) -> str:
    """Ties at probability exactly 0.5 classify as AD."""
    return "AD" if nn.sigmoid(logit) >= 0.5 else "HC"


# ---------------------------------------------------------------------------
# Full speaker pass


def forward_speaker(segments: list[np.ndarray], cfg: HeadConfig,
                    params: HeadParams, rng: np.random.Generator | None = None,
                    training: bool = False,
                    true_lens: list[int] | None = None):
    """Per segment: aggregate -> project -> dropout -> attentive pool; then
    average over segments and classify. Returns (logit, cache)."""
    if not segments:
        raise ShapeError("forward_speaker needs at least one segment")
    shapes = {(s.shape[0], s.shape[2]) for s in segments}
    if len(shapes) > 1:
        raise ShapeError(f"segments disagree on (L, H): {sorted(shapes)}")
    L, H = segments[0].shape[0], segments[0].shape[2]
    if L != cfg.layers or H != cfg.hidden_in:
        raise ShapeError(f"tensor (L={L}, H={H}) vs config "
                         f"(L={cfg.layers}, H={cfg.hidden_in})")
    seg_caches = []
    pooled_all = []
    for i, e in enumerate(segments):
        if cfg.agg_mode == "WS":
            agg, weights = aggregate_layers_ws(e, params.layer_logits)
        else:
            agg, weights = aggregate_layers_ms(e, cfg.ms_layer), None
        proj_out, proj_caches = project(agg, params.proj)
        dropped, mask = nn.dropout(proj_out, cfg.dropout_rate, rng,
                                   training=training and rng is not None)
        tl = true_lens[i] if true_lens is not None else None
        pooled, alpha, att_cache = attentive_pool(dropped, params.w_att,
                                                  params.v_att, tl)
        pooled_all.append(pooled)
        seg_caches.append((e, weights, agg, proj_caches, mask, alpha, att_cache))
    feat = speaker_average(pooled_all)
    logit = classify(feat, params.w_cls, params.b_cls)
    return logit, (seg_caches, feat)


def backward_speaker(cache, dlogit: float, cfg: HeadConfig,
                     params: HeadParams) -> None:
    """Exact reverse of forward_speaker; accumulates into all Param grads."""
    seg_caches, feat = cache
    d_feat = classify_backward(feat, params.w_cls, params.b_cls, dlogit)
    d_pooled = d_feat / len(seg_caches)
    for (e, weights, agg, proj_caches, mask, alpha, att_cache) in seg_caches:
        g = attentive_pool_backward(att_cache, alpha, params.w_att,
                                    params.v_att, d_pooled.astype(e.dtype))
        g = g * mask
        g = project_backward(params.proj, proj_caches, g)
        if cfg.agg_mode == "WS":
            aggregate_layers_ws_backward(e, weights, params.layer_logits, g)


# ---------------------------------------------------------------------------
# Checkpoints: magic "ADHP", version u16, then named tensor records
# (name-length u16, name bytes, rank u8, dims u64 x rank, float32 payload).


def save_checkpoint(params: HeadParams, cfg: HeadConfig, path) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<H", CKPT_VERSION))
        for name, p in params.named():
            nb = name.encode()
            v = np.ascontiguousarray(p.value, dtype="<f4")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", v.ndim))
            f.write(struct.pack(f"<{v.ndim}Q", *v.shape))
            f.write(v.tobytes())
    import json
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[HeadParams, HeadConfig]:
    import json
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as f:
        cfg = HeadConfig.from_dict(json.load(f))
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CKPT_MAGIC:
            raise ConfigError(f"{path}: bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CKPT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        while True:
            raw = f.read(2)
            if not raw:
                break
            (nlen,) = struct.unpack("<H", raw)
            name = f.read(nlen).decode()
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
            n = int(np.prod(dims))
            payload = f.read(4 * n)
            if len(payload) < 4 * n:
                raise ConfigError(f"{path}: truncated tensor '{name}'")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    d_feat = tensors["w_cls"].shape[0]
    rng = nn.make_rng(0)
    params = init_head_params(cfg, rng, classifier_in=d_feat)
    for name, p in params.named():
        if name not in tensors:
            raise ConfigError(f"{path}: missing tensor '{name}'")
        if tensors[name].shape != p.value.shape:
            raise ConfigError(f"{path}: tensor '{name}' shape mismatch")
        p.value[...] = tensors[name]
    return params, cfg
