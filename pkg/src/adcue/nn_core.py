"""Minimal deterministic differentiable ops with manual backward passes.

All arrays are 2-D numpy matrices. Ops preserve the dtype of their inputs:
the production path runs in float32, gradient-check tests may feed float64.
Backward passes accumulate (+=) into Param.grad; callers zero grads per batch.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class ConfigError(ValueError):
    """Invalid hyperparameter or configuration value."""


class TrainingError(RuntimeError):
    """Numeric failure during optimization (NaN gradients, diverged loss)."""


# ---------------------------------------------------------------------------
# RNG
#
# All randomness flows through numpy PCG64 generators built from
# SeedSequence, which is deterministic across platforms. Independent streams
# are derived by hashing string/int keys into entropy words, so parallel
# per-file or per-speaker streams cannot collide or depend on scheduling.


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_seed(seed: int, *keys) -> int:
    """Stable 63-bit child seed from a root seed plus arbitrary str/int keys."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode())
    return int.from_bytes(h.digest()[:8], "little") & (2**63 - 1)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return make_rng(derive_seed(seed, *keys))


# ---------------------------------------------------------------------------
# Parameters and optimizer state


@dataclass
class Param:
    """A learnable matrix with a paired gradient buffer of the same shape."""

    value: np.ndarray
    grad: np.ndarray
    name: str = ""

    @classmethod
    def zeros(cls, rows: int, cols: int, name: str = "", dtype=np.float32) -> "Param":
        return cls(np.zeros((rows, cols), dtype=dtype),
                   np.zeros((rows, cols), dtype=dtype), name)

    @classmethod
    def from_value(cls, value: np.ndarray, name: str = "") -> "Param":
        v = np.atleast_2d(np.asarray(value))
        return cls(v.copy(), np.zeros_like(v), name)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    @property
    def shape(self):
        return self.value.shape


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                name: str = "", dtype=np.float32) -> tuple[Param, Param]:
    """Weight uniform in +/- sqrt(1/fan_in), bias zero."""
    bound = math.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    weight = Param(w, np.zeros_like(w), name + ".w")
    bias = Param.zeros(1, fan_out, name + ".b", dtype=dtype)
    return weight, bias


@dataclass
class HyperParams:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9   # paper silent on betas/eps; standard defaults
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_param(cls, p: Param) -> "AdamWState":
        return cls(np.zeros_like(p.value), np.zeros_like(p.value), 0)


def init_adamw_states(params: list[Param]) -> list[AdamWState]:
    return [AdamWState.for_param(p) for p in params]


def adamw_step(params: list[Param], states: list[AdamWState], h: HyperParams) -> None:
    """One decoupled-weight-decay Adam step over all params, in place.

    Weight decay multiplies the parameter directly (not folded into the
    gradient); moments are bias-corrected. Gradients are left untouched.
    """
    if len(params) != len(states):
        raise ShapeError(f"{len(params)} params vs {len(states)} states")
    for p, s in zip(params, states):
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter '{p.name}'")
        s.step += 1
        g = p.grad
        s.m = h.beta1 * s.m + (1 - h.beta1) * g
        s.v = h.beta2 * s.v + (1 - h.beta2) * (g * g)
        m_hat = s.m / (1 - h.beta1 ** s.step)
        v_hat = s.v / (1 - h.beta2 ** s.step)
        p.value -= h.lr * h.weight_decay * p.value
        p.value -= (h.lr * m_hat / (np.sqrt(v_hat) + h.eps)).astype(p.value.dtype)


# ---------------------------------------------------------------------------
# Forward / backward ops


def _check2d(name: str, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def linear_forward(x: np.ndarray, w: Param, b: Param) -> np.ndarray:
    x = _check2d("x", x)
    if x.shape[1] != w.value.shape[0]:
        raise ShapeError(
            f"linear_forward: x {x.shape} incompatible with w {w.value.shape}")
    if b.value.shape != (1, w.value.shape[1]):
        raise ShapeError(
            f"linear_forward: b {b.value.shape} incompatible with w {w.value.shape}")
    return x @ w.value + b.value


def linear_backward(x: np.ndarray, w: Param, b: Param,
                    grad_out: np.ndarray) -> np.ndarray:
    grad_out = _check2d("grad_out", grad_out)
    if grad_out.shape != (x.shape[0], w.value.shape[1]):
        raise ShapeError(
            f"linear_backward: grad_out {grad_out.shape} vs expected "
            f"({x.shape[0]}, {w.value.shape[1]})")
    w.grad += x.T @ grad_out
    b.grad += grad_out.sum(axis=0, keepdims=True)
    return grad_out @ w.value.T


def layer_norm_forward(x: np.ndarray, gamma: Param, beta: Param,
                       eps: float = 1e-5):
    """Row-wise normalization, then scale/shift. Returns (out, cache)."""
    x = _check2d("x", x)
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = x_hat * gamma.value + beta.value
    return out, (x_hat, inv_std)


def layer_norm_backward(cache, gamma: Param, beta: Param,
                        grad_out: np.ndarray) -> np.ndarray:
    x_hat, inv_std = cache
    gamma.grad += (grad_out * x_hat).sum(axis=0, keepdims=True)
    beta.grad += grad_out.sum(axis=0, keepdims=True)
    d_xhat = grad_out * gamma.value
    # standard row-wise layer-norm gradient
    return inv_std * (d_xhat
                      - d_xhat.mean(axis=1, keepdims=True)
                      - x_hat * (d_xhat * x_hat).mean(axis=1, keepdims=True))


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis."""
    v = np.asarray(v)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through softmax given its output probs."""
    dot = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - dot)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator,
            training: bool):
    """Inverted dropout. Returns (out, mask); mask includes the 1/(1-rate)
    scaling so backward is just grad * mask."""
    if not (0 <= rate < 1):
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x)
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    mask = keep / np.asarray(1.0 - rate, dtype=x.dtype)
    return x * mask, mask


def bce_with_logits(logit: float, label: int) -> tuple[float, float]:
    """Stable binary cross-entropy on a raw logit.

    loss = softplus(logit) - label * logit, dloss/dlogit = sigmoid(logit) - label.
    """
    if label not in (0, 1):
        raise ConfigError(f"label must be 0 or 1, got {label}")
    z = float(logit)
    # softplus without overflow for large |z|
    softplus = max(z, 0.0) + math.log1p(math.exp(-abs(z)))
    loss = softplus - label * z
    sig = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return loss, sig - label


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def finite_difference_gradient(loss_fn, params: list[Param],
                               h: float = 1e-3) -> list[np.ndarray]:
    """Central-difference gradient of loss_fn() w.r.t. every scalar in params.

    loss_fn takes no arguments and reads the current param values; it must be
    deterministic (fix any dropout masks before calling).
    """
    if h <= 0:
        raise ConfigError("finite difference step h must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p.value, dtype=np.float64)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            g.reshape(-1)[i] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    """max over elements of |a - n| / max(1e-8, |a| + |n|)."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
