"""Trainable classification head over frozen-encoder frames.

Architecture: linear -> leaky ReLU -> dropout -> attention pooling across
time -> linear -> leaky ReLU -> dropout -> scalar output logit. Gradients
are derived by hand (including the softmax Jacobian through the pooling
weights) and checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from speechbench.embed import EmbeddingSequence
from speechbench.errors import CheckpointError, ShapeError
from speechbench.seeds import rng_from

TENSOR_ORDER = ("w1", "b1", "attn_v", "w2", "b2", "w_out", "b_out")


@dataclass(frozen=True)
class HeadHyper:
    """Hyperparameters: dropout 0.2, leaky slope 0.01, width 768, Adam defaults."""

    dropout_rate: float = 0.2
    leaky_slope: float = 0.01
    h: int = 768
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.leaky_slope <= 0:
            raise ValueError("leaky_slope must be positive")


@dataclass(frozen=True)
class HeadParams:
    """All trainable tensors. Shapes: w1 DxH, b1 H, attn_v H, w2 HxH, b2 H,
    w_out H, b_out scalar."""

    w1: np.ndarray
    b1: np.ndarray
    attn_v: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_out: np.ndarray
    b_out: float

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def h(self) -> int:
        return self.w1.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)) for name in TENSOR_ORDER}


@dataclass
class ForwardTrace:
    """Intermediates cached by forward for the matching backward pass."""

    frames: np.ndarray
    z1: np.ndarray
    dropped1: np.ndarray
    alpha: np.ndarray
    pooled: np.ndarray
    z2: np.ndarray
    dropped2: np.ndarray
    logit: float
    mask1: np.ndarray | None
    mask2: np.ndarray | None


def init_params(d: int, h: int, seed: int) -> HeadParams:
    """Xavier-uniform weights (per-matrix bound sqrt(6/(fan_in+fan_out)));
    all biases zero. Deterministic per seed."""
    if d < 1 or h < 1:
        raise ValueError("dimensions must be positive")
    rng = rng_from(seed)

    def xavier(fan_in, fan_out, shape):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    return HeadParams(
        w1=xavier(d, h, (d, h)),
        b1=np.zeros(h),
        attn_v=xavier(h, 1, (h,)),
        w2=xavier(h, h, (h, h)),
        b2=np.zeros(h),
        w_out=xavier(h, 1, (h,)),
        b_out=0.0,
    )


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def attention_pool(frames: np.ndarray, attn_v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-weighted average over time.

    Scores are scaled dot products (frames_t . attn_v) / sqrt(H); returns
    (pooled H-vector, alpha weights over the T frames).
    """
    frames = np.asarray(frames, dtype=np.float64)
    scores = frames @ np.asarray(attn_v, dtype=np.float64) / math.sqrt(frames.shape[1])
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    alpha = exp / exp.sum()
    return alpha @ frames, alpha


def forward(p: HeadParams, hy: HeadHyper, emb: EmbeddingSequence, mode: str = "eval", seed: int | None = None) -> tuple[float, ForwardTrace]:
    """Run the head over one clip's frames, returning the logit and a trace.

    Dropout is active only in train mode (inverted scaling, mask drawn from
    `seed`); eval mode is deterministic and mask-free.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    frames = np.asarray(emb.frames, dtype=np.float64)
    if frames.shape[1] != p.d:
        raise ShapeError(f"embedding D={frames.shape[1]} but head expects D={p.d}")

    train = mode == "train" and hy.dropout_rate > 0.0
    if train and seed is None:
        raise ValueError("train mode requires a seed for the dropout masks")
    rng = rng_from(seed) if train else None
    keep = 1.0 - hy.dropout_rate

    z1 = frames @ p.w1 + p.b1
    a1 = _leaky(z1, hy.leaky_slope)
    if train:
        mask1 = rng.random(a1.shape) < keep
        dropped1 = a1 * mask1 / keep
    else:
        mask1 = None
        dropped1 = a1

    pooled, alpha = attention_pool(dropped1, p.attn_v)

    z2 = pooled @ p.w2 + p.b2
    a2 = _leaky(z2, hy.leaky_slope)
    if train:
        mask2 = rng.random(a2.shape) < keep
        dropped2 = a2 * mask2 / keep
    else:
        mask2 = None
        dropped2 = a2

    logit = float(dropped2 @ p.w_out + p.b_out)
    trace = ForwardTrace(
        frames=frames,
        z1=z1,
        dropped1=dropped1,
        alpha=alpha,
        pooled=pooled,
        z2=z2,
        dropped2=dropped2,
        logit=logit,
        mask1=mask1,
        mask2=mask2,
    )
    return logit, trace


def bce_loss(logit: float, label: int) -> tuple[float, float]:
    """Binary cross-entropy on the logit: softplus(logit) - label * logit.

    Numerically stable for large |logit|; also returns dloss/dlogit =
    sigmoid(logit) - label.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    softplus = max(logit, 0.0) + math.log1p(math.exp(-abs(logit)))
    sigmoid = 1.0 / (1.0 + math.exp(-logit)) if logit >= 0 else math.exp(logit) / (1.0 + math.exp(logit))
    return softplus - label * logit, sigmoid - label


def backward(p: HeadParams, hy: HeadHyper, trace: ForwardTrace, dloss_dlogit: float) -> dict[str, np.ndarray]:
    """Exact gradients of the traced forward computation.

    Reuses the trace's dropout masks; includes the softmax Jacobian path
    through the attention weights. Returns one array per tensor name.
    """
    if trace.frames.shape[1] != p.d:
        raise ShapeError("trace does not match the given params")
    keep = 1.0 - hy.dropout_rate
    g = float(dloss_dlogit)

    d_b_out = g
    d_w_out = g * trace.dropped2
    d_dropped2 = g * p.w_out
    d_a2 = d_dropped2 * trace.mask2 / keep if trace.mask2 is not None else d_dropped2
    d_z2 = d_a2 * _leaky_grad(trace.z2, hy.leaky_slope)

    d_b2 = d_z2
    d_w2 = np.outer(trace.pooled, d_z2)
    d_pooled = p.w2 @ d_z2

    # pooled = sum_t alpha_t * dropped1_t
    d_alpha = trace.dropped1 @ d_pooled
    d_dropped1 = np.outer(trace.alpha, d_pooled)
    # softmax Jacobian: d_score_t = alpha_t * (d_alpha_t - sum_k alpha_k d_alpha_k)
    d_scores = trace.alpha * (d_alpha - float(trace.alpha @ d_alpha))
    sqrt_h = math.sqrt(p.h)
    d_attn_v = trace.dropped1.T @ d_scores / sqrt_h
    d_dropped1 = d_dropped1 + np.outer(d_scores, p.attn_v) / sqrt_h

    d_a1 = d_dropped1 * trace.mask1 / keep if trace.mask1 is not None else d_dropped1
    d_z1 = d_a1 * _leaky_grad(trace.z1, hy.leaky_slope)
    d_w1 = trace.frames.T @ d_z1
    d_b1 = d_z1.sum(axis=0)

    return {
        "w1": d_w1,
        "b1": d_b1,
        "attn_v": d_attn_v,
        "w2": d_w2,
        "b2": d_b2,
        "w_out": d_w_out,
        "b_out": np.atleast_1d(d_b_out),
    }


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per tensor."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, p: HeadParams) -> "AdamState":
        tensors = p.tensors()
        return cls(
            m={k: np.zeros_like(t) for k, t in tensors.items()},
            v={k: np.zeros_like(t) for k, t in tensors.items()},
        )


def adam_step(p: HeadParams, grads: dict[str, np.ndarray], state: AdamState, t: int, hy: HeadHyper) -> tuple[HeadParams, AdamState]:
    """One bias-corrected adaptive-moment update; pure (inputs untouched)."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    tensors = p.tensors()
    new_m, new_v, updated = {}, {}, {}
    for name, theta in tensors.items():
        grad = np.atleast_1d(np.asarray(grads[name], dtype=np.float64))
        if grad.shape != theta.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, expected {theta.shape}")
        m = hy.beta1 * state.m[name] + (1.0 - hy.beta1) * grad
        v = hy.beta2 * state.v[name] + (1.0 - hy.beta2) * np.square(grad)
        m_hat = m / (1.0 - hy.beta1**t)
        v_hat = v / (1.0 - hy.beta2**t)
        updated[name] = theta - hy.learning_rate * m_hat / (np.sqrt(v_hat) + hy.epsilon)
        new_m[name] = m
        new_v[name] = v
    new_params = HeadParams(
        **{k: updated[k] for k in ("w1", "b1", "attn_v", "w2", "b2", "w_out")},
        b_out=float(updated["b_out"][0]),
    )
    return new_params, AdamState(m=new_m, v=new_v)


def save_checkpoint(path, p: HeadParams, hy: HeadHyper, step: int) -> None:
    """Checkpoint layout: u32 header length, JSON header (dims, hyper, step,
    tensor order), then raw little-endian f32 tensors in declared order."""
    header = json.dumps(
        {
            "d": p.d,
            "h": p.h,
            "step": step,
            "tensor_order": list(TENSOR_ORDER),
            "hyper": {
                "dropout_rate": hy.dropout_rate,
                "leaky_slope": hy.leaky_slope,
                "h": hy.h,
                "learning_rate": hy.learning_rate,
                "beta1": hy.beta1,
                "beta2": hy.beta2,
                "epsilon": hy.epsilon,
            },
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, tensor in p.tensors().items():
            fh.write(tensor.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[HeadParams, HeadHyper, int]:
    with open(path, "rb") as fh:
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            raise CheckpointError(f"{path}: missing header length")
        (header_len,) = struct.unpack("<I", raw_len)
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: bad header: {exc}") from exc
        d, h = int(header["d"]), int(header["h"])
        shapes = {
            "w1": (d, h),
            "b1": (h,),
            "attn_v": (h,),
            "w2": (h, h),
            "b2": (h,),
            "w_out": (h,),
            "b_out": (1,),
        }
        tensors = {}
        for name in header["tensor_order"]:
            count = int(np.prod(shapes[name]))
            payload = fh.read(count * 4)
            if len(payload) != count * 4:
                raise CheckpointError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shapes[name])
    hyper = HeadHyper(**header["hyper"])
    params = HeadParams(
        w1=tensors["w1"],
        b1=tensors["b1"],
        attn_v=tensors["attn_v"],
        w2=tensors["w2"],
        b2=tensors["b2"],
        w_out=tensors["w_out"],
        b_out=float(tensors["b_out"][0]),
    )
    return params, hyper, int(header["step"])
