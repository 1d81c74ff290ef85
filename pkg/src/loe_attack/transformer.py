"""A small pre-layernorm GPT-style decoder with plaintext and fixed-point forwards."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fxp import FxpConfig, RingTensor, encode, linear_fxp, mul_trunc

LINEAR_KINDS = ("qkv", "o", "h1", "h2")
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    d_model: int = 64
    num_heads: int = 4
    d_ffn: int = 256
    vocab_size: int = 512
    max_seq_len: int = 16
    activation: str = "gelu"

    def __post_init__(self):
        for name in ("num_layers", "d_model", "num_heads", "d_ffn", "vocab_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be divisible by num_heads")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads

    def linear_shape(self, kind: str) -> tuple[int, int]:
        d, f = self.d_model, self.d_ffn
        return {"qkv": (d, 3 * d), "o": (d, d), "h1": (d, f), "h2": (f, d)}[kind]

    def linear_labels(self) -> list[str]:
        return [f"L{l}.{k}" for l in range(self.num_layers) for k in LINEAR_KINDS]


@dataclass
class DecoderWeights:
    w_qkv: np.ndarray
    w_o: np.ndarray
    w_h1: np.ndarray
    w_h2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    def linear(self, kind: str) -> np.ndarray:
        return getattr(self, f"w_{kind}")

    def split_qkv(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = self.w_qkv.shape[0]
        return self.w_qkv[:, :d], self.w_qkv[:, d : 2 * d], self.w_qkv[:, 2 * d :]


@dataclass
class Model:
    cfg: ModelConfig
    token_emb: np.ndarray
    pos_emb: np.ndarray
    layers: list[DecoderWeights]
    lnf_gain: np.ndarray
    lnf_bias: np.ndarray

    def linear(self, label: str) -> np.ndarray:
        layer, kind = parse_label(label)
        return self.layers[layer].linear(kind)

    def replace_linear(self, weights: dict[str, np.ndarray]) -> "Model":
        """Copy of the model with some linear weights swapped out (keyed by label)."""
        layers = []
        for l, dw in enumerate(self.layers):
            kw = dict(dw.__dict__)
            for kind in LINEAR_KINDS:
                if f"L{l}.{kind}" in weights:
                    kw[f"w_{kind}"] = np.asarray(weights[f"L{l}.{kind}"], dtype=np.float64)
            layers.append(DecoderWeights(**kw))
        return Model(self.cfg, self.token_emb, self.pos_emb, layers, self.lnf_gain, self.lnf_bias)


def parse_label(label: str) -> tuple[int, str]:
    layer, kind = label.split(".")
    return int(layer[1:]), kind


def init_model(cfg: ModelConfig, seed: int) -> Model:
    """Random weights, zero mean with std 1/sqrt(d_in).

    Layernorm gains are drawn near one and biases near zero; an all-zero bias
    would pin every layernorm output to a hyperplane through the origin and
    make the following linear layer unidentifiable along one direction.
    """
    rng = np.random.default_rng(seed)
    d = cfg.d_model

    def mat(rows, cols):
        return rng.standard_normal((rows, cols)) / math.sqrt(rows)

    def ln():
        return 1.0 + 0.1 * rng.standard_normal(d), 0.1 * rng.standard_normal(d)

    token_emb = rng.standard_normal((cfg.vocab_size, d))
    pos_emb = 0.5 * rng.standard_normal((cfg.max_seq_len, d))
    layers = []
    for _ in range(cfg.num_layers):
        g1, b1 = ln()
        g2, b2 = ln()
        layers.append(
            DecoderWeights(
                w_qkv=mat(d, 3 * d), w_o=mat(d, d), w_h1=mat(d, cfg.d_ffn), w_h2=mat(cfg.d_ffn, d),
                ln1_gain=g1, ln1_bias=b1, ln2_gain=g2, ln2_bias=b2,
            )
        )
    gf, bf = ln()
    return Model(cfg, token_emb, pos_emb, layers, gf, bf)


# ---------------------------------------------------------------- primitives


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def activation_fn(name: str):
    return {"gelu": gelu, "relu": relu}[name]


def softmax(s):
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def normalize(x, eps: float = LN_EPS):
    """Layernorm without the affine part, over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def layer_norm(x, gain, bias, eps: float = LN_EPS):
    return normalize(x, eps) * gain + bias


def attention(q, K, V, d_k: int) -> np.ndarray:
    """softmax(q K^T / sqrt(d_k)) V for a single query row."""
    K = np.atleast_2d(K)
    if K.shape[0] == 0:
        raise ValueError("attention over an empty prefix")
    p = softmax((np.asarray(q) @ K.T) / math.sqrt(d_k))
    return p @ V


def ffn(x, w_h1, w_h2, activation: str = "gelu"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w_h1.shape[0] or w_h1.shape[1] != w_h2.shape[0]:
        raise ValueError("ffn shape mismatch")
    return activation_fn(activation)(x @ w_h1) @ w_h2


# ------------------------------------------------------------------ traces


@dataclass
class AttentionTrace:
    """Per-layer attention internals for the last position."""

    x: np.ndarray  # input of W_q for the current token
    x_pre: np.ndarray  # T x d inputs of W_k/W_v, current token last
    k: np.ndarray
    v: np.ndarray
    s: np.ndarray  # H x T softmax inputs (already scaled by 1/sqrt(d_k))
    p: np.ndarray  # H x T softmax outputs
    o: np.ndarray  # output of W_o


@dataclass
class ActivationTrace:
    inputs: dict[str, np.ndarray] = field(default_factory=dict)
    outputs: dict[str, np.ndarray] = field(default_factory=dict)
    attn: list[AttentionTrace] = field(default_factory=list)


# ------------------------------------------------------------------ backends


class _Plain:
    """Float64 evaluation; linear layers go row by row so a recorded row
    reproduces bit-for-bit under ``row @ W``."""

    def lift(self, x):
        return np.asarray(x, dtype=np.float64)

    def lower(self, v):
        return v

    def weight(self, W):
        return W

    def linear(self, X, W):
        return np.stack([x @ W for x in X])

    def matmul(self, A, B):
        return A @ B

    def add(self, a, b):
        return a + b

    def lin_row(self, v, i):
        return v[i]

    def layer_norm(self, v, gain, bias):
        return layer_norm(v, gain, bias)


class _Fxp:
    """Ring evaluation.  Linear layers and activation products are ring
    products with truncation; the client-side nonlinear steps (softmax, GELU,
    the layernorm reciprocal square root) run on decoded floats."""

    def __init__(self, cfg: FxpConfig, rng):
        self.cfg, self.rng = cfg, rng
        self._cache = {}

    def lift(self, x):
        return encode(x, self.cfg)

    def lower(self, v: RingTensor):
        return v.decode()

    def weight(self, W):
        key = id(W)
        if key not in self._cache:
            self._cache[key] = (W, encode(W, self.cfg))
        return self._cache[key][1]

    def linear(self, X, W):
        return linear_fxp(X, W, self.rng)

    def matmul(self, A, B):
        return linear_fxp(A, B, self.rng)

    def add(self, a, b):
        return a + b

    def layer_norm(self, v: RingTensor, gain, bias):
        x = v.decode()
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        centered = v - encode(np.broadcast_to(mu, x.shape), self.cfg)
        xhat = mul_trunc(centered, encode(1.0 / np.sqrt(var + LN_EPS), self.cfg), self.rng)
        return mul_trunc(xhat, self.weight(gain), self.rng) + self.weight(bias)


def forward(model: Model, tokens, fxp: FxpConfig | None = None, rng: np.random.Generator | None = None):
    """Run the decoder stack and return ``(logits, probs, trace)`` for the
    position after the last token.

    With ``fxp`` set every linear layer and activation product is evaluated
    on the ring; ``rng`` drives the probabilistic truncation.
    """
    cfg = model.cfg
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("need a nonempty 1-D token sequence")
    if tokens.size > cfg.max_seq_len:
        raise ValueError("sequence longer than max_seq_len")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")

    ops = _Plain() if fxp is None else _Fxp(fxp, rng)
    T, d, H, dk = tokens.size, cfg.d_model, cfg.num_heads, cfg.d_head
    act = activation_fn(cfg.activation)
    trace = ActivationTrace()

    h = ops.lift(model.token_emb[tokens] + model.pos_emb[:T])
    for l, lw in enumerate(model.layers):
        x1 = ops.layer_norm(h, lw.ln1_gain, lw.ln1_bias)
        qkv = ops.linear(x1, ops.weight(lw.w_qkv))
        qkv_f = ops.lower(qkv)
        heads_out = []
        s_last = np.empty((H, T))
        p_last = np.empty((H, T))
        for hd in range(H):
            sl = slice(hd * dk, (hd + 1) * dk)
            Q, K, V = qkv[:, sl], qkv[:, d + hd * dk : d + (hd + 1) * dk], qkv[:, 2 * d + hd * dk : 2 * d + (hd + 1) * dk]
            rows = []
            for t in range(T):
                scores = ops.lower(ops.matmul(Q[t : t + 1], K[: t + 1].T))[0] / math.sqrt(dk)
                p = softmax(scores)
                rows.append(ops.matmul(ops.lift(p[None, :]), V[: t + 1]))
                if t == T - 1:
                    s_last[hd], p_last[hd] = scores, p
            heads_out.append(rows)
        attn_in = _concat_heads(ops, heads_out, T)
        o = ops.linear(attn_in, ops.weight(lw.w_o))
        h = ops.add(h, o)
        x2 = ops.layer_norm(h, lw.ln2_gain, lw.ln2_bias)
        f1 = ops.linear(x2, ops.weight(lw.w_h1))
        g = ops.lift(act(ops.lower(f1)))
        f2 = ops.linear(g, ops.weight(lw.w_h2))
        h = ops.add(h, f2)

        for kind, xin, xout in (("qkv", x1, qkv), ("o", attn_in, o), ("h1", x2, f1), ("h2", g, f2)):
            trace.inputs[f"L{l}.{kind}"] = np.asarray(ops.lower(xin[T - 1]), dtype=np.float64)
            trace.outputs[f"L{l}.{kind}"] = np.asarray(ops.lower(xout[T - 1]), dtype=np.float64)
        x1_f = np.asarray(ops.lower(x1))
        trace.attn.append(
            AttentionTrace(
                x=x1_f[-1].copy(), x_pre=x1_f, k=qkv_f[:, d : 2 * d], v=qkv_f[:, 2 * d :],
                s=s_last, p=p_last, o=trace.outputs[f"L{l}.o"].copy(),
            )
        )

    hf = ops.layer_norm(h[T - 1 : T], model.lnf_gain, model.lnf_bias)
    logits = np.asarray(ops.lower(ops.linear(hf, ops.weight(model.token_emb.T))))[0]
    return logits, softmax(logits), trace


def _concat_heads(ops, heads_out, T):
    if isinstance(ops, _Fxp):
        data = np.concatenate([np.concatenate([r.data for r in rows], axis=0) for rows in heads_out], axis=1)
        return RingTensor(data, ops.cfg)
    return np.concatenate([np.concatenate(rows, axis=0) for rows in heads_out], axis=1)
