"""The LOE inference interface: every query reveals shuffled activations.

The attack side only ever receives :class:`QueryRecord` objects.  The
matching :class:`GroundTruth` (secret permutations, unshuffled trace) is
returned separately for the evaluation harness.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fxp import FxpConfig
from .permutation import Permutation, random_permutation, shuffle
from .transformer import Model, ActivationTrace, forward, parse_label

__all__ = [
    "Permutation", "shuffle", "random_permutation", "OracleConfig", "AttentionReveal",
    "QueryRecord", "GroundTruth", "query", "run_campaign", "withheld_fields",
]


@dataclass(frozen=True)
class OracleConfig:
    fxp: FxpConfig | None = field(default_factory=FxpConfig)
    noise_sigma: float = 0.0
    layernorm_private: bool = False
    reveal_attention: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class AttentionReveal:
    """Attention internals visible when activation products are computed privately.

    ``x`` and the columns of ``x_pre`` are shuffled by independent hidden
    permutations; ``s`` and ``p`` are H x T with the position axis shuffled
    (one permutation shared by all heads); ``x_pre`` rows stay in prompt order.
    Fields are ``None`` when withheld.
    """

    x: np.ndarray | None
    x_pre: np.ndarray | None
    s: np.ndarray | None
    p: np.ndarray | None
    o: np.ndarray | None


@dataclass
class QueryRecord:
    query_id: int
    inputs: dict[str, np.ndarray | None]
    outputs: dict[str, np.ndarray | None]
    attn: list[AttentionReveal]
    y: np.ndarray


@dataclass
class GroundTruth:
    query_id: int
    perm_in: dict[str, Permutation]
    perm_out: dict[str, Permutation]
    attn_perms: list[dict[str, Permutation]]
    trace: ActivationTrace


def withheld_fields(label: str, cfg: OracleConfig) -> tuple[bool, bool]:
    """Which sides of a linear layer the client never sees: ``(input, output)``.

    With a private layernorm the inputs of W_qkv/W_h1 (layernorm outputs) and
    the outputs of W_o/W_h2 (which only feed residual + layernorm) stay hidden.
    """
    if not cfg.layernorm_private:
        return False, False
    _, kind = parse_label(label)
    return kind in ("qkv", "h1"), kind in ("o", "h2")


def _reveal(x, perm, noise, rng):
    out = shuffle(x, perm)
    if noise > 0:
        out = out + rng.normal(0.0, noise, size=out.shape)
    return out


def query(model: Model, prompt, cfg: OracleConfig, rng: np.random.Generator, query_id: int = 0,
          generation_step: int = 1) -> tuple[QueryRecord, GroundTruth]:
    """One call to the oracle.

    Runs the (fixed-point) forward for the ``generation_step``-th generated
    token, then draws fresh permutations for every revealed vector.
    """
    tokens = list(np.asarray(prompt, dtype=np.int64))
    for _ in range(generation_step - 1):
        logits, _, _ = forward(model, tokens, cfg.fxp, rng)
        tokens.append(int(np.argmax(logits)))
    _, y, trace = forward(model, tokens, cfg.fxp, rng)

    sigma = cfg.noise_sigma
    inputs, outputs, perm_in, perm_out = {}, {}, {}, {}
    for label in model.cfg.linear_labels():
        hide_in, hide_out = withheld_fields(label, cfg)
        xin, xout = trace.inputs[label], trace.outputs[label]
        perm_in[label] = random_permutation(xin.size, rng)
        perm_out[label] = random_permutation(xout.size, rng)
        inputs[label] = None if hide_in else _reveal(xin, perm_in[label], sigma, rng)
        outputs[label] = None if hide_out else _reveal(xout, perm_out[label], sigma, rng)

    attn, attn_perms = [], []
    T = len(tokens)
    for l, at in enumerate(trace.attn):
        perms = {
            "x": random_permutation(at.x.size, rng),
            "x_pre": random_permutation(at.x_pre.shape[1], rng),
            "pos": random_permutation(T, rng),
        }
        attn_perms.append(perms)
        if not cfg.reveal_attention:
            attn.append(AttentionReveal(None, None, None, None, None))
            continue
        hide_ln = cfg.layernorm_private
        o_hidden = outputs[f"L{l}.o"] is None
        attn.append(
            AttentionReveal(
                x=None if hide_ln else _reveal(at.x, perms["x"], sigma, rng),
                x_pre=None if hide_ln else _reveal(at.x_pre, perms["x_pre"], sigma, rng),
                s=_reveal(at.s, perms["pos"], sigma, rng),
                p=_reveal(at.p, perms["pos"], sigma, rng),
                o=None if o_hidden else outputs[f"L{l}.o"].copy(),
            )
        )

    y_rev = y if sigma == 0 else y + rng.normal(0.0, sigma, size=y.shape)
    record = QueryRecord(query_id, inputs, outputs, attn, y_rev)
    truth = GroundTruth(query_id, perm_in, perm_out, attn_perms, trace)
    return record, truth


def run_campaign(model: Model, prompts, cfg: OracleConfig, generation_step: int = 1):
    """Query once per prompt; each query gets its own child RNG stream."""
    streams = np.random.SeedSequence(cfg.seed).spawn(len(prompts))
    records, truths = [], []
    for i, (prompt, ss) in enumerate(zip(prompts, streams)):
        rec, gt = query(model, prompt, cfg, np.random.default_rng(ss), query_id=i, generation_step=generation_step)
        records.append(rec)
        truths.append(gt)
    return records, truths

