"""Attention-side attack: equivalent weights when activation products run privately.

Builds the ``W_vo`` and ``W_qk`` systems from revealed attention internals.
Two alignment routes are offered: value alignment from the records alone
(the real attack) and ground-truth alignment for exact-arithmetic checks.
"""
from __future__ import annotations

import numpy as np

from .align import align_dataset, align_matrices
from .evaluate import equivalent_qk, equivalent_vo, oracle_transforms
from .extract import (
    EquivalentAttnWeights, ExtractedWeights, PinvConfig, build_qk_system, resolve_position_frame, solve_qk, solve_vo,
)
from .oracle import GroundTruth, QueryRecord
from .permutation import permute_weight
from .transformer import Model


def _require(records: list[QueryRecord], layer: int, names) -> None:
    for r in records:
        a = r.attn[layer]
        if any(getattr(a, n) is None for n in names):
            raise ValueError(f"layer {layer}: attention fields {names} are not revealed")


def vo_records_aligned(records: list[QueryRecord], layer: int, k: int = 0, cfg: PinvConfig = PinvConfig()):
    """``(p, X_pre, o)`` triples put into query ``k``'s frame using values only.

    Prefix columns and the softmax position axis each share one permutation
    per query, so whole matrices are aligned; the remaining position
    ambiguity between ``p`` and the rows of ``X_pre`` is resolved by
    residual.  Returns ``(triples, order)``.
    """
    _require(records, layer, ("x_pre", "p", "o"))
    xp = align_matrices([r.attn[layer].x_pre for r in records], k).X
    p = align_matrices([r.attn[layer].p for r in records], k).X
    o = align_dataset(np.stack([r.attn[layer].o for r in records]), k).X
    order, _ = resolve_position_frame(p, xp, o, cfg)
    rows = list(order)
    return [(pi, xi[rows], oi) for pi, xi, oi in zip(p, xp, o)], order


def vo_records_oracle(records: list[QueryRecord], truths: list[GroundTruth], layer: int, k: int = 0):
    """Same triples aligned with the true permutations (positions in prompt order)."""
    _require(records, layer, ("x_pre", "p", "o"))
    tx = oracle_transforms([t.attn_perms[layer]["x_pre"] for t in truths], k)
    to = oracle_transforms([t.perm_out[f"L{layer}.o"] for t in truths], k)
    return [
        (t.attn_perms[layer]["pos"].inverse().apply(r.attn[layer].p), a.apply(r.attn[layer].x_pre),
         b.apply(r.attn[layer].o))
        for r, t, a, b in zip(records, truths, tx, to)
    ]


def qk_systems_oracle(records: list[QueryRecord], truths: list[GroundTruth], layer: int, head: int, k: int = 0):
    _require(records, layer, ("x", "x_pre", "s"))
    tx = oracle_transforms([t.attn_perms[layer]["x"] for t in truths], k)
    tp = oracle_transforms([t.attn_perms[layer]["x_pre"] for t in truths], k)
    return [
        build_qk_system(a.apply(r.attn[layer].x), b.apply(r.attn[layer].x_pre),
                        t.attn_perms[layer]["pos"].inverse().apply(r.attn[layer].s)[head])
        for r, t, a, b in zip(records, truths, tx, tp)
    ]


def recover_vo(triples, model: Model, cfg: PinvConfig = PinvConfig()) -> EquivalentAttnWeights:
    return solve_vo(triples, cfg, head_rank=model.cfg.d_head)


def recover_qk(records, truths, model: Model, layer: int, head: int, k: int = 0,
               cfg: PinvConfig = PinvConfig()) -> ExtractedWeights:
    return solve_qk(qk_systems_oracle(records, truths, layer, head, k), model.cfg.d_model, cfg)


# harness side


def expected_vo_blocks(model: Model, truth_k: GroundTruth, layer: int) -> list[np.ndarray]:
    """True ``W_v^h W_o^h`` in the reference query's frames."""
    d = model.cfg.d_model
    full = equivalent_vo(model, layer)
    pin, pout = truth_k.attn_perms[layer]["x_pre"], truth_k.perm_out[f"L{layer}.o"]
    return [permute_weight(full[h * d : (h + 1) * d], pin, pout) for h in range(model.cfg.num_heads)]


def expected_qk(model: Model, truth_k: GroundTruth, layer: int, head: int) -> np.ndarray:
    perms = truth_k.attn_perms[layer]
    return permute_weight(equivalent_qk(model, layer, head), perms["x"], perms["x_pre"])


def vo_block_l1(eq: EquivalentAttnWeights, expected: list[np.ndarray]) -> list[float]:
    return [float(np.abs(eq.block(h) - e).mean()) for h, e in enumerate(expected)]
