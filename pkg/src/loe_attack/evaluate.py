"""Harness-side metrics.  These functions may look at ground truth."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .align import AlignedDataset
from .extract import AlignedSystem, PinvConfig, condition_number, solve_weights
from .permutation import Permutation, permute_weight
from .transformer import DecoderWeights, Model, forward

KL_FLOOR = 1e-12

ALIGNMENT_COLUMNS = ("label", "side", "n_vectors", "h", "correct", "total", "correct_rate", "value_correct", "mse")
WEIGHT_COLUMNS = ("label", "recoverable", "h_in", "h_out", "n_queries", "l1_mean", "l1_max",
                  "retained_rank", "condition_number")
SWEEP_COLUMNS = ("label", "condition_cap", "l1_mean", "retained_rank")


@dataclass
class AlignmentRow:
    label: str
    side: str
    n_vectors: int
    h: int
    correct: int
    total: int
    value_correct: int
    mse: float

    @property
    def correct_rate(self) -> float:
        return self.correct / self.total if self.total else 1.0


@dataclass
class WeightRow:
    label: str
    recoverable: bool
    h_in: int
    h_out: int
    n_queries: int
    l1_mean: float = math.nan
    l1_max: float = math.nan
    retained_rank: int = 0
    condition_number: float = math.nan


@dataclass
class SweepReport:
    label: str
    caps: list[float] = field(default_factory=list)
    l1_mean: list[float] = field(default_factory=list)
    retained_rank: list[int] = field(default_factory=list)

    def best_cap(self) -> float:
        return self.caps[int(np.argmin(self.l1_mean))]

    def best_is_interior(self) -> bool:
        i = int(np.argmin(self.l1_mean))
        return 0 < i < len(self.caps) - 1


# ----------------------------------------------------------------- alignment


def oracle_transforms(perms: list[Permutation], k: int) -> list[Permutation]:
    """The true re-expression of query ``i`` in query ``k``'s frame."""
    return [p.inverse().then(perms[k]) for p in perms]


def oracle_align(revealed: np.ndarray, perms: list[Permutation], k: int = 0) -> np.ndarray:
    return np.stack([t.apply(v) for t, v in zip(oracle_transforms(perms, k), revealed)])


def alignment_metrics(aligned: AlignedDataset, revealed: np.ndarray, perms: list[Permutation],
                      label: str = "", side: str = "") -> AlignmentRow:
    """Positions matched correctly and MSE against oracle alignment.

    The reference row is excluded from both counts since it is aligned
    trivially.  ``mse`` averages over every element of the other rows.
    """
    revealed = np.asarray(revealed, dtype=np.float64)
    n, h = revealed.shape
    if len(perms) != n or len(aligned.transforms) != n:
        raise ValueError("aligned data, revealed vectors and permutations disagree in length")
    k = aligned.reference_index
    truth = oracle_transforms(perms, k)
    correct = value_correct = 0
    sq = 0.0
    for i in range(n):
        if i == k:
            continue
        correct += int(np.sum(aligned.transforms[i].sigma == truth[i].sigma))
        target = truth[i].apply(revealed[i])
        value_correct += int(np.sum(aligned.X[i] == target))
        sq += float(np.sum((aligned.X[i] - target) ** 2))
    total = (n - 1) * h
    return AlignmentRow(label, side, n, h, correct, total, value_correct, sq / total if total else 0.0)


# ------------------------------------------------------------------- weights


def weight_l1(w_prime: np.ndarray, w: np.ndarray, perm_in: Permutation, perm_out: Permutation) -> tuple[float, float]:
    expected = permute_weight(w, perm_in, perm_out)
    if expected.shape != np.shape(w_prime):
        raise ValueError(f"shape mismatch {np.shape(w_prime)} vs {expected.shape}")
    diff = np.abs(np.asarray(w_prime) - expected)
    return float(diff.mean()), float(diff.max())


def condition_sweep(system: AlignedSystem, w_expected: np.ndarray, caps) -> SweepReport:
    """Extraction error for each condition cap; ``w_expected`` is already permuted."""
    caps = [float(c) for c in caps]
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ValueError("condition caps must be strictly increasing")
    rep = SweepReport(system.label)
    for c in caps:
        ex = solve_weights(system, PinvConfig(c))
        rep.caps.append(c)
        rep.l1_mean.append(float(np.abs(ex.w - w_expected).mean()))
        rep.retained_rank.append(ex.retained_rank)
    return rep


def weight_row(label: str, ex, w: np.ndarray, perm_in: Permutation, perm_out: Permutation,
               x_in: np.ndarray, n_queries: int) -> WeightRow:
    mean, mx = weight_l1(ex.w, w, perm_in, perm_out)
    return WeightRow(label, True, w.shape[0], w.shape[1], n_queries, mean, mx, ex.retained_rank,
                     condition_number(x_in))


# ------------------------------------------------------ functional invariance


@dataclass
class PermutationScheme:
    """Hidden-unit relabelling of a whole model that keeps it functional.

    ``residual`` acts on the d_model stream everywhere.  Per decoder layer,
    ``head_order`` moves whole heads, ``qk`` holds one within-head
    permutation per head shared by queries and keys, ``v`` one per head for
    values, and ``ffn`` relabels the hidden FFN units.
    """

    residual: Permutation
    head_order: list[Permutation]
    qk: list[list[Permutation]]
    v: list[list[Permutation]]
    ffn: list[Permutation]

    @classmethod
    def random(cls, cfg, rng: np.random.Generator) -> "PermutationScheme":
        H, dk = cfg.num_heads, cfg.d_head
        L = cfg.num_layers
        return cls(
            residual=Permutation.random(cfg.d_model, rng),
            head_order=[Permutation.random(H, rng) for _ in range(L)],
            qk=[[Permutation.random(dk, rng) for _ in range(H)] for _ in range(L)],
            v=[[Permutation.random(dk, rng) for _ in range(H)] for _ in range(L)],
            ffn=[Permutation.random(cfg.d_ffn, rng) for _ in range(L)],
        )

    @classmethod
    def identity(cls, cfg) -> "PermutationScheme":
        H, dk, L = cfg.num_heads, cfg.d_head, cfg.num_layers
        I = Permutation.identity
        return cls(I(cfg.d_model), [I(H) for _ in range(L)], [[I(dk)] * H for _ in range(L)],
                   [[I(dk)] * H for _ in range(L)], [I(cfg.d_ffn) for _ in range(L)])

    def check(self, cfg) -> None:
        H, dk = cfg.num_heads, cfg.d_head
        if len(self.residual) != cfg.d_model:
            raise ValueError("residual permutation has the wrong size")
        for l in range(cfg.num_layers):
            if len(self.head_order[l]) != H or len(self.ffn[l]) != cfg.d_ffn:
                raise ValueError(f"layer {l}: head/ffn permutation has the wrong size")
            if len(self.qk[l]) != H or len(self.v[l]) != H:
                raise ValueError(f"layer {l}: need one within-head permutation per head")
            if any(len(p) != dk for p in self.qk[l] + self.v[l]):
                raise ValueError(f"layer {l}: within-head permutation has the wrong size")

    def _head_perm(self, l: int, within: list[Permutation], dk: int) -> Permutation:
        order = self.head_order[l].sigma
        sigma = np.concatenate([order[h] * dk + within[h].sigma for h in range(len(within))])
        return Permutation(sigma)

    def boundaries(self, cfg) -> dict[str, tuple[Permutation, Permutation]]:
        """Input and output permutation of every linear layer."""
        d, dk = cfg.d_model, cfg.d_head
        out = {}
        for l in range(cfg.num_layers):
            q = self._head_perm(l, self.qk[l], dk)
            v = self._head_perm(l, self.v[l], dk)
            qkv = Permutation(np.concatenate([q.sigma, q.sigma + d, v.sigma + 2 * d]))
            out[f"L{l}.qkv"] = (self.residual, qkv)
            out[f"L{l}.o"] = (v, self.residual)
            out[f"L{l}.h1"] = (self.residual, self.ffn[l])
            out[f"L{l}.h2"] = (self.ffn[l], self.residual)
        return out


def permute_model(model: Model, scheme: PermutationScheme) -> Model:
    cfg = model.cfg
    scheme.check(cfg)
    r = scheme.residual
    bounds = scheme.boundaries(cfg)
    layers = []
    for l, lw in enumerate(model.layers):
        w = {kind: permute_weight(lw.linear(kind), *bounds[f"L{l}.{kind}"]) for kind in ("qkv", "o", "h1", "h2")}
        layers.append(
            DecoderWeights(
                w_qkv=w["qkv"], w_o=w["o"], w_h1=w["h1"], w_h2=w["h2"],
                ln1_gain=r.apply(lw.ln1_gain), ln1_bias=r.apply(lw.ln1_bias),
                ln2_gain=r.apply(lw.ln2_gain), ln2_bias=r.apply(lw.ln2_bias),
            )
        )
    return Model(cfg, r.apply(model.token_emb), r.apply(model.pos_emb), layers,
                 r.apply(model.lnf_gain), r.apply(model.lnf_bias))


def functional_equivalence(model: Model, permuted: Model, prompts, output_perm: Permutation | None = None) -> float:
    """Largest absolute logit gap over ``prompts``.

    Logits come out of the tied embedding, so a consistent relabelling
    leaves them in vocabulary order; ``output_perm`` undoes any extra
    reordering applied to the permuted model's output.
    """
    if output_perm is not None and len(output_perm) != model.cfg.vocab_size:
        raise ValueError("output permutation does not match the vocabulary")
    gap = 0.0
    for prompt in prompts:
        a, _, _ = forward(model, prompt)
        b, _, _ = forward(permuted, prompt)
        if output_perm is not None:
            b = output_perm.inverse().apply(b)
        gap = max(gap, float(np.abs(a - b).max()))
    return gap


def forward_agreement(original: Model, stolen: Model, prompts) -> tuple[float, float]:
    """Greedy next-token match rate and mean KL(original || stolen)."""
    if original.cfg.vocab_size != stolen.cfg.vocab_size:
        raise ValueError("vocabularies differ")
    matches, kls = 0, []
    for prompt in prompts:
        _, p, _ = forward(original, prompt)
        _, q, _ = forward(stolen, prompt)
        matches += int(np.argmax(p) == np.argmax(q))
        p, q = np.maximum(p, KL_FLOOR), np.maximum(q, KL_FLOOR)
        kls.append(float(np.sum(p * (np.log(p) - np.log(q)))))
    return matches / len(prompts), float(np.mean(kls))


def to_original_frame(w_prime: np.ndarray, perm_in: Permutation, perm_out: Permutation) -> np.ndarray:
    """Undo ``permute_weight`` using harness knowledge of both permutations."""
    return permute_weight(w_prime, perm_in.inverse(), perm_out.inverse())


# ------------------------------------------------- equivalent attention weights


def equivalent_qk(model: Model, layer: int, head: int) -> np.ndarray:
    """``W_q^h W_k^h^T / sqrt(d_k)`` -- maps (x, X_pre row) to the softmax input."""
    wq, wk, _ = model.layers[layer].split_qkv()
    dk = model.cfg.d_head
    sl = slice(head * dk, (head + 1) * dk)
    return wq[:, sl] @ wk[:, sl].T / math.sqrt(dk)


def equivalent_vo(model: Model, layer: int) -> np.ndarray:
    """Stacked ``[W_v^h W_o^h]`` over heads, (H d_model) x d_model."""
    _, _, wv = model.layers[layer].split_qkv()
    wo = model.layers[layer].w_o
    dk = model.cfg.d_head
    return np.concatenate([wv[:, h * dk : (h + 1) * dk] @ wo[h * dk : (h + 1) * dk] for h in range(model.cfg.num_heads)])


# --------------------------------------------------------------- serialisation


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        d = asdict(row) if not isinstance(row, dict) else row
        if isinstance(row, AlignmentRow):
            d["correct_rate"] = row.correct_rate
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def sweep_to_csv(reports: list[SweepReport]) -> str:
    rows = [
        {"label": r.label, "condition_cap": c, "l1_mean": e, "retained_rank": k}
        for r in reports
        for c, e, k in zip(r.caps, r.l1_mean, r.retained_rank)
    ]
    return rows_to_csv(rows, SWEEP_COLUMNS)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def summary_json(doc: dict) -> str:
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (np.floating, np.integer)):
            return clean(o.item())
        return _jsonable(o)

    return json.dumps(clean(doc), indent=2, sort_keys=True) + "\n"
