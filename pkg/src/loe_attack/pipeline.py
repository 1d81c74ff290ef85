"""Experiment configuration and the staged attack pipeline.

Stages only talk through persisted files (see :mod:`loe_attack.containers`):
query campaign -> alignment -> extraction -> evaluation.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import containers
from .align import SOLVERS, align_dataset, alignment_objective, assignment_cost, cost_matrix, match, solve_assignment
from .evaluate import (
    ALIGNMENT_COLUMNS, WEIGHT_COLUMNS, AlignmentRow, PermutationScheme, WeightRow, alignment_metrics, condition_sweep,
    functional_equivalence, permute_model,
    forward_agreement, rows_to_csv, summary_json, sweep_to_csv, to_original_frame, weight_row,
)
from .extract import AlignedSystem, ExtractedWeights, PinvConfig, solve_weights, truncated_pinv
from .fxp import ErrorMode, FxpConfig
from .oracle import GroundTruth, OracleConfig, QueryRecord, run_campaign
from .permutation import permute_weight
from .transformer import Model, ModelConfig, init_model

log = logging.getLogger(__name__)

DEFAULT_CAPS = (1e5, 1e6, 1e7, 1e8, 1e9)

DEFAULT_CONFIG_TEXT = """\
# Experiment configuration.  Every key is optional; the values shown are the defaults.

[model]
num_layers = 2
d_model = 64
num_heads = 4
# hidden FFN width, usually 4 x d_model
d_ffn = 256
vocab_size = 512
max_seq_len = 16
# gelu | relu
activation = gelu

[fxp]
# false runs the oracle in exact float64 instead of ring arithmetic
enabled = true
ring_bits = 64
# 14, 16 or 18
precision_bits = 18
# probabilistic | deterministic-floor | none
error_mode = probabilistic

[oracle]
# std of Gaussian noise added to every revealed value
noise_sigma = 0.0
# keep layernorm private: hides the layernorm-side of W_qkv, W_o, W_h1, W_h2
layernorm_private = false
reveal_attention = true

[attack]
# 0 means 16 x the largest model dimension
n_queries = 0
reference_index = 0
# sorted | hungarian | both
solver = sorted
condition_cap = 1e7
prompt = 5 17 42 99
# true draws a fresh random prompt per query (ablation)
distinct_prompts = false
generation_step = 1

[sweep]
condition_caps = 1e5 1e6 1e7 1e8 1e9
# empty means the [fxp] precision only
precisions =

[seeds]
model = 0
oracle = 1
attack = 2
"""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    fxp: FxpConfig | None = field(default_factory=FxpConfig)
    noise_sigma: float = 0.0
    layernorm_private: bool = False
    reveal_attention: bool = True
    n_queries: int = 0
    reference_index: int = 0
    solver: str = "sorted"
    pinv: PinvConfig = field(default_factory=PinvConfig)
    prompt: tuple[int, ...] = (5, 17, 42, 99)
    distinct_prompts: bool = False
    generation_step: int = 1
    sweep_caps: tuple[float, ...] = DEFAULT_CAPS
    sweep_precisions: tuple[int, ...] = ()
    seed_model: int = 0
    seed_oracle: int = 1
    seed_attack: int = 2

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.n_queries == 0:
            self.n_queries = 16 * max(self.model.d_model, self.model.d_ffn)
        widest_in = max(self.model.d_model, self.model.d_ffn)
        if self.n_queries < widest_in:
            raise ValueError(f"n_queries={self.n_queries} is below the widest layer input ({widest_in})")
        if not 0 <= self.reference_index < self.n_queries:
            raise ValueError("reference_index out of range")
        if not self.prompt or len(self.prompt) > self.model.max_seq_len:
            raise ValueError("prompt must be nonempty and fit max_seq_len")
        if min(self.prompt) < 0 or max(self.prompt) >= self.model.vocab_size:
            raise ValueError("prompt token outside the vocabulary")
        if self.generation_step < 1 or len(self.prompt) + self.generation_step - 1 > self.model.max_seq_len:
            raise ValueError("generation_step must be >= 1 and fit max_seq_len")

    def oracle(self, fxp: FxpConfig | None = ...) -> OracleConfig:
        return OracleConfig(
            fxp=self.fxp if fxp is ... else fxp, noise_sigma=self.noise_sigma,
            layernorm_private=self.layernorm_private, reveal_attention=self.reveal_attention,
            seed=self.seed_oracle,
        )

    def as_dict(self) -> dict:
        return {
            "model": dict(self.model.__dict__),
            "fxp": None if self.fxp is None else {
                "ring_bits": self.fxp.ring_bits, "precision_bits": self.fxp.precision_bits,
                "error_mode": self.fxp.error_mode.value,
            },
            "oracle": {"noise_sigma": self.noise_sigma, "layernorm_private": self.layernorm_private,
                       "reveal_attention": self.reveal_attention},
            "attack": {"n_queries": self.n_queries, "reference_index": self.reference_index,
                       "solver": self.solver, "condition_cap": self.pinv.condition_cap,
                       "prompt": list(self.prompt), "distinct_prompts": self.distinct_prompts,
                       "generation_step": self.generation_step},
            "sweep": {"condition_caps": list(self.sweep_caps), "precisions": list(self.sweep_precisions)},
            "seeds": {"model": self.seed_model, "oracle": self.seed_oracle, "attack": self.seed_attack},
        }

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(DEFAULT_CONFIG_TEXT)
    cp.read_string(text)
    m, f, o, a, s, sd = (cp[k] for k in ("model", "fxp", "oracle", "attack", "sweep", "seeds"))
    model = ModelConfig(
        num_layers=m.getint("num_layers"), d_model=m.getint("d_model"), num_heads=m.getint("num_heads"),
        d_ffn=m.getint("d_ffn"), vocab_size=m.getint("vocab_size"), max_seq_len=m.getint("max_seq_len"),
        activation=m.get("activation"),
    )
    fxp = None
    if f.getboolean("enabled"):
        fxp = FxpConfig(f.getint("ring_bits"), f.getint("precision_bits"), ErrorMode(f.get("error_mode")))
    return ExperimentConfig(
        model=model, fxp=fxp,
        noise_sigma=o.getfloat("noise_sigma"), layernorm_private=o.getboolean("layernorm_private"),
        reveal_attention=o.getboolean("reveal_attention"),
        n_queries=a.getint("n_queries"), reference_index=a.getint("reference_index"), solver=a.get("solver"),
        pinv=PinvConfig(a.getfloat("condition_cap")),
        prompt=tuple(int(t) for t in a.get("prompt").split()), distinct_prompts=a.getboolean("distinct_prompts"),
        generation_step=a.getint("generation_step"),
        sweep_caps=_floats(s.get("condition_caps")), sweep_precisions=tuple(int(x) for x in _floats(s.get("precisions"))),
        seed_model=sd.getint("model"), seed_oracle=sd.getint("oracle"), seed_attack=sd.getint("attack"),
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# ------------------------------------------------------------------- stages


def make_prompts(cfg: ExperimentConfig) -> list[list[int]]:
    if not cfg.distinct_prompts:
        return [list(cfg.prompt)] * cfg.n_queries
    rng = np.random.default_rng(cfg.seed_attack)
    T = len(cfg.prompt)
    return [list(rng.integers(0, cfg.model.vocab_size, size=T)) for _ in range(cfg.n_queries)]


def collect(model: Model, cfg: ExperimentConfig, fxp: FxpConfig | None = ...) -> tuple[list[QueryRecord], list[GroundTruth]]:
    return run_campaign(model, make_prompts(cfg), cfg.oracle(fxp), cfg.generation_step)


def stack_side(records: list[QueryRecord], label: str, side: str) -> np.ndarray | None:
    vals = [(r.inputs if side == "in" else r.outputs)[label] for r in records]
    if any(v is None for v in vals):
        return None
    return np.stack(vals)


def align_all(records: list[QueryRecord], labels: list[str], k: int = 0, solver: str = "sorted"):
    """Align both sides of every linear layer; withheld sides are skipped."""
    out = {}
    for label in labels:
        for side in ("in", "out"):
            V = stack_side(records, label, side)
            if V is not None:
                out[(label, side)] = align_dataset(V, k, solver)
    return out


def extract_all(aligned_x: dict, labels: list[str], pinv: PinvConfig) -> dict[str, ExtractedWeights | None]:
    """``aligned_x`` maps (label, side) to an n x h matrix.  Layers missing a side map to None."""
    out = {}
    for label in labels:
        if (label, "in") in aligned_x and (label, "out") in aligned_x:
            sys_ = AlignedSystem(aligned_x[(label, "in")], aligned_x[(label, "out")], label)
            out[label] = solve_weights(sys_, pinv)
        else:
            out[label] = None
    return out


def alignment_report(records, truths, aligned, labels) -> list[AlignmentRow]:
    rows = []
    for label in labels:
        for side in ("in", "out"):
            if (label, side) not in aligned:
                continue
            perms = [(t.perm_in if side == "in" else t.perm_out)[label] for t in truths]
            rows.append(alignment_metrics(aligned[(label, side)], stack_side(records, label, side), perms, label, side))
    return rows


def weight_report(model: Model, truths, extracted, aligned_x, k: int, n_queries: int) -> list[WeightRow]:
    rows = []
    for label, ex in extracted.items():
        w = model.linear(label)
        if ex is None:
            rows.append(WeightRow(label, False, w.shape[0], w.shape[1], n_queries))
            continue
        rows.append(weight_row(label, ex, w, truths[k].perm_in[label], truths[k].perm_out[label],
                               aligned_x[(label, "in")], n_queries))
    return rows


def summarize(cfg: ExperimentConfig, arows: list[AlignmentRow], wrows: list[WeightRow], disagreements: int) -> dict:
    rec = [r for r in wrows if r.recoverable]
    return {
        "config_hash": cfg.hash(),
        "n_queries": cfg.n_queries,
        "precision_bits": None if cfg.fxp is None else cfg.fxp.precision_bits,
        "condition_cap": cfg.pinv.condition_cap,
        "l1_aggregation": "mean and max of absolute element differences against the permuted original",
        "alignment": [dict(r.__dict__, correct_rate=r.correct_rate) for r in arows],
        "weights": [dict(r.__dict__) for r in wrows],
        "unrecoverable": [r.label for r in wrows if not r.recoverable],
        "l1_mean_over_layers": float(np.mean([r.l1_mean for r in rec])) if rec else None,
        "solver_disagreements": disagreements,
    }


def stolen_agreement(model: Model, truth: GroundTruth, extracted, cfg: ExperimentConfig, n_prompts: int = 200):
    """Greedy-token agreement and KL of the model rebuilt from extracted weights."""
    if any(ex is None for ex in extracted.values()):
        return None
    stolen = model.replace_linear({
        label: to_original_frame(ex.w, truth.perm_in[label], truth.perm_out[label])
        for label, ex in extracted.items()
    })
    rng = np.random.default_rng([cfg.seed_attack, 1])
    prompts = [list(rng.integers(0, cfg.model.vocab_size, size=len(cfg.prompt))) for _ in range(n_prompts)]
    top1, kl = forward_agreement(model, stolen, prompts)
    return {"n_prompts": n_prompts, "top1_match_rate": top1, "mean_kl": kl}


# --------------------------------------------------------------- run driver


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stage(name, durations):
    class _Ctx:
        def __enter__(self):
            self.t0 = time.perf_counter()
            log.info("stage %s", name)

        def __exit__(self, et, exc, tb):
            durations[name] = round(time.perf_counter() - self.t0, 3)
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


RUN_FILES = ("config.ini", "model.pbwt", "queries.pbql", "truth.pbql", "aligned.pbwt", "extracted.pbwt",
             "alignment.csv", "weights.csv", "summary.json")


def _aligned_matrices(aligned) -> dict[str, np.ndarray]:
    return {f"{label}.{side}": ds.X for (label, side), ds in aligned.items()}


def analyse(run: Path, cfg: ExperimentConfig, out: Path, durations: dict) -> dict:
    """Alignment, extraction and evaluation from the persisted query log."""
    labels = cfg.model.linear_labels()
    L = cfg.model.num_layers
    with _stage("align", durations):
        records = containers.records_from_fields(containers.read_records(run / "queries.pbql"), labels, L)
        aligned = align_all(records, labels, cfg.reference_index, cfg.solver)
        containers.write_weights(out / "aligned.pbwt", _aligned_matrices(aligned), L,
                                 {"reference_index": cfg.reference_index, "solver": cfg.solver})
    with _stage("extract", durations):
        mats, _, _ = containers.read_weights(out / "aligned.pbwt")
        aligned_x = {tuple(k.rsplit(".", 1)): v for k, v in mats.items()}
        extracted = extract_all(aligned_x, labels, cfg.pinv)
        provenance = {
            "n_queries": cfg.n_queries, "condition_cap": cfg.pinv.condition_cap,
            "precision_bits": None if cfg.fxp is None else cfg.fxp.precision_bits,
            "seeds": {"model": cfg.seed_model, "oracle": cfg.seed_oracle, "attack": cfg.seed_attack},
            "retained_rank": {k: v.retained_rank for k, v in extracted.items() if v is not None},
            "unrecoverable": [k for k, v in extracted.items() if v is None],
        }
        containers.write_weights(out / "extracted.pbwt", {k: v.w for k, v in extracted.items() if v is not None},
                                 L, provenance)
    with _stage("evaluate", durations):
        model = containers.load_model(run / "model.pbwt")
        truths = containers.truths_from_fields(containers.read_records(run / "truth.pbql"), labels, L)
        arows = alignment_report(records, truths, aligned, labels)
        wrows = weight_report(model, truths, extracted, aligned_x, cfg.reference_index, cfg.n_queries)
        disagreements = sum(ds.disagreements for ds in aligned.values())
        (out / "alignment.csv").write_text(rows_to_csv(arows, ALIGNMENT_COLUMNS))
        (out / "weights.csv").write_text(rows_to_csv(wrows, WEIGHT_COLUMNS))
        summary = summarize(cfg, arows, wrows, disagreements)
        summary["forward_agreement"] = stolen_agreement(model, truths[cfg.reference_index], extracted, cfg)
        (out / "summary.json").write_text(summary_json(summary))
    return summary


def run_attack(config_text: str, out_dir, model_path=None) -> dict:
    """Full campaign into ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    durations: dict[str, float] = {}
    started = datetime.now(timezone.utc).isoformat()
    with _stage("config", durations):
        cfg = parse_config(config_text)
        (out / "config.ini").write_text(config_text)
    with _stage("model", durations):
        model = containers.load_model(model_path) if model_path else init_model(cfg.model, cfg.seed_model)
        containers.save_model(out / "model.pbwt", model)
    with _stage("query", durations):
        records, truths = collect(model, cfg)
        containers.write_records(out / "queries.pbql", [(r.query_id, containers.record_fields(r)) for r in records])
        containers.write_records(out / "truth.pbql", [(t.query_id, containers.truth_fields(t)) for t in truths])
    analyse(out, cfg, out, durations)
    manifest = {
        "config_hash": cfg.hash(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "durations": durations,
        "files": {name: _sha256(out / name) for name in RUN_FILES},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_sweep(config_text: str, out_dir, model_path=None) -> dict:
    """Condition-cap sweep per layer, repeated for each configured precision."""
    cfg = parse_config(config_text)
    if not cfg.sweep_caps:
        raise ValueError("empty sweep: set [sweep] condition_caps, e.g. 'condition_caps = 1e5 1e6 1e7 1e8 1e9'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = containers.load_model(model_path) if model_path else init_model(cfg.model, cfg.seed_model)
    labels = cfg.model.linear_labels()
    base = cfg.fxp or FxpConfig()
    precisions = cfg.sweep_precisions or (base.precision_bits,)
    result = {"config_hash": cfg.hash(), "condition_caps": list(cfg.sweep_caps), "precisions": {}}
    k = cfg.reference_index
    for p in precisions:
        fxp = FxpConfig(base.ring_bits, p, base.error_mode)
        records, truths = collect(model, cfg, fxp)
        aligned = align_all(records, labels, k, cfg.solver)
        arows = alignment_report(records, truths, aligned, labels)
        sweeps = []
        for label in labels:
            if (label, "in") not in aligned or (label, "out") not in aligned:
                continue
            sys_ = AlignedSystem(aligned[(label, "in")].X, aligned[(label, "out")].X, label)
            w_exp = permute_weight(model.linear(label), truths[k].perm_in[label], truths[k].perm_out[label])
            sweeps.append(condition_sweep(sys_, w_exp, cfg.sweep_caps))
        (out / f"alignment_p{p}.csv").write_text(rows_to_csv(arows, ALIGNMENT_COLUMNS))
        (out / f"sweep_p{p}.csv").write_text(sweep_to_csv(sweeps))
        result["precisions"][str(p)] = {
            "alignment": [dict(r.__dict__, correct_rate=r.correct_rate) for r in arows],
            "sweeps": {s.label: {"l1_mean": s.l1_mean, "retained_rank": s.retained_rank,
                                 "best_cap": s.best_cap()} for s in sweeps},
        }
    (out / "sweep.json").write_text(summary_json(result))
    return result


# ------------------------------------------------------------- verification


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def apply_overrides(text: str, overrides: dict[str, str]) -> str:
    """Merge ``{"section.key": value}`` into a config; returns the text unchanged when empty."""
    if not overrides:
        return text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(DEFAULT_CONFIG_TEXT)
    cp.read_string(text)
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key or section not in cp or key not in cp[section]:
            raise ValueError(f"unknown config key {dotted!r}")
        cp[section][key] = str(value)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def penrose_residuals(X: np.ndarray, pinv: PinvConfig) -> dict[str, float]:
    """Relative residuals of the Moore-Penrose conditions for the capped inverse.

    ``X X+ X = X`` only holds up to the discarded spectrum, so that one is
    reported relative to its bound ``sqrt(h) / C``.
    """
    P = truncated_pinv(X, pinv).matrix
    XP, PX = X @ P, P @ X
    nrm = np.linalg.norm
    return {
        "pxp": nrm(P @ X @ P - P) / nrm(P),
        "xp_sym": nrm(XP - XP.T) / max(nrm(XP), 1.0),
        "px_sym": nrm(PX - PX.T) / max(nrm(PX), 1.0),
        "xpx": nrm(XP @ X - X) / nrm(X) / (np.sqrt(X.shape[1]) / pinv.condition_cap),
    }


def _read_manifest(run: Path) -> dict:
    path = run / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    missing = [n for n in RUN_FILES if not (run / n).exists()]
    if missing:
        raise FileNotFoundError(f"missing run files: {', '.join(missing)}")
    return json.loads(path.read_text())


def verify_run(run_dir, spot_checks: int = 5) -> list[Check]:
    """Re-check a finished run from its persisted files only."""
    run = Path(run_dir)
    manifest = _read_manifest(run)
    checks: list[Check] = []

    try:
        cfg = load_config(run / "config.ini")
        h = cfg.hash()
        checks.append(Check("config-hash", h == manifest.get("config_hash"), h[:16]))
    except (ValueError, configparser.Error) as exc:
        checks.append(Check("config-hash", False, str(exc)))
        return checks

    for name, digest in sorted(manifest.get("files", {}).items()):
        path = run / name
        ok = path.exists() and _sha256(path) == digest
        checks.append(Check(f"artifact-hash:{name}", ok))

    labels, L = cfg.model.linear_labels(), cfg.model.num_layers
    try:
        model = containers.load_model(run / "model.pbwt")
        records = containers.records_from_fields(containers.read_records(run / "queries.pbql"), labels, L)
        truths = containers.truths_from_fields(containers.read_records(run / "truth.pbql"), labels, L)
        aligned_mats, _, _ = containers.read_weights(run / "aligned.pbwt")
        extracted_mats, _, _ = containers.read_weights(run / "extracted.pbwt")
    except (containers.ContainerError, KeyError, ValueError) as exc:
        checks.append(Check("load", False, str(exc)))
        return checks
    checks.append(Check("load", True))
    aligned_x = {tuple(k.rsplit(".", 1)): v for k, v in aligned_mats.items()}

    rng = np.random.default_rng([cfg.seed_attack, 2])
    scheme = PermutationScheme.random(cfg.model, rng)
    prompts = [list(rng.integers(0, cfg.model.vocab_size, size=len(cfg.prompt))) for _ in range(5)]
    gap = functional_equivalence(model, permute_model(model, scheme), prompts)
    checks.append(Check("functional-equivalence", gap <= 1e-10, f"max gap {gap:.3g}"))

    worst = {}
    for label in labels:
        if (label, "in") in aligned_x:
            for k, v in penrose_residuals(aligned_x[(label, "in")], cfg.pinv).items():
                worst[k] = max(worst.get(k, 0.0), float(v))
    ok = all(worst.get(k, 0.0) <= 1e-6 for k in ("pxp", "xp_sym", "px_sym")) and worst.get("xpx", 0.0) <= 1.0
    checks.append(Check("penrose", ok, ", ".join(f"{k}={v:.2g}" for k, v in sorted(worst.items()))))

    bad = []
    k = cfg.reference_index
    for (label, side), X in sorted(aligned_x.items()):
        V = stack_side(records, label, side)
        for i in [j for j in range(len(V)) if j != k][:spot_checks]:
            M = match(V[k], V[i], cfg.solver if cfg.solver != "both" else "sorted")
            D = cost_matrix(V[k], V[i])
            eq3 = alignment_objective(V[k], V[i], M) ** 2
            eq4 = assignment_cost(D, M)
            opt = solve_assignment(D)[1]
            scale = max(abs(eq4), 1e-300)
            if (abs(eq3 - eq4) > 1e-12 * scale or abs(eq4 - opt) > 1e-9 * max(opt, 1e-300)
                    or not np.array_equal(M.apply(V[i]), X[i])):
                bad.append(f"{label}.{side}[{i}]")
    checks.append(Check("eq3-eq4", not bad, ", ".join(bad[:5])))

    extracted = extract_all(aligned_x, labels, cfg.pinv)
    same = all(
        (ex is None and label not in extracted_mats)
        or (ex is not None and label in extracted_mats and np.array_equal(ex.w, extracted_mats[label]))
        for label, ex in extracted.items()
    )
    checks.append(Check("extraction", same))

    wrows = weight_report(model, truths, extracted, aligned_x, k, cfg.n_queries)
    checks.append(Check("weight-report", rows_to_csv(wrows, WEIGHT_COLUMNS) == (run / "weights.csv").read_text()))
    return checks


REPORT_FILES = ("alignment.csv", "weights.csv", "summary.json")


def replay(run_dir, out_dir) -> dict[str, bool]:
    """Re-run alignment onward from the persisted query log; report which outputs reproduce."""
    run, out = Path(run_dir), Path(out_dir)
    _read_manifest(run)
    out.mkdir(parents=True, exist_ok=True)
    cfg = load_config(run / "config.ini")
    durations: dict[str, float] = {}
    analyse(run, cfg, out, durations)
    return {name: (run / name).read_bytes() == (out / name).read_bytes() for name in REPORT_FILES + ("aligned.pbwt", "extracted.pbwt")}
