"""Weight recovery from aligned activations by condition-capped least squares."""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np


class ExtractionError(RuntimeError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PinvConfig:
    condition_cap: float = 1e7

    def __post_init__(self):
        if not self.condition_cap > 1:
            raise ValueError("condition_cap must be > 1")


@dataclass
class AlignedSystem:
    x_in: np.ndarray
    x_out: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.x_in = np.asarray(self.x_in, dtype=np.float64)
        self.x_out = np.asarray(self.x_out, dtype=np.float64)
        if self.x_in.shape[0] != self.x_out.shape[0]:
            raise ValueError("input and output row counts differ")


@dataclass
class TruncatedPinv:
    matrix: np.ndarray
    retained_rank: int
    singular_values: np.ndarray


@dataclass
class ExtractedWeights:
    label: str
    w: np.ndarray
    retained_rank: int
    sigma_max: float
    sigma_min_retained: float
    warnings: list[str] = field(default_factory=list)

    @property
    def rank_deficient(self) -> bool:
        return self.retained_rank < self.w.shape[0]


def _svd(X):
    try:
        return np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ExtractionError(f"SVD did not converge: {exc}") from exc


def condition_number(X: np.ndarray) -> float:
    X = np.asarray(X, dtype=np.float64)
    s = np.linalg.svd(X, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("condition number of a zero matrix")
    if s[-1] <= s[0] * np.finfo(np.float64).eps * max(X.shape):
        return float("inf")
    return float(s[0] / s[-1])


def truncated_pinv(X: np.ndarray, cfg: PinvConfig = PinvConfig()) -> TruncatedPinv:
    """Moore-Penrose inverse keeping only singular values >= sigma_max / C."""
    X = np.asarray(X, dtype=np.float64)
    U, s, Vt = _svd(X)
    if s.size == 0 or s[0] == 0:
        raise ValueError("pseudo-inverse of a zero matrix")
    keep = s >= s[0] / cfg.condition_cap
    r = int(keep.sum())
    pinv = (Vt[:r].T / s[:r]) @ U[:, :r].T
    return TruncatedPinv(pinv, r, s)


def solve_weights(system: AlignedSystem, cfg: PinvConfig = PinvConfig()) -> ExtractedWeights:
    """``W' = pinv_C(X_in) @ X_out``."""
    n, h_in = system.x_in.shape
    if n < h_in:
        raise ExtractionError(f"{system.label}: {n} rows cannot determine {h_in} inputs")
    tp = truncated_pinv(system.x_in, cfg)
    notes = []
    if tp.retained_rank < h_in:
        msg = f"{system.label}: retained rank {tp.retained_rank} < {h_in} at C={cfg.condition_cap:g}"
        warnings.warn(msg, RankDeficiencyWarning, stacklevel=2)
        notes.append(msg)
    return ExtractedWeights(
        label=system.label,
        w=tp.matrix @ system.x_out,
        retained_rank=tp.retained_rank,
        sigma_max=float(tp.singular_values[0]),
        sigma_min_retained=float(tp.singular_values[tp.retained_rank - 1]),
        warnings=notes,
    )


# ------------------------------------------------- equivalent attention weights
#
# vec() is column-major throughout: vec(W)[j * d + i] = W[i, j], which makes
# x W y^T = kron(y, x) . vec(W).  Each head's W_qk is kept as a full
# d_model x d_model matrix (rank d_head), i.e. d_model**2 unknowns per head.

QK_MAX_DMODEL = 8


def vec(W: np.ndarray) -> np.ndarray:
    return np.asarray(W).reshape(-1, order="F")


def unvec(w: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(w).reshape(d, -1, order="F")


def build_qk_system(x: np.ndarray, x_pre: np.ndarray, s_h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``kron(X_pre[t], x)`` and right-hand side ``s_h[t]`` for one head.

    ``s_h[t] = x @ W_qk @ X_pre[t]`` so ``rows @ vec(W_qk) = s_h``.
    """
    x = np.asarray(x, dtype=np.float64)
    x_pre = np.atleast_2d(np.asarray(x_pre, dtype=np.float64))
    s_h = np.atleast_1d(np.asarray(s_h, dtype=np.float64))
    if x_pre.shape[1] != x.size or x_pre.shape[0] != s_h.size:
        raise ValueError("qk system dimension mismatch")
    rows = np.stack([np.kron(xp, x) for xp in x_pre])
    return rows, s_h.copy()


def solve_qk(systems, d_model: int, cfg: PinvConfig = PinvConfig(), allow_large: bool = False) -> ExtractedWeights:
    """Stack per-query ``(rows, rhs)`` blocks and solve for ``W_qk``."""
    if d_model > QK_MAX_DMODEL and not allow_large:
        raise ExtractionError(f"W_qk solving is limited to d_model <= {QK_MAX_DMODEL}")
    A = np.concatenate([r for r, _ in systems])
    b = np.concatenate([rhs for _, rhs in systems])
    ex = solve_weights(AlignedSystem(A, b[:, None], "W_qk"), cfg)
    ex.w = unvec(ex.w[:, 0], d_model)
    return ex


@dataclass
class EquivalentAttnWeights:
    w_vo: np.ndarray  # (H * d_model) x d_model
    num_heads: int
    extracted: ExtractedWeights | None = None
    gauge_fixed: bool = False

    def block(self, h: int) -> np.ndarray:
        d = self.w_vo.shape[0] // self.num_heads
        return self.w_vo[h * d : (h + 1) * d]


def vo_input(p: np.ndarray, x_pre: np.ndarray) -> np.ndarray:
    """``[p^1 X_pre | p^2 X_pre | ... | p^H X_pre]`` for one query."""
    return (np.atleast_2d(p) @ x_pre).reshape(-1)


def affine_normal(rows: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Best hyperplane ``rows @ u = c`` through the rows, ``|u| = 1``.

    Returns ``(u, c, residual)`` with the residual relative to the largest
    singular value of ``[rows | 1]``.  Layernorm outputs sit exactly on such
    a plane (normal ``1 / gain``).
    """
    rows = np.asarray(rows, dtype=np.float64)
    A = np.hstack([rows, np.ones((rows.shape[0], 1))])
    _, s, Vt = _svd(A)
    v = Vt[-1]
    nrm = np.linalg.norm(v[:-1])
    if nrm == 0:
        raise ExtractionError("rows are constant")
    return v[:-1] / nrm, float(-v[-1] / nrm), float(s[-1] / s[0])


def fix_head_gauge(w_vo: np.ndarray, num_heads: int, head_rank: int, u: np.ndarray) -> np.ndarray:
    """Remove the part of a stacked ``W_vo`` that the data cannot see.

    When every prefix row satisfies ``x @ u = c`` and every softmax row sums
    to one, adding ``u b_h^T`` to block ``h`` with ``sum_h b_h = 0`` leaves
    all outputs unchanged.  Each true block has rank ``head_rank`` (= d_head),
    so ``b_h`` is chosen to bring every block back down to that rank.  With
    block SVD ``U S V^T`` truncated to ``head_rank + 1`` terms and
    ``b_h = V c_h`` the rank drops iff ``c_h . (S^-1 U^T u) = 1``; together
    with ``sum_h V_h c_h = 0`` this is one square linear system.
    """
    d = w_vo.shape[1]
    m = head_rank + 1
    blocks = [w_vo[h * d : (h + 1) * d] for h in range(num_heads)]
    A = np.zeros((num_heads + d, num_heads * m))
    rhs = np.zeros(num_heads + d)
    bases = []
    for h, B in enumerate(blocks):
        U, s, Vt = _svd(B)
        if s.size < m or s[m - 1] == 0:
            raise ExtractionError(f"block {h} has rank below {m}; nothing to fix")
        cols = slice(h * m, (h + 1) * m)
        A[h, cols] = (U[:, :m].T @ u) / s[:m]
        rhs[h] = 1.0
        A[num_heads:, cols] = Vt[:m].T
        bases.append(Vt[:m].T)
    c = np.linalg.lstsq(A, rhs, rcond=None)[0]
    fixed = [B - np.outer(u, bases[h] @ c[h * m : (h + 1) * m]) for h, B in enumerate(blocks)]
    return np.concatenate(fixed)


def solve_vo(records, cfg: PinvConfig = PinvConfig(), head_rank: int | None = None,
             gauge_tol: float = 1e-10) -> EquivalentAttnWeights:
    """Records are ``(p, X_pre, o)`` with ``p`` H x T, ``X_pre`` T x d, ``o`` length d.

    Passing ``head_rank`` enables :func:`fix_head_gauge`, applied only when
    the prefix rows lie on a hyperplane to within ``gauge_tol`` (exact
    arithmetic); under fixed-point noise the blocks are not low rank and the
    minimum-norm solution is kept.
    """
    records = list(records)
    if not records:
        raise ExtractionError("no records")
    H = np.atleast_2d(records[0][0]).shape[0]
    d = records[0][1].shape[1]
    if len(records) < H * d:
        raise ExtractionError(f"need at least {H * d} records, got {len(records)}")
    X = np.stack([vo_input(p, xp) for p, xp, _ in records])
    Y = np.stack([np.asarray(o, dtype=np.float64) for _, _, o in records])
    ex = solve_weights(AlignedSystem(X, Y, "W_vo"), cfg)
    if head_rank is None or H == 1 or head_rank >= d:
        return EquivalentAttnWeights(ex.w, H, ex)
    u, _, residual = affine_normal(np.concatenate([xp for _, xp, _ in records]))
    if residual > gauge_tol:
        return EquivalentAttnWeights(ex.w, H, ex)
    return EquivalentAttnWeights(fix_head_gauge(ex.w, H, head_rank, u), H, ex, gauge_fixed=True)


def resolve_position_frame(p_aligned: np.ndarray, x_pre_aligned: np.ndarray, o_aligned: np.ndarray,
                           cfg: PinvConfig = PinvConfig()) -> tuple[tuple[int, ...], float]:
    """Find how the (shuffled) softmax positions line up with prompt order.

    ``p_aligned`` is n x H x T in one common but unknown position frame.
    Every candidate ordering of the T positions is tried and the one with
    the smallest least-squares residual for ``W_vo`` wins.  T!, so only for
    short prompts.
    """
    T = p_aligned.shape[-1]
    best, best_res = None, np.inf
    for order in itertools.permutations(range(T)):
        # position j of p corresponds to prompt row order[j]
        X = np.stack([(p @ xp[list(order)]).reshape(-1) for p, xp in zip(p_aligned, x_pre_aligned)])
        tp = truncated_pinv(X, cfg)
        res = np.linalg.norm(X @ (tp.matrix @ o_aligned) - o_aligned)
        if res < best_res:
            best, best_res = order, res
    return best, float(best_res)
