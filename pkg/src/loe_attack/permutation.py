"""Permutations acting on the last axis, matching right-multiplication x @ P."""
from __future__ import annotations

import numpy as np


class Permutation:
    """Bijection on ``{0..h-1}``.

    ``sigma[i]`` is the position element ``i`` moves to, so the permutation
    matrix has ``P[i, sigma[i]] = 1`` and ``apply(x) == x @ P``.
    """

    __slots__ = ("sigma",)

    def __init__(self, sigma):
        sigma = np.asarray(sigma, dtype=np.int64)
        if sigma.ndim != 1 or not np.array_equal(np.sort(sigma), np.arange(sigma.size)):
            raise ValueError("sigma is not a permutation of 0..h-1")
        self.sigma = sigma

    @classmethod
    def identity(cls, h: int) -> "Permutation":
        return cls(np.arange(h))

    @classmethod
    def random(cls, h: int, rng: np.random.Generator) -> "Permutation":
        if h < 1:
            raise ValueError("h must be >= 1")
        return cls(rng.permutation(h))

    def __len__(self) -> int:
        return self.sigma.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and np.array_equal(self.sigma, other.sigma)

    def __repr__(self) -> str:
        return f"Permutation({self.sigma.tolist()})"

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1] != self.sigma.size:
            raise ValueError(f"length {x.shape[-1]} != permutation size {self.sigma.size}")
        out = np.empty_like(x)
        out[..., self.sigma] = x
        return out

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.sigma)
        inv[self.sigma] = np.arange(self.sigma.size)
        return Permutation(inv)

    def then(self, other: "Permutation") -> "Permutation":
        """Composition: apply ``self`` first, then ``other`` (matrix product P_self @ P_other)."""
        if len(other) != len(self):
            raise ValueError("size mismatch")
        return Permutation(other.sigma[self.sigma])

    def matrix(self) -> np.ndarray:
        h = self.sigma.size
        m = np.zeros((h, h))
        m[np.arange(h), self.sigma] = 1.0
        return m

    def apply_rows(self, W: np.ndarray) -> np.ndarray:
        """``P^{-1} @ W``: reorder rows so that ``apply(x) @ apply_rows(W) == x @ W``."""
        return self.apply(np.asarray(W).T).T


def shuffle(x: np.ndarray, perm: Permutation) -> np.ndarray:
    return perm.apply(x)


def random_permutation(h: int, rng: np.random.Generator) -> Permutation:
    return Permutation.random(h, rng)


def permute_weight(W: np.ndarray, perm_in: Permutation, perm_out: Permutation) -> np.ndarray:
    """``P_in^{-1} W P_out``, the weight seen between shuffled input and shuffled output."""
    return perm_in.apply_rows(perm_out.apply(W))
