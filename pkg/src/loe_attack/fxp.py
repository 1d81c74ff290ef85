"""Fixed-point ring arithmetic as seen by one party of a 2PC engine.

Values live on Z_{2^ell} with ``precision_bits`` fractional bits.  Secret
sharing is not emulated: only the reconstructed numbers, including the
one-ulp error left behind by secure truncation after every multiplication.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class FxpRangeError(ValueError):
    """Raised when a float does not fit in the ring at the chosen scale."""


class ErrorMode(str, enum.Enum):
    PROBABILISTIC = "probabilistic"
    DETERMINISTIC_FLOOR = "deterministic-floor"
    NONE = "none"


@dataclass(frozen=True)
class FxpConfig:
    ring_bits: int = 64
    precision_bits: int = 18
    error_mode: ErrorMode = ErrorMode.PROBABILISTIC

    def __post_init__(self):
        object.__setattr__(self, "error_mode", ErrorMode(self.error_mode))
        if not 1 <= self.precision_bits < self.ring_bits <= 64:
            raise ValueError(
                f"need 1 <= p < ell <= 64, got p={self.precision_bits}, ell={self.ring_bits}"
            )

    @property
    def scale(self) -> float:
        return float(2**self.precision_bits)

    @property
    def ulp(self) -> float:
        return 2.0 ** -self.precision_bits

    @property
    def bound(self) -> float:
        """Exclusive magnitude bound for encodable floats."""
        return 2.0 ** (self.ring_bits - self.precision_bits - 1)

    @property
    def mask(self) -> np.uint64:
        return np.uint64((1 << self.ring_bits) - 1)


def _to_signed(data: np.ndarray, bits: int) -> np.ndarray:
    # sign-extend the low `bits` bits of a uint64 array
    shift = np.uint64(64 - bits)
    return (data << shift).view(np.int64) >> np.int64(64 - bits)


def _to_ring(signed: np.ndarray, cfg: FxpConfig) -> np.ndarray:
    return np.asarray(signed, dtype=np.int64).view(np.uint64) & cfg.mask


@dataclass
class RingTensor:
    """Unsigned ring elements plus the config that gives them meaning."""

    data: np.ndarray
    cfg: FxpConfig

    @property
    def shape(self):
        return self.data.shape

    def signed(self) -> np.ndarray:
        return _to_signed(self.data, self.cfg.ring_bits)

    def decode(self) -> np.ndarray:
        return decode(self)

    def __getitem__(self, idx) -> "RingTensor":
        return RingTensor(self.data[idx], self.cfg)

    def __add__(self, other: "RingTensor") -> "RingTensor":
        return RingTensor((self.data + other.data) & self.cfg.mask, self.cfg)

    def __sub__(self, other: "RingTensor") -> "RingTensor":
        return RingTensor((self.data - other.data) & self.cfg.mask, self.cfg)

    @property
    def T(self) -> "RingTensor":
        return RingTensor(self.data.T, self.cfg)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode(x_f, cfg: FxpConfig) -> RingTensor:
    """Scale by 2^p, round half away from zero, reduce mod 2^ell."""
    x = np.asarray(x_f, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) >= cfg.bound):
        raise FxpRangeError(f"value out of range for |x| < {cfg.bound}")
    scaled = _round_half_away(x * cfg.scale).astype(np.int64)
    return RingTensor(_to_ring(scaled, cfg), cfg)


def decode(x: RingTensor) -> np.ndarray:
    out = x.signed().astype(np.float64) / x.cfg.scale
    return out if out.ndim else float(out)


def truncate(product: np.ndarray, cfg: FxpConfig, rng: np.random.Generator | None = None) -> RingTensor:
    """Rescale a 2p-scaled ring product back to scale 2^p.

    ``product`` holds raw uint64 ring words.  The rounding rule depends on
    ``cfg.error_mode``; in probabilistic mode one extra ulp is added with
    probability equal to the discarded fraction, so the result is unbiased.
    """
    p = cfg.precision_bits
    s = _to_signed(np.asarray(product, dtype=np.uint64) & cfg.mask, cfg.ring_bits)
    if cfg.error_mode is ErrorMode.NONE:
        half = np.int64(1 << (p - 1))
        t = np.where(s >= 0, (s + half) >> np.int64(p), -((-s + half) >> np.int64(p)))
    else:
        t = s >> np.int64(p)
        if cfg.error_mode is ErrorMode.PROBABILISTIC:
            if rng is None:
                raise ValueError("probabilistic truncation needs an rng")
            frac = (s & np.int64((1 << p) - 1)).astype(np.float64) / cfg.scale
            t = t + (rng.random(s.shape) < frac)
    return RingTensor(_to_ring(t, cfg), cfg)


def mul_trunc(a: RingTensor, b: RingTensor, rng: np.random.Generator | None = None) -> RingTensor:
    """Element-wise (broadcasting) product followed by one truncation."""
    with np.errstate(over="ignore"):
        prod = a.data * b.data
    return truncate(prod, a.cfg, rng)


def linear_fxp(X: RingTensor, W: RingTensor, rng: np.random.Generator | None = None) -> RingTensor:
    """Matrix product accumulated at scale 2^(2p); one truncation per output."""
    if X.shape[-1] != W.shape[0]:
        raise ValueError(f"inner dimensions differ: {X.shape} @ {W.shape}")
    return truncate(X.data @ W.data, X.cfg, rng)
