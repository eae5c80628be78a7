"""Uniform and subtractively dithered quantization with n-bit codewords.

The uniform quantizer rounds an offset from a midpoint to the nearest
multiple of the step ``delta = U / (2**n - 1)``, half away from zero.
The dithered variant adds a shared pseudorandom offset before rounding
and subtracts it after reconstruction, which makes the error zero mean,
variance ``delta**2 / 12``, and uncorrelated with the input for values
inside the interval.  Sender and recipient derive the dither from the
same key, so nothing but the n-bit codes crosses the wire.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .errors import ParameterError

FAMILIES = ("a", "b", "c", "d")


@dataclass(frozen=True)
class QuantizerState:
    """Interval quantizer: ``bits`` per code over ``[mid - U/2, mid + U/2]``.

    The midpoint is a vector (one center per component); the interval
    width ``U`` and the refinement factor ``kappa`` are scalars shared
    by all components.
    """

    bits: int
    U: float
    midpoint: np.ndarray
    family: str = "a"
    kappa: float = 0.97

    def __post_init__(self):
        if not 2 <= int(self.bits) <= 32:
            raise ParameterError("bits must be in [2, 32]")
        if self.U <= 0:
            raise ParameterError("interval U must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ParameterError("refinement rate must lie in (0, 1)")
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown quantizer family {self.family!r}")
        mid = np.atleast_1d(np.asarray(self.midpoint, dtype=float))
        object.__setattr__(self, "midpoint", mid)

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    @property
    def delta(self) -> float:
        return self.U / self.levels

    @property
    def dim(self) -> int:
        return self.midpoint.shape[0]


class DitherStream:
    """Shared dither source for one message.

    Derivation inputs are (master seed, family, sender id, outer index,
    inner index); any party that constructs the stream with the same
    inputs reads the identical sequence.
    """

    def __init__(self, master_seed: int, family: str, sender: int,
                 s: int, t: int = 0):
        if family not in FAMILIES:
            raise ParameterError(f"unknown quantizer family {family!r}")
        self.key = rng.derive_key(master_seed, "dither",
                                  FAMILIES.index(family), sender, s, t)
        self.offset = 0

    def draw(self, count: int, half_width: float) -> np.ndarray:
        """Next ``count`` i.i.d. uniforms on (-half_width, half_width)."""
        u = rng.counter_uniform(self.key, self.offset, count)
        self.offset += count
        return half_width * (2.0 * u - 1.0)

    def clone(self) -> "DitherStream":
        dup = object.__new__(DitherStream)
        dup.key = self.key
        dup.offset = self.offset
        return dup


@dataclass
class CodewordBlock:
    """n-bit codes for one quantized vector plus sender-side counters.

    ``overflow_count`` marks components whose true value fell outside
    the quantization interval (the error statistics no longer hold for
    them); ``edge_clamp_count`` marks clamps caused only by dither spill
    at the interval edges, where the error stays within ``3 delta / 2``.
    """

    codes: np.ndarray
    edge_clamp_count: int = 0
    overflow_count: int = 0

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint32)

    def __eq__(self, other):
        return (isinstance(other, CodewordBlock)
                and np.array_equal(self.codes, other.codes)
                and self.edge_clamp_count == other.edge_clamp_count
                and self.overflow_count == other.overflow_count)

    def __len__(self):
        return len(self.codes)


def uniform_quantize(z, midpoint, delta):
    """Round ``z`` onto the midpoint-centered lattice of step ``delta``.

    Returns ``(k, value)`` with ``value = midpoint + k * delta`` and the
    half-away-from-zero rule ``k = sgn(z - mid) * floor(|z - mid|/delta
    + 1/2)``.  Accepts scalars or arrays.
    """
    if not np.all(np.asarray(delta) > 0):
        raise ParameterError("quantization step must be positive")
    offset = np.asarray(z, dtype=float) - midpoint
    k = np.sign(offset) * np.floor(np.abs(offset) / delta + 0.5)
    value = midpoint + k * delta
    if np.ndim(k) == 0:
        return int(k), float(value)
    return k.astype(np.int64), value


def _encode_with(v: np.ndarray, q: QuantizerState,
                 nu: np.ndarray) -> CodewordBlock:
    if v.shape != (q.dim,):
        raise ParameterError("vector dimension != quantizer midpoint dimension")
    k, _ = uniform_quantize(v + nu, q.midpoint, q.delta)
    half = 1 << (q.bits - 1)
    raw = k + half
    codes = np.clip(raw, 0, q.levels)
    outside = np.abs(v - q.midpoint) > q.U / 2.0
    clamped = (raw < 0) | (raw > q.levels)
    return CodewordBlock(
        codes=codes.astype(np.uint32),
        edge_clamp_count=int(np.count_nonzero(clamped & ~outside)),
        overflow_count=int(np.count_nonzero(outside)),
    )


def _decode_with(block: CodewordBlock, q: QuantizerState,
                 nu: np.ndarray) -> np.ndarray:
    if len(block.codes) != q.dim:
        raise ParameterError("codeword count != quantizer midpoint dimension")
    half = 1 << (q.bits - 1)
    k = block.codes.astype(np.int64) - half
    return q.midpoint + k * q.delta - nu


def dithered_encode(v: np.ndarray, q: QuantizerState,
                    dither: DitherStream) -> CodewordBlock:
    """Quantize ``v`` into n-bit codes using subtractive dithering.

    The level of ``v + nu`` is clamped to the code range
    ``[-2**(n-1), 2**(n-1) - 1]`` so every code fits in exactly n bits.
    """
    v = np.asarray(v, dtype=float)
    return _encode_with(v, q, dither.draw(q.dim, q.delta / 2.0))


def dithered_decode(block: CodewordBlock, q: QuantizerState,
                    dither: DitherStream) -> np.ndarray:
    """Reconstruct the vector a codeword block encodes.

    ``dither`` must be in the identical state the encoder used; the
    decoded value is then bit-equal at sender and every recipient.
    """
    return _decode_with(block, q, dither.draw(q.dim, q.delta / 2.0))


def quantize(v: np.ndarray, q: QuantizerState,
             dither: DitherStream) -> tuple[CodewordBlock, np.ndarray]:
    """Encode and reconstruct in one pass (sender-side convenience).

    Draws the dither once and applies it to both directions, exactly
    as the separate encode and decode calls would.
    """
    v = np.asarray(v, dtype=float)
    nu = dither.draw(q.dim, q.delta / 2.0)
    block = _encode_with(v, q, nu)
    return block, _decode_with(block, q, nu)


def refine(q: QuantizerState, midpoint: np.ndarray) -> QuantizerState:
    """Shrink the interval by ``sqrt(kappa)`` and recenter.

    Applied once per outer round, so after round ``s`` the width is
    ``U0 * kappa**((s + 1) / 2)``.  The new midpoint is the previously
    quantized value, which every recipient already holds.
    """
    mid = np.atleast_1d(np.asarray(midpoint, dtype=float))
    if mid.shape != q.midpoint.shape:
        raise ParameterError("refined midpoint changes dimension")
    return replace(q, U=q.U * math.sqrt(q.kappa), midpoint=mid)


# ---------------------------------------------------------------------------
# codeword packing (wire layout)

def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    """Pack codes contiguously, ``bits`` each, LSB first, byte padded."""
    codes = np.asarray(codes, dtype=np.uint64)
    if np.any(codes >> np.uint64(bits)):
        raise ParameterError("code does not fit in the declared bit width")
    if codes.size == 0:
        return b""
    shifts = np.arange(bits, dtype=np.uint64)
    bitmat = ((codes[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.ravel(), bitorder="little").tobytes()


def unpack_codes(data: bytes, bits: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_codes` for a known code count."""
    need = -(-count * bits // 8)
    if len(data) < need:
        raise ParameterError("packed payload shorter than declared")
    if count == 0:
        return np.zeros(0, dtype=np.uint32)
    raw = np.frombuffer(data[:need], dtype=np.uint8)
    bitmat = np.unpackbits(raw, bitorder="little", count=count * bits)
    shifts = np.arange(bits, dtype=np.uint64)
    vals = (bitmat.reshape(count, bits).astype(np.uint64) << shifts).sum(axis=1)
    return vals.astype(np.uint32)
