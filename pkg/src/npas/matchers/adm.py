"""Arithmetic distribution matcher (ADM).

The matcher is an arithmetic *decoder*: the information bits are read as the
binary expansion of a point in [0, 1), and every output symbol is the one
whose (quantized) conditional interval contains that point. The dematcher is
the matching arithmetic *encoder*.

Both sides use 64-bit interval registers with the usual straddle
(E3) renormalization and 32-bit integer CDFs. Output length is fixed and
input length varies: the matcher reads input bits lazily, only when the
current knowledge of the point does not yet pin down the next symbol. The
number of *consumed* bits reported is the length of the prefix fixed by the
final interval; the dematcher reproduces exactly that prefix, and the next
block continues from there.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Callable, Sequence

import numpy as np

WIDTH = 64
MASK = (1 << WIDTH) - 1
HALF = 1 << (WIDTH - 1)
QUARTER = 1 << (WIDTH - 2)
THREE_QUARTERS = 3 * QUARTER
CDF_BITS = 32
TOTAL = 1 << CDF_BITS

DistributionSource = Callable[[Sequence[int]], Sequence[float]]


class AdmUnderflowError(RuntimeError):
    """The bit source ran out before the next symbol could be resolved."""


class AdmCorruptionError(ValueError):
    """A symbol has an empty interval under the supplied distribution."""


def quantize_distribution(probs) -> list[int]:
    """Cumulative integer counts ``cum`` (length K+1, ``cum[-1] == 2**32``).

    Every symbol with nonzero probability gets a count of at least 1; the
    rounding remainder goes to the most probable symbol (lowest index on ties).
    """
    p = [float(x) for x in probs]
    total = 0.0
    for x in p:
        if not x >= 0.0:  # also catches NaN
            raise ValueError(f"invalid probability {x!r}")
        total += x
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {total!r}, expected 1")
    nz = sum(1 for x in p if x > 0.0)
    budget = TOTAL - nz
    counts = [int(x / total * budget) + 1 if x > 0.0 else 0 for x in p]
    best = max(range(len(p)), key=lambda i: (p[i], -i))
    counts[best] += TOTAL - sum(counts)
    cum = [0]
    for c in counts:
        cum.append(cum[-1] + c)
    return cum


class QuantizedCdf(tuple):
    """Integer cumulative counts already in ADM form (see ``quantize_distribution``).

    A distribution source may return one of these instead of a probability
    vector to skip re-quantization on every call.
    """


def quantize_many(probs: np.ndarray) -> np.ndarray:
    """Row-wise :func:`quantize_distribution` for a ``(n, K)`` array.

    Produces bit-identical counts to the scalar version.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("expected a 2D array of distributions")
    if not np.all(p >= 0.0):
        raise ValueError("invalid probability in batch")
    total = np.zeros(len(p))
    for k in range(p.shape[1]):  # left-to-right, matching the scalar sum
        total = total + p[:, k]
    if np.any(np.abs(total - 1.0) > 1e-9):
        raise ValueError("a distribution in the batch does not sum to 1")
    nz = np.count_nonzero(p > 0.0, axis=1)
    budget = (TOTAL - nz).astype(np.float64)
    counts = np.where(p > 0.0, np.floor(p / total[:, None] * budget[:, None]).astype(np.int64) + 1, 0)
    best = np.argmax(p, axis=1)
    counts[np.arange(len(p)), best] += TOTAL - counts.sum(axis=1)
    cum = np.zeros((len(p), p.shape[1] + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cum[:, 1:])
    return cum


def _cdf(d) -> Sequence[int]:
    return d if isinstance(d, QuantizedCdf) else quantize_distribution(d)


def _symbol_for(cum: Sequence[int], v: int) -> int:
    # largest s with cum[s] <= v; zero-width symbols are skipped naturally
    return bisect_right(cum, v) - 1


def adm_encode(bits: Sequence[int], source: DistributionSource, L: int) -> tuple[list[int], int]:
    """Map information bits to ``L`` symbol indices.

    ``source(prefix)`` returns the probability vector of the next symbol
    given the symbols emitted so far; it must be deterministic.

    Returns ``(indices, consumed)``: ``adm_decode(indices, source)`` equals
    ``bits[:consumed]``. Raises :class:`AdmUnderflowError` if more bits are
    needed than supplied (callers pad with zeros).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    low, high = 0, MASK
    code, known = 0, 0  # known = number of code bits (from the top) already read
    pos = 0
    consumed = 0
    pending = 0
    out: list[int] = []
    nbits = len(bits)
    for _ in range(L):
        cum = _cdf(source(out))
        rng = high - low + 1
        while True:
            span = (1 << (WIDTH - known)) - 1
            s_lo = _symbol_for(cum, ((code - low + 1) * TOTAL - 1) // rng)
            s_hi = _symbol_for(cum, ((code + span - low + 1) * TOTAL - 1) // rng)
            if s_lo == s_hi:
                break
            if pos >= nbits:
                raise AdmUnderflowError(
                    f"bit source exhausted after {pos} bits while resolving symbol {len(out)}"
                )
            if bits[pos]:
                code |= 1 << (WIDTH - 1 - known)
            known += 1
            pos += 1
        s = s_lo
        out.append(s)
        high = low + rng * cum[s + 1] // TOTAL - 1
        low = low + rng * cum[s] // TOTAL
        while True:
            if high < HALF:
                consumed += 1 + pending
                pending = 0
            elif low >= HALF:
                consumed += 1 + pending
                pending = 0
                low -= HALF
                high -= HALF
                code -= HALF
            elif low >= QUARTER and high < THREE_QUARTERS:
                pending += 1
                low -= QUARTER
                high -= QUARTER
                code -= QUARTER
            else:
                break
            low <<= 1
            high = (high << 1) | 1
            code <<= 1
            known -= 1
    # straddle bits still pending at the end are not fixed by the block
    return out, consumed


def adm_decode(indices: Sequence[int], source: DistributionSource) -> list[int]:
    """Recover the consumed bit prefix from a symbol sequence."""
    low, high = 0, MASK
    pending = 0
    bits: list[int] = []
    prefix: list[int] = []
    for s in indices:
        s = int(s)
        cum = _cdf(source(prefix))
        if not 0 <= s < len(cum) - 1 or cum[s + 1] == cum[s]:
            raise AdmCorruptionError(f"symbol {s} at position {len(prefix)} has an empty interval")
        rng = high - low + 1
        high = low + rng * cum[s + 1] // TOTAL - 1
        low = low + rng * cum[s] // TOTAL
        while True:
            if high < HALF:
                bits.append(0)
                bits.extend([1] * pending)
                pending = 0
            elif low >= HALF:
                bits.append(1)
                bits.extend([0] * pending)
                pending = 0
                low -= HALF
                high -= HALF
            elif low >= QUARTER and high < THREE_QUARTERS:
                pending += 1
                low -= QUARTER
                high -= QUARTER
            else:
                break
            low <<= 1
            high = (high << 1) | 1
        prefix.append(s)
    return bits
