"""Enumerative sphere shaping over a 1D amplitude alphabet.

The trellis counts, for every position ``p`` and accumulated energy ``e``,
how many completions of the sequence keep the total energy at or below
``E_max``. Indices are mapped to sequences in lexicographic order with the
levels ascending, so index 0 is the all-smallest sequence.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"NESS"
_FIXED_POINT = 1 << 16


@dataclass(frozen=True)
class EssTrellis:
    levels: tuple[int, ...]
    n: int
    e_max: int
    counts: tuple[tuple[int, ...], ...]  # counts[p][e], p in 0..n, e in 0..e_max

    @property
    def total(self) -> int:
        return self.counts[0][0]

    @property
    def k_bits(self) -> int:
        """Bits addressed per block, floor(log2 total)."""
        return self.total.bit_length() - 1

    @property
    def rate(self) -> float:
        return self.k_bits / self.n

    def count(self, p: int, e: int) -> int:
        return self.counts[p][e] if e <= self.e_max else 0

    def marginal(self) -> np.ndarray:
        """Level probabilities when all ``total`` sequences are equally likely."""
        energies = [lv * lv for lv in self.levels]
        freq = np.zeros(len(self.levels))
        # ways[p][e]: number of prefixes of length p with energy e
        ways = {0: 1}
        for p in range(self.n):
            nxt: dict[int, int] = {}
            for e, w in ways.items():
                for i, en in enumerate(energies):
                    c = self.count(p + 1, e + en)
                    if c:
                        freq[i] += float(w * c)
                        nxt[e + en] = nxt.get(e + en, 0) + w
            ways = nxt
        return freq / freq.sum()


def _integer_levels(levels) -> tuple[int, ...]:
    lv = np.asarray(getattr(levels, "levels", levels), dtype=float)
    if lv.ndim != 1 or lv.size == 0 or np.any(lv <= 0) or np.any(np.diff(lv) <= 0):
        raise ValueError("levels must be positive and strictly increasing")
    if not np.allclose(lv, np.round(lv)):
        raise ValueError("ESS needs integer-valued levels (energies are indexed exactly)")
    return tuple(int(round(x)) for x in lv)


def ess_build(alphabet, n: int, e_max: float) -> EssTrellis:
    """Build the bounded-energy trellis for length-``n`` sequences."""
    levels = _integer_levels(alphabet)
    if n < 1:
        raise ValueError("n must be >= 1")
    emax = int(math.floor(e_max))
    if emax < n * levels[0] ** 2:
        raise ValueError(f"E_max={e_max} is infeasible; need at least {n * levels[0] ** 2}")
    energies = [lv * lv for lv in levels]
    rows = [None] * (n + 1)
    rows[n] = [1] * (emax + 1)
    for p in range(n - 1, -1, -1):
        nxt = rows[p + 1]
        row = [0] * (emax + 1)
        for e in range(emax + 1):
            acc = 0
            for en in energies:
                if e + en > emax:
                    break
                acc += nxt[e + en]
            row[e] = acc
        rows[p] = row
    return EssTrellis(levels, n, emax, tuple(tuple(r) for r in rows))


def ess_encode(index: int, trellis: EssTrellis) -> list[int]:
    """Sequence of level *values* with lexicographic rank ``index``."""
    index = int(index)
    if not 0 <= index < trellis.total:
        raise ValueError(f"index {index} out of range [0, {trellis.total})")
    e = 0
    out = []
    for p in range(trellis.n):
        for lv in trellis.levels:
            c = trellis.count(p + 1, e + lv * lv)
            if index < c:
                out.append(lv)
                e += lv * lv
                break
            index -= c
        else:  # pragma: no cover - guarded by the range check above
            raise AssertionError("trellis walk fell off the end")
    return out


def ess_decode(sequence, trellis: EssTrellis) -> int:
    """Lexicographic rank of an admissible level sequence."""
    seq = [int(round(x)) for x in sequence]
    if len(seq) != trellis.n:
        raise ValueError(f"sequence length {len(seq)} != trellis length {trellis.n}")
    if any(x not in trellis.levels for x in seq):
        raise ValueError("sequence contains values outside the alphabet")
    energy = sum(x * x for x in seq)
    if energy > trellis.e_max:
        raise ValueError(f"sequence energy {energy} exceeds E_max={trellis.e_max}")
    index = 0
    e = 0
    for p, x in enumerate(seq):
        for lv in trellis.levels:
            if lv == x:
                break
            index += trellis.count(p + 1, e + lv * lv)
        e += x * x
    return index


def sequence_counts_by_energy(alphabet, n: int) -> list[int]:
    """Number of length-``n`` sequences with each exact energy (index = energy)."""
    levels = _integer_levels(alphabet)
    dist = [1]
    for _ in range(n):
        new = [0] * (len(dist) + levels[-1] ** 2)
        for e, w in enumerate(dist):
            if w:
                for lv in levels:
                    new[e + lv * lv] += w
        dist = new
    return dist


def find_ess_operating_point(alphabet, n: int, target_rate: float) -> tuple[int, float]:
    """Smallest ``E_max`` whose rate is closest to ``target_rate`` (bits/amplitude)."""
    levels = _integer_levels(alphabet)
    dist = sequence_counts_by_energy(levels, n)
    best = None
    cum = 0
    for e, w in enumerate(dist):
        cum += w
        if e < n * levels[0] ** 2 or cum == 0:
            continue
        rate = (cum.bit_length() - 1) / n
        err = abs(rate - target_rate)
        if best is None or err < best[2] - 1e-15:
            best = (e, rate, err)
    return best[0], best[1]


def save_trellis(path, trellis: EssTrellis) -> None:
    """Binary cache: magic, u32 N, u32 |alphabet|, u64 E_max (16.16 fixed point),
    then counts row-major as (u32 byte length, big-endian magnitude)."""
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIQ", trellis.n, len(trellis.levels), trellis.e_max * _FIXED_POINT))
        for row in trellis.counts:
            for c in row:
                raw = c.to_bytes(max(1, (c.bit_length() + 7) // 8), "big")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)


def load_trellis(path, alphabet) -> EssTrellis:
    levels = _integer_levels(alphabet)
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not an ESS trellis file")
    n, k, emax_fp = struct.unpack("<IIQ", raw[4:20])
    if k != len(levels):
        raise ValueError(f"{path}: alphabet size {k} != {len(levels)}")
    emax = emax_fp // _FIXED_POINT
    off = 20
    rows = []
    for _ in range(n + 1):
        row = []
        for _ in range(emax + 1):
            (ln,) = struct.unpack_from("<I", raw, off)
            off += 4
            row.append(int.from_bytes(raw[off : off + ln], "big"))
            off += ln
        rows.append(tuple(row))
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes")
    return EssTrellis(levels, n, emax, tuple(rows))
