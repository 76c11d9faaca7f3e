"""Reference transmitters: uniform, i.i.d. marginal-matched, ESS and sequence selection.

All generators work on unsigned 2D amplitude indices (``i_I * n_levels +
i_Q``); signs are drawn separately and stay attached to their amplitudes.
"""

from __future__ import annotations

import numpy as np

from . import channel_am as am
from .constellation import Constellation
from .matchers.ess import EssTrellis, ess_encode


def uniform_amplitudes(n_amplitudes: int, shape, rng) -> np.ndarray:
    return rng.integers(0, n_amplitudes, size=shape)


def iid_amplitudes(marginal, shape, rng) -> np.ndarray:
    """Independent draws from a fixed amplitude marginal."""
    p = np.asarray(marginal, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("marginal must be a probability vector")
    return rng.choice(p.size, size=shape, p=p)


def random_signs(shape, rng) -> np.ndarray:
    """Uniform I/Q sign pairs, shape ``shape + (2,)``."""
    return 1 - 2 * rng.integers(0, 2, size=tuple(np.atleast_1d(shape)) + (2,))


def _random_index(k_bits: int, rng) -> int:
    nbytes = (k_bits + 7) // 8
    raw = int.from_bytes(rng.bytes(nbytes), "big") if nbytes else 0
    return raw >> (8 * nbytes - k_bits) if k_bits else 0


def ess_levels(trellis: EssTrellis, n_blocks: int, rng) -> np.ndarray:
    """Level indices of ``n_blocks`` ESS blocks from uniform k-bit indices, (n_blocks, N)."""
    lookup = {lv: i for i, lv in enumerate(trellis.levels)}
    out = np.empty((n_blocks, trellis.n), dtype=np.int64)
    for b in range(n_blocks):
        seq = ess_encode(_random_index(trellis.k_bits, rng), trellis)
        out[b] = [lookup[v] for v in seq]
    return out


def ess_amplitudes(trellis: EssTrellis, n_blocks: int, n_levels: int, rng) -> np.ndarray:
    """2D amplitude indices from two independent 1D ESS streams, (n_blocks, N)."""
    li = ess_levels(trellis, n_blocks, rng)
    lq = ess_levels(trellis, n_blocks, rng)
    return li * n_levels + lq


def signed_symbols(constellation: Constellation, amp_index, signs) -> np.ndarray:
    """Constellation points for amplitude indices and sign pairs."""
    return constellation.points[constellation.point_index(amp_index, signs[..., 0], signs[..., 1])]


# ---------------------------------------------------------------------------
# sequence selection


def generate_candidates(base, count: int, rng, max_tries: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """``count`` orderings of ``base``: the base itself plus distinct shuffles.

    Returns ``(candidates, perms)`` with ``candidates[i] = base[perms[i]]``.
    Shuffles are seeded Fisher-Yates permutations; orderings whose symbol
    sequence repeats an earlier candidate are redrawn.
    """
    base = np.asarray(base)
    if count < 1:
        raise ValueError("count must be >= 1")
    n = base.shape[0]
    perms = [np.arange(n)]
    seen = {base.tobytes()}
    tries = 0
    while len(perms) < count:
        p = rng.permutation(n)
        key = base[p].tobytes()
        if key in seen:
            tries += 1
            if tries > max_tries:
                raise ValueError("could not find enough distinct orderings")
            continue
        seen.add(key)
        perms.append(p)
    perms = np.stack(perms)
    return base[perms], perms


def am_metric(ext, kernels: am.AmKernels, gamma: float, center: slice):
    """Predicted NLIN energy of the center under the noise-free AM model (lower is better).

    ``ext`` is (..., (2k+1) L) with the candidate in ``center``.
    """
    n = np.shape(ext)[-1]
    k_side = center.start
    if k_side < kernels.memory or n - center.stop < kernels.memory:
        raise ValueError("context does not cover the kernel memory")
    return am.am_nlin_energy(ext, kernels, gamma, center)


def select_sequence(candidates, scores) -> tuple[np.ndarray, int]:
    """Lowest-score candidate; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no candidates")
    i = int(np.argmin(scores))
    return np.asarray(candidates)[i], i


def select_stream(blocks, kernels: am.AmKernels, gamma: float, n_candidates: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Sequence selection over a stream of signed blocks, (n_blocks, L).

    Blocks are processed in order. Each candidate is scored with the ``k``
    already-selected blocks on its left and the next ``k`` base blocks on its
    right (cyclically at the stream ends). Returns the selected stream and
    the permutation applied to every block.
    """
    blocks = np.asarray(blocks)
    nb, L = blocks.shape
    k = max(1, am.required_k(kernels.memory, L))
    out = blocks.copy()
    perms = np.tile(np.arange(L), (nb, 1))
    for b in range(nb):
        cands, p = generate_candidates(blocks[b], n_candidates, rng)
        left = np.concatenate([out[(b - j) % nb] for j in range(k, 0, -1)])
        right = np.concatenate([blocks[(b + j) % nb] for j in range(1, k + 1)])
        ext = np.concatenate(
            [np.broadcast_to(left, (len(cands), k * L)), cands, np.broadcast_to(right, (len(cands), k * L))], axis=1
        )
        scores = am_metric(ext, kernels, gamma, slice(k * L, (k + 1) * L))
        out[b], w = select_sequence(cands, scores)
        perms[b] = p[w]
    return out, perms
