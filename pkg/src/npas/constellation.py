"""Square QAM constellations with an amplitude/sign (PAS) decomposition.

Each 2D point is labelled with a binary reflected Gray code per I/Q
component. For an ``m``-bit component label the first bit is the sign and
the remaining ``m - 1`` bits index the amplitude, so flipping the sign bit
reflects the point across the corresponding axis.

Unsigned 2D symbols ("amplitudes") are pairs ``(amp_I, amp_Q)`` drawn from
the 1D alphabet ``1, 3, ..., sqrt(order) - 1``.  They are enumerated as
``index = i_I * n_levels + i_Q``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class AmplitudeAlphabet:
    """Positive per-dimension amplitude levels, ascending."""

    levels: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size == 0:
            raise ValueError("levels must be a non-empty 1D array")
        if np.any(lv <= 0) or np.any(np.diff(lv) <= 0):
            raise ValueError("levels must be positive and strictly increasing")
        object.__setattr__(self, "levels", lv)

    @property
    def size(self) -> int:
        return self.levels.size

    @property
    def index_bits(self) -> int:
        return int(np.log2(self.size)) if self.size > 1 else 0

    @property
    def energies(self) -> np.ndarray:
        return self.levels**2


@dataclass(frozen=True)
class Constellation:
    order: int
    points: np.ndarray  # complex, unit mean power
    labels: np.ndarray  # (order, bits) uint8
    alphabet: AmplitudeAlphabet
    scale: float  # multiply integer grid by this to get ``points``

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def bits_per_dim(self) -> int:
        return self.labels.shape[1] // 2

    @property
    def n_levels(self) -> int:
        return self.alphabet.size

    @property
    def n_amplitudes(self) -> int:
        """Size of the unsigned 2D alphabet."""
        return self.alphabet.size**2

    def amplitude_points(self) -> np.ndarray:
        """Unsigned 2D symbols (first quadrant), normalized like ``points``."""
        lv = self.alphabet.levels * self.scale
        return (lv[:, None] + 1j * lv[None, :]).ravel()

    def amplitude_components(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalized (I, Q) amplitudes per unsigned 2D index."""
        lv = self.alphabet.levels * self.scale
        n = lv.size
        return np.repeat(lv, n), np.tile(lv, n)

    def point_index(self, amp_index, sign_i, sign_q) -> np.ndarray:
        """Constellation point index for unsigned index plus signs (+1/-1)."""
        amp_index = np.asarray(amp_index)
        n = self.n_levels
        ii, iq = amp_index // n, amp_index % n
        # grid column c runs -(2n-1) .. (2n-1); level i with sign s
        col_i = np.where(np.asarray(sign_i) > 0, n + ii, n - 1 - ii)
        col_q = np.where(np.asarray(sign_q) > 0, n + iq, n - 1 - iq)
        return col_i * (2 * n) + col_q

    def signed_to_amplitude(self, point_index) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inverse of :meth:`point_index`: (amp_index, sign_i, sign_q)."""
        point_index = np.asarray(point_index)
        n = self.n_levels
        col_i, col_q = point_index // (2 * n), point_index % (2 * n)
        sign_i = np.where(col_i >= n, 1, -1)
        sign_q = np.where(col_q >= n, 1, -1)
        ii = np.where(col_i >= n, col_i - n, n - 1 - col_i)
        iq = np.where(col_q >= n, col_q - n, n - 1 - col_q)
        return ii * n + iq, sign_i, sign_q

    def to_json(self) -> str:
        return json.dumps(
            {
                "order": self.order,
                "points": [[float(p.real), float(p.imag)] for p in self.points],
                "labels": ["".join(str(int(b)) for b in lab) for lab in self.labels],
            }
        )


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


def _bits(v: np.ndarray, width: int) -> np.ndarray:
    return ((v[:, None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8)


def build_qam(order: int) -> Constellation:
    """Gray-labelled square QAM with unit mean power.

    Points are ordered with the I component major, ascending in both I and Q.
    """
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {SUPPORTED_ORDERS}")
    side = int(round(np.sqrt(order)))
    m = int(np.log2(side))
    grid = np.arange(-(side - 1), side, 2, dtype=float)
    re, im = np.meshgrid(grid, grid, indexing="ij")
    raw = (re + 1j * im).ravel()
    scale = 1.0 / np.sqrt(np.mean(np.abs(raw) ** 2))
    gray = _bits(_gray(np.arange(side)), m)
    labels = np.concatenate(
        [np.repeat(gray, side, axis=0), np.tile(gray, (side, 1))], axis=1
    )
    alphabet = AmplitudeAlphabet(np.arange(1, side, 2, dtype=float))
    return Constellation(order, raw * scale, labels, alphabet, scale)


def compose(amplitudes, signs):
    """Apply I/Q signs to unsigned complex amplitudes.

    ``signs`` has shape ``amplitudes.shape + (2,)`` with entries in {+1, -1}.
    Works on tape variables for the amplitudes; signs are constants.
    """
    signs = np.asarray(signs)
    shape = ad.shape_of(amplitudes)
    if signs.shape != tuple(shape) + (2,):
        raise ValueError(f"signs shape {signs.shape} does not match amplitudes {shape}")
    if not np.all(np.abs(signs) == 1):
        raise ValueError("signs must be +1 or -1")
    return ad.complex_(ad.real(amplitudes) * signs[..., 0], ad.imag(amplitudes) * signs[..., 1])


def decompose(symbols) -> tuple[np.ndarray, np.ndarray]:
    """Split signed points into (unsigned amplitudes, sign pairs)."""
    symbols = np.asarray(symbols)
    signs = np.stack([np.where(symbols.real < 0, -1, 1), np.where(symbols.imag < 0, -1, 1)], axis=-1)
    return np.abs(symbols.real) + 1j * np.abs(symbols.imag), signs


def normalize_power(x, target: float = 1.0, axis=None):
    """Scale ``x`` so its empirical mean power equals ``target``.

    Returns ``(scaled, scale)``. The scale is computed from ``x`` itself, so on
    a tape the gradient flows through it. ``axis`` selects the averaging axes
    (``None`` averages over everything).
    """
    p = ad.mean(ad.abs2(x), axis=axis, keepdims=axis is not None)
    pv = ad.value(p)
    if np.any(pv <= 0):
        raise ValueError("cannot normalize an all-zero block")
    scale = ad.sqrt(target / p)
    return x * scale, scale
