"""Additive-multiplicative (AM) first-order perturbative fiber channel.

Symbols are unit-power normalized and the channel reads

    y_t = x_t exp(j g sum_n (|x_{t-n}|^2 - 1) c_n) + dx_t + n_t
    dx_t = j g sum_{m,n} x_{t+m} x_{t+n} conj(x_{t+m+n}) S_{m,n}

with ``g`` the launch-power-scaled nonlinear coefficient (gamma * P, 1/km)
and kernels ``c``, ``S`` in km. Terms with ``m = 0`` or ``n = 0`` reduce to
``x_t |x_{t+j}|^2`` and live in the exponent (through ``c``); ``S`` holds the
remaining triplets.

Kernels come from the first-order regular-perturbation overlap integral

    X_{m,n} = (1/T) int_0^L dz e^{-alpha z} int dt g*(z,t) g(z,t-mT) g(z,t-nT) g*(z,t-(m+n)T)

for a pulse ``g`` with energy ``T`` dispersed to distance ``z``. For a
Gaussian pulse the time integral is closed form; the distance integral is
done by Gauss-Legendre quadrature with panel doubling.
"""

from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .link import LinkParams
from .ssfm_link import rrc_spectrum, rrc_taps

log = logging.getLogger(__name__)

_MAGIC = b"NAMK"


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class AmKernels:
    c: np.ndarray  # (2M+1,), index n + M
    S: np.ndarray  # (2M+1, 2M+1), index (m + M, n + M); absorbed row/column zero
    memory: int

    def __post_init__(self):
        M = self.memory
        if self.c.shape != (2 * M + 1,) or self.S.shape != (2 * M + 1, 2 * M + 1):
            raise ValueError("kernel shapes do not match memory")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.S))):
            raise ValueError("kernels must be finite")

    def c_at(self, n: int) -> complex:
        return complex(self.c[n + self.memory])

    def S_at(self, m: int, n: int) -> complex:
        return complex(self.S[m + self.memory, n + self.memory])

    def boundary_ratio(self) -> float:
        """max(|c_{+-M}|) relative to max |c_n|."""
        a = np.abs(self.c)
        return float(max(a[0], a[-1]) / a.max()) if a.max() > 0 else 0.0

    def truncate(self, M: int) -> "AmKernels":
        if M > self.memory:
            raise ValueError("cannot extend kernels")
        o = self.memory - M
        sl = slice(o, o + 2 * M + 1)
        return AmKernels(self.c[sl].copy(), self.S[sl, sl].copy(), M)


def split_kernel(X: np.ndarray, M: int) -> AmKernels:
    """Move the ``m = 0`` / ``n = 0`` triplets of the full kernel into ``c``.

    ``X[m+M, n+M]`` multiplies ``x_{t+m} x_{t+n} conj(x_{t+m+n})``. For
    ``m = 0`` (or ``n = 0``) the product is ``x_t |x_{t+j}|^2``, so
    ``c_{-j} = X[0, j] + X[j, 0]`` for ``j != 0`` and ``c_0 = X[0, 0]``.
    """
    X = np.asarray(X, dtype=complex)
    row, col = X[M, :], X[:, M]
    c_plus = row + col  # indexed by j (offset of the |x|^2 symbol)
    c_plus[M] = X[M, M]
    c = c_plus[::-1].copy()  # c_n multiplies |x_{t-n}|^2
    S = X.copy()
    S[M, :] = 0.0
    S[:, M] = 0.0
    return AmKernels(c, S, M)


def _gl_panels(f, a: float, b: float, panels: int, order: int = 8):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    z = (mid[:, None] + h[:, None] * x[None, :]).ravel()
    wz = (h[:, None] * w[None, :]).ravel()
    return np.tensordot(f(z), wz, axes=([-1], [0]))


def integrate_z(f, length: float, rtol: float = 1e-6, start: int = 8, max_doublings: int = 12):
    """Integrate a vector-valued ``f(z)`` over [0, length] to relative ``rtol``.

    ``f`` maps a 1D array of distances to an array whose last axis runs over
    them. Panels are doubled until the largest change relative to the
    largest magnitude drops below ``rtol``.
    """
    prev = _gl_panels(f, 0.0, length, start)
    panels = start
    for _ in range(max_doublings):
        panels *= 2
        cur = _gl_panels(f, 0.0, length, panels)
        scale = np.max(np.abs(cur))
        if scale == 0 or np.max(np.abs(cur - prev)) <= rtol * scale:
            return cur
        prev = cur
    raise QuadratureError(f"z-quadrature did not converge to {rtol:g} after {panels} panels")


def equivalent_gaussian_width(rolloff: float = 0.1) -> float:
    """Gaussian ``T0 / T`` with the same undispersed SPM overlap as an RRC pulse.

    Matches ``int |g|^4 dt`` of unit-energy-per-symbol pulses, i.e. the
    zero-dispersion value of ``c_0``. Where little dispersion has accrued
    (the high-power start of a lossy span) this sets the kernel scale.
    """
    taps = rrc_taps(rolloff, 32, 64)  # unit energy, 32 samples per symbol
    kappa = 32 * np.sum(taps**4)  # (1/T^2) int |g|^4 dt with int |g|^2 = T
    return float(1.0 / (np.sqrt(2 * np.pi) * kappa))


def gaussian_overlap(link: LinkParams, M: int, pulse_width: float | None = None, rtol: float = 1e-6):
    """Full phase-matched kernel ``X[m+M, n+M]`` (km) for Gaussian pulses.

    ``pulse_width`` is the 1/e half-width ``T0`` as a fraction of the symbol
    period. The default is :func:`equivalent_gaussian_width` for RRC
    roll-off 0.1.
    """
    T = link.symbol_period_ps
    T0 = (equivalent_gaussian_width() if pulse_width is None else pulse_width) * T
    b2, alpha = link.beta2, link.alpha
    k = np.arange(-M, M + 1)
    m, n = np.meshgrid(k, k, indexing="ij")
    m = m[..., None].astype(float)
    n = n[..., None].astype(float)
    p = m + n

    def integrand(z):
        q = T0**2 - 1j * b2 * z  # dispersed Gaussian: exp(-t^2 / (2 q))
        u = 1.0 / (2.0 * q)
        v = np.conj(u)
        A = 2.0 * (u + v)
        B = 2.0 * T * (u * (m + n) + v * p)
        C = T**2 * (u * (m**2 + n**2) + v * p**2)
        amp = T**2 / (np.pi * T0**2) * T0**4 / np.abs(q) ** 2  # a^4 T0^4 / |q|^2, a^2 = T / (T0 sqrt(pi))
        return np.exp(-alpha * z) * amp * np.sqrt(np.pi / A) * np.exp(B**2 / (4 * A) - C) / T

    return integrate_z(integrand, link.span_km, rtol=rtol)


def rrc_overlap(link: LinkParams, M: int, rolloff: float = 0.1, sps: int = 16, rtol: float = 1e-6):
    """Full kernel for root-raised-cosine pulses, computed on a sampled grid.

    The time integral is a Riemann sum (exact for band-limited integrands on
    a fine enough grid); the distance integral uses :func:`integrate_z`.
    """
    T = link.symbol_period_ps
    spread = abs(link.beta2) * link.span_km * 2 * np.pi * (1 + rolloff) / T**2  # in symbols
    half = int(2 * M + spread + 32)
    n_t = 1 << int(np.ceil(np.log2(2 * half * sps)))
    dt = T / sps
    f = np.fft.fftfreq(n_t, dt)  # 1/ps
    G0 = rrc_spectrum(f * T, rolloff) * np.sqrt(T)  # |G|^2 integrates to T over f*T -> energy T
    G0 = G0 * np.sqrt(T / (np.sum(np.abs(G0) ** 2) / (n_t * dt)))
    w = 2 * np.pi * f
    shifts = np.arange(-M, M + 1) * sps
    k = np.arange(-M, M + 1)
    pidx = (k[:, None] + k[None, :])  # m + n

    def integrand(z):
        out = np.empty((2 * M + 1, 2 * M + 1, z.size), dtype=complex)
        for i, zi in enumerate(z):
            g = np.fft.ifft(G0 * np.exp(0.5j * link.beta2 * w**2 * zi)) / dt
            g = np.fft.fftshift(g)
            gs = np.stack([np.roll(g, s) for s in shifts])  # g(t - mT)
            a = np.conj(g)[None, :] * gs  # conj(g0) g_m
            # conj(g_{m+n}) for |m+n| <= 2M via roll of conj(g)
            cg = np.stack([np.roll(np.conj(g), s * sps) for s in range(-2 * M, 2 * M + 1)])
            for mi in range(2 * M + 1):
                out[mi, :, i] = np.sum(a[mi][None, :] * gs * cg[pidx[mi] + 2 * M], axis=1) * dt
        return np.exp(-link.alpha * z) * out / T

    return integrate_z(integrand, link.span_km, rtol=rtol, start=16, max_doublings=6)


def required_memory(link: LinkParams, threshold: float = 0.05, pulse: str = "gaussian", max_memory: int = 128) -> int:
    """Smallest ``M`` with ``|c_{+-M}| < threshold * max|c_n|``."""
    M = 4
    while True:
        kern = generate_kernels(link, M, pulse=pulse, check=False)
        a = np.abs(kern.c)
        idx = np.nonzero(a >= threshold * a.max())[0]
        need = int(max(abs(idx[0] - M), abs(idx[-1] - M))) + 1
        if need <= M:
            return need
        if M >= max_memory:
            raise ValueError(f"kernel memory exceeds {max_memory}")
        M = min(2 * M, max_memory)


def generate_kernels(
    link: LinkParams,
    memory: int | None = None,
    pulse: str = "gaussian",
    pulse_width: float | None = None,
    rolloff: float = 0.1,
    check: bool = True,
) -> AmKernels:
    """First-order AM kernels for a single-span, dispersion-unmanaged link.

    Kernels depend only on dispersion, attenuation, span and symbol rate;
    the nonlinear coefficient and launch power enter in :func:`am_propagate`.
    ``memory=None`` picks the smallest memory meeting the decay criterion.
    """
    if memory is None:
        memory = required_memory(link, pulse=pulse)
    if memory < 1:
        raise ValueError("memory must be >= 1")
    if pulse == "gaussian":
        X = gaussian_overlap(link, memory, pulse_width)
    elif pulse == "rrc":
        X = rrc_overlap(link, memory, rolloff)
    else:
        raise ValueError(f"unknown pulse {pulse!r}")
    kern = split_kernel(X, memory)
    if check and kern.boundary_ratio() >= 0.05:
        warnings.warn(
            f"|c_M| / max|c| = {kern.boundary_ratio():.3f} >= 0.05; increase memory", stacklevel=2
        )
    return kern


def nonlinear_gain(link: LinkParams, launch_dbm: float | None = None) -> float:
    """gamma * P (1/km), the coefficient multiplying unit-power kernels."""
    from .link import dbm_to_w

    p = dbm_to_w(link.launch_dbm if launch_dbm is None else launch_dbm)
    return float(link.gamma_w_km * p)


# ---------------------------------------------------------------------------
# propagation


def _index_tables(N: int, M: int):
    t = np.arange(N)
    k = np.arange(-M, M + 1)
    lag = (t[:, None] - k[None, :]) % N  # t - n
    lead = (t[:, None] + k[None, :]) % N  # t + m
    both = (t[:, None, None] + k[None, :, None] + k[None, None, :]) % N  # t + m + n
    return lag, lead, both


def nonlinear_terms(x, kernels: AmKernels, gamma: float):
    """(phase-rotated x, additive term dx) for a batch ``x`` of shape (..., N)."""
    M = kernels.memory
    N = ad.shape_of(x)[-1]
    if N <= 2 * M:
        raise ValueError(f"sequence length {N} too short for kernel memory {M}")
    lag, lead, both = _index_tables(N, M)
    power = ad.abs2(x) - 1.0
    phase = ad.take(power, lag, axis=-1) @ kernels.c  # sum_n (|x_{t-n}|^2 - 1) c_n
    rotated = x * ad.exp(phase * (1j * gamma))
    if not np.any(kernels.S):
        return rotated, np.zeros(ad.shape_of(x), dtype=complex)
    xm = ad.take(x, lead, axis=-1)  # (..., N, 2M+1)
    xmn = ad.take(ad.conj(x), both, axis=-1)  # (..., N, 2M+1, 2M+1)
    ndim = len(ad.shape_of(x))
    pair = ad.reshape(xm, ad.shape_of(xm) + (1,)) * ad.reshape(xm, ad.shape_of(xm)[:-1] + (1, 2 * M + 1))
    trip = pair * xmn * kernels.S
    dx = ad.sum(trip, axis=(ndim, ndim + 1)) * (1j * gamma)
    return rotated, dx


def am_propagate(x, kernels: AmKernels, gamma: float, sigma2: float, rng=None, noise=None):
    """Pass normalized symbols through the AM channel.

    ``x`` is (..., N) and wraps around cyclically at its ends. ``sigma2`` is
    the ASE variance relative to unit signal power; ``noise`` may be given
    explicitly (it is a constant on the tape).
    """
    rotated, dx = nonlinear_terms(x, kernels, gamma)
    y = rotated + dx
    if noise is None and sigma2 > 0:
        shp = ad.shape_of(x)
        noise = np.sqrt(sigma2 / 2) * (rng.standard_normal(shp) + 1j * rng.standard_normal(shp))
    if noise is not None:
        y = y + noise
    return y


def am_nlin_energy(x, kernels: AmKernels, gamma: float, center: slice | None = None):
    """Noise-free NLIN energy sum_t |y_t - x_t|^2 over ``center`` (per row)."""
    y = am_propagate(x, kernels, gamma, 0.0)
    d = ad.abs2(y - x)
    if center is not None:
        d = d[..., center]
    return ad.sum(d, axis=-1)


# ---------------------------------------------------------------------------
# neighbour context


def required_k(memory: int, L: int) -> int:
    """Smallest number of side blocks per side with ``k L >= M``."""
    return int(np.ceil(memory / L))


def assemble_context(center, sides, k: int):
    """Concatenate ``k`` blocks either side of ``center`` along the last axis.

    ``sides`` holds ``2k`` blocks ordered ``-k .. -1, +1 .. +k``. Returns the
    extended sequence and the slice selecting the center after propagation.
    """
    L = ad.shape_of(center)[-1]
    sides = list(sides)
    if len(sides) != 2 * k:
        raise ValueError(f"need {2 * k} side blocks, got {len(sides)}")
    for s in sides:
        if ad.shape_of(s) != ad.shape_of(center):
            raise ValueError("side blocks must match the center block shape")
    blocks = sides[:k] + [center] + sides[k:]
    ext = blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=-1)
    return ext, slice(k * L, (k + 1) * L)


# ---------------------------------------------------------------------------
# file format


def save_kernels(path, kernels: AmKernels, link: LinkParams | None = None, float_width: int = 8, **meta):
    """Binary: magic ``NAMK``, u32 M, u32 float width, c then S row-major,
    each as little-endian (re, im) pairs. JSON sidecar ``<path>.json``."""
    dt = {8: "<c16", 4: "<c8"}[float_width]
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", kernels.memory, float_width))
        fh.write(np.ascontiguousarray(kernels.c, dtype=dt).tobytes())
        fh.write(np.ascontiguousarray(kernels.S, dtype=dt).tobytes())
    side = {"memory": kernels.memory, **meta}
    if link is not None:
        side["link"] = link.to_dict()
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load_kernels(path) -> AmKernels:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not an AM kernel file")
    M, width = struct.unpack("<II", raw[4:12])
    dt = np.dtype({8: "<c16", 4: "<c8"}[width])
    n = 2 * M + 1
    c = np.frombuffer(raw, dtype=dt, count=n, offset=12).astype(complex)
    S = np.frombuffer(raw, dtype=dt, count=n * n, offset=12 + n * dt.itemsize).astype(complex)
    if 12 + (n + n * n) * dt.itemsize != len(raw):
        raise ValueError(f"{path}: size mismatch")
    return AmKernels(c, S.reshape(n, n), M)
