"""Shared fixtures and numerical helpers."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from npas import autodiff as ad
from npas.constellation import build_qam


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a real scalar ``f`` at ``x``.

    For complex ``x`` the result is ``df/dRe + j df/dIm``, the convention the
    tape uses for complex leaves.
    """
    x = np.array(x, dtype=complex if np.iscomplexobj(x) else float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        dirs = (1.0, 1j) if np.iscomplexobj(x) else (1.0,)
        for d in dirs:
            old = flat[i]
            flat[i] = old + h * d
            fp = f(x)
            flat[i] = old - h * d
            fm = f(x)
            flat[i] = old
            gflat[i] += (fp - fm) / (2 * h) * (1.0 if d == 1.0 else 1j)
    return g


def tape_grad(f, x: np.ndarray) -> np.ndarray:
    tape = ad.Tape()
    v = tape.var(x)
    return ad.backward(tape, f(v))[v]


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def awgn_bmi(constellation, sigma2: float, n_grid: int = 40001) -> float:
    """Bit-metric rate (bits/2D) of uniform Gray QAM on AWGN by numerical integration.

    Square Gray QAM is a product of two PAMs, so the 2D rate is twice the 1D
    rate with per-dimension noise variance ``sigma2 / 2``.
    """
    m = constellation.bits_per_dim
    pam = {}
    for p, lab in zip(constellation.points, constellation.labels):
        pam[round(p.real, 12)] = lab[:m]
    a = np.array(sorted(pam))
    labels = np.array([pam[v] for v in a])
    var = sigma2 / 2
    s = np.sqrt(var)
    y = np.linspace(a[0] - 12 * s, a[-1] + 12 * s, n_grid)
    lik = np.exp(-((y[None, :] - a[:, None]) ** 2) / (2 * var))  # (points, grid)
    rate = 0.0
    for k in range(m):
        for i in range(a.size):
            pdf = lik[i] / np.sqrt(2 * np.pi * var)
            same = lik[labels[:, k] == labels[i, k]].sum(axis=0)
            total = lik.sum(axis=0)
            integrand = pdf * np.log2(np.maximum(total, 1e-300) / np.maximum(same, 1e-300))
            rate += (1.0 - integrate.trapezoid(integrand, y)) / a.size
    return 2.0 * rate


def scalar_am(x, c, S, M, gamma):
    """Direct per-symbol evaluation of the AM model with cyclic indexing."""
    N = len(x)
    y = np.empty(N, dtype=complex)
    for t in range(N):
        phase = 0.0
        for n in range(-M, M + 1):
            phase += (abs(x[(t - n) % N]) ** 2 - 1.0) * c[n + M]
        add = 0.0
        for m in range(-M, M + 1):
            for n in range(-M, M + 1):
                add += x[(t + m) % N] * x[(t + n) % N] * np.conj(x[(t + m + n) % N]) * S[m + M, n + M]
        y[t] = x[t] * np.exp(1j * gamma * phase) + 1j * gamma * add
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def qam16():
    return build_qam(16)


@pytest.fixture(scope="session")
def qam64():
    return build_qam(64)
