"""Gaussian demapping, bit-metric rates and effective SNR.

LLRs use natural logarithms with the convention that a positive value
favours bit 0. Rates are in bits per 2D symbol unless stated otherwise.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import warnings
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .constellation import Constellation

LLR_CLAMP = 50.0
SNR_CAP_DB = 60.0
LN2 = np.log(2.0)


def gaussian_llr(y, constellation: Constellation, sigma2: float, prior=None):
    """Bitwise LLRs of received symbols under a Gaussian channel with a prior.

    ``y`` has any shape ``S``; the result has shape ``S + (bits,)``. Works on
    tape variables, including a tape ``prior``. Infinite values (a prior that rules out one bit value)
    are clamped to +-50 with a warning.
    """
    if not np.all(ad.value(sigma2) > 0):
        raise ValueError("sigma2 must be positive")
    pts = constellation.points
    if prior is None:
        prior = np.full(pts.size, 1.0 / pts.size)
    pv = np.asarray(ad.value(prior), dtype=float)
    if pv.shape != pts.shape or abs(pv.sum() - 1.0) > 1e-9 or np.any(pv < 0):
        raise ValueError("prior must be a normalized vector over the constellation")
    if isinstance(prior, ad.Var):
        logprior = ad.log(prior)
    else:
        with np.errstate(divide="ignore"):
            logprior = np.log(pv)
    shp = ad.shape_of(y)
    d = ad.div(ad.abs2(ad.reshape(y, shp + (1,)) - pts), sigma2) * -1.0 + logprior  # (S, order)
    labels = constellation.labels
    idx0 = np.stack([np.nonzero(labels[:, k] == 0)[0] for k in range(labels.shape[1])])
    idx1 = np.stack([np.nonzero(labels[:, k] == 1)[0] for k in range(labels.shape[1])])
    l0 = ad.logsumexp(ad.take(d, idx0, axis=-1), axis=-1)
    l1 = ad.logsumexp(ad.take(d, idx1, axis=-1), axis=-1)
    with np.errstate(invalid="ignore"):
        llr = l0 - l1
    lv = ad.value(llr)
    if np.any(np.isnan(lv)):
        raise FloatingPointError("undefined LLR (both hypotheses impossible)")
    if np.any(np.abs(lv) > LLR_CLAMP):
        if np.any(~np.isfinite(lv)):
            warnings.warn("infinite LLRs clamped to +-50 (degenerate prior)", RuntimeWarning, stacklevel=2)
        llr = _clamp(llr)
    return llr


def _clamp(llr):
    lv = ad.value(llr)
    if isinstance(llr, ad.Var) and np.all(np.isfinite(lv)):
        return ad.clip(llr, -LLR_CLAMP, LLR_CLAMP)
    return np.clip(ad.stop_gradient(llr), -LLR_CLAMP, LLR_CLAMP)


def bit_labels(constellation: Constellation, point_index) -> np.ndarray:
    """Transmitted bit labels, shape ``point_index.shape + (bits,)``."""
    return constellation.labels[np.asarray(point_index)].astype(float)


def bce_bits(llr, bits):
    """Per-bit cross entropy in bits: log2(1 + exp(-(1 - 2b) l))."""
    sgn = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    return ad.softplus(llr * (-sgn)) * (1.0 / LN2)


class LossTerms(NamedTuple):
    loss: object
    bce_rate: object
    h_rate: object


def adjusted_bce_loss(llr, bits, logp, L: int, entropy=None) -> LossTerms:
    """Adjusted BCE: ``BCE_rate - H_rate`` in bits per 2D symbol.

    ``llr`` and ``bits`` are (batch, L, bits). ``logp`` holds the natural-log
    probability of each sampled amplitude sequence, shape (batch,) or
    (batch, L) (summed over the last axis). ``entropy`` replaces the
    sampled estimate ``-mean log2 p / L`` with another per-symbol entropy
    term, e.g. :func:`conditional_entropy_rate`.
    """
    bce = ad.sum(bce_bits(llr, bits)) * (1.0 / (L * ad.shape_of(llr)[0]))
    if entropy is None:
        lp = logp if len(ad.shape_of(logp)) == 1 else ad.sum(logp, axis=-1)
        entropy = ad.mean(lp) * (-1.0 / (L * LN2))
    return LossTerms(bce - entropy, bce, entropy)


def conditional_entropy_rate(log_probs, L: int):
    """Mean over the batch of ``(1/L) sum_t H(p(. | a_<t))`` in bits.

    ``log_probs`` is (batch, L, K). Its gradient is the exact gradient of the
    per-step entropies given the sampled prefixes.
    """
    p = ad.exp(log_probs)
    h = ad.sum(p * log_probs) * (-1.0 / (LN2 * L * ad.shape_of(log_probs)[0]))
    return h


def air_estimate(llr, bits, entropy_rate: float) -> float:
    """Bit-metric AIR, ``H(X) - sum_k BCE_k`` per symbol, clamped at 0.

    ``entropy_rate`` is the full symbol entropy in bits/2D (signs included).
    """
    llr = np.asarray(ad.value(llr), dtype=float)
    bits = np.asarray(bits, dtype=float)
    n_sym = llr.size // llr.shape[-1]
    bce = float(np.sum(np.logaddexp(0.0, -(1.0 - 2.0 * bits) * llr)) / LN2 / n_sym)
    return max(0.0, float(entropy_rate) - bce)


def fit_gain(x, y) -> tuple[complex, float]:
    """Least-squares gain ``h`` and residual variance ``mean|y - h x|^2``."""
    x = np.asarray(x).ravel()
    y = np.asarray(y).ravel()
    px = np.vdot(x, x).real
    if px == 0:
        raise ValueError("transmitted sequence has zero power")
    h = np.vdot(x, y) / px
    return complex(h), float(np.mean(np.abs(y - h * x) ** 2))


def fit_receiver(reference, y):
    """Tape-aware gain fit: ``(y / h, sigma2)`` with ``h`` the least-squares
    gain of ``y`` on the constant ``reference`` and ``sigma2`` the residual
    variance after equalization. Gradients flow through both, so a receiver
    that refits per batch is differentiated as such."""
    ref = np.asarray(reference)
    h = ad.sum(y * np.conj(ref)) * (1.0 / np.sum(np.abs(ref) ** 2))
    y_eq = ad.div(y, h)
    sigma2 = ad.mean(ad.abs2(y_eq - ref))
    return y_eq, sigma2


def effective_snr(x, y) -> float:
    """Effective SNR in dB after a least-squares complex gain, capped at 60 dB."""
    h, err = fit_gain(x, y)
    sig = abs(h) ** 2 * float(np.mean(np.abs(np.asarray(x)) ** 2))
    if err <= sig * 10 ** (-SNR_CAP_DB / 10):
        return SNR_CAP_DB
    return float(10 * np.log10(sig / err))


def sequence_entropy_rate(logp, L: int) -> float:
    """Empirical ``-mean(log2 p(a)) / L`` from natural-log sequence probabilities.

    ``logp`` is (batch,) per sequence or (batch, L) per step.
    """
    lp = np.asarray(ad.value(logp), dtype=float)
    if not np.all(np.isfinite(lp)):
        raise ValueError("log-probabilities must be finite")
    if lp.ndim > 1:
        lp = lp.sum(axis=-1)
    return float(-np.mean(lp) / (L * LN2))


def marginal_entropy(indices, n_symbols: int) -> float:
    """Plug-in entropy (bits) of the empirical symbol distribution."""
    p = np.bincount(np.asarray(indices).ravel(), minlength=n_symbols) / np.size(indices)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def empirical_prior(amp_indices, constellation: Constellation) -> np.ndarray:
    """Per-point prior: empirical amplitude marginal times uniform signs."""
    pa = np.bincount(np.asarray(amp_indices).ravel(), minlength=constellation.n_amplitudes)
    pa = pa / pa.sum()
    amp_of_point = constellation.signed_to_amplitude(np.arange(constellation.order))[0]
    return pa[amp_of_point] / 4.0


# ---------------------------------------------------------------------------
# CSV output

METRIC_FIELDS = ("power_dBm", "snr_eff_dB", "air_bits_per_2D", "entropy_bits_per_2D", "seed")


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def format_csv(rows: list[dict], fields=METRIC_FIELDS, config=None, version: str | None = None) -> str:
    """CSV text with a leading ``#`` comment carrying version and config hash.

    Floats are written with ``repr`` precision so output is byte-stable.
    """
    from . import __version__

    buf = io.StringIO()
    buf.write(f"# npas {version or __version__} config={config_hash(config or {})}\n")
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()


def write_csv(path, rows, fields=METRIC_FIELDS, config=None) -> None:
    Path(path).write_text(format_csv(rows, fields, config))


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
