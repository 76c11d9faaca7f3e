"""Autoregressive LSTM shaper over a discrete symbol alphabet.

At every step the cell sees the one-hot of the previously emitted symbol
(or a dedicated start flag at ``t = 0``) and the recurrent state, and emits
logits over the alphabet. Discrete samples are drawn with Gumbel-Softmax and
a straight-through estimator, so the forward pass carries hard one-hots while
gradients follow the relaxed sample.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad

_MAGIC = b"NPSH"
_VERSION = 1


@dataclass
class ShaperParams:
    """LSTM gate weights (gate order i, f, g, o) and output projection.

    ``W`` maps ``[input, h]`` of width ``n_symbols + 1 + hidden`` to the four
    stacked gates. Fields hold arrays, or tape variables while training.
    """

    W: np.ndarray
    b: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def n_symbols(self) -> int:
        return ad.shape_of(self.W_out)[1]

    @property
    def hidden(self) -> int:
        return ad.shape_of(self.W_out)[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: ad.value(getattr(self, f.name)) for f in fields(self)}

    def watch(self, tape: ad.Tape) -> "ShaperParams":
        return ShaperParams(**tape.watch(self.arrays()))

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.arrays().values()))


def init_params(n_symbols: int, hidden: int = 256, rng=None, dtype=np.float64) -> ShaperParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases, forget-gate bias +1."""
    rng = np.random.default_rng(rng)
    k = 1.0 / np.sqrt(hidden)
    n_in = n_symbols + 1
    W = rng.uniform(-k, k, size=(n_in + hidden, 4 * hidden)).astype(dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0
    W_out = rng.uniform(-k, k, size=(hidden, n_symbols)).astype(dtype)
    b_out = np.zeros(n_symbols, dtype=dtype)
    return ShaperParams(W, b, W_out, b_out)


def zero_params(n_symbols: int, hidden: int) -> ShaperParams:
    n_in = n_symbols + 1
    return ShaperParams(
        np.zeros((n_in + hidden, 4 * hidden)),
        np.zeros(4 * hidden),
        np.zeros((hidden, n_symbols)),
        np.zeros(n_symbols),
    )


def initial_state(params: ShaperParams, batch: int):
    h = np.zeros((batch, params.hidden))
    return h, h.copy()


def start_input(params: ShaperParams, batch: int) -> np.ndarray:
    x = np.zeros((batch, params.n_symbols + 1))
    x[:, -1] = 1.0
    return x


def shaper_step(params: ShaperParams, x_in, state):
    """One LSTM cell update followed by the affine projection to logits.

    ``x_in`` is ``(batch, n_symbols + 1)``; ``state`` is ``(h, c)``, each
    ``(batch, hidden)``. Returns ``(logits, (h, c))``.
    """
    h, c = state
    H = params.hidden
    if ad.shape_of(x_in)[-1] != params.n_symbols + 1:
        raise ValueError(
            f"input width {ad.shape_of(x_in)[-1]} != n_symbols + 1 = {params.n_symbols + 1}"
        )
    if ad.shape_of(h)[-1] != H or ad.shape_of(c)[-1] != H:
        raise ValueError("state dimension does not match hidden size")
    z = ad.concat([x_in, h], axis=-1) @ params.W + params.b
    i = ad.sigmoid(z[:, :H])
    f = ad.sigmoid(z[:, H : 2 * H])
    g = ad.tanh(z[:, 2 * H : 3 * H])
    o = ad.sigmoid(z[:, 3 * H :])
    c = f * c + i * g
    h = o * ad.tanh(c)
    logits = h @ params.W_out + params.b_out
    return logits, (h, c)


class GumbelSample(NamedTuple):
    soft: object  # relaxed sample, (batch, K)
    hard: object  # straight-through one-hot, (batch, K)
    index: np.ndarray  # (batch,)
    logp: object  # log softmax(logits)[index], (batch,)
    log_probs: object  # full log softmax(logits), (batch, K)


def gumbel_softmax_sample(logits, tau: float, rng, noise=None, relaxed: bool = False) -> GumbelSample:
    """Gumbel-Softmax draw with a straight-through hard one-hot.

    ``noise`` may be supplied to make the draw reproducible independent of
    ``rng``. With ``relaxed=True`` the forward pass also carries the soft
    sample, which makes the whole computation smooth in the logits (used by
    finite-difference checks).
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    lv = ad.value(logits)
    if noise is None:
        noise = rng.gumbel(size=lv.shape)
    soft = ad.softmax((logits + noise) / tau, axis=-1)
    index = np.argmax(lv + noise, axis=-1)
    onehot = np.zeros(lv.shape)
    np.put_along_axis(onehot, index[..., None], 1.0, axis=-1)
    hard = soft if relaxed else ad.straight_through(soft, onehot)
    log_probs = ad.log_softmax(logits, axis=-1)
    logp = ad.sum(log_probs * onehot, axis=-1)
    return GumbelSample(soft, hard, index, logp, log_probs)


class Rollout(NamedTuple):
    onehots: object  # (batch, L, K) straight-through one-hots
    indices: np.ndarray  # (batch, L)
    logp: object  # (batch, L) per-step log-probabilities of the picks
    log_probs: object  # (batch, L, K) per-step conditional log-distributions


def sample_block(params: ShaperParams, L: int, tau: float, rng, batch: int = 1, noise=None,
                 relaxed: bool = False) -> Rollout:
    """Autoregressive rollout of ``batch`` independent length-``L`` sequences.

    Each hard sample is fed back as the next input. With tape variables in
    ``params`` the whole rollout is recorded. ``relaxed`` is passed to
    :func:`gumbel_softmax_sample`.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    state = initial_state(params, batch)
    x = start_input(params, batch)
    hards, idx, logps, lps = [], [], [], []
    for t in range(L):
        logits, state = shaper_step(params, x, state)
        s = gumbel_softmax_sample(logits, tau, rng, None if noise is None else noise[:, t], relaxed)
        hards.append(s.hard)
        idx.append(s.index)
        logps.append(s.logp)
        lps.append(s.log_probs)
        x = ad.concat([s.hard, np.zeros((batch, 1))], axis=-1)
    return Rollout(
        ad.stack(hards, axis=1), np.stack(idx, axis=1), ad.stack(logps, axis=1), ad.stack(lps, axis=1)
    )


class ConditionalSource:
    """Exact conditionals ``p(a_t | a_<t)`` of a trained shaper, for the ADM.

    The LSTM state is cached along the most recent prefix so a left-to-right
    walk costs one cell update per symbol.
    """

    def __init__(self, params: ShaperParams):
        self.params = ShaperParams(**params.arrays())
        self._prefix: list[int] = []
        self._state = initial_state(self.params, 1)
        self._logits = None

    def _advance(self, symbol):
        if symbol is None:
            x = start_input(self.params, 1)
        else:
            x = np.zeros((1, self.params.n_symbols + 1))
            x[0, symbol] = 1.0
        self._logits, self._state = shaper_step(self.params, x, self._state)

    def __call__(self, prefix) -> np.ndarray:
        prefix = [int(a) for a in prefix]
        if self._logits is None or prefix[: len(self._prefix)] != self._prefix or len(prefix) < len(self._prefix):
            self._prefix = []
            self._state = initial_state(self.params, 1)
            self._advance(None)
        for a in prefix[len(self._prefix) :]:
            self._advance(a)
            self._prefix.append(a)
        z = self._logits[0] - self._logits[0].max()
        p = np.exp(z)
        return p / p.sum()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ShaperParams, meta: dict | None = None, float_width: int = 8):
    """Binary checkpoint plus a JSON sidecar (``<path>.json``).

    Layout: magic ``NPSH``, u32 version, u32 n_symbols, u32 hidden, u32 float
    width (4 or 8), then ``W, b, W_out, b_out`` as little-endian arrays.
    """
    if float_width not in (4, 8):
        raise ValueError("float width must be 4 or 8")
    dt = "<f8" if float_width == 8 else "<f4"
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIII", _VERSION, params.n_symbols, params.hidden, float_width))
        for arr in params.arrays().values():
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    if meta is not None:
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[ShaperParams, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a shaper checkpoint")
    version, K, H, width = struct.unpack("<IIII", raw[4:20])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    dt = np.dtype("<f8" if width == 8 else "<f4")
    shapes = [(K + 1 + H, 4 * H), (4 * H,), (H, K), (K,)]
    off = 20
    arrays = []
    for shp in shapes:
        n = int(np.prod(shp))
        arrays.append(np.frombuffer(raw, dtype=dt, count=n, offset=off).reshape(shp).astype(np.float64))
        off += n * dt.itemsize
    if off != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes")
    side = Path(str(path) + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return ShaperParams(*arrays), meta


def with_arrays(params: ShaperParams, arrays: dict[str, np.ndarray]) -> ShaperParams:
    return replace(params, **arrays)
