"""End-to-end shaper training through the AM channel, and evaluation drivers.

Training follows the PAS pipeline: sample amplitude blocks from the shaper,
attach uniform signs, surround the center block with independently sampled
neighbours, normalize power, propagate through the AM model, demap the
center block and minimize the adjusted BCE. Evaluation runs any transmitter
(a trained shaper or a baseline) through the SSFM link.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import baselines as bl
from . import channel_am as am
from . import metrics as mt
from .constellation import Constellation, build_qam, compose, normalize_power
from .link import PRESETS, LinkParams
from .matchers.adm import adm_encode
from .matchers.ess import EssTrellis, ess_build, find_ess_operating_point
from .optim import Adam, AdamConfig
from .shaper import ConditionalSource, ShaperParams, init_params, load_checkpoint, sample_block, save_checkpoint
from .ssfm_link import ChainConfig, cpr_pilot, pilot_mask, simulate_link

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Training setup. Every field has a JSON-serializable default."""

    order: int = 64
    mode: str = "npas"  # npas (unsigned amplitudes) | nps (signed points)
    L: int = 16
    k: int | None = None  # side blocks per side; None -> smallest k with kL >= M
    batch: int = 64
    steps: int = 1000
    hidden: int = 256
    tau_start: float = 1.0
    tau_end: float = 0.1
    lr: float = 1e-3
    lr_end: float | None = None  # geometric decay target; None keeps lr fixed
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    link: str | dict = "desk-link"
    launch_dbm: float | None = None  # overrides the link's launch power
    gamma: float | None = None  # gamma * P override (1/km); 0 gives an AWGN channel
    sigma2: float | None = None  # normalized ASE variance override
    kernels: str | None = None  # kernel file; None -> generated from the link
    memory: int | None = None  # kernel memory when generating
    entropy: str = "conditional"  # conditional | sampled
    prior: str = "model"  # demapper prior in the loss: model (differentiable) | empirical
    estimator: str = "straight-through"  # straight-through | relaxed (soft symbols in training)
    prior_pseudocount: float = 0.5
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.mode not in ("npas", "nps"):
            raise ValueError(f"mode must be 'npas' or 'nps', got {self.mode!r}")
        if self.entropy not in ("conditional", "sampled"):
            raise ValueError(f"entropy must be 'conditional' or 'sampled', got {self.entropy!r}")
        if self.prior not in ("model", "empirical"):
            raise ValueError(f"prior must be 'model' or 'empirical', got {self.prior!r}")
        if self.estimator not in ("straight-through", "relaxed"):
            raise ValueError(f"estimator must be 'straight-through' or 'relaxed', got {self.estimator!r}")
        for name in ("L", "batch", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.steps < 0 or (self.k is not None and self.k < 0):
            raise ValueError("steps and k must be non-negative")
        if not (self.tau_start > 0 and self.tau_end > 0 and self.lr > 0):
            raise ValueError("temperatures and learning rate must be positive")
        if self.lr_end is not None and not self.lr_end > 0:
            raise ValueError("lr_end must be positive")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def link_params(self) -> LinkParams:
        if isinstance(self.link, dict):
            d = dict(self.link)
            base = PRESETS[d.pop("preset")] if "preset" in d else LinkParams()
            lp = replace(base, **{k: float(v) for k, v in d.items()})
        elif self.link in PRESETS:
            lp = PRESETS[self.link]
        else:
            lp = LinkParams.load(self.link)
        return lp if self.launch_dbm is None else lp.with_launch(self.launch_dbm)

    def tau(self, step: int) -> float:
        """Geometric anneal from ``tau_start`` to ``tau_end`` over the run."""
        return _geometric(self.tau_start, self.tau_end, step, self.steps)

    def learning_rate(self, step: int) -> float:
        return self.lr if self.lr_end is None else _geometric(self.lr, self.lr_end, step, self.steps)


def _geometric(start: float, end: float, step: int, steps: int) -> float:
    if steps <= 1:
        return end
    return start * (end / start) ** (step / (steps - 1))


@dataclass
class TrainContext:
    constellation: Constellation
    alphabet: np.ndarray  # complex value per shaper symbol
    kernels: am.AmKernels | None
    gamma: float
    sigma2: float
    k: int

    @property
    def n_symbols(self) -> int:
        return self.alphabet.size


def build_context(config: TrainConfig) -> TrainContext:
    C = build_qam(config.order)
    alphabet = C.amplitude_points() if config.mode == "npas" else C.points
    link = config.link_params()
    gamma = am.nonlinear_gain(link) if config.gamma is None else float(config.gamma)
    sigma2 = link.ase_variance_normalized() if config.sigma2 is None else float(config.sigma2)
    kernels = None
    if gamma != 0.0:
        if config.kernels:
            kernels = am.load_kernels(config.kernels)
        else:
            kernels = am.generate_kernels(link, config.memory)
    if config.k is not None:
        k = config.k
    else:
        k = am.required_k(kernels.memory, config.L) if kernels is not None else 0
    return TrainContext(C, alphabet, kernels, gamma, sigma2, k)


def _point_indices(ctx: TrainContext, config: TrainConfig, idx, signs):
    if config.mode == "nps":
        return idx
    return ctx.constellation.point_index(idx, signs[..., 0], signs[..., 1])


def _prior(ctx: TrainContext, point_idx, pseudo: float) -> np.ndarray:
    C = ctx.constellation
    if ctx.n_symbols == C.order:  # signed alphabet: marginal over points
        cnt = np.bincount(np.ravel(point_idx), minlength=C.order) + pseudo
        return cnt / cnt.sum()
    amp = C.signed_to_amplitude(np.ravel(point_idx))[0]
    cnt = np.bincount(amp, minlength=C.n_amplitudes) + pseudo
    pa = cnt / cnt.sum()
    return pa[C.signed_to_amplitude(np.arange(C.order))[0]] / 4.0


def _model_prior(ctx: TrainContext, log_probs):
    """Per-point prior from the batch-averaged shaper conditionals (on the tape).

    Averaging ``p(a | prefix)`` over rows and steps estimates the marginal
    without bias, and unlike sample counts it carries a gradient.
    """
    K = ctx.n_symbols
    pa = ad.mean(ad.reshape(ad.exp(log_probs), (-1, K)), axis=0)
    C = ctx.constellation
    if K == C.order:
        return pa
    return ad.take(pa, C.signed_to_amplitude(np.arange(C.order))[0], axis=0) * 0.25


def transmit_batch(params: ShaperParams, ctx: TrainContext, config: TrainConfig, tau: float, rng, noise=None,
                   relaxed: bool = False):
    """Sample, compose, assemble context and normalize one training batch.

    Returns ``(ext, center, rollout, point_idx)`` where ``ext`` is the
    normalized extended batch (B, (2k+1) L) and ``point_idx`` the center
    block's constellation indices. ``relaxed`` transmits the soft samples.
    """
    B, L, k = config.batch, config.L, ctx.k
    n_rows = B * (2 * k + 1)
    ro = sample_block(params, L, tau, rng, batch=n_rows, noise=noise, relaxed=relaxed)
    values = ro.onehots @ ctx.alphabet  # (n_rows, L) complex
    if config.mode == "npas":
        signs = bl.random_signs((n_rows, L), rng)
        x = compose(values, signs)
    else:
        signs = None
        x = values
    x = ad.reshape(x, (2 * k + 1, B, L))
    blocks = [x[i] for i in range(2 * k + 1)]
    ext, center = am.assemble_context(blocks[k], blocks[:k] + blocks[k + 1 :], k)
    ext, _ = normalize_power(ext)
    rows = slice(k * B, (k + 1) * B)
    point_idx = _point_indices(ctx, config, ro.indices[rows], None if signs is None else signs[rows])
    return ext, center, ro, point_idx


def _channel(ext, ctx: TrainContext, rng, noise=None):
    if ctx.kernels is None:
        y = ext
        if noise is None:
            shp = ad.shape_of(ext)
            noise = np.sqrt(ctx.sigma2 / 2) * (rng.standard_normal(shp) + 1j * rng.standard_normal(shp))
        return y + noise
    return am.am_propagate(ext, ctx.kernels, ctx.gamma, ctx.sigma2, rng=rng, noise=noise)


def loss_terms(params: ShaperParams, ctx: TrainContext, config: TrainConfig, tau: float, rng,
               gumbel=None, channel_noise=None, relaxed: bool = False) -> mt.LossTerms:
    """Adjusted-BCE loss for one batch; records on the tape of ``params``.

    ``gumbel`` and ``channel_noise`` fix the random draws. With
    ``relaxed=True`` the soft samples are transmitted, so the loss is a
    smooth function of the parameters (for gradient checks).
    """
    ext, center, ro, point_idx = transmit_batch(params, ctx, config, tau, rng, noise=gumbel, relaxed=relaxed)
    y_ext = _channel(ext, ctx, rng, noise=channel_noise)
    y = y_ext[..., center]
    # gain against the unscaled grid, so it also absorbs the power normalization
    y_eq, sigma2 = mt.fit_receiver(ctx.constellation.points[point_idx], y)
    if config.prior == "model":
        prior = _model_prior(ctx, ro.log_probs)
    else:
        prior = _prior(ctx, point_idx, config.prior_pseudocount)
    llr = mt.gaussian_llr(y_eq, ctx.constellation, sigma2, prior)
    bits = mt.bit_labels(ctx.constellation, point_idx)
    if config.entropy == "conditional":
        ent = mt.conditional_entropy_rate(ro.log_probs, config.L)
    else:
        ent = None
    rows = slice(ctx.k * config.batch, (ctx.k + 1) * config.batch)
    return mt.adjusted_bce_loss(llr, bits, ro.logp[rows], config.L, entropy=ent)


def sign_bits(config: TrainConfig) -> float:
    """Entropy carried by uniform signs, bits per 2D symbol."""
    return 2.0 if config.mode == "npas" else 0.0


@dataclass
class TrainResult:
    params: ShaperParams
    trace: list[dict] = field(default_factory=list)
    context: TrainContext | None = None


def train(config: TrainConfig, out=None, trace_path=None, params: ShaperParams | None = None) -> TrainResult:
    """Run ``config.steps`` Adam steps. Writes a checkpoint to ``out`` and a
    JSONL trace to ``trace_path`` when given.

    On a non-finite loss or gradient the last good parameters are saved (if
    ``out`` is set) and :class:`TrainingDiverged` is raised.
    """
    ss = np.random.SeedSequence(config.seed)
    init_seed, run_seed = ss.spawn(2)
    ctx = build_context(config)
    if params is None:
        params = init_params(ctx.n_symbols, config.hidden, np.random.default_rng(init_seed))
    rng = np.random.default_rng(run_seed)
    opt = Adam(AdamConfig(config.lr, config.beta1, config.beta2, config.eps))
    arrays = params.arrays()
    trace: list[dict] = []
    fh = open(trace_path, "w") if trace_path else None
    meta = {"config": config.to_dict(), "k": ctx.k}
    try:
        for step in range(config.steps):
            tau = config.tau(step)
            opt.config.rate = config.learning_rate(step)
            tape = ad.Tape()
            watched = tape.watch(arrays)
            try:
                terms = loss_terms(ShaperParams(**watched), ctx, config, tau, rng,
                                   relaxed=config.estimator == "relaxed")
            except FloatingPointError as exc:
                raise TrainingDiverged(f"step {step}: {exc}") from exc
            loss = float(ad.value(terms.loss))
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            grads = ad.backward(tape, terms.loss)
            try:
                arrays = opt.update(arrays, {n: grads[v] for n, v in watched.items()})
            except FloatingPointError as exc:
                raise TrainingDiverged(f"step {step}: {exc}") from exc
            row = {
                "step": step,
                "loss": loss,
                "bce_rate": float(ad.value(terms.bce_rate)),
                "h_rate": float(ad.value(terms.h_rate)),
                "tau": tau,
            }
            trace.append(row)
            if fh:
                fh.write(json.dumps(row) + "\n")
            if config.log_every and step % config.log_every == 0:
                log.info("step %d loss %.4f H %.4f tau %.3f", step, loss, row["h_rate"], tau)
    except TrainingDiverged:
        if out:
            save_checkpoint(out, ShaperParams(**arrays), {**meta, "steps_done": len(trace), "diverged": True})
        raise
    finally:
        if fh:
            fh.close()
    params = ShaperParams(**arrays)
    if out:
        save_checkpoint(out, params, {**meta, "steps_done": len(trace)})
    return TrainResult(params, trace, ctx)


# ---------------------------------------------------------------------------
# evaluation on the AM channel (training model)


def evaluate_am(params: ShaperParams, config: TrainConfig, n_batches: int = 20, seed: int = 1,
                ctx: TrainContext | None = None) -> dict:
    """AIR and effective SNR of a shaper on its own training channel.

    Symbols are drawn by ancestral sampling (``tau`` only shapes the relaxed
    sample, not the hard pick). Metrics use a single gain fit and the exact
    empirical prior over all batches.
    """
    ctx = ctx or build_context(config)
    rng = np.random.default_rng(seed)
    xs, ys, idx, lps = [], [], [], []
    for _ in range(n_batches):
        ext, center, ro, pidx = transmit_batch(params, ctx, config, 1.0, rng)
        y = _channel(ext, ctx, rng)
        xs.append(ext[..., center])
        ys.append(y[..., center])
        idx.append(pidx)
        rows = slice(ctx.k * config.batch, (ctx.k + 1) * config.batch)
        lps.append(ro.logp[rows])
    x, y, pidx, lp = (np.concatenate(a) for a in (xs, ys, idx, lps))
    return _rates(ctx.constellation, x, y, pidx, mt.sequence_entropy_rate(lp, config.L) + sign_bits(config),
                  signed=config.mode == "nps")


def _rates(C: Constellation, x, y, pidx, entropy, signed=False) -> dict:
    h, err = mt.fit_gain(C.points[pidx], y)
    sigma2 = max(err / abs(h) ** 2, 1e-12)
    if signed:
        prior = np.bincount(np.ravel(pidx), minlength=C.order) / np.size(pidx)
    else:
        amp = C.signed_to_amplitude(np.ravel(pidx))[0]
        prior = mt.empirical_prior(amp, C)
    llr = mt.gaussian_llr(y / h, C, sigma2, prior)
    return {
        "snr_eff_dB": mt.effective_snr(x, y),
        "air_bits_per_2D": mt.air_estimate(llr, mt.bit_labels(C, pidx), entropy),
        "entropy_bits_per_2D": float(entropy),
        "sigma2": sigma2,
    }


def uniform_air_am(config: TrainConfig, n_batches: int = 20, seed: int = 1, ctx: TrainContext | None = None) -> dict:
    """Uniform-input reference on the same AM channel and evaluation path."""
    ctx = ctx or build_context(config)
    rng = np.random.default_rng(seed)
    C = ctx.constellation
    B, L, k = config.batch, config.L, ctx.k
    xs, ys, idx = [], [], []
    for _ in range(n_batches):
        pidx = rng.integers(0, C.order, size=(2 * k + 1, B, L))
        ext = np.concatenate(list(C.points[pidx]), axis=-1)
        ext, _ = normalize_power(ext)
        y = _channel(ext, ctx, rng)
        c = slice(k * L, (k + 1) * L)
        xs.append(ext[..., c])
        ys.append(y[..., c])
        idx.append(pidx[k])
    return _rates(C, np.concatenate(xs), np.concatenate(ys), np.concatenate(idx), math.log2(C.order))


# ---------------------------------------------------------------------------
# transmitters for SSFM evaluation


@dataclass
class Transmission:
    points: np.ndarray  # (n_blocks, L) constellation indices
    entropy: float  # bits/2D of the source distribution (raw)
    rate: float  # bits/2D actually carried (rate loss deducted)


class UniformSource:
    name = "uniform"

    def __init__(self, order: int = 64, L: int = 32):
        self.C = build_qam(order)
        self.L = L

    def generate(self, n_blocks, rng, **_):
        pts = rng.integers(0, self.C.order, size=(n_blocks, self.L))
        h = math.log2(self.C.order)
        return Transmission(pts, h, h)


class IidSource:
    """Independent amplitudes from a fixed marginal, uniform signs."""

    name = "iid"

    def __init__(self, marginal, order: int = 64, L: int = 32):
        self.C = build_qam(order)
        self.marginal = np.asarray(marginal, dtype=float)
        self.L = L

    def generate(self, n_blocks, rng, **_):
        amp = bl.iid_amplitudes(self.marginal, (n_blocks, self.L), rng)
        signs = bl.random_signs((n_blocks, self.L), rng)
        p = self.marginal[self.marginal > 0]
        h = float(-np.sum(p * np.log2(p))) + 2.0
        return Transmission(self.C.point_index(amp, signs[..., 0], signs[..., 1]), h, h)


class EssSource:
    """ESS-PAS with two 1D streams; optional sequence selection."""

    def __init__(self, order: int = 64, n: int = 32, target_rate: float = 1.93, candidates: int = 0,
                 trellis: EssTrellis | None = None):
        self.C = build_qam(order)
        if trellis is None:
            e_max, _ = find_ess_operating_point(self.C.alphabet.levels, n, target_rate)
            trellis = ess_build(self.C.alphabet.levels, n, e_max)
        self.trellis = trellis
        self.L = trellis.n
        self.candidates = candidates
        self.name = "ess-select" if candidates > 1 else "ess"
        m = trellis.marginal()
        m = m[m > 0]
        self._entropy = 2 * float(-np.sum(m * np.log2(m))) + 2.0

    def base_blocks(self, n_blocks, rng):
        amp = bl.ess_amplitudes(self.trellis, n_blocks, self.C.n_levels, rng)
        signs = bl.random_signs(amp.shape, rng)
        return self.C.point_index(amp, signs[..., 0], signs[..., 1])

    def generate(self, n_blocks, rng, kernels=None, gamma=0.0, **_):
        pts = self.base_blocks(n_blocks, rng)
        if self.candidates > 1:
            pts = self.select(pts, kernels, gamma, rng)
        return Transmission(pts, self._entropy, 2 * self.trellis.rate + 2.0)

    def select(self, pts, kernels, gamma, rng):
        if kernels is None:
            raise ValueError("sequence selection needs AM kernels")
        sym, _ = normalize_power(self.C.points[pts])
        _, perms = bl.select_stream(sym, kernels, gamma, self.candidates, rng)
        return np.take_along_axis(pts, perms, axis=1)


class ShaperSource:
    """Trained shaper driven by the arithmetic distribution matcher.

    Information bits are uniform; each block consumes a variable number of
    bits, which gives the rate-loss-deducted rate.
    """

    name = "npas"

    def __init__(self, params: ShaperParams, order: int = 64, L: int = 16, mode: str = "npas"):
        self.params = params
        self.C = build_qam(order)
        self.L = L
        self.mode = mode

    def marginal(self, n_blocks: int, rng) -> np.ndarray:
        """Per-symbol marginal of the shaper alphabet.

        Averages the model's conditional distributions along ``n_blocks``
        ancestral rollouts, which is unbiased and smoother than counting picks.
        """
        ro = sample_block(self.params, self.L, 1.0, rng, batch=n_blocks)
        p = np.exp(ro.log_probs).reshape(-1, self.params.n_symbols).mean(axis=0)
        return p / p.sum()

    def generate(self, n_blocks, rng, **_):
        src = ConditionalSource(self.params)
        pts = np.empty((n_blocks, self.L), dtype=np.int64)
        consumed = 0
        logp = 0.0
        pad = 64 * self.L  # generous; unused bits carry to the next block
        bits = list(rng.integers(0, 2, size=pad))
        for b in range(n_blocks):
            idx, used = adm_encode(bits, src, self.L)
            consumed += used
            bits = bits[used:] + list(rng.integers(0, 2, size=used))
            for t, a in enumerate(idx):
                logp += math.log(src(idx[:t])[a])
            if self.mode == "npas":
                signs = bl.random_signs(self.L, rng)
                pts[b] = self.C.point_index(np.asarray(idx), signs[:, 0], signs[:, 1])
            else:
                pts[b] = idx
        extra = 2.0 if self.mode == "npas" else 0.0
        entropy = -logp / (n_blocks * self.L * math.log(2)) + extra
        return Transmission(pts, entropy, consumed / (n_blocks * self.L) + extra)


# ---------------------------------------------------------------------------
# SSFM evaluation


@dataclass(frozen=True)
class EvalConfig:
    n_blocks: int = 256
    polarizations: int = 1
    chain: ChainConfig = field(default_factory=ChainConfig)
    bootstrap: int = 0  # per-block bootstrap resamples for confidence intervals (0 = off)


@dataclass
class LinkRun:
    """Per-block outcome of one transmission through the SSFM chain."""

    x: np.ndarray  # (rails, n_blocks, L) unit-power transmitted data symbols
    y: np.ndarray  # (rails, n_blocks, L) received data symbols after CPR
    points: np.ndarray  # (rails, n_blocks, L)
    transmission: list


def run_link(source, link: LinkParams, cfg: EvalConfig, rng, kernels=None) -> LinkRun:
    """Generate blocks per rail, insert pilots, propagate, recover phase."""
    C = source.C
    gamma = am.nonlinear_gain(link)
    txs = [source.generate(cfg.n_blocks, rng, kernels=kernels, gamma=gamma) for _ in range(cfg.polarizations)]
    pts = np.stack([t.points for t in txs])  # (rails, nb, L)
    data = C.points[pts].reshape(cfg.polarizations, -1)
    n_data = data.shape[-1]
    period = int(round(1.0 / cfg.chain.pilot_rate))
    n = n_data + -(-n_data // (period - 1))
    mask = pilot_mask(n, cfg.chain.pilot_rate)
    while np.count_nonzero(~mask) < n_data:
        n += 1
        mask = pilot_mask(n, cfg.chain.pilot_rate)
    keep = np.nonzero(~mask)[0][:n_data]
    mask = mask[: keep[-1] + 1]
    qpsk = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=(cfg.polarizations, mask.sum()))))
    tx = np.zeros((cfg.polarizations, mask.size), dtype=complex)
    tx[:, mask] = qpsk
    tx[:, keep] = data
    tx, _ = normalize_power(tx)
    rx = simulate_link(tx[None], link, cfg.chain, rng)[0]
    rx = cpr_pilot(rx, tx[:, mask], mask, cfg.chain.cpr_block)
    shape = pts.shape
    return LinkRun(tx[:, keep].reshape(shape), rx[:, keep].reshape(shape), pts, txs)


def link_metrics(run: LinkRun, C: Constellation, signed: bool = False) -> dict:
    x = run.x.ravel()
    y = run.y.ravel()
    ent = float(np.mean([t.entropy for t in run.transmission]))
    rate = float(np.mean([t.rate for t in run.transmission]))
    r = _rates(C, x, y, run.points.ravel(), ent, signed=signed)
    r["air_deducted_bits_per_2D"] = max(0.0, r["air_bits_per_2D"] - (ent - rate))
    r["rate_bits_per_2D"] = rate
    return r


def block_snr_parts(run: LinkRun) -> tuple[np.ndarray, np.ndarray]:
    """Per-block signal and distortion energy with one stream-wide gain fit."""
    h, _ = mt.fit_gain(run.x, run.y)
    sig = np.sum(np.abs(h * run.x) ** 2, axis=-1).sum(axis=0)
    err = np.sum(np.abs(run.y - h * run.x) ** 2, axis=-1).sum(axis=0)
    return sig, err


def bootstrap_snr_gain(parts_a, parts_b, n_boot: int = 2000, seed: int = 0, paired: bool = False):
    """Bootstrap distribution of SNR_a - SNR_b (dB) over blocks.

    Returns ``(gain_dB, lower_95, upper_95)``, one-sided lower bound at 5%.
    """
    rng = np.random.default_rng(seed)
    sa, ea = parts_a
    sb, eb = parts_b

    def snr(s, e):
        return 10 * np.log10(np.sum(s, axis=-1) / np.sum(e, axis=-1))

    gain = float(snr(sa, ea) - snr(sb, eb))
    ia = rng.integers(0, sa.size, size=(n_boot, sa.size))
    ib = ia if paired else rng.integers(0, sb.size, size=(n_boot, sb.size))
    dist = snr(sa[ia], ea[ia]) - snr(sb[ib], eb[ib])
    return gain, float(np.quantile(dist, 0.05)), float(np.quantile(dist, 0.975))


def _eval_point(args):
    source, link, cfg, seed_seq, signed = args
    rng = np.random.default_rng(seed_seq)
    kernels = None
    if getattr(source, "candidates", 0) > 1:
        kernels = am.generate_kernels(link)
    run = run_link(source, link, cfg, rng, kernels)
    return link_metrics(run, source.C, signed)


def evaluate(source, link: LinkParams, powers, cfg: EvalConfig = EvalConfig(), seed: int = 0, jobs: int = 1) -> list[dict]:
    """Sweep launch powers; one CSV row per power. Deterministic per seed.

    Each power gets its own child seed, so results do not depend on ``jobs``.
    """
    children = np.random.SeedSequence(seed).spawn(len(powers))
    signed = getattr(source, "mode", "npas") == "nps"
    tasks = [(source, link.with_launch(p), cfg, s, signed) for p, s in zip(powers, children)]
    if jobs > 1:
        with multiprocessing.get_context("fork").Pool(jobs) as pool:
            results = pool.map(_eval_point, tasks)
    else:
        results = [_eval_point(t) for t in tasks]
    rows = []
    for p, r in zip(powers, results):
        rows.append({"power_dBm": float(p), **{k: r[k] for k in ("snr_eff_dB", "air_bits_per_2D", "entropy_bits_per_2D")},
                     "seed": seed, "air_deducted_bits_per_2D": r["air_deducted_bits_per_2D"]})
    return rows


EVAL_FIELDS = mt.METRIC_FIELDS + ("air_deducted_bits_per_2D",)


MARGINAL_BLOCKS = 20_000  # rollouts averaged for a shaper's marginal


def load_source(ckpt=None, baseline: str | None = None, order: int = 64):
    """Transmitter from a checkpoint or a baseline name (uniform, ess, ess-select, iid).

    ``iid`` needs ``ckpt``: it samples amplitudes independently from the
    checkpoint shaper's own marginal.
    """
    if baseline == "iid":
        if ckpt is None:
            raise ValueError("the iid baseline takes its marginal from a checkpoint")
        shaper = load_source(ckpt)
        if shaper.mode != "npas":
            raise ValueError("the iid baseline needs an npas-mode checkpoint")
        return IidSource(shaper.marginal(MARGINAL_BLOCKS, np.random.default_rng(0)), shaper.C.order, shaper.L)
    if ckpt is not None:
        params, meta = load_checkpoint(ckpt)
        cfg = meta.get("config", {})
        return ShaperSource(params, cfg.get("order", order), cfg.get("L", 16), cfg.get("mode", "npas"))
    if baseline == "uniform":
        return UniformSource(order)
    if baseline == "ess":
        return EssSource(order)
    if baseline == "ess-select":
        return EssSource(order, candidates=64)
    raise ValueError(f"unknown baseline {baseline!r}")


# ---------------------------------------------------------------------------
# blocklength sweep


def blocklength_sweep(config: TrainConfig, Ls, modes=("npas", "nps"), n_eval_batches: int = 20) -> list[dict]:
    """Train one shaper per (mode, L) and report AIR on the AM channel.

    ``k`` follows ``config.k`` if set, else the kernel-memory rule.
    """
    rows = []
    for mode in modes:
        for L in Ls:
            cfg = replace(config, L=int(L), mode=mode)
            res = train(cfg)
            r = evaluate_am(res.params, cfg, n_eval_batches, seed=config.seed + 1, ctx=res.context)
            rows.append({"mode": mode, "L": int(L), "k": res.context.k, "alphabet": res.context.n_symbols,
                         "air_bits_per_2D": r["air_bits_per_2D"], "entropy_bits_per_2D": r["entropy_bits_per_2D"],
                         "snr_eff_dB": r["snr_eff_dB"], "seed": config.seed})
    return rows


SWEEP_FIELDS = ("mode", "L", "k", "alphabet", "air_bits_per_2D", "entropy_bits_per_2D", "snr_eff_dB", "seed")
