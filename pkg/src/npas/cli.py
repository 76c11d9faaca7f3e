"""Command-line entry point: ``npas <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or malformed input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import channel_am as am
from . import metrics as mt
from . import trainer as tr
from .link import PRESETS, LinkParams
from .matchers.adm import AdmCorruptionError, AdmUnderflowError, adm_decode, adm_encode
from .matchers.ess import ess_build, ess_decode, ess_encode, find_ess_operating_point, load_trellis
from .shaper import ConditionalSource, load_checkpoint
from .ssfm_link import ChainConfig

log = logging.getLogger("npas")


class UsageError(Exception):
    """Bad flags or malformed input files (exit code 2)."""


# ---------------------------------------------------------------------------
# argument helpers


def parse_powers(text: str) -> list[float]:
    """``a:b:step`` (inclusive of ``b`` up to rounding) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"--powers expects a:b:step, got {text!r}")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise UsageError("--powers needs step > 0 and b >= a")
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        return [round(a + i * step, 10) for i in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --powers value {text!r}") from exc


def parse_int_list(text: str) -> list[int]:
    try:
        vals = [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc
    if not vals:
        raise UsageError("empty list")
    return vals


def load_link(spec: str) -> LinkParams:
    if spec in PRESETS:
        return PRESETS[spec]
    try:
        return LinkParams.load(spec)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load link {spec!r}: {exc}") from exc


def load_config(path) -> tr.TrainConfig:
    try:
        return tr.TrainConfig.load(path)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot load config {path!r}: {exc}") from exc


def read_bits(args) -> list[int]:
    """Bits from ``--hex`` (MSB first) or ``--bits-file`` (text of 0/1, ``-`` for stdin)."""
    if args.hex is not None:
        h = args.hex.strip().lower().removeprefix("0x")
        try:
            value = int(h, 16) if h else 0
        except ValueError as exc:
            raise UsageError(f"bad hex string {args.hex!r}") from exc
        return [int(b) for b in format(value, f"0{4 * len(h)}b")] if h else []
    if args.bits_file is not None:
        text = sys.stdin.read() if args.bits_file == "-" else Path(args.bits_file).read_text()
        bits = [c for c in text if not c.isspace()]
        if any(c not in "01" for c in bits):
            raise UsageError("bit file may only contain 0, 1 and whitespace")
        return [int(c) for c in bits]
    raise UsageError("give the input bits with --hex or --bits-file")


def bits_to_hex(bits) -> str:
    """Hex string when the length is a multiple of 4, else the raw bit string."""
    s = "".join(str(int(b)) for b in bits)
    if s and len(s) % 4 == 0:
        return format(int(s, 2), f"0{len(s) // 4}x")
    return s


def parse_symbols(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"bad symbol list {text!r}") from exc


def emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_kernels(args) -> int:
    link = load_link(args.link)
    memory = args.memory
    if memory is None:
        memory = am.required_memory(link)
    if memory < 0:
        raise UsageError("--memory must be >= 0")
    kernels = am.generate_kernels(link, memory)
    am.save_kernels(args.out, kernels, link, version=__version__)
    log.info("wrote kernels with memory %d to %s", memory, args.out)
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.steps is not None:
        config = replace(config, steps=args.steps)
    try:
        res = tr.train(config, out=args.out, trace_path=args.trace)
    except tr.TrainingDiverged as exc:
        log.error("training diverged: %s (last good parameters saved to %s)", exc, args.out)
        return 1
    last = res.trace[-1] if res.trace else {}
    log.info("finished %d steps, final loss %s", len(res.trace), last.get("loss"))
    return 0


def cmd_eval(args) -> int:
    if args.baseline == "iid":
        if args.ckpt is None:
            raise UsageError("--baseline iid needs --ckpt for its marginal")
    elif (args.ckpt is None) == (args.baseline is None):
        raise UsageError("give exactly one of --ckpt or --baseline")
    link = load_link(args.link)
    powers = parse_powers(args.powers)
    if args.blocks < 1:
        raise UsageError("--blocks must be >= 1")
    source = tr.load_source(args.ckpt, args.baseline, args.order)
    chain = ChainConfig(polarization="manakov" if args.polarizations == 2 else "scalar", ase=not args.no_ase)
    cfg = tr.EvalConfig(n_blocks=args.blocks, polarizations=args.polarizations, chain=chain)
    rows = tr.evaluate(source, link, powers, cfg, seed=args.seed, jobs=args.jobs)
    config = {
        "source": args.baseline or Path(args.ckpt).name,
        "ckpt": None if args.ckpt is None else Path(args.ckpt).name,
        "order": args.order,
        "link": link.to_dict(),
        "powers": powers,
        "blocks": args.blocks,
        "polarizations": args.polarizations,
        "ase": not args.no_ase,
        "seed": args.seed,
    }
    emit(mt.format_csv(rows, tr.EVAL_FIELDS, config), args.out)
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    Ls = parse_int_list(args.L)
    if min(Ls) < 1:
        raise UsageError("block lengths must be >= 1")
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    if any(m not in ("npas", "nps") for m in modes):
        raise UsageError(f"unknown mode in {args.modes!r}")
    rows = tr.blocklength_sweep(config, Ls, modes, args.eval_batches)
    meta = {"config": config.to_dict(), "L": Ls, "modes": list(modes), "eval_batches": args.eval_batches}
    emit(mt.format_csv(rows, tr.SWEEP_FIELDS, meta), args.out)
    return 0


def _trellis(args):
    from .constellation import build_qam

    levels = build_qam(args.order).alphabet.levels
    if args.trellis:
        return load_trellis(args.trellis, levels)
    e_max = args.e_max
    if e_max is None:
        e_max, _ = find_ess_operating_point(levels, args.n, args.rate)
    return ess_build(levels, args.n, e_max)


def _adm_source(args):
    if args.ckpt:
        params, _ = load_checkpoint(args.ckpt)
        return ConditionalSource(params)
    if args.probs:
        try:
            p = np.array([float(v) for v in args.probs.split(",")])
        except ValueError as exc:
            raise UsageError(f"bad --probs {args.probs!r}") from exc
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise UsageError("--probs must be a probability vector")
        return lambda prefix: p
    raise UsageError("give the distribution with --probs or --ckpt")


def cmd_codec(args) -> int:
    op = args.op
    if op == "ess-encode":
        trellis = _trellis(args)
        bits = read_bits(args)
        if len(bits) < trellis.k_bits:
            raise UsageError(f"need {trellis.k_bits} input bits, got {len(bits)}")
        index = int("".join(map(str, bits[: trellis.k_bits])) or "0", 2)
        seq = ess_encode(index, trellis)
        emit(" ".join(map(str, seq)) + "\n", args.out)
    elif op == "ess-decode":
        trellis = _trellis(args)
        index = ess_decode(parse_symbols(args.symbols), trellis)
        bits = [int(b) for b in format(index, f"0{trellis.k_bits}b")] if trellis.k_bits else []
        emit(bits_to_hex(bits) + "\n", args.out)
    elif op == "adm-encode":
        if args.L is None or args.L < 1:
            raise UsageError("adm-encode needs --L >= 1")
        bits = read_bits(args)
        # zero padding only resolves the tail; "consumed" says how much was real input
        idx, used = adm_encode(bits + [0] * (64 * args.L), _adm_source(args), args.L)
        emit(json.dumps({"indices": idx, "consumed": used, "input_bits": len(bits)}) + "\n", args.out)
    elif op == "adm-decode":
        bits = adm_decode(parse_symbols(args.symbols), _adm_source(args))
        emit("".join(map(str, bits)) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npas", description="Neural probabilistic amplitude shaping toolkit.")
    p.add_argument("--version", action="version", version=f"npas {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kernels", help="generate AM kernels for a link")
    k.add_argument("--link", required=True, help="link JSON file or preset name")
    k.add_argument("--memory", type=int, default=None, help="kernel memory M (default: from the link)")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_kernels)

    t = sub.add_parser("train", help="train a shaper")
    t.add_argument("--config", required=True, help="TrainConfig JSON file")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--trace", default=None, help="JSONL trace path")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--steps", type=int, default=None, help="override the config step count")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a transmitter over the SSFM link")
    e.add_argument("--ckpt", default=None)
    e.add_argument("--baseline", choices=("uniform", "ess", "ess-select", "iid"), default=None,
                   help="iid samples the --ckpt shaper's marginal independently")
    e.add_argument("--link", default="desk-link")
    e.add_argument("--powers", default="0:0:1", help="launch powers in dBm, a:b:step or a,b,c")
    e.add_argument("--blocks", type=int, default=256)
    e.add_argument("--order", type=int, default=64, help="QAM order for baselines")
    e.add_argument("--polarizations", type=int, choices=(1, 2), default=1)
    e.add_argument("--no-ase", action="store_true", help="disable amplifier noise")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--out", default=None, help="CSV path (default stdout)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-L", help="train and score shapers over block lengths")
    s.add_argument("--config", required=True)
    s.add_argument("--L", default="1,2,4,8,16,32")
    s.add_argument("--modes", default="npas,nps")
    s.add_argument("--eval-batches", type=int, default=20)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("codec", help="run a distribution matcher on explicit input")
    c.add_argument("op", choices=("ess-encode", "ess-decode", "adm-encode", "adm-decode"))
    src = c.add_mutually_exclusive_group()
    src.add_argument("--hex", default=None, help="input bits as hex, MSB first")
    src.add_argument("--bits-file", default=None, help="text file of 0/1 characters, '-' for stdin")
    c.add_argument("--symbols", default="", help="symbol indices for the decoders")
    c.add_argument("--order", type=int, default=64, help="QAM order (ESS level set)")
    c.add_argument("--n", type=int, default=32, help="ESS block length")
    c.add_argument("--e-max", type=int, default=None, help="ESS energy bound")
    c.add_argument("--rate", type=float, default=1.93, help="ESS target rate when --e-max is unset")
    c.add_argument("--trellis", default=None, help="cached ESS trellis file")
    c.add_argument("--probs", default=None, help="i.i.d. ADM distribution, comma-separated")
    c.add_argument("--ckpt", default=None, help="shaper checkpoint as ADM distribution")
    c.add_argument("--L", type=int, default=None, help="ADM output length")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_codec)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"npas: error: {exc}", file=sys.stderr)
        return 2
    except (AdmCorruptionError, AdmUnderflowError, ValueError, OSError, RuntimeError) as exc:
        print(f"npas: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
