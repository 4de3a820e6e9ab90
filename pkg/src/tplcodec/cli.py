"""Command line entry point for encoding and for the model evaluation runs.

Every subcommand writes CSV files into ``--out-dir``. Exit status is 0 on
success, 1 on a runtime error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import baseline_models, eval_harness, rd_adaptation, tpl_model
from .codec_core import CodecConfig, encode_gop, plan_gop
from .media_io import Sequence, read_y4m, synth_sequence, write_csv

FRAME_COLUMNS = ["display", "coding_order", "level", "qstep", "bits", "sse", "psnr"]
OBSERVE_COLUMNS = ["qstep", "frame", "D1", "D2", "d1", "d2", "beta_obs"]


def _positive(kind):
    def conv(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _qstep_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated number list: {text}")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("qsteps must be positive")
    return vals


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="Y4M file (luma is used)")
    src.add_argument("--synth", choices=["static", "shift", "noisy_shift"],
                     help="generate a synthetic clip instead of reading one")
    p.add_argument("--frames", type=_positive(int), default=None,
                   help="number of frames (synthetic default 33; input default all)")
    p.add_argument("--width", type=_positive(int), default=64)
    p.add_argument("--height", type=_positive(int), default=64)
    p.add_argument("--dx", type=int, default=1, help="synthetic motion per frame, x")
    p.add_argument("--dy", type=int, default=0, help="synthetic motion per frame, y")
    p.add_argument("--noise", type=float, default=3.0, help="noisy_shift noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gop-length", type=int, default=16)
    p.add_argument("--gop-mode", choices=["pyramid", "low_delay"], default="pyramid")
    p.add_argument("--search-range", type=int, default=16)
    p.add_argument("--anchor-qstep", type=_positive(float), default=None,
                   help="qstep of the first intra frame (default: lowest-level qstep)")
    p.add_argument("--out-dir", type=Path, default=Path("."))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tplcodec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a clip and write per-frame statistics")
    _common(p)
    p.add_argument("--qstep", type=_positive(float), required=True, help="leaf-frame qstep")
    p.add_argument("--model", choices=rd_adaptation.MODELS, default="none",
                   help="temporal model used to scale lambda per 32x32 block")

    p = sub.add_parser("tpl-dump", help="run the model passes on one group and dump blocks")
    _common(p)
    p.add_argument("--qstep", type=_positive(float), required=True)
    p.add_argument("--group", type=int, default=0, help="group index (0 = first group)")

    p = sub.add_parser("observe", help="measure distortion propagation by perturbation")
    _common(p)
    p.add_argument("--qstep", type=_positive(float), required=True)
    p.add_argument("--perturb-ratio", type=_positive(float), default=1.1)

    p = sub.add_parser("accuracy", help="observed vs modelled propagation over qsteps")
    _common(p)
    p.add_argument("--qsteps", type=_qstep_list, default=list(eval_harness.ACCURACY_QSTEPS))
    p.add_argument("--perturb-ratio", type=_positive(float), default=1.1)

    p = sub.add_parser("bdrate", help="BD-rate of model-scaled lambda against the baseline")
    _common(p)
    p.add_argument("--qsteps", type=_qstep_list, default=list(eval_harness.BDRATE_QSTEPS))
    return parser


def load_sequence(args) -> Sequence:
    if args.synth:
        n = args.frames or 33
        return synth_sequence(args.synth, args.width, args.height, n, dx=args.dx, dy=args.dy,
                              noise=args.noise, seed=args.seed)
    seq = read_y4m(args.input)
    if args.frames is not None:
        if args.frames > len(seq):
            raise ValueError(f"--frames {args.frames} exceeds the {len(seq)} frames in input")
        seq = seq[: args.frames]
    return seq


def make_config(args, qstep: float = 16.0) -> CodecConfig:
    return CodecConfig(base_qstep=qstep, gop_length=args.gop_length, gop_mode=args.gop_mode,
                       search_range=args.search_range, anchor_qstep=args.anchor_qstep)


def _whole_groups(seq: Sequence, L: int) -> Sequence:
    n = 1 + (len(seq) - 1) // L * L
    if n < 1 + L:
        raise ValueError(f"need at least {1 + L} frames for a group of {L}, got {len(seq)}")
    if n != len(seq):
        print(f"note: using the first {n} frames (whole groups only)", file=sys.stderr)
    return seq[:n]


def cmd_encode(args) -> None:
    cfg = make_config(args, args.qstep)
    seq = _whole_groups(load_sequence(args), cfg.gop_length)
    maps = None if args.model == "none" else rd_adaptation.lambda_provider(args.model, cfg)
    rep = encode_gop(seq, cfg, maps)
    rows = [{k: getattr(f, k) for k in FRAME_COLUMNS} for f in rep.frames]
    write_csv(rows, args.out_dir / "encode_frames.csv", header=FRAME_COLUMNS)
    print(f"model={args.model} frames={len(rep.frames)} bits={rep.total_bits} "
          f"kbps={rep.kbps:.3f} psnr={rep.psnr:.4f}")


def cmd_tpl_dump(args) -> None:
    cfg = make_config(args, args.qstep)
    seq = load_sequence(args)
    if args.group < 0:
        raise ValueError("--group must be >= 0")
    need = (args.group + 1) * cfg.gop_length + 1
    if len(seq) < need:
        raise ValueError(f"group {args.group} needs {need} frames, got {len(seq)}")
    bank = eval_harness.encode_prefix(seq, cfg, args.group)
    plan = plan_gop(cfg, args.group * cfg.gop_length)
    flow, tpl = tpl_model.run_tpl(seq, plan, cfg, bank)
    mb = baseline_models.mbtree_pass(seq, plan, cfg, flow)
    write_csv(tpl_model.dump_rows(flow, tpl), args.out_dir / "tpl_dump.csv",
              header=tpl_model.DUMP_COLUMNS)
    write_csv(baseline_models.dump_rows(mb), args.out_dir / "mbtree_dump.csv",
              header=baseline_models.DUMP_COLUMNS)
    maps = rd_adaptation.tpl_lambda_maps(flow, tpl, cfg)
    write_csv(rd_adaptation.dump_rows(maps), args.out_dir / "lambda_dump.csv",
              header=rd_adaptation.DUMP_COLUMNS)
    print(f"group={args.group} frames={len(plan)} diagnostics={asdict(tpl.diagnostics)}")


def cmd_observe(args) -> None:
    cfg = make_config(args, args.qstep)
    obs = eval_harness.observe_beta(load_sequence(args), cfg, args.perturb_ratio)
    write_csv([asdict(obs)], args.out_dir / "observe.csv", header=OBSERVE_COLUMNS)
    print(f"frame={obs.frame} beta_obs={obs.beta_obs:.6g}")


def cmd_accuracy(args) -> None:
    rows = eval_harness.accuracy_sweep(load_sequence(args), make_config(args), args.qsteps,
                                       args.perturb_ratio)
    write_csv(rows, args.out_dir / "accuracy.csv", header=eval_harness.ACCURACY_COLUMNS)
    for r in rows:
        print(" ".join(f"{k}={r[k]:.4g}" for k in eval_harness.ACCURACY_COLUMNS))


def cmd_bdrate(args) -> None:
    rows, res = eval_harness.compare_encoders(load_sequence(args), make_config(args),
                                              args.qsteps)
    write_csv(rows, args.out_dir / "rd_curves.csv", header=eval_harness.RD_COLUMNS)
    bd = [{"model": m, "bd_rate_percent": r.bd_rate_percent, "runtime_ratio": r.runtime_ratio}
          for m, r in res.items()]
    write_csv(bd, args.out_dir / "bdrate.csv", header=eval_harness.BD_COLUMNS)
    for r in bd:
        print(f"{r['model']}: bd_rate={r['bd_rate_percent']:+.3f}% "
              f"runtime_ratio={r['runtime_ratio']:.2f}")


COMMANDS = {"encode": cmd_encode, "tpl-dump": cmd_tpl_dump, "observe": cmd_observe,
            "accuracy": cmd_accuracy, "bdrate": cmd_bdrate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)   # exits with status 2 on usage errors
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
