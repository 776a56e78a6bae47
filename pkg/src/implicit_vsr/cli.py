"""Command-line entry point: degrade, train, infer, eval, selftest and params."""

import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np
import torch

from . import errors
from .config import DESK_PRESET, FIELD_INDEX, resolve
from .model import ImplicitVSR, ModelConfig, count_parameters

OUTPUT_ROOT_ENV = "IMPLICIT_VSR_OUTPUT"
REFERENCE_PARAMS_M = 9.30


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def output_root(flag_value, default):
    """``--out`` wins; otherwise the environment variable, then ``default``."""
    if flag_value:
        return Path(flag_value)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, default))


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--desk", action="store_true", help="start from the small CPU preset")
    for key, (_, typ) in sorted(FIELD_INDEX.items()):
        if typ is bool:
            p.add_argument(f"--{key}", action="store_const", const=True, default=None)
        else:
            p.add_argument(f"--{key}", type=str, default=None, metavar=typ.__name__.upper())


def _resolve(args):
    overrides = {k: getattr(args, k) for k in FIELD_INDEX if getattr(args, k, None) is not None}
    try:
        return resolve(args.config, overrides, base=DESK_PRESET if args.desk else None)
    except errors.ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser():
    parser = _Parser(prog="implicit-vsr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("degrade", help="make lr/dn/gt triplets from a GT frame directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--scenario", choices=("gaussian", "motion"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="noise std on the 0-255 scale")
    p.add_argument("--scale", type=int, default=4)

    p = sub.add_parser("train", help="train a model on triplet data")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--resume")
    _add_config_flags(p)

    p = sub.add_parser("infer", help="restore a directory of LR frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-aligned", help="also save backward-aligned features as .npy")

    p = sub.add_parser("eval", help="score a checkpoint on triplet data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--bypass", action="store_true", help="score GT against itself")
    _add_config_flags(p)

    p = sub.add_parser("selftest", help="run the numerical self-checks")
    p.add_argument("--out", help="also write the rendered atoms as a PNG grid here")

    p = sub.add_parser("params", help="print parameter counts")
    _add_config_flags(p)
    return parser


def cmd_degrade(args):
    from .degradation import make_triplet
    from .sequence_io import load_sequence, save_sequence, to_tensor

    root = output_root(args.out, "degraded")
    gt = to_tensor(load_sequence(args.input), torch.float64)
    triplet = make_triplet(gt, args.scenario, args.seed, args.noise, args.scale)
    for name in ("lr", "dn", "gt"):
        save_sequence(getattr(triplet, name), root / name)
    manifest = triplet.manifest()
    manifest["source"] = str(args.input)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(triplet.kernels)} frames to {root}")
    return 0


def _write_config(cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.describe() + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_train(args):
    from .training import Trainer, load_triplets

    out = output_root(args.out, "runs/train")
    clips = load_triplets(args.data)
    if args.resume:
        trainer = Trainer.resume(args.resume, clips)
        cfg = trainer.cfg
    else:
        cfg = _resolve(args)
        trainer = Trainer(cfg, clips)
    print(cfg.describe())
    _write_config(cfg, out)
    print(f"parameters: {count_parameters(trainer.model):,}")
    ckpt = trainer.run(checkpoint_dir=out / "checkpoints")
    (out / "loss.json").write_text(json.dumps(trainer.history) + "\n")
    print(f"final loss {trainer.history[-1]:.6f}; checkpoint {ckpt}")
    return 0


def cmd_infer(args):
    from .model import restore_clip
    from .sequence_io import load_sequence, save_sequence, to_tensor
    from .training import load_model

    model, cfg = load_model(args.checkpoint)
    if args.dump_aligned and cfg.model.no_ita:
        raise ConfigError("--dump-aligned requested but the checkpoint was trained with no_ita")
    lr = to_tensor(load_sequence(args.input))
    sr, _ = restore_clip(model, lr)
    save_sequence(sr, args.out)
    if args.dump_aligned:
        dump = Path(args.dump_aligned)
        dump.mkdir(parents=True, exist_ok=True)
        with torch.no_grad():
            _, _, (_, aligned_b) = model(lr.unsqueeze(0), return_aligned=True)
        for t, feat in enumerate(aligned_b):
            np.save(dump / f"{t:08d}.npy", feat[0].numpy())
    print(f"wrote {sr.shape[0]} frames to {args.out}")
    return 0


def cmd_eval(args):
    from .evaluation import evaluate, write_report

    expected = None
    if args.config or args.desk or any(getattr(args, k, None) is not None for k in FIELD_INDEX):
        expected = _resolve(args)
        print(expected.describe())
    out = output_root(args.out, "runs/eval")
    report = evaluate(args.checkpoint, args.data, expected=expected, bypass=args.bypass)
    paths = write_report(report, out, plot=args.plot)
    agg = report.aggregate
    print(f"PSNR-Y {agg['psnr_y']:.3f} dB  SSIM {agg['ssim']:.4f}  tOF {agg['tof']:.4f}  "
          f"(bicubic {agg['bicubic_psnr_y']:.3f} dB)")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest

    return 0 if run_selftest(args.out) else 1


def cmd_params(args):
    cfg = _resolve(args)
    print(cfg.describe())
    model = ImplicitVSR(cfg.model)
    full = ImplicitVSR(ModelConfig())
    print(f"configured model: {count_parameters(model):,} parameters")
    for name, group in model.parameter_groups().items():
        print(f"  {name:<13} {count_parameters(group):>12,}")
    print(f"full config: {count_parameters(full) / 1e6:.2f} M parameters "
          f"(reference {REFERENCE_PARAMS_M:.2f} M; reference channel widths unknown)")
    return 0


COMMANDS = {
    "degrade": cmd_degrade,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
    "params": cmd_params,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, errors.ValidationError, errors.ContractViolation,
            errors.SequenceIOError, errors.TrainingDiverged, errors.CheckpointMismatch) as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
