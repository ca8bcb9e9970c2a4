"""Command-line entry point: ``uanet <command> [options]``.

Every command reads an optional INI run configuration (``--config``); the
shared flags override individual keys of it. Set ``UANET_THREADS`` to cap the
BLAS worker threads (``UANET_THREADS=1`` gives bit-reproducible runs).
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, from_ini, load_config, set_key
from .data import read_manifest, write_dataset, write_mask_pgm, write_pgm, write_png
from .metrics import format_csv, format_table, scores, uncertainty_visual
from .pigm import PigmMode
from .serialization import FormatError, load_archive, load_tensor, read_archive_text, save_tensor
from .tensor import DTYPES, Tensor
from .training import TrainingAborted, build_model, evaluate, make_datasets, to_extent, train
from .uafm import ContractError, FusionCase, rank_maps, rank_pgm_bytes

# shared flag -> config key
FLAG_KEYS = {"seed": "run.seed", "out": "run.out", "bits": "run.bits", "ura": "ura.formula",
             "case": "uafm.case", "pigm": "pigm.mode"}
# flags that would change the parameter layout of a checkpointed model
ARCH_FLAGS = {"case": "uafm_case", "pigm": "pigm_mode"}

ABLATION_CASES = [c.value for c in FusionCase]
ABLATION_PIGM = [m.value for m in PigmMode]


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="master seed (run.seed)")
    common.add_argument("--out", metavar="DIR", help="output directory (run.out)")
    common.add_argument("--bits", type=int, choices=(32, 64), help="float width")
    common.add_argument("--ura", choices=("prose", "floor"), help="rank formula")
    common.add_argument("--case", choices=ABLATION_CASES, help="fusion case 1..4")
    common.add_argument("--pigm", choices=ABLATION_PIGM, help="prior-guide mode")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. optim.steps=50 (repeatable)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="uanet", description="Desk-scale uncertainty-aware building extraction.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("gen-data", parents=[common], help="write train/val synthetic datasets")

    p = sub.add_parser("train", parents=[common], help="train a model, write checkpoint and loss CSV")
    p.add_argument("--train", metavar="MANIFEST", help="training manifest (default: generate from config)")

    p = sub.add_parser("eval", parents=[common], help="print IoU/F1/Pre/Recall per output level")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--level", type=int, choices=range(1, 6), metavar="{1..5}")
    p.add_argument("--csv", metavar="PATH", help="also write the table as CSV")

    p = sub.add_parser("infer", parents=[common], help="write logits and thresholded mask for one image")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--image", required=True, metavar="PATH", help="3xHxW tensor container")
    p.add_argument("--level", type=int, default=1, choices=range(1, 6), metavar="{1..5}")

    p = sub.add_parser("uncertainty", parents=[common], help="write uncertainty and rank rasters")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--image", required=True, metavar="PATH", help="3xHxW tensor container")
    p.add_argument("--level", type=int, choices=range(1, 6), metavar="{1..5}")

    p = sub.add_parser("gradcheck", parents=[common], help="run the finite-difference oracle suite")
    p.add_argument("--seeds", type=int, default=10, metavar="N", help="seeds per op (default 10)")
    p.add_argument("--model-seeds", type=int, default=2, metavar="N",
                   help="seeds for the whole-network check (default 2)")
    p.add_argument("--quiet", action="store_true", help="print failures and the summary only")

    p = sub.add_parser("ablate", parents=[common], help="train the case x prior-guide grid")
    p.add_argument("--train", metavar="MANIFEST")
    p.add_argument("--val", metavar="MANIFEST")
    p.add_argument("--with-baseline", action="store_true", help="add a baseline-only row")
    return parser


# ----------------------------------------------------------------------
# configuration plumbing


def resolve_config(args, parser) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        _apply_flags(cfg, args, FLAG_KEYS)
        return cfg.validate()
    except ConfigError as exc:
        parser.error(str(exc))
    except OSError as exc:
        parser.error(f"--config: {exc}")


def _apply_flags(cfg: RunConfig, args, keys: dict) -> None:
    for flag, key in keys.items():
        value = getattr(args, flag, None)
        if value is not None:
            set_key(cfg, key, value)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        set_key(cfg, key.strip(), value.strip())


def load_model(args, parser):
    """Rebuild the checkpointed model; --bits and --ura may be overridden."""
    text = read_archive_text(args.checkpoint, "config.ini")
    if text is None:
        raise FormatError(f"{args.checkpoint}: checkpoint carries no config.ini", 0)
    cfg = from_ini(text)
    for flag, attr in ARCH_FLAGS.items():
        value = getattr(args, flag)
        if value is not None and value != getattr(cfg.model, attr).value:
            parser.error(f"--{flag} {value} conflicts with the checkpoint architecture")
    try:
        _apply_flags(cfg, args, {"bits": "run.bits", "ura": "ura.formula", "out": "run.out"})
        cfg.validate()
    except ConfigError as exc:
        parser.error(str(exc))
    model = build_model(cfg)
    model.load_state_dict(load_archive(args.checkpoint))
    return model, cfg


def _read_image(path) -> np.ndarray:
    image = load_tensor(path)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"{path}: expected a 3xHxW image, got shape {image.shape}")
    return image


def _levels(cfg: RunConfig, level: int | None) -> list:
    available = cfg.model.output_levels
    if level is None:
        return available
    if level not in available:
        raise ValueError(f"level {level} not produced by this model (levels {available})")
    return [level]


# ----------------------------------------------------------------------
# commands


def cmd_gen_data(args, parser) -> int:
    cfg = resolve_config(args, parser)
    out = Path(cfg.out)
    train_scenes, val_scenes = make_datasets(cfg)
    for name, scenes in (("train", train_scenes), ("val", val_scenes)):
        manifest = write_dataset(out, scenes, name)
        print(f"{manifest}\t{len(scenes)} scenes")
    return 0


def cmd_train(args, parser) -> int:
    cfg = resolve_config(args, parser)
    scenes = read_manifest(args.train) if args.train else make_datasets(cfg)[0]
    result = train(cfg, scenes, cfg.out)
    last = result.log[-1]
    print(f"steps {len(result.log)}  final loss {last['loss']:.6f}")
    print(f"checkpoint {result.checkpoint}")
    return 0


def cmd_eval(args, parser) -> int:
    model, cfg = load_model(args, parser)
    scenes = read_manifest(args.manifest)
    if not scenes:
        raise ValueError(f"{args.manifest}: manifest lists no scenes")
    report = evaluate(model, scenes, cfg.bits)
    levels = _levels(cfg, args.level)
    rows = {f"M{lv}": scores(report[lv]["confusion"]) for lv in levels}
    print(format_table(rows))
    if args.csv:
        extra = {f"M{lv}": {"uncertainty": f"{report[lv]['uncertainty']:.6f}"} for lv in levels}
        Path(args.csv).write_text(format_csv(rows, label="level", extra=extra))
    return 0


def _forward(model, cfg, image: np.ndarray) -> dict:
    maps = model(Tensor(image.astype(DTYPES[cfg.bits])[None]))
    return {lv: m.data[0] for lv, m in maps.items()}


def cmd_infer(args, parser) -> int:
    model, cfg = load_model(args, parser)
    image = _read_image(args.image)
    (level,) = _levels(cfg, args.level)
    logits = _forward(model, cfg, image)[level]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / f"m{level}_logits.uatn", logits)
    mask = to_extent(logits, image.shape[-1]) >= 0
    write_mask_pgm(out / f"m{level}_mask.pgm", mask.astype(np.float64))
    print(f"{out / f'm{level}_logits.uatn'}\n{out / f'm{level}_mask.pgm'}")
    return 0


def cmd_uncertainty(args, parser) -> int:
    model, cfg = load_model(args, parser)
    image = _read_image(args.image)
    maps = _forward(model, cfg, image)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for level in _levels(cfg, args.level):
        u, mean = uncertainty_visual(maps[level])
        save_tensor(out / f"u_m{level}.uatn", u)
        gray = np.round(u[0] / 0.5 * 255).astype(np.uint8)
        write_pgm(out / f"u_m{level}.pgm", gray)
        write_png(out / f"u_m{level}.png", gray)
        ranks = rank_maps(maps[level], cfg.model.ura_formula)
        for side, r in (("fg", ranks.fg), ("bg", ranks.bg)):
            write_pgm(out / f"rank_{side}_m{level}.pgm", rank_pgm_bytes(r[0]))
            write_png(out / f"rank_{side}_m{level}.png", rank_pgm_bytes(r[0]))
        print(f"M{level}\tmean uncertainty {mean:.6f}")
    return 0


def cmd_gradcheck(args, parser) -> int:
    from .oracles import TOLERANCE, run_suite

    if args.bits == 32:
        parser.error("gradient checks are defined for 64-bit; use --bits 64")
    if args.seeds < 1 or args.model_seeds < 0:
        parser.error("--seeds must be >= 1 and --model-seeds >= 0")

    def show(result):
        if not args.quiet or not result.passed:
            print(result.line(), flush=True)

    results = run_suite(seeds=args.seeds, model_seeds=args.model_seeds, report=show)
    failed = [r for r in results if not r.passed]
    worst = max(r.report.max_error for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed at {TOLERANCE:g} "
          f"(worst {worst:.3e})")
    return 1 if failed else 0


def ablation_grid() -> list:
    """(label, case, pigm mode): every case with the full prior guide, then every mode with case 4."""
    rows = [(f"case{c}", c, PigmMode.SC_CC.value) for c in ABLATION_CASES]
    rows += [(f"pigm_{m}", FusionCase.CASE4_FULL.value, m) for m in ABLATION_PIGM]
    return rows


def run_ablation(cfg: RunConfig, train_scenes: list, val_scenes: list, with_baseline: bool = False,
                 progress=None) -> tuple:
    """Train each grid variant; returns (rows, extras) keyed by label, scored on M1."""
    grid = ablation_grid()
    if with_baseline:
        grid.insert(0, ("baseline", None, None))
    trained: dict = {}
    rows, extras = {}, {}
    for label, case, mode in grid:
        key = (case, mode)
        if key not in trained:
            if case is None:
                variant = cfg.replace(**{"model.cascade": "false"})
            else:
                variant = cfg.replace(**{"model.cascade": "true", "uafm.case": case, "pigm.mode": mode})
            model = train(variant, train_scenes).model
            report = evaluate(model, val_scenes, cfg.bits)
            trained[key] = report[min(report)]
        entry = trained[key]
        rows[label] = scores(entry["confusion"])
        extras[label] = {"uncertainty": f"{entry['uncertainty']:.6f}"}
        if progress is not None:
            progress(label, rows[label])
    return rows, extras


def cmd_ablate(args, parser) -> int:
    cfg = resolve_config(args, parser)
    if bool(args.train) != bool(args.val):
        parser.error("--train and --val must be given together")
    if args.train:
        train_scenes, val_scenes = read_manifest(args.train), read_manifest(args.val)
    else:
        train_scenes, val_scenes = make_datasets(cfg)

    def progress(label, s):
        print(f"{label}\tIoU {100 * s['IoU']:.2f}", file=sys.stderr, flush=True)

    rows, extras = run_ablation(cfg, train_scenes, val_scenes, args.with_baseline, progress)
    text = format_csv(rows, label="variant", extra=extras)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(text)
    sys.stdout.write(text)
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "uncertainty": cmd_uncertainty, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def _thread_limit():
    value = os.environ.get("UANET_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"UANET_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args, parser)
    except ConfigError as exc:
        parser.error(str(exc))
    except TrainingAborted as exc:
        print(f"uanet: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ContractError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"uanet: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
