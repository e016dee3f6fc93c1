"""Command-line entry point: data generation, training, evaluation, inference,
gradient verification, and loss-weight grid search.

Every run is reproducible from its config file and seed; errors exit with a
distinct code per failure class and a single machine-readable stderr line.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import config_hash, load_config
from .data import DatasetSpec, generate, load_split, normalize_image, read_ppm, write_pgm
from .errors import ConfigError, TrisegError
from .gradcheck import build_registry
from .model import SegEdgeModel
from .optim import grid_search, write_grid_csv
from .tensor import Tensor
from .train import evaluate, train

__all__ = ["main"]

_OVERRIDE_RE = re.compile(r"^--([A-Za-z0-9_.]+)=(.*)$", re.DOTALL)


def _parse_overrides(extras: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for token in extras:
        m = _OVERRIDE_RE.match(token)
        if not m:
            raise ConfigError(f"unrecognized argument {token!r}; overrides look like --model.base_channels=4")
        overrides[m.group(1)] = m.group(2)
    return overrides


def cmd_gen_data(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments: {' '.join(extras)}")
    spec = DatasetSpec(
        train_images=args.train_images,
        val_images=args.val_images,
        test_images=args.test_images,
        size=args.size,
        num_classes=args.num_classes,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    manifests = generate(spec, args.out)
    for split, path in manifests.items():
        print(f"wrote {split}: {path}")
    return 0


def cmd_train(args, extras):
    config = load_config(args.config, _parse_overrides(extras))
    outcome = train(config, resume_from=args.resume)
    print(f"run dir: {outcome.run_dir}")
    if outcome.val_report is not None:
        gap = outcome.val_report.get("consistency_gap")
        gap_txt = f" consistency_gap={gap:.6f}" if gap is not None else ""
        print(f"val miou={outcome.val_miou:.6f}{gap_txt} after {outcome.iterations} iterations")
    return 0


def _load_model(checkpoint_path, config_path):
    if config_path is None:
        config_path = Path(checkpoint_path).parent / "config.json"
    config = load_config(config_path)
    model = SegEdgeModel(config.model)
    ckpt = load_checkpoint(checkpoint_path)
    model.load_arrays(ckpt.params)
    return model, config, ckpt


def cmd_eval(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments: {' '.join(extras)}")
    model, config, _ = _load_model(args.checkpoint, args.config)
    root = args.data or config.data_root
    samples = load_split(root, args.split)
    report = evaluate(model, samples, config, multiscale=args.multiscale)
    report.update(split=args.split, seed=config.seed, config_hash=config_hash(config))
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_infer(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments: {' '.join(extras)}")
    model, config, _ = _load_model(args.checkpoint, args.config)
    image = read_ppm(args.image)
    s, e, c = model.forward_full(Tensor(normalize_image(image)), window=config.edge_window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def to_gray(arr):
        return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.int64)

    write_pgm(out / "prediction.pgm", np.argmax(s.data, axis=0))
    written = ["prediction.pgm"]
    for name, maps in (("edge_e", e), ("edge_c", c)):
        if maps is None:
            continue
        for ch in range(maps.shape[0]):
            fname = f"{name}_class{ch}.pgm"
            write_pgm(out / fname, to_gray(maps.data[ch]))
            written.append(fname)
    print(f"wrote {', '.join(written)} to {out}")
    return 0


def cmd_gradcheck(args, extras):
    if extras:
        raise ConfigError(f"unrecognized arguments: {' '.join(extras)}")
    failures = 0
    for _, build in build_registry(args.seed):
        report = build()
        print(report.line())
        failures += 0 if report.passed else 1
    total = len(build_registry(args.seed))
    print(f"{total - failures}/{total} gradient checks passed")
    return 0 if failures == 0 else 1


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def cmd_grid_search(args, extras):
    config = load_config(args.config, _parse_overrides(extras))
    results = grid_search(
        config,
        c_s_values=_float_list(args.c_s),
        c_e_values=_float_list(args.c_e),
        c_c_values=_float_list(args.c_c),
        budget_iters=args.budget_iters,
    )
    write_grid_csv(results, args.out)
    print(f"wrote {len(results)} rows to {args.out}")
    best = next((r for r in results if r.status == "ok"), None)
    if best:
        print(f"best: c_s={best.c_s} c_e={best.c_e} c_c={best.c_c} miou={best.miou_val:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triseg",
        description="Joint segmentation/edge training with a decoupled cross-task consistency loss.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic shape dataset")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--train-images", type=int, default=40)
    p.add_argument("--val-images", type=int, default=8)
    p.add_argument("--test-images", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a JSON config (any field overridable as --key=value)")
    p.add_argument("config", help="path to the JSON config")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None, help="defaults to config.json next to the checkpoint")
    p.add_argument("--data", default=None, help="dataset root (defaults to the config's data_root)")
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--multiscale", action="store_true", help="average probabilities over scales 0.75/1.0/1.25")
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run one image through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--image", required=True, help="input PPM (P6) image")
    p.add_argument("--out", required=True, help="output directory for PGM maps")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("grid-search", help="rank loss-weight combinations by val mIoU")
    p.add_argument("config")
    p.add_argument("--c-s", default="1", help="comma-separated segmentation weights")
    p.add_argument("--c-e", default="5,10,20", help="comma-separated edge weights")
    p.add_argument("--c-c", default="5,10,20", help="comma-separated consistency weights")
    p.add_argument("--budget-iters", type=int, default=None)
    p.add_argument("--out", default="grid_search.csv")
    p.set_defaults(func=cmd_grid_search)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except TrisegError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.code
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
