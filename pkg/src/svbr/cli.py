"""Command-line entry point.

Subcommands: synth (build a dataset from sharp images), train, deblur
(network or classical baseline), eval (SSIM/PSNR/MAE reports), and
gradcheck (finite-difference verification of the network gradients).

Exit codes: 0 success, 1 verification failure, 2 input error, 3 I/O
error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .augmentation import DtConfig, MattingConfig
from .baseline import sv_deconvolve_baseline
from .common import SvbrError
from .kernels import MAX_RADIUS, BlurField
from .metrics import format_quality, mae_blur, psnr, ssim
from .network import (
    CheckpointError,
    NetworkConfig,
    SVBRNet,
    deblur_image,
    gradient_check,
    gradient_check_blocks,
    load_checkpoint,
)
from .synthesis import NoiseConfig
from .training import TrainConfig, TrainingDivergedError, train

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

GRADCHECK_THRESHOLD = 1e-3


class InputError(SvbrError):
    """CLI input problem; maps to exit code 2."""


def _load_blur_map(path) -> BlurField:
    """Read a BMAP container or an 8-bit grayscale raster (255 -> radius 6)."""
    data = Path(path).read_bytes()
    if data[:4] == ds.BMAP_MAGIC:
        return ds.field_from_bytes(data)
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise InputError(f"cannot decode blur map: {path}")
    return BlurField(raw.astype(np.float64) / 255.0 * MAX_RADIUS)


def cmd_synth(args) -> int:
    if args.height % 16 or args.width % 16:
        print(
            f"warning: {args.height}x{args.width} not divisible by 16; "
            "depth-4 training will reject these samples",
            file=sys.stderr,
        )
    images = ds.ingest(args.input_dir, args.height, args.width)
    noise = (
        NoiseConfig("gaussian", args.noise_sigma, args.seed)
        if args.noise_sigma > 0
        else NoiseConfig()
    )
    manifest, records = ds.synthesize_dataset(
        images,
        args.out,
        patterns_per_image=args.patterns,
        noise=noise,
        seed=args.seed,
        split_ratio=args.split_ratio,
    )
    digest = hashlib.sha256(Path(manifest).read_bytes()).hexdigest()
    print(f"{len(records)} records written")
    print(f"manifest {manifest} sha256 {digest}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = Path(args.dataset)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    if not manifest.exists():
        raise InputError(f"dataset manifest not found: {manifest}")
    samples = ds.load_samples(manifest)
    if not samples:
        raise InputError("dataset is empty")
    cfg = TrainConfig(
        batch_size=args.batch_size,
        lr0=args.lr,
        phase_a_epochs=args.phase_a,
        phase_b_epochs=args.phase_b,
        seed=args.seed,
    )
    import torch

    torch.manual_seed(args.seed)
    net = SVBRNet(NetworkConfig(depth=args.depth, base_width=args.base_width))
    ckpt, log = train(samples, net, cfg)
    Path(args.checkpoint_out).write_bytes(ckpt)
    log.write(args.log_out)
    first = log.step_records[0].loss if log.step_records else float("nan")
    print(
        f"trained {len(log.step_records)} steps; "
        f"first loss {first:.4f}, final-epoch mean loss {log.final_epoch_mean_loss():.4f}"
    )
    print(f"checkpoint {args.checkpoint_out}; log {args.log_out}")
    return EXIT_OK


def cmd_deblur(args) -> int:
    img = ds.load_image(args.image)
    field = _load_blur_map(args.blur_map)
    if img.shape[:2] != (field.height, field.width):
        raise InputError(
            f"image {img.shape[:2]} and blur map {(field.height, field.width)} shapes differ"
        )
    if args.baseline:
        result = sv_deconvolve_baseline(img, field, args.iterations)
    else:
        if not args.checkpoint:
            raise InputError("--checkpoint is required unless --baseline is given")
        net = load_checkpoint(args.checkpoint)
        div = 2**net.config.depth
        h, w = img.shape[:2]
        ph, pw = (-h) % div, (-w) % div
        if ph or pw:
            img_p = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
            field_p = BlurField(np.pad(field.radii, ((0, ph), (0, pw)), mode="edge"))
            result = deblur_image(net, img_p, field_p)[:h, :w]
        else:
            result = deblur_image(net, img, field)
    ds.save_image_u8(args.out, result)
    print(f"wrote {args.out}")
    return EXIT_OK


def _pair_files(pred_dir, gt_dir) -> list[tuple[Path, Path]]:
    pred = Path(pred_dir)
    gt = Path(gt_dir)
    pairs = []
    names = sorted(p.name for p in pred.iterdir() if p.is_file())
    if not names:
        raise InputError(f"no files in {pred_dir}")
    for name in names:
        counterpart = gt / name
        if not counterpart.exists():
            raise InputError(f"missing counterpart for {name} in {gt_dir}")
        pairs.append((pred / name, counterpart))
    return pairs


def cmd_eval(args) -> int:
    lines = []
    ssim_vals, psnr_vals = [], []
    for pred_path, gt_path in _pair_files(args.pred_dir, args.gt_dir):
        a = ds.load_image(pred_path)
        b = ds.load_image(gt_path)
        s = ssim(a, b).mean
        p = psnr(a, b)
        ssim_vals.append(s)
        psnr_vals.append(p)
        lines.append(f"{pred_path.name}\t{format_quality(s, p)}")
    mean_s = float(np.mean(ssim_vals))
    mean_p = float(np.mean([min(p, 99.0) for p in psnr_vals]))
    lines.append(f"mean\t{format_quality(mean_s, mean_p)}")
    if args.map_pred and args.map_gt:
        mae = mae_blur(_load_blur_map(args.map_pred), _load_blur_map(args.map_gt))
        lines.append(f"map_mae\t{mae:.3f}")
    report = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    per_block = gradient_check_blocks(seed=args.seed)
    full = gradient_check(seed=args.seed, corrupt=args.corrupt_gradient)
    print("block  max_rel_error  worst_param")
    failed = []
    for kind, res in per_block.items():
        print(f"{kind:<5}  {res.max_rel_error:.3e}      {res.worst_param}")
        if res.max_rel_error >= GRADCHECK_THRESHOLD:
            failed.append(f"block {kind}")
    print(f"full   {full.max_rel_error:.3e}      {full.worst_param}")
    if full.max_rel_error >= GRADCHECK_THRESHOLD:
        failed.append(f"full network ({full.worst_param})")
    if failed:
        print(f"FAIL: gradient check exceeded {GRADCHECK_THRESHOLD:g} in: {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"OK: all gradients within {GRADCHECK_THRESHOLD:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svbr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a blur dataset from sharp images")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--patterns", type=int, default=1, help="patterns per source image")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the deblurring network")
    p.add_argument("--dataset", required=True, help="manifest path or dataset directory")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--base-width", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--phase-a", type=int, default=32)
    p.add_argument("--phase-b", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-out", default="svbr.ckpt")
    p.add_argument("--log-out", default="train_log.jsonl")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("deblur", help="deblur one image given its blur map")
    p.add_argument("--image", required=True)
    p.add_argument("--blur-map", required=True, help="BMAP file or 8-bit grayscale raster")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", action="store_true", help="use per-scale RL instead of the network")
    p.add_argument("--iterations", type=int, default=30, help="RL iterations for --baseline")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--map-pred")
    p.add_argument("--map-gt")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("SVBR_THREADS")
    if threads:
        try:
            import torch

            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"warning: ignoring bad SVBR_THREADS={threads!r}", file=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SvbrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
