"""Command-line surface: training, encoding/decoding, token files, rate
curves, BD-rate, and complexity reports.

Results go to stdout, diagnostics to stderr; the exit code is 0 on success
and nonzero with a diagnostic on failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np
import torch
from PIL import Image

from .codec import Bitstream
from .errors import ConfigurationError, DecodeError, FormatError, LvcodecError
from .evalkit import (
    REFERENCE_COMPLEXITY,
    bd_rate,
    bpp,
    complexity_report,
    extractor_complexity,
    plot_curves,
    psnr,
    read_curve_csv,
    sweep_curve,
)
from .pipeline import load_checkpoint
from .tokens import get_extractor, load_tokens, save_tokens, tokens_for_image
from .trainer import TrainConfig, load_image, run_stage


def _load_image_tensor(path) -> torch.Tensor:
    return torch.from_numpy(np.moveaxis(load_image(path), -1, 0).copy())


def _save_image_tensor(path, image: torch.Tensor) -> None:
    arr = (image.clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(np.moveaxis(arr, 0, -1)).save(path)


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="seed for any randomized step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lvcodec",
        description="Token-guided pre-editing and variable-bitrate image coding",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training stage from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None,
                   help="checkpoint to initialize from (required for stages 2/3)")
    _add_seed(p)

    p = sub.add_parser("encode", help="compress an image")
    p.add_argument("--input", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--no-preedit", action="store_true",
                   help="bypass the pre-editing network")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--tokens", default=None,
                       help="precomputed .tok file guiding the pre-editor")
    group.add_argument("--extractor", default=None,
                       help="token extractor name (default: checkpoint's)")
    _add_seed(p)

    p = sub.add_parser("decode", help="reconstruct an image from a bitstream")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    _add_seed(p)

    p = sub.add_parser("tokens", help="extract tokens to a .tok file")
    p.add_argument("--input", required=True)
    p.add_argument("--extractor", default="toy")
    p.add_argument("--output", required=True)
    _add_seed(p)

    p = sub.add_parser("curve", help="sweep all q levels over an image directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--metric", default="psnr", choices=["psnr"])
    p.add_argument("--out", required=True)
    p.add_argument("--no-preedit", action="store_true")
    p.add_argument("--plot", default=None, help="optional SVG/PNG plot path")
    _add_seed(p)

    p = sub.add_parser("bdrate", help="Bjontegaard delta rate between two curves")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    _add_seed(p)

    p = sub.add_parser("report-complexity",
                       help="FLOPs / parameters / timing per network")
    p.add_argument("--model", required=True)
    _add_seed(p)
    return parser


def _seed_everything(seed) -> None:
    if seed is not None:
        torch.manual_seed(seed)
        np.random.seed(seed)


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    result = run_stage(config, init_checkpoint=args.resume)
    last = result.history[-1] if result.history else {}
    print(f"checkpoint: {result.checkpoint_path}")
    if last:
        print(f"final: bpp={last['bpp']:.4f} mse={last['mse']:.6f} "
              f"total={last['total']:.4f}")
    return 0


def _cmd_encode(args) -> int:
    pipeline, _, _, _ = load_checkpoint(args.model)
    image = _load_image_tensor(args.input)
    tokens = None
    if args.tokens:
        tokens = load_tokens(args.tokens)
    elif args.extractor:
        extractor = get_extractor(args.extractor)
        tokens = tokens_for_image(image, extractor)
    bs = pipeline.encode_image(image, args.q, use_preedit=not args.no_preedit,
                               tokens=tokens)
    with open(args.output, "wb") as f:
        f.write(bs.pack())
    print(f"{args.output}: {bs.total_bytes} bytes, {bpp(bs):.4f} bpp, q={bs.q}")
    return 0


def _cmd_decode(args) -> int:
    pipeline, _, _, _ = load_checkpoint(args.model)
    with open(args.input, "rb") as f:
        bs = Bitstream.unpack(f.read())
    image, q = pipeline.decode_image(bs)
    _save_image_tensor(args.output, image)
    print(f"{args.output}: {image.shape[2]}x{image.shape[1]}, q={q}")
    return 0


def _cmd_tokens(args) -> int:
    extractor = get_extractor(args.extractor)
    image = _load_image_tensor(args.input)
    tokens = tokens_for_image(image, extractor)
    save_tokens(args.output, tokens)
    print(f"{args.output}: {tokens.shape[0]}x{tokens.shape[1]} tokens")
    return 0


def _cmd_curve(args) -> int:
    from .trainer import list_image_files

    pipeline, _, _, _ = load_checkpoint(args.model)
    files = list_image_files(args.dir)
    if not files:
        raise ConfigurationError(f"no images found in {args.dir!r}")
    images = [_load_image_tensor(p) for p in files]
    points = sweep_curve(images, pipeline, metric_fn=psnr,
                         use_preedit=not args.no_preedit, csv_path=args.out)
    for p in points:
        print(f"q={p.q} bpp={p.bpp:.4f} metric={p.metric:.4f} n={p.n_images}")
    if args.plot:
        plot_curves({"curve": [p.as_ra() for p in points]}, args.plot)
        print(f"plot: {args.plot}")
    print(f"curve: {args.out}")
    return 0


def _cmd_bdrate(args) -> int:
    anchor = [p.as_ra() for p in read_curve_csv(args.anchor)]
    test = [p.as_ra() for p in read_curve_csv(args.test)]
    print(f"{bd_rate(anchor, test):.2f}%")
    return 0


def _cmd_report_complexity(args) -> int:
    pipeline, _, _, _ = load_checkpoint(args.model)
    probe = torch.rand(1, 3, 256, 256)
    q = 0
    codec = pipeline.codec
    y = codec.g_enc(probe, q)
    z = codec.h_enc(y, q)
    tokens = pipeline.extractor.extract(probe)

    rows = [
        ("token_extractor", extractor_complexity(pipeline.extractor)),
        ("preedit", complexity_report(pipeline.preedit, (probe, tokens, q))),
    ]
    enc = complexity_report(codec.g_enc, (probe, q))
    henc = complexity_report(codec.h_enc, (y, q))
    rows.append(("encoder", ComplexitySum(enc, henc)))
    dec = complexity_report(codec.g_dec, (torch.round(y), q))
    hdec = complexity_report(codec.h_dec, (torch.round(z), q))
    rows.append(("decoder", ComplexitySum(dec, hdec)))

    print(f"{'network':<16} {'GFLOPs':>10} {'params (M)':>12} {'time (s)':>10}"
          f"   reference (GFLOPs / M / s)")
    for name, rep in rows:
        ref = REFERENCE_COMPLEXITY[name]
        print(f"{name:<16} {rep.gflops:>10.3f} {rep.params_m:>12.3f} "
              f"{rep.time_s:>10.4f}   {ref['gflops']:.3f} / {ref['params_m']:.2f}"
              f" / {ref['time_s']:.4f}")
    return 0


class ComplexitySum:
    """Aggregate of two sub-network reports (e.g. main + hyper transform)."""

    def __init__(self, *reports):
        self.flops = sum(r.flops for r in reports)
        self.params = sum(r.params for r in reports)
        self.time_s = sum(r.time_s for r in reports)

    @property
    def gflops(self):
        return self.flops / 1e9

    @property
    def params_m(self):
        return self.params / 1e6


_COMMANDS = {
    "train": _cmd_train,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "tokens": _cmd_tokens,
    "curve": _cmd_curve,
    "bdrate": _cmd_bdrate,
    "report-complexity": _cmd_report_complexity,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    _seed_everything(args.seed)
    try:
        return _COMMANDS[args.command](args)
    except DecodeError as e:
        print(f"decode error: {e}", file=sys.stderr)
        return 1
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 1
    except (LvcodecError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
