"""
``tae enhance``: batch-enhance a directory of frames with a trained checkpoint.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import structlog

from tae.commands import common
from tae.errors import ConfigError
from tae.services.checkpoint import load_enhancer
from tae.services.enhancement import Enhancer
from tae.services.image_io import IMAGE_SUFFIXES, read_image, write_image

logger = structlog.get_logger(__name__)

MASK_DIR = "masks"


def register(sub: argparse._SubParsersAction) -> None:
    parser = sub.add_parser("enhance", help="enhance every image in a directory")
    parser.add_argument("--ckpt", type=Path, required=True)
    parser.add_argument("--in", dest="input_dir", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    common.add_mode(parser)
    parser.add_argument(
        "--dump-mask",
        action="store_true",
        help=f"also write objectness and mask maps as grayscale images under <out>/{MASK_DIR}",
    )
    common.add_jobs(parser)
    parser.set_defaults(handler=run)


def enhance_file(enhancer: Enhancer, src: Path, out_dir: Path, dump_mask: bool = False) -> Path:
    """Output keeps the source file name and dimensions."""
    result = enhancer.run(read_image(src))
    dst = write_image(out_dir / src.name, result.enhanced)
    if dump_mask:
        write_image(out_dir / MASK_DIR / f"{src.stem}_objectness.png", result.objectness)
        write_image(out_dir / MASK_DIR / f"{src.stem}_mask.png", result.mask.mean(dim=0, keepdim=True))
    return dst


def run(args: argparse.Namespace) -> int:
    if not args.input_dir.is_dir():
        raise ConfigError(f"--in: {args.input_dir} is not a directory")
    sources = sorted(p for p in args.input_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    enhancer = load_enhancer(args.ckpt, args.mode)
    args.out.mkdir(parents=True, exist_ok=True)

    with ThreadPoolExecutor(max_workers=common.jobs(args), thread_name_prefix="tae-enhance") as pool:
        written = list(pool.map(lambda p: enhance_file(enhancer, p, args.out, args.dump_mask), sources))

    logger.info("enhance_complete", images=len(written), mode=enhancer.mode, out=str(args.out))
    return 0
