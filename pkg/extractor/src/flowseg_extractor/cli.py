import argparse
import sys
from typing import List, Optional

from .extract import ImageReadError, extract
from .models import ModelLoadError
from .spec import (DEFAULT_MODEL_ID, DEFAULT_RESIZE, DEFAULT_TIMESTEP,
                   ExtractionSpec)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IMAGE = 2
EXIT_MODEL = 3
EXIT_OOM = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="flowseg-extract",
        description="Extract (H, W, C) feature tensors from images for the "
                    "flowseg engine.")
    p.add_argument("target", help="image file or directory of images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model-id", default=DEFAULT_MODEL_ID,
                   help="diffusion model id, or 'tiny-random' for a small "
                        "fixed-seed offline network")
    p.add_argument("--timestep", type=int, default=DEFAULT_TIMESTEP,
                   help="denoising timestep (default %(default)s)")
    p.add_argument("--prompt", default="", help="text prompt (default empty)")
    p.add_argument("--resize", type=int, nargs=2, default=list(DEFAULT_RESIZE),
                   metavar=("H", "W"),
                   help="input resize (default %(default)s)")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--device", default="cpu")
    p.add_argument("--seed", type=int, default=0,
                   help="noise seed (default %(default)s)")
    p.add_argument("--stochastic", action="store_true",
                   help="fresh noise every run instead of the fixed seed")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        spec = ExtractionSpec(
            model_id=args.model_id, timestep=args.timestep,
            prompt=args.prompt, resize=tuple(args.resize),
            batch_size=args.batch_size, device=args.device,
            noise_seed=None if args.stochastic else args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        written = extract(args.target, spec, args.out)
    except ImageReadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IMAGE
    except ModelLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (MemoryError, RuntimeError) as exc:
        if "out of memory" in str(exc).lower() or isinstance(exc, MemoryError):
            print(f"error: out of memory: {exc}", file=sys.stderr)
            return EXIT_OOM
        raise
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
