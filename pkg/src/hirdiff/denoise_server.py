"""Reference external denoiser: the smoothing surrogate behind the wire protocol.

    python -m hirdiff.denoise_server --smooth 1.0

Useful for checking a deployment end to end before attaching a real network.
"""

import argparse
import sys

from .external import serve
from .sampler import SmoothingDenoiser


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--smooth", type=float, default=1.0, help="Gaussian kernel std")
    args = p.parse_args(argv)
    return serve(SmoothingDenoiser(args.smooth).predict_noise)


if __name__ == "__main__":
    sys.exit(main())
