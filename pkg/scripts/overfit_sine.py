"""Fit a 2 s 440 Hz sine, regenerate 4096 samples and report the spectral peak."""

from _common import emit, logger, parser
from wavenet.experiments import overfit_sine

if __name__ == "__main__":
    args = parser(__doc__, 600).parse_args()
    res = overfit_sine(steps=args.steps, seed=args.seed, gen_seeds=(0, 1, 2), log=logger(args.verbose))
    emit(res, args.json)
