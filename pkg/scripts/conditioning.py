"""Train one globally conditioned model on 440/660 Hz sines and count per-class spectral hits."""

from _common import emit, logger, parser
from wavenet.experiments import conditioning_discrimination

if __name__ == "__main__":
    args = parser(__doc__, 5000).parse_args()
    emit(conditioning_discrimination(steps=args.steps, seed=args.seed, log=logger(args.verbose)), args.json)
