"""Validation NLL on first-order Markov noise against its analytic entropy rate."""

from _common import emit, logger, parser
from wavenet.experiments import entropy_rate_check

if __name__ == "__main__":
    args = parser(__doc__, 1000).parse_args()
    emit(entropy_rate_check(steps=args.steps, seed=args.seed, log=logger(args.verbose)), args.json)
