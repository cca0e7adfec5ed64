"""Joint next-sample and frame-classification training on labeled tone runs."""

from _common import emit, logger, parser
from wavenet.experiments import dual_loss_liveness

if __name__ == "__main__":
    args = parser(__doc__, 600).parse_args()
    emit(dual_loss_liveness(steps=args.steps, seed=args.seed, log=logger(args.verbose)), args.json)
