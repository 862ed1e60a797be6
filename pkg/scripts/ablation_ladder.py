"""Degraded-pair SSIM for base, +PD, +AD, +SM, +SW on warped, shifted-blur scenes."""

import statistics

from _common import emit, fixture, parser

from pidm.experiments import LADDER_NAMES, ablation_ladder

if __name__ == "__main__":
    args = parser(__doc__, 128, 16, 3, 4, range(1, 6)).parse_args()
    runs = []
    for seed in args.seeds:
        runs.append(ablation_ladder(seed, fixture(args), args.epochs))
        emit({"seed": seed, **dict(zip(LADDER_NAMES, runs[-1]))}, args)
    medians = [statistics.median(col) for col in zip(*runs)]
    emit({"median": dict(zip(LADDER_NAMES, medians)),
          "steps": [b - a for a, b in zip(medians, medians[1:])]}, args)
