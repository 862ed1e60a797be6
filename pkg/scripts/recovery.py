"""Self-supervised recovery on a scene generated by a hidden ground-truth model."""

from _common import emit, fixture, parser

from pidm.experiments import recovery

if __name__ == "__main__":
    args = parser(__doc__, 256, 31, 3, 4, [0]).parse_args()
    for seed in args.seeds:
        r = recovery(seed, fixture(args), args.epochs)
        emit({"seed": seed, **r}, args)
