"""TSG fusion trained with the matched degradation vs the baseline degradation."""

from _common import emit, fixture, parser

from pidm.experiments import tsg_authenticity

if __name__ == "__main__":
    p = parser(__doc__, 64, 8, 3, 2, (1, 2, 3))
    p.add_argument("--fusion-epochs", type=int, default=300)
    p.add_argument("--aux", type=int, default=3, help="auxiliary scenes per trial")
    args = p.parse_args()
    for seed in args.seeds:
        r = tsg_authenticity(seed, fixture(args), args.aux, args.epochs, args.fusion_epochs)
        emit({"seed": seed, **r}, args)
