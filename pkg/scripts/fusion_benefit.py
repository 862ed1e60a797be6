"""OFC fusion QNR when driven by the trained model vs the fixed-Gaussian baseline."""

from _common import emit, fixture, parser

from pidm.experiments import fusion_benefit

if __name__ == "__main__":
    p = parser(__doc__, 64, 8, 3, 2, (1, 2, 3))
    p.add_argument("--fusion-epochs", type=int, default=300)
    args = p.parse_args()
    for seed in args.seeds:
        r = fusion_benefit(seed, fixture(args), args.epochs, args.fusion_epochs)
        emit({"seed": seed, "margin": r["pidm"] - r["baseline"], **r}, args)
