"""Kernel recovery with warp and modulation off and the band mixing fixed to the truth."""

from _common import emit, fixture, parser

from pidm.experiments import KERNEL_FIT_LR, identifiability

if __name__ == "__main__":
    p = parser(__doc__, 128, 16, 3, 4, range(10))
    p.add_argument("--lr", type=float, default=KERNEL_FIT_LR)
    args = p.parse_args()
    passed = 0
    for seed in args.seeds:
        r = identifiability(seed, fixture(args), args.epochs, args.lr)
        ok = r["d_alpha"] <= 0.5 and r["d_beta"] <= 0.15
        passed += ok
        emit({"seed": seed, "pass": ok, **r}, args)
    emit({"passed": passed, "trials": len(args.seeds)}, args)
