import argparse
import json

from pidm.experiments import Fixture


def parser(description, H, C, c, s, seeds):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--size", type=int, default=H, help="HR side length")
    p.add_argument("--bands", type=int, default=C)
    p.add_argument("--msi-bands", type=int, default=c)
    p.add_argument("--scale", type=int, default=s)
    p.add_argument("--seeds", type=lambda t: [int(v) for v in t.split(",")], default=list(seeds))
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--out", help="also append the JSON records to this file")
    return p


def fixture(args):
    return Fixture(args.size, args.bands, args.msi_bands, args.scale)


def emit(record, args):
    line = json.dumps(record, sort_keys=True)
    print(line, flush=True)
    if args.out:
        with open(args.out, "a") as f:
            f.write(line + "\n")


