"""Write the seeded a9a-shaped stand-in as a LIBSVM file (gzip when the name ends in .gz)."""

import argparse
import gzip

from cgt.data import serialize_libsvm, synthetic_a9a


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("path")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-samples", type=int, default=32561)
    args = ap.parse_args()
    samples = synthetic_a9a(args.n_samples, seed=args.seed)
    opener = gzip.open if args.path.endswith(".gz") else open
    with opener(args.path, "wt", encoding="ascii") as fh:
        serialize_libsvm(samples, fh)
    print(f"wrote {len(samples)} samples to {args.path}")


if __name__ == "__main__":
    main()
