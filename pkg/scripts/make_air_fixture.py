"""Write a synthetic hourly record in the public air-quality file layout.

Useful for exercising ingestion and the four-level pipeline when the real
file is not at hand; the numbers carry no physical meaning.
"""
import argparse

from pmfs.air import write_synthetic_record


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out")
    p.add_argument("--start", default="2004-10-03 00:00")
    p.add_argument("--days", type=int, default=184)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gap", action="append", default=[], metavar="FIRST_HOUR:N",
                   help="missing run written with the -200 marker (repeatable)")
    args = p.parse_args()
    gaps = [tuple(int(v) for v in g.split(":")) for g in args.gap]
    path = write_synthetic_record(args.out, args.start, 24 * args.days, args.seed, gaps)
    print(f"wrote {24 * args.days} hourly rows to {path}")


if __name__ == "__main__":
    main()
