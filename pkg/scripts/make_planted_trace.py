"""Write a synthetic trace drawn from the built-in planted traffic model.

    python scripts/make_planted_trace.py out.csv --flows 450 --min-len 8 --max-len 40 --seed 0
"""

import argparse

from packetgen.planted import PlantedTrafficModel
from packetgen.trace_io import summarize, write_trace


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--flows", type=int, default=450)
    ap.add_argument("--min-len", type=int, default=8)
    ap.add_argument("--max-len", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = PlantedTrafficModel.default().sample(args.flows, (args.min_len, args.max_len), seed=args.seed)
    write_trace(ds, args.out)
    for name, value in summarize(ds).rows():
        print(f"{name:28s} {value:.6g}")


if __name__ == "__main__":
    main()
