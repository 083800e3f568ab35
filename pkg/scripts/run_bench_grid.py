#!/usr/bin/env python3
"""Desk-scale scenario study: sizes x tail parameters, three fitters each,
with method-versus-oracle scatter data and timings written to --out."""

import argparse

from lngm.bench import bench_run


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="50,100")
    parser.add_argument("--etas", default="0,1,10")
    parser.add_argument("--replicates", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--free-hyper", action="store_true")
    parser.add_argument("--gibbs-iterations", type=int, default=2000)
    parser.add_argument("--out", default="bench_out")
    args = parser.parse_args()

    summary = bench_run(
        sizes=[int(s) for s in args.sizes.split(",")],
        etas=[float(e) for e in args.etas.split(",")],
        replicates=args.replicates,
        out_dir=args.out,
        seed=args.seed,
        free_hyper=args.free_hyper,
        gibbs_iterations=args.gibbs_iterations,
        gibbs_burn_in=args.gibbs_iterations // 4,
    )
    for cell, stats in summary["cells"].items():
        line = [cell]
        for method, vals in stats.items():
            line.append(f"{method}: {vals['mean_seconds']:.2f}s")
            if "x_mean_slope_vs_gibbs" in vals:
                line.append(f"slope={vals['x_mean_slope_vs_gibbs']:.3f}")
        print("  ".join(line))
    if summary["failures"]:
        print(f"{len(summary['failures'])} cell(s) failed")


if __name__ == "__main__":
    main()
