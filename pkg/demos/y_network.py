"""Two equal sources feeding one sink: where does the network branch?

Solves the grid problem for a few exponents, then polishes the branch point
off the lattice and prints the energies next to the straight V.
"""

import argparse
from pathlib import Path

import numpy as np

from branchmail import Coupling, candidate_graph, refine_topology, solve_exact, solve_local
from branchmail.emit import svg_network
from branchmail.solver import branch_points, merge_point


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sink-height", type=float, default=2.0)
    ap.add_argument("--pitch", type=float, default=0.1)
    ap.add_argument("--svg-dir", help="write one SVG per exponent here")
    args = ap.parse_args()

    h = args.sink_height
    pi = Coupling([(-1, 0), (1, 0)], [(0, h), (0, h)], [0.5, 0.5])
    g = candidate_graph(pi, pitch=args.pitch, box=((-1, 0), (1, h)))
    print(f"sink at (0, {h}), lattice pitch {args.pitch}, {len(g)} candidate vertices")
    print(f"{'alpha':>6} {'V energy':>10} {'grid':>10} {'polished':>10}  merge point")
    for alpha in (0.5, 0.75, 0.9, 1.0):
        v = 2 * 0.5**alpha * float(np.hypot(1, h))
        res = solve_exact(pi, g, alpha, upper_bound=solve_local(pi, g, alpha))
        out = refine_topology(res.plan, alpha)
        bps = branch_points(out.plan)
        where = bps[0] if len(bps) else merge_point(out.plan)
        print(f"{alpha:>6} {v:>10.6f} {res.energy:>10.6f} {out.energy_after:>10.6f}  {np.round(where, 4).tolist()}")
        if args.svg_dir:
            d = Path(args.svg_dir)
            d.mkdir(parents=True, exist_ok=True)
            (d / f"y_alpha_{alpha}.svg").write_text(svg_network(out.plan, alpha))
    print("at alpha 1 merging gains nothing; smaller exponents pull the joint down towards the sources")


if __name__ == "__main__":
    main()
