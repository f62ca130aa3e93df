"""Cut an optimal network at its branch point and check each piece.

Each connected component, and each pair of them, is re-solved for its own
coupling on the same lattice; none should beat the piece cut out of the
optimum.
"""

import argparse

from branchmail import (
    OpenSetSpec,
    alpha_energy,
    component_multiplicity_check,
    component_optimality_audit,
    connected_components,
    finiteness_experiment,
)
from branchmail.components import grid_oracle
from branchmail.harness import CURATED, SolverConfig, curated_instance
from branchmail.solver import branch_points


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instance", default="three-to-one", choices=sorted(CURATED))
    ap.add_argument("--alpha", type=float, default=0.9)
    ap.add_argument("--pitch", type=float, default=0.125)
    args = ap.parse_args()

    cfg = SolverConfig(pitch=args.pitch, grid_radius=1.0)
    res, _ = cfg.solve(curated_instance(args.instance), args.alpha)
    print(f"{args.instance}: energy {res.energy:.6f}, {res.certificate}")
    for bp in branch_points(res.plan):
        dec = connected_components(res.plan, OpenSetSpec.minus(bp))
        print(f"branch point {bp.tolist()}: {len(dec)} components, multiplicities {'agree' if component_multiplicity_check(res.plan, dec) else 'DISAGREE'}")
        for k, comp in enumerate(dec.components):
            print(f"  component {k}: mass {comp.plan.total:.3f}, energy {alpha_energy(comp.plan, args.alpha):.6f}")
        oracle = grid_oracle(args.pitch, radius=1.0, max_path_len=cfg.max_path_len, alpha=args.alpha)
        audit = component_optimality_audit(res.plan, dec, 100, args.alpha, oracle, hop_limit=cfg.max_path_len)
        for e in audit.entries:
            print(f"  re-solve {e.members}: piece {e.energy:.6f} vs oracle {e.oracle_energy:.6f} {'ok' if e.passed else 'BEATEN'}")
        fin = finiteness_experiment(res.plan, bp, min(a.curve.length for a in res.plan.atoms), args.alpha)
        print(f"  count {fin.count} <= energy floor bound {fin.bound:.2f}: {fin.certified}")


if __name__ == "__main__":
    main()
