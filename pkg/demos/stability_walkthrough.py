"""Optimal energies along a sequence of couplings that converges to a limit.

Runs one curated instance and prints, per n, the energy gap to the limit and
the competitor bound that keeps it in check.
"""

import argparse

from branchmail import run_stability
from branchmail.harness import CURATED, curated_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instance", default="two-to-one", choices=sorted(CURATED))
    ap.add_argument("--n-max", type=int, default=16)
    ap.add_argument("--pitch", type=float, default=0.125)
    args = ap.parse_args()

    exp = curated_experiment(args.instance, ns=tuple(range(1, args.n_max + 1)), pitch=args.pitch)
    rep = run_stability(exp)
    print(f"{args.instance}: limit energy {rep.limit_energy:.6f} ({rep.limit_certificate})")
    print(f"{'n':>3} {'energy':>10} {'gap':>10} {'bound':>10} {'eps':>10}  status")
    for r in rep.rows:
        if r.gap is None:
            print(f"{r.n:>3}  {r.status}")
            continue
        print(f"{r.n:>3} {r.energy:>10.6f} {r.gap:>+10.6f} {r.bound:>10.6f} {r.eps:>10.4g}  {r.certified}")
    print(f"tolerance {rep.tolerance:.4f}, verdict {'ok' if rep.verdict else 'failed'}, {rep.runtime:.1f} s")


if __name__ == "__main__":
    main()
