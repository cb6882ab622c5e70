"""Size of the right-end term in the Green-type identity for two channels.

For each sample the script prints the residual of the identity as usually
stated and the residual after adding back ``(Phi_i + m_i Phi) . y_n(a)``.
With one channel both vanish; with two the first is O(1).

    python scripts/green_boundary_term.py --samples 20
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from multisl.forward import green_identity_terms, locate_eigenvalues, norming_vectors
from multisl.presets import coupled_problem, free_problem


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    out = csv.writer(sys.stdout)
    out.writerow(["m", "n", "i", "lambda", "residual", "boundary_term", "residual_with_boundary"])
    for ps in (free_problem(), coupled_problem()):
        lams = locate_eigenvalues(ps, 0, 10)
        gam = [v.gamma for v in norming_vectors(ps, 0, lams)]
        for _ in range(args.samples):
            n = int(rng.integers(1, 11))
            i = int(rng.integers(1, ps.m + 1))
            lam = float(rng.uniform(lams[0] - 2, lams[-1] + 2))
            if np.abs(lams - lam).min() < 1e-3:
                continue
            t = green_identity_terms(ps, i, lam, float(lams[n - 1]), rng.standard_normal(ps.m), gam[n - 1])
            out.writerow([ps.m, n, i, f"{lam:.6f}", f"{abs(t['lhs'] - t['rhs']):.3e}", f"{t['boundary']:.3e}",
                          f"{abs(t['lhs'] - t['rhs'] + t['boundary']):.3e}"])


if __name__ == "__main__":
    main()
