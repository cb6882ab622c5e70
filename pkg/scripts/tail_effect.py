"""How much the tail correction of the truncated products buys.

Recovers the free one-channel norming constants from two spectra with no
tail, with a constant-shift tail, and with the fitted ``d + e / k^2`` tail,
and prints the worst relative error over the first 20 against 1/sqrt(pi)
and sqrt(2/pi).

    python scripts/tail_effect.py --n 20 50 100 200
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from multisl.forward import locate_eigenvalues
from multisl.model import SpectraSet, TailModel
from multisl.presets import free_problem
from multisl.recovery import estimate_tail, two_spectra_one_channel


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[20, 50, 100, 200])
    args = ap.parse_args()
    ps = free_problem()
    top = max(args.n)
    base, pert = locate_eigenvalues(ps, 0, top), locate_eigenvalues(ps, 1, top)
    exact = np.full(20, np.sqrt(2 / np.pi))
    exact[0] = 1 / np.sqrt(np.pi)
    out = csv.writer(sys.stdout)
    out.writerow(["n", "no_tail", "constant_shift", "fitted_shift"])
    for n in sorted(args.n):
        sp = SpectraSet(base[:n], (pert[:n],))
        fitted = estimate_tail(sp, np.pi)
        # plain mean of the last ten shifts, no 1/k^2 term
        const = TailModel(n, [np.mean(pert[n - 10 : n] - base[n - 10 : n])], fitted.asymptotic_offset, np.pi, 1)
        row = [n]
        for tail in (TailModel.none(n, 1), const, fitted):
            g = two_spectra_one_channel(base[:n], pert[:n], 0.0, 1.0, tail)[: min(20, n)]
            row.append(f"{np.max(np.abs(g - exact[: g.size]) / exact[: g.size]):.3e}")
        out.writerow(row)


if __name__ == "__main__":
    main()
