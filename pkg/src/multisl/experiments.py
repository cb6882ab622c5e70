"""Experiment drivers behind the command-line interface.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns a
report dictionary plus optional CSV rows.  Nothing here writes files; the CLI
owns serialization.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .config import ExperimentConfig
from .errors import ConfigError, MultiSLError, NearSingularDenominator
from .forward import (
    eigen_residuals,
    eigenfunctions,
    green_identity_terms,
    locate_eigenvalues,
    norming_vectors,
    spectral_residue,
)
from .gl import SpectralData, asymptotic_reference, reconstruct
from .model import PotentialMatrix, SpectraSet, sign_normalize
from .oracle import oracle_eigenvalues
from .recovery import consistency_ratio, estimate_tail, recover_all, scheme_condition

# reports compare at most this many leading eigenvalues
CHECK_DEPTH = 20


@dataclass
class Outcome:
    report: dict
    passed: bool = True
    csv_rows: list | None = None
    csv_header: tuple = ()


def _solve_problem(cfg: ExperimentConfig, which: int):
    ps = cfg.problem
    rep = locate_eigenvalues(ps, which, cfg.n_max, report=True)
    vecs = norming_vectors(ps, which, rep.eigenvalues)
    resid = eigen_residuals(ps, which, rep.eigenvalues)
    return rep, vecs, resid


def forward_all(cfg: ExperimentConfig):
    """Eigenvalues, norming vectors and residuals of the base and all perturbed problems."""
    jobs = range(cfg.m + 1)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.workers, cfg.m + 1)) as pool:
            return list(pool.map(lambda w: _solve_problem(cfg, w), jobs))
    return [_solve_problem(cfg, w) for w in jobs]


def _spectra(results) -> SpectraSet:
    return SpectraSet(results[0][0].eigenvalues, tuple(r[0].eigenvalues for r in results[1:]))


def run_forward(cfg: ExperimentConfig) -> Outcome:
    results = forward_all(cfg)
    problems = []
    rows = []
    for which, (rep, vecs, resid) in enumerate(results):
        gam = np.stack([v.gamma for v in vecs])
        problems.append(
            {
                "which": which,
                "h": cfg.problem.left_h(which),
                "eigenvalues": rep.eigenvalues,
                "norming_vectors": gam,
                "channel_tags": np.argmax(np.abs(gam), axis=1),
                "residuals": resid,
                "weyl": {
                    "expected": rep.weyl_expected,
                    "found": rep.weyl_found,
                    "scan_points": rep.scan_points,
                    "brackets": rep.refinements,
                },
            }
        )
        if cfg.oracle:
            ref = oracle_eigenvalues(cfg.problem.potential, cfg.problem.left_h(which), cfg.problem.base.big_h,
                                     rep.eigenvalues.size, n_points=max(2000, cfg.problem.grid.n_points))
            rel = np.abs(rep.eigenvalues - ref) / np.maximum(np.abs(ref), 1e-300)
            problems[-1]["oracle"] = {"eigenvalues": ref, "relative_error": rel, "max_relative_error": rel.max()}
        rows += [(n + 1, which, lam) for n, lam in enumerate(rep.eigenvalues)]
    report = {"command": "forward", "m": cfg.m, "n_max": cfg.n_max, "problems": problems}
    return Outcome(report, True, rows, ("n", "problem", "lambda"))


def _gamma_errors(rec: np.ndarray, ref: np.ndarray) -> np.ndarray:
    rec = np.stack([sign_normalize(g) for g in rec])
    ref = np.stack([sign_normalize(g) for g in ref])
    return np.linalg.norm(rec - ref, axis=1) / np.linalg.norm(ref, axis=1)


def recover(cfg: ExperimentConfig, spectra: SpectraSet):
    perts = cfg.perturbations()
    tail = estimate_tail(spectra, cfg.problem.grid.a)
    return recover_all(spectra, perts, tail), tail


def _raise_first_failure(result) -> None:
    if result.failures:
        n = min(result.failures)
        info = result.failures[n]
        raise MultiSLError.from_dict(info, n=n)


def run_recover(cfg: ExperimentConfig) -> Outcome:
    cond = scheme_condition(cfg.perturbations())
    measured = cfg.measured_spectra()
    direct = None
    if measured is None:
        results = forward_all(cfg)
        spectra = _spectra(results)
        direct = np.stack([v.gamma for v in results[0][1]])
    else:
        spectra = measured
    result, tail = recover(cfg, spectra)
    _raise_first_failure(result)
    gam = result.gammas()
    report = {
        "command": "recover",
        "m": cfg.m,
        "n_max": spectra.truncation,
        "scheme": cfg.scheme,
        "pivot": cfg.pivot,
        "condition": cond,
        "tail_shifts": tail.shift_estimates,
        "eigenvalues": spectra.base_spectrum,
        "norming_vectors": gam,
    }
    passed = True
    rows = [(n + 1, *g) for n, g in enumerate(gam)]
    header = ("n", *[f"gamma_{k}" for k in range(cfg.m)])
    if direct is not None:
        err = _gamma_errors(gam, direct)
        depth = min(CHECK_DEPTH, err.size)
        worst = float(err[:depth].max())
        passed = worst <= cfg.tolerances["gamma_rel"]
        report["comparison"] = {
            "direct": direct,
            "relative_error": err,
            "max_relative_error": worst,
            "checked_depth": depth,
            "tolerance": cfg.tolerances["gamma_rel"],
            "passed": passed,
        }
        rows = [(n + 1, *g, e) for n, (g, e) in enumerate(zip(gam, err))]
        header = (*header, "relative_error")
    return Outcome(report, passed, rows, header)


def _reference(cfg: ExperimentConfig, lams, gammas) -> PotentialMatrix:
    ps = cfg.problem
    if cfg.reference == "zero":
        return PotentialMatrix.zero(ps.grid, cfg.m)
    return asymptotic_reference(lams, gammas, ps.grid, ps.base)


def _potential_errors(cfg: ExperimentConfig, recon: PotentialMatrix) -> dict:
    truth = cfg.problem.potential
    x = truth.grid.x
    a = truth.grid.a
    margin = 0.5 * (1.0 - cfg.tolerances["inner_fraction"]) * a
    inner = (x >= margin - 1e-12) & (x <= a - margin + 1e-12)
    diff = np.abs(recon.samples - truth.samples)
    l2 = np.sqrt(simpson(np.sum(diff**2, axis=(1, 2)), x=x))
    return {
        "sup_inner": float(diff[inner].max()),
        "sup_full": float(diff.max()),
        "l2": float(l2),
        "inner_interval": [float(margin), float(a - margin)],
    }


def _reconstruct(cfg: ExperimentConfig, lams, gammas) -> tuple:
    ref = _reference(cfg, lams, gammas)
    data = SpectralData(lams, gammas, ref, cfg.problem.base)
    return reconstruct(data), ref


def _recon_report(recon, ref) -> dict:
    return {
        "x": recon.potential.grid.x,
        "potential": recon.potential.samples,
        "reference_constant": ref.samples[0],
        "asymmetry": recon.asymmetry,
        "max_gl_residual": float(np.max(recon.residuals)) if recon.residuals.size else 0.0,
        "max_gl_condition": float(np.max(recon.conditions)),
        "boundary_shift": recon.boundary_shift,
    }


def _potential_rows(cfg: ExperimentConfig, pot: PotentialMatrix):
    m = cfg.m
    idx = [(p, q) for p in range(m) for q in range(p, m)]
    header = ("x", *[f"V_{p}{q}" for p, q in idx])
    rows = [(x, *[s[p, q] for p, q in idx]) for x, s in zip(pot.grid.x, pot.samples)]
    return rows, header


def run_reconstruct(cfg: ExperimentConfig) -> Outcome:
    data = cfg.data
    if "lams" in data or "gammas" in data:
        try:
            lams = np.asarray(data["lams"], dtype=float)
            gammas = np.asarray(data["gammas"], dtype=float).reshape(lams.size, cfg.m)
        except (KeyError, ValueError) as exc:
            raise ConfigError("data.lams and data.gammas must both be given with matching sizes",
                              field="data") from exc
        source = "config"
    else:
        scheme_condition(cfg.perturbations())
        spectra = cfg.measured_spectra() or _spectra(forward_all(cfg))
        result, _ = recover(cfg, spectra)
        _raise_first_failure(result)
        lams, gammas, source = spectra.base_spectrum, result.gammas(), "recovered"
    recon, ref = _reconstruct(cfg, lams, gammas)
    report = {"command": "reconstruct", "m": cfg.m, "n_max": int(lams.size), "source": source,
              **_recon_report(recon, ref)}
    if source == "recovered":
        report["errors"] = _potential_errors(cfg, recon.potential)
    rows, header = _potential_rows(cfg, recon.potential)
    return Outcome(report, True, rows, header)


def run_roundtrip(cfg: ExperimentConfig) -> Outcome:
    scheme_condition(cfg.perturbations())
    results = forward_all(cfg)
    spectra = _spectra(results)
    direct = np.stack([v.gamma for v in results[0][1]])
    result, tail = recover(cfg, spectra)
    _raise_first_failure(result)
    gam = result.gammas()
    err = _gamma_errors(gam, direct)
    depth = min(CHECK_DEPTH, err.size)
    recon, ref = _reconstruct(cfg, spectra.base_spectrum, gam)
    verr = _potential_errors(cfg, recon.potential)
    tol = cfg.tolerances
    checks = {
        "gamma": {"value": float(err[:depth].max()), "tolerance": tol["gamma_rel"]},
        "potential": {"value": verr["sup_inner"], "tolerance": tol["v_sup"]},
    }
    for c in checks.values():
        c["passed"] = bool(c["value"] <= c["tolerance"])
    passed = all(c["passed"] for c in checks.values())
    report = {
        "command": "roundtrip",
        "m": cfg.m,
        "n_max": cfg.n_max,
        "scheme": cfg.scheme,
        "checks": checks,
        "passed": passed,
        "gamma": {"recovered": gam, "direct": direct, "relative_error": err, "checked_depth": depth},
        "tail_shifts": tail.shift_estimates,
        "potential_errors": verr,
        "reconstruction": _recon_report(recon, ref),
    }
    rows = [(n + 1, lam, e) for n, (lam, e) in enumerate(zip(spectra.base_spectrum, err))]
    return Outcome(report, passed, rows, ("n", "lambda", "gamma_relative_error"))


# -- property suite -----------------------------------------------------------


def _property(name: str, values, tol: float, samples: list) -> dict:
    values = np.asarray(values, dtype=float)
    worst = float(values.max()) if values.size else 0.0
    return {"name": name, "passed": bool(worst <= tol), "max_residual": worst, "tolerance": tol, "samples": samples}


def _green_samples(cfg: ExperimentConfig, lams, gammas, rng):
    ps = cfg.problem
    m, n_avail = cfg.m, lams.size
    lo, hi = lams[0] - 2.0, lams[min(n_avail, CHECK_DEPTH) - 1] + 2.0
    gap = 1e-3 * (1.0 + np.abs(lams).max())
    out = []
    for k in range(cfg.verify_samples):
        n = int(rng.integers(1, min(n_avail, CHECK_DEPTH) + 1))
        i = int(rng.integers(1, m + 1))
        # the first sample exercises the zero-vector edge case
        v = np.zeros(m) if k == 0 else rng.standard_normal(m)
        while True:
            lam = float(rng.uniform(lo, hi))
            if np.abs(lams - lam).min() > gap:
                break
        try:
            t = green_identity_terms(ps, i, lam, float(lams[n - 1]), v, gammas[n - 1])
        except NearSingularDenominator:
            continue
        out.append({"n": n, "i": i, "lam": lam, "v": v, "residual": abs(t["lhs"] - t["rhs"]),
                    "boundary_term": t["boundary"],
                    "residual_with_boundary": abs(t["lhs"] - t["rhs"] + t["boundary"])})
    return out


def run_verify(cfg: ExperimentConfig) -> Outcome:
    ps = cfg.problem
    tol = cfg.tolerances
    rng = np.random.default_rng(cfg.seed)
    results = forward_all(cfg)
    spectra = _spectra(results)
    lams = spectra.base_spectrum
    vecs = results[0][1]
    gammas = np.stack([v.gamma for v in vecs])
    depth = min(CHECK_DEPTH, lams.size)
    props = []

    green = _green_samples(cfg, lams, gammas, rng)
    props.append(_property("green_identity", [s["residual"] for s in green], tol["green"], green))

    residues = []
    for n in range(1, depth + 1):
        for i in range(1, cfg.m + 1):
            expected = -float(gammas[n - 1] @ ps.difference(i) @ gammas[n - 1])
            try:
                got = spectral_residue(ps, i, float(lams[n - 1]), gammas[n - 1])
                rel = abs(got - expected) / max(abs(expected), 1e-300)
            except MultiSLError as exc:
                got, rel = None, np.inf
                residues.append({"n": n, "i": i, "error": exc.to_dict()})
                continue
            residues.append({"n": n, "i": i, "limit": got, "expected": expected, "relative_error": rel})
    props.append(_property("spectral_residue", [r.get("relative_error", np.inf) for r in residues],
                           tol["residue_rel"], residues))

    tail = estimate_tail(spectra, ps.grid.a)
    ratios = []
    for n in range(1, depth + 1):
        for i in range(1, cfg.m + 1):
            r = consistency_ratio(spectra, tail, n, i, ps.difference(i), gammas[n - 1])
            ratios.append({"n": n, "i": i, "ratio": r, "deviation": abs(r - 1.0)})
    props.append(_property("product_ratio", [r["deviation"] for r in ratios], tol["ratio"], ratios))

    y = eigenfunctions(ps, 0, vecs[:depth])
    gram = simpson(np.einsum("axk,bxk->abx", y, y), x=ps.grid.x, axis=-1)
    dev = np.abs(gram - np.eye(depth))
    props.append(_property("orthonormality", [dev.max()], tol["orthonormality"],
                           [{"max_offdiagonal": float((dev - np.diag(np.diagonal(dev))).max()),
                             "max_diagonal": float(np.diagonal(dev).max())}]))

    passed = all(p["passed"] for p in props)
    report = {"command": "verify", "m": cfg.m, "n_max": cfg.n_max, "seed": cfg.seed,
              "passed": passed, "properties": props}
    rows = [(s["n"], s["i"], s["lam"], s["residual"], s["residual_with_boundary"]) for s in green]
    return Outcome(report, passed, rows, ("n", "i", "lambda", "residual", "residual_with_boundary"))


COMMANDS = {
    "forward": run_forward,
    "recover": run_recover,
    "reconstruct": run_reconstruct,
    "roundtrip": run_roundtrip,
    "verify": run_verify,
}
