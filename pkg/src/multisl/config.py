"""Experiment configuration: JSON parsing, validation and built-in examples.

Schema (all keys except ``problem.potential.preset`` are optional)::

    {
      "problem": {
        "grid": {"a": 3.14159..., "n_points": 2001},
        "potential": {"preset": "coupled-sine", "m": 2, "thresholds": [0, 0.5], "c": 0.3},
        "h": [[0, 0], [0, 0]],
        "H": [[0, 0], [0, 0]],
        "perturbations": {"scheme": "jacobi", "pivot": 0, "epsilon": 1e-5,
                          "matrices": [[[1, 0], [0, 0]], ...]}
      },
      "data": {"spectra": [[...], ...], "lams": [...], "gammas": [[...], ...]},
      "run": {"n_max": 20, "workers": null, "csv": true, "reference": "asymptotic",
              "tolerances": {...}, "verify_samples": 100, "oracle": false},
      "seed": 0
    }

``perturbations.matrices`` lists ``h_i - h`` and overrides the generated
defaults.  ``data`` supplies measured spectra (for ``recover``) or spectral
data (for ``reconstruct``) instead of computing them from the potential.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, MultiSLError
from .model import BoundarySpec, Grid, ProblemSet, SpectraSet, check_symmetric, classify_perturbation
from .presets import DEFAULT_EPSILON, default_perturbations, make_potential

DEFAULT_TOLERANCES = {
    "gamma_rel": 0.02,  # max relative error of recovered norming vectors
    "v_sup": 0.05,  # sup error of the reconstructed potential on the inner region
    "inner_fraction": 0.9,
    "green": 1e-6,
    "residue_rel": 1e-2,
    "ratio": 0.01,  # |ratio - 1| bound
    "orthonormality": 1e-6,
}

_TOP_KEYS = {"problem", "data", "run", "seed"}
_RUN_KEYS = {"n_max", "workers", "csv", "reference", "tolerances", "verify_samples", "out", "oracle"}


@dataclass
class ExperimentConfig:
    problem: ProblemSet
    scheme: str
    pivot: int
    n_max: int = 20
    workers: int = 1
    csv: bool = True
    reference: str = "asymptotic"
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    verify_samples: int = 100
    oracle: bool = False  # forward: also dump finite-difference eigenvalues
    seed: int = 0
    data: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.problem.m

    def perturbations(self):
        return [classify_perturbation(self.problem.difference(i), self.scheme, self.pivot)
                for i in range(1, self.m + 1)]

    def measured_spectra(self) -> SpectraSet | None:
        spec = self.data.get("spectra")
        if spec is None:
            return None
        if len(spec) != self.m + 1:
            raise ConfigError(f"data.spectra needs {self.m + 1} lists, got {len(spec)}", field="data.spectra")
        return SpectraSet(np.asarray(spec[0], dtype=float), tuple(np.asarray(s, dtype=float) for s in spec[1:]))


def _get(d: dict, key: str, path: str, default=None, required: bool = False):
    if not isinstance(d, dict):
        raise ConfigError(f"{path} must be an object", field=path)
    if key not in d:
        if required:
            raise ConfigError(f"missing required field {path}.{key}", field=f"{path}.{key}")
        return default
    return d[key]


def _matrix(value, m: int, path: str) -> np.ndarray:
    try:
        mat = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not a numeric matrix", field=path) from exc
    if mat.ndim == 0 and m == 1:
        mat = mat.reshape(1, 1)
    if mat.shape != (m, m):
        raise DimensionError(f"{path} has shape {mat.shape}, expected ({m}, {m})", field=path)
    try:
        return check_symmetric(mat, path)
    except MultiSLError as exc:
        exc.context.setdefault("field", path)
        raise


def _int(value, path: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value or value < minimum:
        raise ConfigError(f"{path} must be an integer >= {minimum}, got {value!r}", field=path)
    return int(value)


def parse_config(raw: dict, n_max: int | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate a config dictionary and build the problem set."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object", field="$")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown top-level field {key!r}", field=key)
    prob = _get(raw, "problem", "$", required=True)
    grid_d = _get(prob, "grid", "problem", default={})
    a = float(_get(grid_d, "a", "problem.grid", default=np.pi))
    n_points = _int(_get(grid_d, "n_points", "problem.grid", default=2001), "problem.grid.n_points", 3)
    try:
        grid = Grid(a, n_points)
    except MultiSLError as exc:
        exc.context.setdefault("field", "problem.grid")
        raise

    pot_d = dict(_get(prob, "potential", "problem", required=True))
    preset = _get(pot_d, "preset", "problem.potential", required=True)
    pot_d.pop("preset")
    m = _int(pot_d.pop("m", 1), "problem.potential.m", 1)
    thresholds = pot_d.pop("thresholds", None)
    if thresholds is not None and preset != "table" and len(thresholds) != m:
        raise DimensionError(f"expected {m} thresholds, got {len(thresholds)}", field="problem.potential.thresholds")
    pot = make_potential(grid, preset, m=m, thresholds=thresholds, **pot_d)
    m = pot.m

    h = _matrix(_get(prob, "h", "problem", default=np.zeros((m, m))), m, "problem.h")
    big_h = _matrix(_get(prob, "H", "problem", default=np.zeros((m, m))), m, "problem.H")

    pert_d = _get(prob, "perturbations", "problem", default={})
    scheme = _get(pert_d, "scheme", "problem.perturbations", default="jacobi")
    pivot = _int(_get(pert_d, "pivot", "problem.perturbations", default=0), "problem.perturbations.pivot", 0)
    if pivot >= m:
        raise ConfigError(f"pivot {pivot} outside 0..{m - 1}", field="problem.perturbations.pivot")
    if scheme not in ("jacobi", "cross"):
        raise ConfigError(f"unknown scheme {scheme!r}", field="problem.perturbations.scheme")
    mats = _get(pert_d, "matrices", "problem.perturbations")
    if mats is None:
        eps = float(_get(pert_d, "epsilon", "problem.perturbations", default=DEFAULT_EPSILON))
        xis = default_perturbations(m, scheme, pivot, eps)
    else:
        if len(mats) != m:
            raise DimensionError(f"need {m} perturbation matrices, got {len(mats)}",
                                 field="problem.perturbations.matrices")
        xis = [_matrix(x, m, f"problem.perturbations.matrices[{k}]") for k, x in enumerate(mats)]
    for k, xi in enumerate(xis):
        try:
            classify_perturbation(xi, scheme, pivot)
        except MultiSLError as exc:
            exc.context.setdefault("field", f"problem.perturbations.matrices[{k}]")
            raise
    ps = ProblemSet(pot, BoundarySpec(h, big_h), tuple(h + xi for xi in xis))

    run = _get(raw, "run", "$", default={})
    unknown = set(run) - _RUN_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown run field {key!r}", field=f"run.{key}")
    n = _int(n_max if n_max is not None else run.get("n_max", 20), "run.n_max", 1)
    workers = run.get("workers")
    workers = (os.cpu_count() or 1) if workers is None else _int(workers, "run.workers", 1)
    tols = dict(DEFAULT_TOLERANCES)
    extra = run.get("tolerances", {})
    bad = set(extra) - set(DEFAULT_TOLERANCES)
    if bad:
        key = sorted(bad)[0]
        raise ConfigError(f"unknown tolerance {key!r}", field=f"run.tolerances.{key}")
    tols.update({k: float(v) for k, v in extra.items()})
    reference = run.get("reference", "asymptotic")
    if reference not in ("asymptotic", "zero"):
        raise ConfigError(f"reference must be 'asymptotic' or 'zero', got {reference!r}", field="run.reference")
    s = _int(seed if seed is not None else raw.get("seed", 0), "seed", 0)
    return ExperimentConfig(
        problem=ps,
        scheme=scheme,
        pivot=pivot,
        n_max=n,
        workers=workers,
        csv=bool(run.get("csv", True)),
        reference=reference,
        tolerances=tols,
        verify_samples=_int(run.get("verify_samples", 100), "run.verify_samples", 0),
        oracle=bool(run.get("oracle", False)),
        seed=s,
        data=dict(raw.get("data") or {}),
        raw=raw,
    )


def _coupled(preset: str, **extra) -> dict:
    return {
        "problem": {
            "grid": {"a": np.pi, "n_points": 2001},
            "potential": {"preset": preset, "m": 2, "thresholds": [0.0, 0.5], **extra},
            "perturbations": {"scheme": "jacobi", "pivot": 0, "epsilon": DEFAULT_EPSILON},
        },
        "run": {"n_max": 20},
        "seed": 0,
    }


BUILTIN_CONFIGS = {
    "free": {
        "problem": {
            "grid": {"a": np.pi, "n_points": 2001},
            "potential": {"preset": "free", "m": 1},
            "perturbations": {"scheme": "jacobi"},
        },
        "run": {"n_max": 20, "tolerances": {"gamma_rel": 0.01, "v_sup": 0.01}},
        "seed": 0,
    },
    "decoupled": _coupled("decoupled"),
    "coupled-sine": _coupled("coupled-sine", c=0.3),
    "coupled-gauss": _coupled("coupled-gauss", c=0.3, width=0.4),
    "degenerate": {
        "problem": {
            "grid": {"a": np.pi, "n_points": 2001},
            "potential": {"preset": "decoupled", "m": 2, "thresholds": [0.0, 0.0]},
            "perturbations": {"scheme": "jacobi", "pivot": 0},
        },
        "run": {"n_max": 10},
        "seed": 0,
    },
}


def load_config(source, n_max: int | None = None, seed: int | None = None) -> ExperimentConfig:
    """Load a config from a dict, a JSON file path, or the name of a built-in example."""
    if isinstance(source, dict):
        return parse_config(source, n_max, seed)
    path = Path(source)
    if not path.exists() and str(source) in BUILTIN_CONFIGS:
        return parse_config(json.loads(json.dumps(BUILTIN_CONFIGS[str(source)])), n_max, seed)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc.strerror}", field="--config") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          line=exc.lineno, column=exc.colno) from exc
    return parse_config(raw, n_max, seed)
