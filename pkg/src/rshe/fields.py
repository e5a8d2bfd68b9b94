"""Drift fields V(t, x, mu): evaluator contract and realizations.

A field maps a time and a measure to a monotone bounded section on the
grid.  Two realizations matter in practice: analytic closures (tests,
benchmarks) and tabulated scenario libraries produced by the fixed-point
solver, interpolated between library measures by k-nearest-neighbour
inverse-distance weights in the quantile (= Wasserstein) metric, followed
by rearrangement to restore monotonicity.

The batch contract is ``sections(t, states)`` with ``states`` an (N, M)
array of quantile vectors (each row both identifies the measure and fixes
the grid); ``section(t, mu, m)`` is the single-measure wrapper.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, GridMismatchError
from .quantile import DiscreteMeasure, GridFunction, QuantileField, quantile_from_measure

__all__ = [
    "DriftField",
    "ZeroDriftField",
    "AnalyticDriftField",
    "TerminalCostDrift",
    "TabulatedDriftField",
    "StitchedDriftField",
    "save_field_dir",
    "load_field_dir",
]


def _as_state_batch(mu, m):
    if isinstance(mu, DiscreteMeasure):
        return quantile_from_measure(mu, m).values[None, :]
    if isinstance(mu, QuantileField):
        return mu.values[None, :]
    arr = np.asarray(mu, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


class DriftField:
    """Evaluator contract; subclasses fill in ``sections``."""

    kind = "analytic"
    is_zero = False
    sup_bound = None
    lip_const = None

    def sections(self, t, states):
        raise NotImplementedError

    def section(self, t, mu, m=None):
        batch = _as_state_batch(mu, m)
        return GridFunction(self.sections(t, batch)[0])


class ZeroDriftField(DriftField):
    is_zero = True
    sup_bound = 0.0
    lip_const = 0.0

    def sections(self, t, states):
        return np.zeros_like(states)


class AnalyticDriftField(DriftField):
    """Closure field: fn(t, states) -> sections, with declared constants."""

    def __init__(self, fn, sup_bound=None, lip_const=None, name="analytic"):
        self._fn = fn
        self.sup_bound = sup_bound
        self.lip_const = lip_const
        self.name = name

    def sections(self, t, states):
        return self._fn(t, np.asarray(states, dtype=np.float64))


class TerminalCostDrift(DriftField):
    """The terminal-cost bootstrap: section(t, mu) = dx g(F_mu^{-1}(x), mu).

    Time-independent; monotone and bounded by construction, Lipschitz in
    the measure with constant <= 2 * lip(g).  Used to seed Picard
    iterations and as the exact field value at the terminal time.
    """

    def __init__(self, model):
        self.model = model
        self.sup_bound = model.bound_const
        self.lip_const = 2.0 * model.lip_const

    def sections(self, t, states):
        states = np.asarray(states, dtype=np.float64)
        return self.model.dxg_sections(states, states.mean(axis=1))


class TabulatedDriftField(DriftField):
    """Per-time-node scenario libraries with kNN metric interpolation.

    ``times`` are the tabulated mesh nodes; node n holds library matrices
    (Q_n, U_n) of shape (R, M): scenario quantile vectors and the field
    sections evaluated there.  A query at time t uses the library of the
    nearest node at or left of t (drift is frozen at the left mesh point);
    an exact library hit reproduces the stored section.
    """

    kind = "tabulated"

    def __init__(self, times, libraries, knn=3, eps=1e-12, sup_bound=None, lip_const=None):
        self.times = np.asarray(times, dtype=np.float64)
        if self.times.ndim != 1 or self.times.size != len(libraries):
            raise DomainError("one library per tabulated time node required")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("tabulated times must be strictly increasing")
        self.libraries = [
            (np.ascontiguousarray(q, dtype=np.float64), np.ascontiguousarray(u, dtype=np.float64))
            for q, u in libraries
        ]
        for q, u in self.libraries:
            if q.shape != u.shape or q.ndim != 2:
                raise DomainError("library matrices must share shape (R, M)")
        self.knn = int(knn)
        self.eps = float(eps)
        self.sup_bound = sup_bound if sup_bound is not None else max(
            float(np.abs(u).max()) for _, u in self.libraries
        )
        self.lip_const = lip_const

    @property
    def grid_size(self):
        return self.libraries[0][0].shape[1]

    def node_index(self, t):
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        return min(max(idx, 0), self.times.size - 1)

    def sections(self, t, states):
        states = np.asarray(states, dtype=np.float64)
        q, u = self.libraries[self.node_index(t)]
        if states.shape[1] != q.shape[1]:
            raise GridMismatchError("query grid does not match the tabulated grid")
        diff = states[:, None, :] - q[None, :, :]
        d = np.sqrt(np.einsum("nrm,nrm->nr", diff, diff) / q.shape[1])
        k = min(self.knn, q.shape[0])
        idx = np.argpartition(d, k - 1, axis=1)[:, :k]
        dk = np.take_along_axis(d, idx, axis=1)
        w = 1.0 / (dk + self.eps)
        w /= w.sum(axis=1, keepdims=True)
        secs = np.einsum("nk,nkm->nm", w, u[idx])
        return np.sort(secs, axis=1, kind="stable")


class StitchedDriftField(DriftField):
    """Routes queries to sub-fields by time: pieces are (t_lo, field) with
    field f_i active on [t_lo_i, t_lo_{i+1})."""

    kind = "stitched"

    def __init__(self, pieces):
        if not pieces:
            raise DomainError("need at least one piece")
        self.pieces = sorted(pieces, key=lambda p: p[0])
        self.sup_bound = max(
            (p[1].sup_bound for p in self.pieces if p[1].sup_bound is not None), default=None
        )

    def sections(self, t, states):
        lows = [p[0] for p in self.pieces]
        idx = int(np.searchsorted(lows, t + 1e-12, side="right") - 1)
        idx = min(max(idx, 0), len(self.pieces) - 1)
        return self.pieces[idx][1].sections(t, states)


def save_field_dir(field, directory, extra_manifest=None):
    """Persist a tabulated field: JSON manifest + one CSV table per node."""
    if not isinstance(field, TabulatedDriftField):
        raise DomainError("only tabulated fields are persisted")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "times": field.times.tolist(),
        "knn": field.knn,
        "eps": field.eps,
        "sup_bound": field.sup_bound,
        "lip_const": field.lip_const,
        "grid_size": field.grid_size,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    m = field.grid_size
    header = [f"q{i}" for i in range(m)] + [f"u{i}" for i in range(m)]
    for n, (q, u) in enumerate(field.libraries):
        with open(directory / f"node_{n:05d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in range(q.shape[0]):
                writer.writerow(
                    [repr(v) for v in q[r]] + [repr(v) for v in u[r]]
                )


def load_field_dir(directory):
    """Reload a persisted tabulated field (with its manifest)."""
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    times = manifest["times"]
    m = manifest["grid_size"]
    libraries = []
    for n in range(len(times)):
        rows = np.loadtxt(directory / f"node_{n:05d}.csv", delimiter=",", skiprows=1, ndmin=2)
        libraries.append((rows[:, :m], rows[:, m:]))
    field = TabulatedDriftField(
        times,
        libraries,
        knn=manifest["knn"],
        eps=manifest["eps"],
        sup_bound=manifest["sup_bound"],
        lip_const=manifest["lip_const"],
    )
    return field, manifest
