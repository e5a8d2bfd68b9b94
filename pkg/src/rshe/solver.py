"""Time stepping for the rearranged stochastic heat equation.

One mesh step is an exact mild-solution update of the linear SPDE on the
retained cosine modes (Galerkin truncation at K < M) followed by monotone
rearrangement, exactly the splitting scheme the equation's construction is
built on: between mesh points the drift is frozen at the left endpoint and
every coefficient evolves as an exact Ornstein-Uhlenbeck step; at the mesh
point the synthesized field is sorted back into the quantile cone.  The
deterministic transport variant (no Laplacian, no noise) is the Brenier
scheme used for the no-common-noise benchmark.
"""

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels, rng
from .errors import DomainError, GridMismatchError
from .quantile import (
    GridFunction,
    QuantileField,
    batch_grad_norm_sq,
    batch_l2_norm_sq,
    rearrange,
)
from .spectral import NoiseModel, analysis_matrix, basis_matrix, ou_response

__all__ = [
    "StepOperator",
    "make_step_operator",
    "RsheStepRecord",
    "PathBundle",
    "rshe_step",
    "deterministic_step",
    "simulate",
    "simulate_driftless",
    "semigroup_apply",
    "reflection_orthogonality",
]

_DEBUG_MONOTONE = bool(os.environ.get("RSHE_DEBUG"))


@dataclass(frozen=True)
class StepOperator:
    """Precomputed one-step response on a fixed (M, K, h, noise) quadruple."""

    m: int
    num_modes: int
    h: float
    synth: np.ndarray  # (K+1, M)
    anal: np.ndarray  # (M, K+1)
    decay: np.ndarray
    gain: np.ndarray
    noise_std: np.ndarray


@lru_cache(maxsize=64)
def _operator_cached(m, num_modes, h, lam, amplitude):
    synth = basis_matrix(num_modes, m)
    anal = analysis_matrix(num_modes, m)
    decay, gain, noise_std = ou_response(num_modes, h, lam, amplitude)
    for arr in (decay, gain, noise_std):
        arr.flags.writeable = False
    return StepOperator(m, num_modes, float(h), synth, anal, decay, gain, noise_std)


def make_step_operator(m, noise, h):
    if h <= 0:
        raise DomainError("step size must be positive")
    return _operator_cached(int(m), noise.num_modes, float(h), noise.lam, noise.amplitude)


@dataclass(frozen=True)
class RsheStepRecord:
    """One splitting step: mild-solution field, its rearrangement, and the
    discrete reflection increment (post - pre)."""

    pre_rearrange: GridFunction
    post_rearrange: QuantileField
    reflection_increment: np.ndarray
    time: float

    def __post_init__(self):
        pre, post = self.pre_rearrange.values, self.post_rearrange.values
        if not np.array_equal(np.sort(pre), post):
            raise DomainError("post state is not the rearrangement of pre state")
        object.__setattr__(self, "reflection_increment", post - pre)


@dataclass
class PathBundle:
    """Monte Carlo ensemble of quantile-field trajectories under one drift.

    ``states`` has shape (n_paths, n_stored, M) with ``times`` the stored
    mesh points; ``reflection`` carries the per-path accumulated pairing
    of the state with the reflection increments (a discrete surrogate of
    the reflection-orthogonality condition).
    """

    times: np.ndarray
    states: np.ndarray
    path_ids: np.ndarray
    seed: int
    noise: NoiseModel
    h: float
    t0: float = 0.0
    reflection: np.ndarray = None
    records: list = field(default_factory=list)
    drift: object = None

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def grid_size(self):
        return self.states.shape[2]

    def final_states(self):
        return self.states[:, -1, :]

    def state(self, path, time_index):
        return QuantileField(self.states[path, time_index])

    def energy(self):
        """Per-time ensemble of the Dirichlet energy, shape (N, n_stored)."""
        return batch_grad_norm_sq(self.states)

    def norm_sq(self):
        return batch_l2_norm_sq(self.states)

    def dump(self, directory):
        """Persist: JSON manifest + per-path binary (row-major M x n_stored)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "grid_size": int(self.grid_size),
            "num_modes": int(self.noise.num_modes),
            "lambda": self.noise.lam,
            "amplitude": self.noise.amplitude,
            "seed": int(self.seed),
            "h": self.h,
            "t0": self.t0,
            "times": self.times.tolist(),
            "n_paths": int(self.n_paths),
            "path_ids": self.path_ids.tolist(),
        }
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        with open(directory / "states.bin", "wb") as fh:
            for p in range(self.n_paths):
                fh.write(np.ascontiguousarray(self.states[p].T).tobytes())
        if self.reflection is not None:
            np.savetxt(directory / "reflection.csv", self.reflection, fmt="%.17g")

    @staticmethod
    def load(directory):
        directory = Path(directory)
        with open(directory / "manifest.json") as fh:
            man = json.load(fh)
        times = np.asarray(man["times"])
        m, n, n_stored = man["grid_size"], man["n_paths"], len(man["times"])
        raw = np.fromfile(directory / "states.bin", dtype=np.float64)
        states = raw.reshape(n, m, n_stored).transpose(0, 2, 1).copy()
        refl_path = directory / "reflection.csv"
        reflection = np.loadtxt(refl_path) if refl_path.exists() else None
        noise = NoiseModel(man["lambda"], man["num_modes"], man["seed"], man["amplitude"])
        return PathBundle(
            times=times,
            states=states,
            path_ids=np.asarray(man["path_ids"], dtype=np.uint64),
            seed=man["seed"],
            noise=noise,
            h=man["h"],
            t0=man["t0"],
            reflection=np.atleast_1d(reflection) if reflection is not None else None,
        )


def rshe_step(x, drift_section, h, noise, stream):
    """One splitting step of a single state, via the spectral operations.

    The mild solution on the retained modes (exact OU step against the
    drift section frozen over the step) is synthesized on the grid and
    sorted; the record carries both fields and their difference.
    """
    from .spectral import from_spectral, ou_step, to_spectral

    m = x.grid_size
    k = noise.num_modes
    if k >= m:
        raise GridMismatchError(f"mode cut-off K={k} needs K < M={m}")
    if drift_section is not None and drift_section.values.size != m:
        raise GridMismatchError("drift section grid does not match the state")
    a = to_spectral(x.values, k)
    if drift_section is None:
        v = np.zeros(k + 1)
    else:
        v = -to_spectral(drift_section.values, k).coeffs
    t = stream.step_index * h
    a_new = ou_step(a, v, h, stream)
    pre = from_spectral(a_new, m)
    post = rearrange(pre)
    return RsheStepRecord(pre, post, None, t)


def deterministic_step(x, drift_section, h):
    """Brenier transport step: rearrange(x - h * drift)."""
    if h <= 0:
        raise DomainError("step size must be positive")
    v = x.values if isinstance(x, QuantileField) else np.asarray(x)
    if drift_section is None:
        return rearrange(v)
    d = drift_section.values if isinstance(drift_section, GridFunction) else np.asarray(drift_section)
    return rearrange(v - h * d)


def _mesh_steps(T, h):
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-12 * max(1.0, abs(T)):
        raise DomainError(f"step {h} does not divide horizon {T}")
    return n


def _drift_sections(drift, t, states):
    if drift is None:
        return None
    return drift.sections(t, states)


def simulate(
    x0,
    drift,
    T,
    h,
    n_paths,
    noise,
    *,
    t0=0.0,
    seed=None,
    path_id_base=0,
    store="full",
    snapshot_times=None,
    record_steps=False,
    deterministic=False,
):
    """Simulate an ensemble of trajectories from a common initial state.

    x0        : QuantileField (or vector) at time t0
    drift     : DriftField-like with ``sections(t, states)``, or None
    store     : "full" (every mesh point), "last", or "snapshots" (requires
                ``snapshot_times`` on the mesh; t0 and T are always stored)
    deterministic : use the Brenier transport step (no Laplacian, no noise)

    Trajectories are driven by counter-keyed streams: path p consumes draws
    keyed by (seed, path_id_base + p, mode, absolute step index), so results
    are independent of batching, storage mode and scheduling.
    """
    v0 = x0.values if isinstance(x0, QuantileField) else np.asarray(x0, dtype=np.float64)
    m = v0.size
    n_steps = _mesh_steps(T - t0, h)
    step0 = int(round(t0 / h))
    if abs(step0 * h - t0) > 1e-12 * max(1.0, abs(t0)):
        raise DomainError("t0 must lie on the mesh")
    seed = noise.seed if seed is None else seed
    op = make_step_operator(m, noise, h)
    path_ids = np.arange(path_id_base, path_id_base + n_paths, dtype=np.uint64)

    times_all = t0 + h * np.arange(n_steps + 1)
    if store == "full":
        keep = np.arange(1, n_steps + 1)
    elif store == "last":
        keep = np.array([n_steps])
    elif store == "snapshots":
        snap = np.unique(np.asarray(snapshot_times, dtype=np.float64))
        idx = np.round((snap - t0) / h).astype(np.int64)
        if np.any(np.abs(t0 + idx * h - snap) > 1e-9):
            raise DomainError("snapshot times must lie on the mesh")
        keep = np.unique(idx[idx >= 1])
        if keep.size == 0 or keep[-1] != n_steps:
            keep = np.append(keep, n_steps)
    else:
        raise DomainError(f"unknown store mode {store!r}")

    states = np.tile(v0, (n_paths, 1))
    base = rng.mode_base(seed, path_ids, noise.num_modes + 1)
    records = []
    driftless = drift is None or getattr(drift, "is_zero", False)

    if driftless and not deterministic and not record_steps and not _DEBUG_MONOTONE:
        final, snaps, reflection = kernels.run_driftless(
            states, op.synth, op.anal, op.decay, op.noise_std, base, step0, n_steps, keep
        )
        stored = snaps
    else:
        stored = np.empty((keep.size, n_paths, m))
        reflection = np.zeros(n_paths)
        j = 0
        for s in range(n_steps):
            t = t0 + s * h
            dsec = None if driftless else _drift_sections(drift, t, states)
            if deterministic:
                pre = states if dsec is None else states - h * dsec
                post = np.sort(pre, axis=1, kind="stable")
            else:
                pre, post = kernels.step_batch(
                    states, dsec, op.synth, op.anal, op.decay, op.gain, op.noise_std,
                    base, step0 + s,
                )
            reflection += np.einsum("ij,ij->i", post, post - pre) / m
            if _DEBUG_MONOTONE and np.any(np.diff(post, axis=1) < 0):
                raise DomainError(f"monotonicity violated at step {s}")
            if record_steps:
                for p in range(n_paths):
                    records.append(
                        RsheStepRecord(GridFunction(pre[p]), QuantileField(post[p]), None, t + h)
                    )
            states = post
            if j < keep.size and keep[j] == s + 1:
                stored[j] = states
                j += 1

    all_states = np.concatenate([np.tile(v0, (1, n_paths, 1)), stored], axis=0)
    times = np.concatenate(([t0], times_all[keep]))
    return PathBundle(
        times=times,
        states=np.ascontiguousarray(all_states.transpose(1, 0, 2)),
        path_ids=path_ids,
        seed=int(seed),
        noise=noise,
        h=float(h),
        t0=float(t0),
        reflection=reflection,
        records=records,
        drift=drift,
    )


def simulate_driftless(x0, T, h, n_paths, noise, **kwargs):
    """Ensemble of the driftless dynamics (zero forcing field)."""
    return simulate(x0, None, T, h, n_paths, noise, **kwargs)


def semigroup_apply(phi, t, mu, n_paths, noise, *, m, h, seed=None):
    """Monte Carlo action of the driftless semigroup on a functional.

    Returns (estimate, standard error) of E[phi(law of X_t)] started from
    the measure ``mu``; at t = 0 the value is phi(mu) exactly.
    """
    from .quantile import DiscreteMeasure, quantile_from_measure

    q0 = quantile_from_measure(mu, m) if isinstance(mu, DiscreteMeasure) else mu
    if t < 0:
        raise DomainError("time must be >= 0")
    if t == 0:
        return float(phi(q0)), 0.0
    bundle = simulate_driftless(q0, t, h, n_paths, noise, store="last", seed=seed)
    vals = np.array([phi(QuantileField(s)) for s in bundle.final_states()])
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0


def reflection_orthogonality(source):
    """Ensemble average of the accumulated <post, d eta> pairing.

    Accepts a PathBundle (uses the per-path accumulator) or an iterable of
    RsheStepRecords (sums the single-step pairings).
    """
    if isinstance(source, PathBundle):
        if source.reflection is None:
            raise DomainError("bundle carries no reflection accumulator")
        return float(source.reflection.mean())
    records = list(source)
    if not records:
        raise DomainError("no records given")
    total = 0.0
    for rec in records:
        post = rec.post_rearrange.values
        total += float(post @ rec.reflection_increment) / post.size
    return total
