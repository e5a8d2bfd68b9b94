"""Discrete quantile fields on the half-torus.

States live on the mid-point grid x_i = (i + 1/2)/(2M), i = 0..M-1, covering
[0, 1/2]; the symmetric extension to [-1/2, 0] is implicit.  A quantile field
is a non-decreasing sample vector and represents a probability measure on the
real line through the generalized inverse CDF; the squared L2 distance between
two quantile fields is the squared 2-Wasserstein distance between the measures
they represent.

All containers are immutable after construction and all operations are pure.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridMismatchError

__all__ = [
    "QuantileField",
    "GridFunction",
    "DiscreteMeasure",
    "grid_nodes",
    "rearrange",
    "quantile_from_measure",
    "measure_from_quantile",
    "w2_distance",
    "cdf_eval",
    "grad_norm_sq",
    "l2_norm",
]

_MONOTONE_SLACK = 0.0  # exact monotonicity; sorting produces it exactly


def _freeze(values):
    v = np.ascontiguousarray(values, dtype=np.float64)
    v.flags.writeable = False
    return v


def grid_nodes(m):
    """Mid-point nodes (i + 1/2)/(2M) on [0, 1/2]."""
    return (np.arange(m) + 0.5) / (2.0 * m)


@dataclass(frozen=True)
class GridFunction:
    """Samples of a symmetric (not necessarily monotone) field on the grid."""

    values: np.ndarray

    def __post_init__(self):
        v = _freeze(self.values)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("grid function must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self):
        return self.values.size


@dataclass(frozen=True)
class QuantileField:
    """Non-decreasing grid samples: a discrete element of the quantile cone."""

    values: np.ndarray

    def __post_init__(self):
        v = _freeze(self.values)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("quantile field must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise DomainError("quantile field has non-finite entries")
        if v.size > 1 and np.any(np.diff(v) < -_MONOTONE_SLACK):
            raise DomainError("quantile field must be non-decreasing")
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self):
        return self.values.size


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on the line."""

    locations: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        loc = _freeze(self.locations)
        if self.weights is None:
            w = np.full(loc.size, 1.0 / loc.size)
        else:
            w = np.asarray(self.weights, dtype=np.float64)
        w = _freeze(w)
        if loc.ndim != 1 or loc.size == 0 or w.shape != loc.shape:
            raise DomainError("measure needs matching location/weight vectors")
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(w))):
            raise DomainError("measure has non-finite entries")
        if np.any(w <= 0.0):
            raise DomainError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must sum to 1 within 1e-12")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def atoms(self):
        return list(zip(self.locations.tolist(), self.weights.tolist()))

    def mean(self):
        return float(self.locations @ self.weights)

    def second_moment(self):
        return float((self.locations**2) @ self.weights)


def rearrange(g):
    """Monotone rearrangement: the ascending sort of the samples.

    Equimeasurable with the input (same multiset of values), hence exactly
    norm-preserving, and 1-Lipschitz as a map of L2.
    """
    v = g.values if isinstance(g, (GridFunction, QuantileField)) else np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DomainError("cannot rearrange non-finite values")
    return QuantileField(np.sort(v))


def quantile_from_measure(mu, m):
    """Sample the generalized inverse CDF of ``mu`` at p_i = (i + 1/2)/M.

    F^{-1}(p) = inf{t : F(t) >= p} evaluated at the mid-points of the M
    probability cells, which is the grid representative of ``mu``.
    """
    if m < 1:
        raise DomainError("grid size must be >= 1")
    order = np.argsort(mu.locations, kind="stable")
    loc = mu.locations[order]
    cum = np.cumsum(mu.weights[order])
    p = (np.arange(m) + 0.5) / m
    idx = np.searchsorted(cum, p, side="left")
    idx = np.minimum(idx, loc.size - 1)  # guard the p ~ 1 float edge
    return QuantileField(loc[idx])


def measure_from_quantile(q):
    """Push the grid Lebesgue measure through the field: atoms of mass 1/M.

    Equal values merge into a single atom; equality is exact, since ties only
    arise from rearrangement, which copies values.
    """
    v = q.values
    m = v.size
    boundaries = np.flatnonzero(np.diff(v) != 0.0)
    starts = np.concatenate(([0], boundaries + 1))
    ends = np.concatenate((boundaries + 1, [m]))
    return DiscreteMeasure(v[starts], (ends - starts) / m)


def w2_distance(q1, q2):
    """Discrete L2 distance between quantile fields = W2 between measures."""
    a, b = q1.values, q2.values
    if a.size != b.size:
        raise GridMismatchError(f"grid sizes differ: {a.size} vs {b.size}")
    d = a - b
    return float(np.sqrt((d @ d) / a.size))


def cdf_eval(q, y):
    """CDF of the represented measure: (1/M) #{i : q_i <= y}.

    Right-continuous and non-decreasing in y.  ``y`` may be an array.
    """
    v = q.values
    return np.searchsorted(v, y, side="right") / v.size


def grad_norm_sq(q):
    """Forward-difference Dirichlet energy, as a half-torus integral.

    2M * sum((v_{i+1} - v_i)^2): the mid-point rule for the integral of the
    squared difference quotient over [0, 1/2], with no wrap-around term (the
    symmetric extension makes the boundary difference vanish to leading
    order).  Returns 0 for M = 1 by convention.
    """
    v = q.values if isinstance(q, (QuantileField, GridFunction)) else np.asarray(q)
    if v.size < 2:
        return 0.0
    d = np.diff(v)
    return float(2.0 * v.size * (d @ d))


def l2_norm(g):
    """Discrete L2(S) norm: sqrt((1/M) sum v_i^2) (full-torus integral)."""
    v = g.values if isinstance(g, (QuantileField, GridFunction)) else np.asarray(g)
    return float(np.sqrt((v @ v) / v.size))


def batch_grad_norm_sq(states):
    """Row-wise Dirichlet energy for an (N, M) batch of fields."""
    states = np.asarray(states)
    if states.shape[-1] < 2:
        return np.zeros(states.shape[:-1])
    d = np.diff(states, axis=-1)
    return 2.0 * states.shape[-1] * np.einsum("...i,...i->...", d, d)


def batch_l2_norm_sq(states):
    """Row-wise squared L2 norm for an (N, M) batch of fields."""
    states = np.asarray(states)
    return np.einsum("...i,...i->...", states, states) / states.shape[-1]


_FLOAT_FMT = "%.17g"  # round-trips float64 exactly


def save_quantile_csv(path, q):
    np.savetxt(path, q.values.reshape(1, -1), delimiter=",", fmt=_FLOAT_FMT)


def load_quantile_csv(path):
    row = np.loadtxt(path, delimiter=",", dtype=np.float64)
    return QuantileField(np.atleast_1d(row))


def save_measure_csv(path, mu):
    np.savetxt(
        path,
        np.column_stack([mu.locations, mu.weights]),
        delimiter=",",
        fmt=_FLOAT_FMT,
        header="location,weight",
        comments="",
    )


def load_measure_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64)
    data = np.atleast_2d(data)
    return DiscreteMeasure(data[:, 0], data[:, 1])
