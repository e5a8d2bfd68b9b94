"""Cosine eigenbasis of the Laplacian, Q-Brownian noise and exact OU updates.

On the symmetric torus the Laplacian diagonalizes over e_0 = 1 and
e_k = sqrt(2) cos(2 pi k x) with eigenvalues -omega_k, omega_k = (2 pi k)^2.
The driving noise is a Q-Brownian motion whose k-th coefficient carries
standard deviation (1 v k)^{-lambda}, lambda in (1/2, 1).  Between
rearrangement times the linear dynamics is solved exactly mode by mode:
each coefficient is an Ornstein-Uhlenbeck process with rate omega_k, so one
step of size h applies the exact decay, the exact drift response and a
Gaussian with the exact stochastic-convolution variance.

The mid-point grid of :mod:`rshe.quantile` is the DCT-II grid, on which the
first M basis functions are exactly orthonormal for the discrete inner
product (1/M) sum_i f_i g_i.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import rng
from .errors import AliasingError, DomainError
from .quantile import GridFunction, grid_nodes

__all__ = [
    "NoiseModel",
    "SpectralState",
    "NoiseStream",
    "basis_eval",
    "basis_matrix",
    "to_spectral",
    "from_spectral",
    "heat_propagate",
    "ou_step",
    "omega",
    "q_coefficient",
]

_SQRT2 = np.sqrt(2.0)


def omega(k):
    """Laplacian eigenvalue magnitude (2 pi k)^2 for mode k."""
    k = np.asarray(k, dtype=np.float64)
    return (2.0 * np.pi * k) ** 2


def q_coefficient(k, lam):
    """Noise coefficient (1 v k)^(-lambda); mode 0 carries coefficient 1."""
    k = np.asarray(k, dtype=np.float64)
    return np.maximum(k, 1.0) ** (-lam)


@dataclass(frozen=True)
class NoiseModel:
    """Q-Brownian forcing: spectral exponent, mode cut-off, seed.

    ``amplitude`` scales the noise coefficients; 0 gives the deterministic
    (zero-variance) dynamics used by twin-run and benchmark checks.
    """

    lam: float
    num_modes: int
    seed: int
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.lam < 1.0:
            raise DomainError(f"lambda must lie in (1/2, 1), got {self.lam}")
        if self.num_modes < 1:
            raise DomainError("num_modes must be >= 1")
        if self.amplitude < 0.0:
            raise DomainError("amplitude must be >= 0")


@dataclass(frozen=True)
class SpectralState:
    """Truncated cosine-coefficient vector a_0..a_K."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be a finite vector")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def num_modes(self):
        return self.coeffs.size - 1


def basis_eval(k, x):
    """e_0 = 1, e_k(x) = sqrt(2) cos(2 pi k x) for k >= 1."""
    if k < 0:
        raise DomainError("mode index must be >= 0")
    if k == 0:
        return np.ones_like(np.asarray(x, dtype=np.float64)) if np.ndim(x) else 1.0
    return _SQRT2 * np.cos(2.0 * np.pi * k * np.asarray(x, dtype=np.float64))


@lru_cache(maxsize=32)
def basis_matrix(num_modes, m):
    """Basis samples B[k, i] = e_k(x_i), shape (K+1, M), read-only."""
    if num_modes >= m:
        raise AliasingError(f"need K < M to avoid aliasing, got K={num_modes}, M={m}")
    x = grid_nodes(m)
    k = np.arange(num_modes + 1).reshape(-1, 1)
    b = _SQRT2 * np.cos(2.0 * np.pi * k * x)
    b[0] = 1.0
    b.flags.writeable = False
    return b


@lru_cache(maxsize=32)
def analysis_matrix(num_modes, m):
    """Transpose basis scaled by 1/M: coeffs = values @ analysis_matrix."""
    a = np.ascontiguousarray(basis_matrix(num_modes, m).T) / m
    a.flags.writeable = False
    return a


def to_spectral(g, num_modes):
    """Cosine analysis of a grid function onto modes 0..K (requires K < M)."""
    v = g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=np.float64)
    return SpectralState(v @ analysis_matrix(num_modes, v.size))


def from_spectral(s, m):
    """Cosine synthesis of a spectral state onto the M-point grid."""
    c = s.coeffs if isinstance(s, SpectralState) else np.asarray(s, dtype=np.float64)
    return GridFunction(c @ basis_matrix(c.size - 1, m))


def heat_propagate(s, t):
    """Heat semigroup: damp mode k by exp(-omega_k t); mode 0 unchanged."""
    if t < 0:
        raise DomainError("heat propagation needs t >= 0")
    c = s.coeffs
    k = np.arange(c.size)
    return SpectralState(c * np.exp(-omega(k) * t))


@dataclass
class NoiseStream:
    """Addressable stream of mode increments for one path.

    Wraps the counter-based generator: draws are keyed by
    (noise.seed, path_id, mode, step) and the stream only tracks which step
    comes next, so identical (seed, path) always reproduce the same
    increments regardless of what other streams are consumed.
    """

    noise: NoiseModel
    path_id: int = 0
    step_index: int = 0
    _base: np.ndarray = field(default=None, repr=False)

    def normals(self, n_modes):
        if self._base is None or self._base.shape[1] < n_modes:
            self._base = rng.mode_base(self.noise.seed, [self.path_id], n_modes)
        z = rng.normals_from_base(self._base[:, :n_modes], self.step_index)
        self.step_index += 1
        return z[0]


def ou_response(num_modes, h, lam, amplitude):
    """Exact one-step response vectors (decay, drift gain, noise std).

    Mode k >= 1: a <- e^{-omega_k h} a + v (1 - e^{-omega_k h})/omega_k + xi,
    Var xi = amplitude^2 (1 v k)^{-2 lambda} (1 - e^{-2 omega_k h})/(2 omega_k).
    Mode 0: a <- a + v h + xi with Var xi = amplitude^2 h.
    """
    k = np.arange(num_modes + 1)
    w = omega(k)
    decay = np.exp(-w * h)
    gain = np.empty(num_modes + 1)
    gain[0] = h
    gain[1:] = (1.0 - decay[1:]) / w[1:]
    var = np.empty(num_modes + 1)
    var[0] = h
    var[1:] = (1.0 - np.exp(-2.0 * w[1:] * h)) / (2.0 * w[1:])
    noise_std = amplitude * q_coefficient(k, lam) * np.sqrt(var)
    return decay, gain, noise_std


def ou_step(s, drift_coeffs, h, stream):
    """One exact OU step of the spectral state under a frozen drift.

    ``drift_coeffs`` holds the cosine coefficients of the negated drift
    section (the forcing term as it appears on the right-hand side).
    Deterministic given the stream state.
    """
    if h <= 0:
        raise DomainError("step size must be positive")
    a = s.coeffs
    v = drift_coeffs.coeffs if isinstance(drift_coeffs, SpectralState) else np.asarray(drift_coeffs)
    if v.size != a.size:
        raise AliasingError("drift coefficients must match the state modes")
    decay, gain, noise_std = ou_response(a.size - 1, h, stream.noise.lam, stream.noise.amplitude)
    xi = noise_std * stream.normals(a.size)
    return SpectralState(decay * a + gain * v + xi)
