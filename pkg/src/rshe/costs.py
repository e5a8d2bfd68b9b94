"""Cost data for the control problem: running cost f, terminal cost g and
their x-derivatives, plus the built-in families used throughout.

All families expose the x-derivatives both through the scalar contract
``dxf(x, mu)`` and through vectorized sections used in hot paths.  The
built-ins couple to the measure only through its mean; the interface takes
a full measure so richer couplings can be added without change.  Negative
mean-coupling coefficients deliberately break Lasry-Lions monotonicity
(the regime the common noise is there to handle); the clipped-linear
family with a >= |b| is displacement monotone inside its clip range and
backs the deterministic benchmark.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .quantile import DiscreteMeasure, QuantileField

__all__ = [
    "CostModel",
    "ControlPath",
    "make_tanh_family",
    "make_clipped_linear_family",
    "make_constant_family",
    "make_zero_family",
    "cost_J",
    "displacement_check",
    "DisplacementReport",
]

_LN2 = np.log(2.0)


def measure_mean(mu):
    """Mean of a measure given as DiscreteMeasure, QuantileField or array."""
    if isinstance(mu, DiscreteMeasure):
        return mu.mean()
    if isinstance(mu, QuantileField):
        return float(mu.values.mean())
    return float(np.asarray(mu, dtype=np.float64).mean())


@dataclass(frozen=True)
class CostModel:
    """f, g and their x-derivatives with declared regularity constants.

    ``lip_const`` bounds the joint Lipschitz modulus of dx f and dx g in
    (x, W2); ``bound_const`` bounds |dx f| and |dx g|.  The vectorized
    ``*_sections`` methods evaluate along (n_paths, M) state batches with
    per-path means, which is how the solver consumes the model.
    """

    name: str
    params: dict
    bound_const: float
    lip_const: float
    _dxf: callable = field(repr=False)
    _dxg: callable = field(repr=False)
    _f: callable = field(repr=False)
    _g: callable = field(repr=False)

    def dxf(self, x, mu):
        return float(self._dxf(np.float64(x), measure_mean(mu)))

    def dxg(self, x, mu):
        return float(self._dxg(np.float64(x), measure_mean(mu)))

    def f(self, x, mu):
        return float(self._f(np.float64(x), measure_mean(mu)))

    def g(self, x, mu):
        return float(self._g(np.float64(x), measure_mean(mu)))

    def dxf_sections(self, states, means):
        return self._dxf(states, np.asarray(means).reshape(-1, 1))

    def dxg_sections(self, states, means):
        return self._dxg(states, np.asarray(means).reshape(-1, 1))

    def f_sections(self, states, means):
        return self._f(states, np.asarray(means).reshape(-1, 1))

    def g_sections(self, states, means):
        return self._g(states, np.asarray(means).reshape(-1, 1))


def _log_cosh(z):
    """Numerically stable log cosh."""
    az = np.abs(z)
    return az + np.log1p(np.exp(-2.0 * az)) - _LN2


def make_tanh_family(a, b, c_g, b_g):
    """dx f = tanh(a x + b m1), dx g = tanh(c_g x + b_g m1).

    Bounded by 1, non-decreasing in x, jointly Lipschitz with constant
    max(a, |b|, c_g, |b_g|); f and g are the log-cosh antiderivatives
    pinned by f(0, mu) = g(0, mu) = 0.  Negative b, b_g produce couplings
    outside the Lasry-Lions monotone class.
    """
    if a <= 0 or c_g <= 0:
        raise DomainError("slopes a and c_g must be positive")

    def dxf(x, m):
        return np.tanh(a * x + b * m)

    def dxg(x, m):
        return np.tanh(c_g * x + b_g * m)

    def f(x, m):
        return (_log_cosh(a * x + b * m) - _log_cosh(b * m)) / a

    def g(x, m):
        return (_log_cosh(c_g * x + b_g * m) - _log_cosh(b_g * m)) / c_g

    return CostModel(
        name="tanh",
        params={"a": a, "b": b, "c_g": c_g, "b_g": b_g},
        bound_const=1.0,
        lip_const=max(a, abs(b), c_g, abs(b_g)),
        _dxf=dxf,
        _dxg=dxg,
        _f=f,
        _g=g,
    )


def _huber(u, clip):
    """Antiderivative of clamp(., +-clip) vanishing at 0."""
    au = np.abs(u)
    return np.where(au <= clip, 0.5 * u * u, clip * au - 0.5 * clip * clip)


def make_clipped_linear_family(a, b, clip):
    """dx f = dx g = clamp(a x + b m1, +-clip).

    Displacement monotone when a >= |b| and arguments stay inside the clip
    range; the standard family for the no-common-noise benchmark.
    """
    if a <= 0 or clip <= 0:
        raise DomainError("slope a and clip must be positive")

    def dx(x, m):
        return np.clip(a * x + b * m, -clip, clip)

    def anti(x, m):
        return (_huber(a * x + b * m, clip) - _huber(b * np.asarray(m, dtype=np.float64), clip)) / a

    return CostModel(
        name="clipped_linear",
        params={"a": a, "b": b, "clip": clip},
        bound_const=clip,
        lip_const=max(a, abs(b)),
        _dxf=dx,
        _dxg=dx,
        _f=anti,
        _g=anti,
    )


def make_constant_family(kappa_f, kappa_g):
    """dx f = kappa_f, dx g = kappa_g: the closed-form fixed-point family."""

    def _pair(kappa):
        def dx(x, m):
            return np.asarray(x, dtype=np.float64) * 0.0 + np.asarray(m) * 0.0 + kappa

        def anti(x, m):
            return kappa * np.asarray(x, dtype=np.float64) + np.asarray(m) * 0.0

        return dx, anti

    dxf, f = _pair(kappa_f)
    dxg, g = _pair(kappa_g)
    return CostModel(
        name="constant",
        params={"kappa_f": kappa_f, "kappa_g": kappa_g},
        bound_const=max(abs(kappa_f), abs(kappa_g)),
        lip_const=0.0,
        _dxf=dxf,
        _dxg=dxg,
        _f=f,
        _g=g,
    )


def make_zero_family():
    return make_constant_family(0.0, 0.0)


@dataclass(frozen=True)
class ControlPath:
    """Control values over (path, step, grid node) with the induced
    cumulative perturbation Gamma_t = int_0^t gamma ds (left endpoint)."""

    gamma: np.ndarray  # (n_paths, n_steps, M)
    h: float

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.ndim != 3 or not np.all(np.isfinite(g)):
            raise DomainError("gamma must be a finite (paths, steps, nodes) array")
        object.__setattr__(self, "gamma", g)

    def cumulative(self):
        """Gamma at every stored time: (n_paths, n_steps + 1, M), Gamma_0 = 0."""
        n, s, m = self.gamma.shape
        out = np.zeros((n, s + 1, m))
        np.cumsum(self.gamma * self.h, axis=1, out=out[:, 1:, :])
        return out


def cost_J(gamma, env, model):
    """Monte Carlo + left-endpoint quadrature estimate of the control cost.

    The controlled curve solves d Gamma = dX + (gamma + V) dt from X_0, so
    Gamma_t = X_t + h * sum_{s<t} (gamma_s + V_s); V is re-evaluated from
    the drift recorded on the bundle (zero when the run was driftless).
    """
    states = env.states
    n, n_times, m = states.shape
    if gamma.gamma.shape != (n, n_times - 1, m):
        raise DomainError("control shape does not match the environment bundle")
    h = env.h
    times = env.times
    means = states.mean(axis=2)

    drift_cum = np.zeros((n, m))
    total = np.zeros(n)
    gamma_cum = np.zeros((n, m))
    for s in range(n_times - 1):
        ctrl_curve = states[:, s, :] + gamma_cum + drift_cum
        total += h * (
            model.f_sections(ctrl_curve, means[:, s]).mean(axis=1)
            + 0.5 * (gamma.gamma[:, s, :] ** 2).mean(axis=1)
        )
        gamma_cum = gamma_cum + h * gamma.gamma[:, s, :]
        if env.drift is not None and not getattr(env.drift, "is_zero", False):
            drift_cum = drift_cum + h * env.drift.sections(times[s], states[:, s, :])
    ctrl_T = states[:, -1, :] + gamma_cum + drift_cum
    total += model.g_sections(ctrl_T, means[:, -1]).mean(axis=1)
    return float(total.mean())


@dataclass(frozen=True)
class DisplacementReport:
    min_f: float
    mean_f: float
    min_g: float
    mean_g: float
    monotone: bool


def displacement_check(model, n_pairs, m=64, seed=0):
    """Sampled displacement-monotonicity check for dx f and dx g.

    Couples pairs of quantile fields through the common uniform label and
    evaluates E[(X - X')(dx f(X, L(X)) - dx f(X', L(X')))]; the flag is set
    when the sampled minimum stays above -1e-9.
    """
    if n_pairs < 1:
        raise DomainError("need at least one pair")
    rng = np.random.default_rng(seed)
    inner_f = np.empty(n_pairs)
    inner_g = np.empty(n_pairs)
    for i in range(n_pairs):
        scale1 = rng.uniform(0.2, 1.5)
        q1 = np.sort(rng.normal(size=m)) * scale1 + rng.normal() * 0.5
        kind = i % 3
        if kind == 0:  # pure translation (stresses the mean coupling)
            q2 = q1 + rng.normal() * 0.8
        elif kind == 1:  # rescale around the mean
            q2 = q1.mean() + (q1 - q1.mean()) * rng.uniform(0.3, 2.0)
        else:  # independent field
            q2 = np.sort(rng.normal(size=m)) * rng.uniform(0.2, 1.5) + rng.normal() * 0.5
        m1, m2 = q1.mean(), q2.mean()
        df = model._dxf(q1, m1) - model._dxf(q2, m2)
        dg = model._dxg(q1, m1) - model._dxg(q2, m2)
        inner_f[i] = np.mean((q1 - q2) * df)
        inner_g[i] = np.mean((q1 - q2) * dg)
    return DisplacementReport(
        min_f=float(inner_f.min()),
        mean_f=float(inner_f.mean()),
        min_g=float(inner_g.min()),
        mean_g=float(inner_g.mean()),
        monotone=bool(inner_f.min() >= -1e-9 and inner_g.min() >= -1e-9),
    )
