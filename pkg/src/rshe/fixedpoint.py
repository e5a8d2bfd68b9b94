"""Equilibrium computation: the costate map, its Picard iteration and the
optimality verification suite.

The costate map Phi sends a drift field V to the field

    Phi(V)(t, x, mu) = E[ dx g(X_T(x), mu_T) + int_t^T dx f(X_s(x), mu_s) ds ]

where X solves the rearranged SHE driven by V from (t, mu) and mu_s is the
(random) law carried by the state itself.  Equilibria are fixed points of
Phi.  On a short enough block the map contracts in the sup-over-measures
L2 metric, so the field is built backwards from the terminal time block by
block: within a block, Picard sweeps iterate V <- Phi(V) against a
scenario library of reachable measures that is refreshed under the current
iterate each sweep, and the converged tables are frozen before moving to
the earlier block.  Common random numbers across sweeps (stream keys carry
no sweep index) make successive-iterate distances measure field change
rather than Monte Carlo noise, and make the whole solve a deterministic
function of the master seed.

Verification: ``pontryagin_residual`` regresses realized costates on
measure features to estimate the conditional expectation and reports the
gap to the field; ``gateaux_check`` evaluates the first-variation identity
of the cost along arbitrary perturbations.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .errors import DomainError, PicardError
from .fields import (
    DriftField,
    StitchedDriftField,
    TabulatedDriftField,
    TerminalCostDrift,
    ZeroDriftField,
)
from .quantile import DiscreteMeasure, GridFunction, quantile_from_measure
from .solver import make_step_operator, simulate

__all__ = [
    "SolverConfig",
    "ContractionLog",
    "EquilibriumResult",
    "contraction_admissible",
    "block_length",
    "apply_phi",
    "field_distance",
    "picard_block",
    "solve_equilibrium",
    "pontryagin_residual",
    "gateaux_check",
]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the blockwise Picard solver.

    The constants ledger (c, C_c) is derived from the cost Lipschitz bound
    and the horizon; the default block length is their admissible minimum
    scaled by ``block_safety`` and floored at two mesh steps.
    """

    picard_tol: float = 2e-3
    picard_max_iter: int = 12
    n_outer: int = 8
    n_inner: int = 200
    knn: int = 3
    feature_modes: int = 6
    ridge: float = 1e-8
    block_safety: float = 0.8
    init: str = "zero"  # or "terminal"
    workers: int = 1

    def __post_init__(self):
        if self.picard_tol <= 0 or self.picard_max_iter < 1:
            raise DomainError("tolerances and iteration caps must be positive")
        if self.n_outer < 1 or self.n_inner < 1:
            raise DomainError("Monte Carlo sizes must be >= 1")
        if self.init not in ("zero", "terminal"):
            raise DomainError("init must be 'zero' or 'terminal'")


def contraction_admissible(t_block, c_fg):
    """Whether a block of length ``t_block`` is inside the contraction regime.

    c = 1/(8 C_fg (1+T)) and C_c = sqrt(2 C_fg (1+T)) with T = t_block; the
    block is admissible when t_block <= min(c, ln 2 / (1 + 2 C_c^2)).
    Returns (admissible, constants dict).
    """
    if t_block <= 0 or c_fg <= 0:
        raise DomainError("inputs must be positive")
    c = 1.0 / (8.0 * c_fg * (1.0 + t_block))
    cc = math.sqrt(2.0 * c_fg * (1.0 + t_block))
    log_bound = math.log(2.0) / (1.0 + 2.0 * cc * cc)
    return t_block <= min(c, log_bound), {
        "c": c,
        "C_c": cc,
        "log_bound": log_bound,
        "limit": min(c, log_bound),
    }


def block_length(horizon, c_fg, h, safety=0.8):
    """Default Picard block length: safety * admissible limit at the full
    horizon's constants, floored at two mesh steps and aligned to the mesh."""
    c = 1.0 / (8.0 * c_fg * (1.0 + horizon)) if c_fg > 0 else horizon
    cc_sq = 2.0 * c_fg * (1.0 + horizon)
    limit = min(c, math.log(2.0) / (1.0 + 2.0 * cc_sq)) if c_fg > 0 else horizon
    steps = max(2, int(math.floor(safety * limit / h + 1e-12)))
    return min(steps * h, horizon)


def _phi_accumulate(stitched, x0_batch, t, T, h, noise, model, seed, dynamics):
    """Costate accumulation along inner simulations from (t, x0) to T.

    Returns (sections (N, M), running stderr basis (N, M)): per-path
    realized costates dx g(X_T, mu_T) + h sum dx f(X_s, mu_s).
    """
    states = np.array(x0_batch, dtype=np.float64, copy=True)
    n, m = states.shape
    n_steps = int(round((T - t) / h))
    step0 = int(round(t / h))
    op = make_step_operator(m, noise, h)
    base = rng.mode_base(seed, np.arange(n, dtype=np.uint64), noise.num_modes + 1)
    acc = np.zeros((n, m))
    for s in range(n_steps):
        ts = t + s * h
        acc += h * model.dxf_sections(states, states.mean(axis=1))
        dsec = stitched.sections(ts, states)
        if dynamics == "brenier":
            states = np.sort(states - h * dsec, axis=1, kind="stable")
        else:
            _, states = kernels.step_batch(
                states, dsec, op.synth, op.anal, op.decay, op.gain, op.noise_std,
                base, step0 + s,
            )
    acc += model.dxg_sections(states, states.mean(axis=1))
    return acc


def apply_phi(v_field, t, mu, model, *, T, h, m, noise, n_inner, seed=None, dynamics="rshe"):
    """One evaluation of the costate map at (t, mu) under the field ``v``.

    Simulates ``n_inner`` trajectories from the quantile representative of
    ``mu`` to the horizon and averages the realized costates per grid node.
    Returns (GridFunction section, stderr array).
    """
    if isinstance(mu, DiscreteMeasure):
        x0 = quantile_from_measure(mu, m).values
    else:
        x0 = np.asarray(mu.values if hasattr(mu, "values") else mu, dtype=np.float64)
    seed = noise.seed if seed is None else seed
    batch = np.tile(x0, (n_inner, 1))
    acc = _phi_accumulate(v_field, batch, t, T, h, noise, model, seed, dynamics)
    section = acc.mean(axis=0)
    stderr = acc.std(axis=0, ddof=1) / np.sqrt(n_inner) if n_inner > 1 else np.zeros(m)
    return GridFunction(section), stderr


def field_distance(v1, v2, probes):
    """Max over probes of the sectionwise L2 distance.

    ``probes``: iterable of (t, states) with states an (N, M) batch of
    quantile vectors (a probe-set surrogate of the sup over all measures).
    """
    probes = list(probes)
    if not probes:
        raise DomainError("probe set must be non-empty")
    worst = 0.0
    for t, states in probes:
        states = np.atleast_2d(states)
        d = v1.sections(t, states) - v2.sections(t, states)
        gap = np.sqrt(np.einsum("nm,nm->n", d, d) / states.shape[1])
        worst = max(worst, float(gap.max()))
    return worst


@dataclass
class ContractionLog:
    block: tuple
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    sweeps: int = 0

    def record(self, d):
        if self.distances:
            self.ratios.append(d / self.distances[-1] if self.distances[-1] > 0 else 0.0)
        self.distances.append(d)


@dataclass
class EquilibriumResult:
    """Solved feedback field with its construction record."""

    drift: TabulatedDriftField
    model: object
    horizon: float
    h: float
    constants: dict
    logs: list
    sweep_fields: list

    def sections(self, t, states):
        if t >= self.horizon - 1e-12:
            return TerminalCostDrift(self.model).sections(t, states)
        return self.drift.sections(t, states)

    def section(self, t, mu, m=None):
        return DriftField.section(self, t, mu, m)

    @property
    def is_zero(self):
        return False

    @property
    def sup_bound(self):
        return self.drift.sup_bound


def _scenario_seed_states(q0, t_lo, h, noise, model, n_outer, seed, horizon, dynamics):
    """Reachable-set surrogate seeds at a block start.

    Driftless evolution of the run's initial state to t_lo (one independent
    common-noise draw per scenario) plus deterministic mean shifts covering
    the displacement a bounded drift can produce by t_lo.
    """
    m = q0.size
    if t_lo <= 0:
        return np.tile(q0, (n_outer, 1))
    bundle = simulate(
        q0, None, t_lo, h, n_outer, noise, store="last", seed=seed,
        deterministic=(dynamics == "brenier"),
    )
    states = bundle.final_states().copy()
    spread = model.bound_const * (1.0 + horizon) * t_lo
    if n_outer > 1 and spread > 0:
        states += np.linspace(-spread, spread, n_outer)[:, None]
    return states


def picard_block(
    tail_field,
    block,
    model,
    cfg,
    *,
    T,
    h,
    noise,
    seed_states,
    master_seed,
    block_index,
    dynamics="rshe",
    collect_sweeps=None,
):
    """Iterate V <- Phi(V) on one block against a refreshed scenario library.

    ``tail_field`` must be valid on [block_hi, T] (for the terminal block it
    is the terminal-cost rule, which inner simulations never query).  Stops
    when successive tabulated iterates are closer than the Picard tolerance
    on the refreshed probe set; raises PicardError with the ratio log on
    non-convergence.
    """
    lo, hi = block
    n_lo, n_hi = int(round(lo / h)), int(round(hi / h))
    node_times = h * np.arange(n_lo, n_hi)
    n_nodes = node_times.size
    if n_nodes < 1:
        raise DomainError("empty block")
    n_outer = seed_states.shape[0]
    amp_zero = noise.amplitude == 0.0
    n_inner = 1 if (dynamics == "brenier" or amp_zero) else cfg.n_inner

    if cfg.init == "terminal":
        v_cur = TerminalCostDrift(model)
    else:
        v_cur = ZeroDriftField()
    log = ContractionLog(block=(lo, hi))

    for sweep in range(cfg.picard_max_iter):
        stitched = StitchedDriftField([(lo, v_cur), (hi, tail_field)])
        scen = simulate(
            seed_states, stitched, hi, h, n_outer, noise,
            t0=lo, store="full", seed=rng.derive_seed(master_seed, "scen", block_index),
            deterministic=(dynamics == "brenier"),
        )
        # library measures at each node: scen.states[:, k, :] at node n_lo + k
        new_tables = []

        def _eval(args):
            k, j = args
            t_n = node_times[k]
            x0 = scen.states[j, k, :]
            phi_seed = rng.derive_seed(master_seed, "phi", n_lo + k, j)
            batch = np.tile(x0, (n_inner, 1))
            return k, j, _phi_accumulate(
                stitched, batch, t_n, T, h, noise, model, phi_seed, dynamics
            ).mean(axis=0)

        jobs = [(k, j) for k in range(n_nodes) for j in range(n_outer)]
        sections = np.empty((n_nodes, n_outer, scen.states.shape[2]))
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                for k, j, sec in pool.map(_eval, jobs):
                    sections[k, j] = sec
        else:
            for job in jobs:
                k, j, sec = _eval(job)
                sections[k, j] = sec

        for k in range(n_nodes):
            new_tables.append((scen.states[:, k, :].copy(), sections[k].copy()))
        v_next = TabulatedDriftField(node_times, new_tables, knn=cfg.knn)

        probes = [(node_times[k], scen.states[:, k, :]) for k in range(n_nodes)]
        d = 0.0
        for k in range(n_nodes):
            cur = v_cur.sections(node_times[k], scen.states[:, k, :])
            gap = sections[k] - cur
            d = max(d, float(np.sqrt(np.einsum("nm,nm->n", gap, gap) / gap.shape[1]).max()))
        log.record(d)
        if collect_sweeps is not None:
            collect_sweeps.append(StitchedDriftField([(lo, v_next), (hi, tail_field)]))
        v_cur = v_next
        log.sweeps = sweep + 1
        if d < cfg.picard_tol:
            log.converged = True
            break
    if not log.converged:
        raise PicardError(
            f"Picard did not converge on block [{lo:g}, {hi:g}] "
            f"(last distance {log.distances[-1]:.3g})",
            distances=log.distances,
            ratios=log.ratios,
        )
    return v_cur, log


def solve_equilibrium(
    model,
    T,
    cfg,
    noise,
    *,
    m,
    h,
    mu0,
    dynamics="rshe",
    master_seed=None,
    collect_sweep_fields=False,
):
    """Blockwise backward construction of the equilibrium feedback field.

    Returns an EquilibriumResult whose tabulated field covers every mesh
    node in [0, T) plus a terminal-rule node at T; per-block contraction
    logs and the constants ledger ride along.  On Picard failure inside a
    block the block is halved once; a second failure aborts with the log.
    """
    master_seed = noise.seed if master_seed is None else master_seed
    if isinstance(mu0, DiscreteMeasure):
        q0 = quantile_from_measure(mu0, m).values
    else:
        q0 = np.asarray(mu0.values if hasattr(mu0, "values") else mu0, dtype=np.float64)
    c_fg = max(model.lip_const, 1e-12)
    delta = block_length(T, c_fg, h, cfg.block_safety)
    admissible, constants = contraction_admissible(delta, c_fg)
    constants.update({"C_fg": model.lip_const, "delta": delta, "admissible": admissible})

    blocks = []
    hi = T
    while hi > 1e-12:
        lo = max(0.0, round((hi - delta) / h) * h)
        blocks.append((lo, hi))
        hi = lo

    terminal = TerminalCostDrift(model)
    built_times = []
    built_tables = []
    logs = []
    sweep_fields = [] if collect_sweep_fields else None
    tail = terminal
    last_scen_states = None

    for b, (lo, hi) in enumerate(blocks):
        seeds = _scenario_seed_states(
            q0, lo, h, noise, model,
            cfg.n_outer if noise.amplitude > 0 or cfg.n_outer > 1 else 1,
            rng.derive_seed(master_seed, "seeds", b), T, dynamics,
        )
        collect = [] if (collect_sweep_fields and b == len(blocks) - 1) else None
        try:
            v_block, log = picard_block(
                tail, (lo, hi), model, cfg,
                T=T, h=h, noise=noise, seed_states=seeds,
                master_seed=master_seed, block_index=b, dynamics=dynamics,
                collect_sweeps=collect,
            )
        except PicardError:
            half = max(2 * h, round(0.5 * (hi - lo) / h) * h)
            mid = max(lo, round((hi - half) / h) * h)
            v_top, log_top = picard_block(
                tail, (mid, hi), model, cfg,
                T=T, h=h, noise=noise,
                seed_states=_scenario_seed_states(
                    q0, mid, h, noise, model, cfg.n_outer,
                    rng.derive_seed(master_seed, "seeds", b, "half"), T, dynamics),
                master_seed=master_seed, block_index=b, dynamics=dynamics,
            )
            logs.append(log_top)
            tail = _extend_tail(v_top, tail, mid, hi, model, cfg)
            v_block, log = picard_block(
                tail, (lo, mid), model, cfg,
                T=T, h=h, noise=noise, seed_states=seeds,
                master_seed=master_seed, block_index=(b, "low"), dynamics=dynamics,
                collect_sweeps=collect,
            )
            hi = mid
        logs.append(log)
        if collect is not None:
            sweep_fields = collect
        built_times = list(v_block.times) + built_times
        built_tables = list(v_block.libraries) + built_tables
        tail = _extend_tail(v_block, tail, lo, hi, model, cfg)
        if b == 0:
            last_scen_states = v_block

    # terminal node: the rule dx g(F_mu^{-1}, mu) evaluated on the last
    # tabulated library, so the T row exists as a table entry as well
    q_T, _ = built_tables[-1]
    built_times.append(T)
    built_tables.append((q_T.copy(), terminal.sections(T, q_T)))

    full = TabulatedDriftField(np.asarray(built_times), built_tables, knn=cfg.knn)
    return EquilibriumResult(
        drift=full,
        model=model,
        horizon=T,
        h=h,
        constants=constants,
        logs=logs,
        sweep_fields=sweep_fields or [],
    )


def _extend_tail(v_block, tail, lo, hi, model, cfg):
    return StitchedDriftField([(lo, v_block), (hi, tail)])


def pontryagin_residual(u_field, bundle, model, probe_times, *, feature_modes=6, ridge=1e-8):
    """Conditional-expectation residual of the feedback along a bundle.

    For each probe time, regresses the realized costates (per grid node)
    on measure features of the current state (intercept + leading cosine
    coefficients of the quantile vector) across scenarios, and reports the
    L2 gap between the regression prediction and the field section.
    Returns a list of row dicts (t, gap, stderr, max, ridge_used).
    """
    from .spectral import analysis_matrix

    states = bundle.states
    n, n_times, m = states.shape
    h = bundle.h
    times = bundle.times
    means = states.mean(axis=2)

    # realized costates accumulated from behind (left-endpoint rule)
    tail = model.dxg_sections(states[:, -1, :], means[:, -1])
    tails = {n_times - 1: tail.copy()}
    for s in range(n_times - 2, -1, -1):
        tail = tail + h * model.dxf_sections(states[:, s, :], means[:, s])
        tails[s] = tail.copy()

    anal = analysis_matrix(min(feature_modes - 1, m - 1), m)
    rows = []
    for t in probe_times:
        s = int(np.argmin(np.abs(times - t)))
        y = tails[s]
        feats = np.concatenate([np.ones((n, 1)), states[:, s, :] @ anal], axis=1)
        ridge_used = False
        beta, _, rank, _ = np.linalg.lstsq(feats, y, rcond=None)
        if rank < feats.shape[1]:
            ridge_used = True
            gram = feats.T @ feats + ridge * np.eye(feats.shape[1])
            beta = np.linalg.solve(gram, feats.T @ y)
        yhat = feats @ beta
        u_secs = u_field.sections(times[s], states[:, s, :])
        gap = yhat - u_secs
        per_scenario = np.sqrt(np.einsum("nm,nm->n", gap, gap) / m)
        rows.append(
            {
                "t": float(times[s]),
                "gap": float(per_scenario.mean()),
                "stderr": float(per_scenario.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                "max": float(per_scenario.max()),
                "ridge_used": ridge_used,
            }
        )
    return rows


def gateaux_check(u_field, gamma, bundle, model):
    """First-variation identity of the cost at the candidate equilibrium.

    Evaluates E int [dx g(X_T, mu_T) Gamma_T + sum_t (dx f(X_t, mu_t) Gamma_t
    - U(t, x, mu_t) gamma_t) h] dx, which vanishes (to MC accuracy) for
    every perturbation gamma exactly when -U is the optimal control.
    Returns (value, stderr over paths).
    """
    states = bundle.states
    n, n_times, m = states.shape
    if gamma.gamma.shape != (n, n_times - 1, m):
        raise DomainError("perturbation shape does not match the bundle")
    h = bundle.h
    times = bundle.times
    means = states.mean(axis=2)
    big_gamma = gamma.cumulative()

    per_path = np.zeros(n)
    for s in range(n_times - 1):
        u_sec = u_field.sections(times[s], states[:, s, :])
        per_path += h * (
            np.mean(model.dxf_sections(states[:, s, :], means[:, s]) * big_gamma[:, s, :], axis=1)
            - np.mean(u_sec * gamma.gamma[:, s, :], axis=1)
        )
    per_path += np.mean(
        model.dxg_sections(states[:, -1, :], means[:, -1]) * big_gamma[:, -1, :], axis=1
    )
    value = float(per_path.mean())
    stderr = float(per_path.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return value, stderr
