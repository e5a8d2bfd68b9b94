"""Cross-lane checks: the Cython kernel and the numpy reference implement
the same step with the same random stream."""

import numpy as np
import pytest

from rshe import rng
from rshe.kernels import available_lanes
from rshe.solver import make_step_operator
from rshe.spectral import NoiseModel

LANES = available_lanes()
needs_both = pytest.mark.skipif(len(LANES) < 2, reason="compiled kernel unavailable")


def _setup(n=37, m=64, k=16, h=1e-3, seed=123, amplitude=1.0):
    noise = NoiseModel(0.75, k, seed=seed, amplitude=amplitude)
    op = make_step_operator(m, noise, h)
    g = np.random.default_rng(7)
    states = np.sort(g.normal(size=(n, m)), axis=1)
    drift = g.normal(size=(n, m))
    base = rng.mode_base(seed, np.arange(n, dtype=np.uint64), k + 1)
    return op, states, drift, base


@needs_both
def test_step_batch_matches_across_lanes():
    op, states, drift, base = _setup()
    outs = {}
    for name, lane in LANES.items():
        outs[name] = lane.step_batch(
            states.copy(), drift, op.synth, op.anal, op.decay, op.gain, op.noise_std, base, 11
        )
    pre_a, post_a = outs["python"]
    pre_b, post_b = outs["cython"]
    scale = np.abs(pre_a).max()
    assert np.allclose(pre_a, pre_b, atol=1e-12 * scale, rtol=0)
    assert np.allclose(post_a, post_b, atol=1e-12 * scale, rtol=0)


@needs_both
def test_step_batch_without_drift_or_noise():
    op, states, _, base = _setup(amplitude=0.0)
    results = [
        lane.step_batch(states.copy(), None, op.synth, op.anal, op.decay, op.gain,
                        op.noise_std, base, 0)
        for lane in LANES.values()
    ]
    assert np.allclose(results[0][1], results[1][1], atol=1e-13, rtol=0)


@needs_both
def test_run_driftless_matches_across_lanes():
    op, states, _, base = _setup(n=11)
    snap = np.array([3, 10], dtype=np.int64)
    outs = []
    for lane in LANES.values():
        outs.append(lane.run_driftless(states.copy(), op.synth, op.anal, op.decay,
                                       op.noise_std, base, 0, 10, snap))
    f_a, s_a, r_a = outs[0]
    f_b, s_b, r_b = outs[1]
    scale = max(np.abs(f_a).max(), 1.0)
    assert np.allclose(f_a, f_b, atol=1e-11 * scale, rtol=0)
    assert np.allclose(s_a, s_b, atol=1e-11 * scale, rtol=0)
    assert np.allclose(r_a, r_b, atol=1e-9, rtol=1e-9)


@needs_both
def test_gaussian_draws_bitwise_identical():
    # the integer pipeline and ndtri are shared: draws must agree exactly
    base = rng.mode_base(99, np.arange(64, dtype=np.uint64), 9)
    z_py = rng.normals_from_base(base, 5)
    op, states, _, _ = _setup(n=64, k=8, amplitude=1.0)
    # extract the Cython draws by differencing a noise-only step (decay=1, gain irrelevant)
    core = LANES["cython"]
    synth_id = np.ascontiguousarray(np.eye(9, 9))
    anal_id = np.ascontiguousarray(np.eye(9, 9))
    zeros = np.zeros((64, 9))
    ones = np.ones(9)
    pre, _ = core.step_batch(zeros, None, synth_id, anal_id, ones, ones, ones, base, 5)
    assert np.array_equal(pre, z_py)


@needs_both
def test_badly_disordered_rows_sorted_correctly():
    # exercises the qsort fallback inside the Cython lane
    core = LANES["cython"]
    g = np.random.default_rng(17)
    states = g.normal(size=(5, 128))  # thoroughly unsorted input states
    m = 128
    synth = np.ascontiguousarray(np.eye(1, m))
    anal = np.ascontiguousarray(np.eye(m, 1)) * 0.0
    # use identity-free path: run one noisy step at high amplitude instead
    noise = NoiseModel(0.75, 32, seed=5, amplitude=50.0)
    op = make_step_operator(m, noise, 1e-3)
    base = rng.mode_base(5, np.arange(5, dtype=np.uint64), 33)
    pre, post = core.step_batch(np.sort(states, axis=1), None, op.synth, op.anal,
                                op.decay, op.gain, op.noise_std, base, 0)
    assert np.array_equal(post, np.sort(pre, axis=1))
