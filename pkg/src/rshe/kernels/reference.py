"""Pure-numpy lane of the hot kernels.

Semantics contract shared with the Cython lane (see package docstring).
The random stream is bit-identical across lanes; floating accumulation in
the two matrix transforms may differ in the last ulps, which the
lane-equivalence test bounds.
"""

import numpy as np

from .. import rng


def step_batch(states, drift, synth, anal, decay, gain, noise_std, base, step):
    """One splitting step for a batch of states.

    states : (N, M) current (sorted) fields
    drift  : (N, M) sections of the drift field, or None
    synth  : (K+1, M) basis samples; anal: (M, K+1) = synth.T / M
    decay, gain, noise_std : (K+1,) exact OU response vectors
    base   : (N, K+1) uint64 stream state; step : step index

    Returns (pre, post): the mild-solution field before sorting and its
    monotone rearrangement.
    """
    a = (states @ anal) * decay
    if drift is not None:
        a -= (drift @ anal) * gain
    if noise_std.any():
        a += noise_std * rng.normals_from_base(base, step)
    pre = a @ synth
    post = np.sort(pre, axis=1, kind="stable")
    return pre, post


def run_driftless(states, synth, anal, decay, noise_std, base, step0, n_steps, snap_steps):
    """Advance a batch ``n_steps`` with zero drift, snapshotting on the way.

    snap_steps : sorted int array of step counts (1-based) at which to copy
    the state.  Returns (final, snaps, reflection) where ``reflection`` is the
    per-path accumulated pairing (1/M) sum_i post_i (post_i - pre_i).
    """
    n, m = states.shape
    snap_steps = np.asarray(snap_steps, dtype=np.int64)
    snaps = np.empty((snap_steps.size, n, m))
    reflection = np.zeros(n)
    out = states
    j = 0
    for s in range(n_steps):
        pre, out = step_batch(out, None, synth, anal, decay, None, noise_std, base, step0 + s)
        reflection += np.einsum("ij,ij->i", out, out - pre) / m
        if j < snap_steps.size and snap_steps[j] == s + 1:
            snaps[j] = out
            j += 1
    return out, snaps, reflection
