"""Hot-kernel lane selection.

The batched rearranged-SHE step (counter RNG -> exact OU update -> cosine
synthesis -> sort -> analysis) dominates runtime everywhere, so it exists
twice: a Cython extension (``_core``) and a pure-numpy reference
(``reference``) with identical semantics and identical random streams.  The
extension is used when importable; ``RSHE_KERNEL=python`` forces the
fallback, ``RSHE_KERNEL=cython`` makes a missing extension an error.

Both lanes expose:

- ``step_batch(states, drift, synth, anal, decay, gain, noise_std, base,
  step)`` -> (pre, post)
- ``run_driftless(states, synth, anal, decay, noise_std, base, step0,
  n_steps, snap_steps)`` -> (final, snaps, reflection)

``base`` is the (n_paths, n_modes) uint64 stream state from
:func:`rshe.rng.mode_base`; ``drift`` holds sections of the drift field (the
forcing enters with a minus sign inside the step).
"""

import os

from . import reference

_requested = os.environ.get("RSHE_KERNEL", "").strip().lower()

if _requested in ("python", "reference", "fallback"):
    impl = reference
    KERNEL_LANE = "python"
else:
    try:
        from . import _core as impl

        KERNEL_LANE = "cython"
    except ImportError:
        if _requested in ("cython", "c", "ext"):
            raise
        impl = reference
        KERNEL_LANE = "python"

step_batch = impl.step_batch
run_driftless = impl.run_driftless


def available_lanes():
    """Names of importable lanes (for the benchmark and tests)."""
    lanes = {"python": reference}
    try:
        from . import _core

        lanes["cython"] = _core
    except ImportError:
        pass
    return lanes
