"""Counter-based random number streams.

Every Gaussian increment consumed by a simulation is addressed by the tuple
(seed, path, mode, step): a splitmix64-style absorb/finalize hash maps the
tuple to a uint64, which becomes a uniform in (0,1) and then a standard
normal through the inverse CDF.  There is no sequential generator state, so
results are independent of evaluation order, chunking and thread scheduling,
and any draw can be regenerated in isolation.

The Cython kernel implements the same integer pipeline; both lanes call
scipy's ``ndtri``, so the draws agree bitwise across lanes.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_TWO53INV = 1.0 / 9007199254740992.0  # 2**-53


def _finalize(z):
    """splitmix64 finalizer; z is a uint64 scalar or array (wrapping mul)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _absorb(h, w):
    """Fold one word into the running hash state."""
    with np.errstate(over="ignore"):
        return _finalize(h + _GOLDEN + w)


def _as_u64(x):
    return _U64(np.uint64(int(x) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(master, *tags):
    """Derive a sub-stream seed from a master seed and a tag path.

    Tags may be ints or short strings; the derivation is stable across runs
    and platforms (no use of Python's randomized hash).
    """
    h = _finalize(_as_u64(master) + _GOLDEN)
    for tag in tags:
        if isinstance(tag, str):
            h = _absorb(h, _U64(2))
            for byte in tag.encode("utf-8"):
                h = _absorb(h, _U64(byte))
        else:
            h = _absorb(h, _U64(1))
            h = _absorb(h, _as_u64(tag))
    return int(h)


def mode_base(seed, path_ids, n_modes):
    """Pre-absorbed hash state per (path, mode), shape (n_paths, n_modes).

    Per time step only the step index remains to be absorbed, which keeps
    the per-step cost at one finalize round.
    """
    paths = np.asarray(path_ids, dtype=np.uint64).reshape(-1, 1)
    modes = np.arange(n_modes, dtype=np.uint64).reshape(1, -1)
    h = _finalize(_as_u64(seed) + _GOLDEN)
    h = _absorb(h + np.zeros_like(paths), paths)
    return _absorb(h, modes)


def uniforms_from_base(base, step):
    """Uniforms in (0,1) for one step given the (path, mode) base state."""
    z = _absorb(base, _as_u64(step))
    return ((z >> _U64(11)).astype(np.float64) + 0.5) * _TWO53INV


def normals_from_base(base, step):
    """Standard normals for one step given the (path, mode) base state."""
    return ndtri(uniforms_from_base(base, step))


def normals(seed, path_ids, step, n_modes):
    """Standard normal draws keyed by (seed, path, mode, step).

    Returns an array of shape (len(path_ids), n_modes).  Convenience wrapper
    around :func:`mode_base` + :func:`normals_from_base` for one-shot use.
    """
    return normals_from_base(mode_base(seed, path_ids, n_modes), step)
