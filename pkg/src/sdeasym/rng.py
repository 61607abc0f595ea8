"""Counter-based Gaussian noise.

Every normal variate is a pure function of ``(seed, path_index, step, component)``:
the key ``(seed, path_index)`` selects a SplitMix64 stream and the counter
``(step, component)`` selects a position in it.  No generator state is carried
between calls, so paths can be simulated in any grouping or order and still
see identical increments.

Normals come from the Box-Muller cosine branch, two 53-bit uniforms each.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_COMPONENT_BITS = 16
MAX_COMPONENTS = 1 << (_COMPONENT_BITS - 1)
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / float(1 << 53)

_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def path_keys(seed: int, path_index) -> np.ndarray:
    """Stream keys for the given path indices (uint64 array)."""
    idx = np.atleast_1d(np.asarray(path_index)).astype(np.uint64)
    s = np.full(idx.shape, int(seed) & _MASK64, dtype=np.uint64)
    # two rounds so that nearby seeds and nearby path indices decorrelate
    k = _mix(s + _GOLDEN)
    return _mix(k ^ _mix(idx * _GOLDEN + _M2))


def normals(keys: np.ndarray, step, n_components: int) -> np.ndarray:
    """Standard normals of shape ``(len(keys), n_components)``.

    ``step`` is a scalar or an array broadcastable against ``keys``.
    """
    if n_components > MAX_COMPONENTS:
        raise ValueError(f"at most {MAX_COMPONENTS} components per step")
    keys = np.asarray(keys, dtype=np.uint64)
    step = np.broadcast_to(np.asarray(step).astype(np.uint64), keys.shape)
    comp = np.arange(n_components, dtype=np.uint64)
    counter = (step[:, None] << np.uint64(_COMPONENT_BITS)) | comp[None, :]
    base = keys[:, None] + (counter << np.uint64(1)) * _GOLDEN
    u1 = ((_mix(base + _GOLDEN) >> _S11).astype(np.float64) + 1.0) * _INV_2_53
    u2 = (_mix(base + _GOLDEN + _GOLDEN) >> _S11).astype(np.float64) * _INV_2_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
