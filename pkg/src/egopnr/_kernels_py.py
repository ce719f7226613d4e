"""Pure-numpy versions of the sampling kernels.

These are the reference implementations; ``_kernels.pyx`` must agree with
them bit for bit. All randomness arrives as pre-drawn uniforms in ``[0, 1)``
so both backends consume identical streams.

Sampler codes: 0 evenly spaced, 1 stratified random, 2 uniform random
(without replacement, Floyd's algorithm with one uniform per pick).
"""

import numpy as np

EVEN, STRATIFIED, RANDOM = 0, 1, 2


def sample_indices(kind, n, starts, lengths, u):
    """Return sorted frame indices, shape ``[T, n]`` int64.

    ``starts``/``lengths`` are the trimmed windows (``[T]``), ``u`` is ``[T, n]``
    uniforms (ignored for the evenly spaced sampler).
    """
    starts = np.asarray(starts, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    u = np.asarray(u, dtype=np.float64)
    T = starts.shape[0]
    i = np.arange(n, dtype=np.int64)[None, :]
    S = lengths[:, None]
    if kind == EVEN:
        rel = ((2 * i + 1) * S) // (2 * n)
    elif kind == STRATIFIED:
        lo = (i * S + n - 1) // n
        hi = ((i + 1) * S + n - 1) // n
        off = np.floor(u * (hi - lo)).astype(np.int64)
        rel = lo + np.minimum(off, hi - lo - 1)
    elif kind == RANDOM:
        rel = np.empty((T, n), dtype=np.int64)
        for j in range(n):
            m = lengths - n + j
            t = np.minimum(np.floor(u[:, j] * (m + 1)).astype(np.int64), m)
            if j:
                dup = (rel[:, :j] == t[:, None]).any(axis=1)
                t = np.where(dup, m, t)
            rel[:, j] = t
        rel.sort(axis=1)
    else:
        raise ValueError(f"unknown sampler code {kind}")
    return starts[:, None] + rel


def nearest_slots(indices, pnr):
    """Slot of the sampled frame closest to ``pnr``; ties go to the earlier slot."""
    d = np.abs(np.asarray(indices, dtype=np.int64) - np.asarray(pnr, dtype=np.int64)[:, None])
    return np.argmin(d, axis=1).astype(np.int64)


def shift_distances(kind, n, starts, lengths, pnr, u):
    """Distance in frames from each ``pnr`` to its nearest sampled frame."""
    idx = sample_indices(kind, n, starts, lengths, u)
    d = np.abs(idx - np.asarray(pnr, dtype=np.int64)[:, None])
    return d.min(axis=1)
