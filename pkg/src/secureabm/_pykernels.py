"""Pure numpy implementation of the batched secret-sharing kernels.

Bit-for-bit compatible with the compiled ``_core`` extension; selected by
:mod:`secureabm.kernels` when the extension is unavailable.

A *session batch* is described by ``offsets`` (length ``S + 1``) into a
``values`` array of shape ``(total_participants, m)``: session ``s`` has
participants ``offsets[s]:offsets[s + 1]`` and each contributes an
``m``-vector of group elements.
"""

from __future__ import annotations

import numpy as np

from .rng import ATTEMPT_SHIFT, GOLDEN, GOLDEN2

_U = np.uint64
_M32 = _U(0xFFFFFFFF)


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
    return z ^ (z >> _U(31))


def words(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(keys + (counters + _U(1)) * _U(GOLDEN))


def uniform_mod(keys: np.ndarray, counters: np.ndarray, p: int) -> np.ndarray:
    keys, counters = np.broadcast_arrays(
        np.asarray(keys, dtype=np.uint64), np.asarray(counters, dtype=np.uint64)
    )
    shape = keys.shape
    keys, counters = keys.ravel(), counters.ravel()
    shift = _U(64 - p.bit_length())
    pu = _U(p)
    out = words(keys, counters) >> shift
    bad = np.flatnonzero(out >= pu)
    attempt = 0
    while bad.size:
        attempt += 1
        ctr = counters[bad] | _U(attempt << ATTEMPT_SHIFT)
        redo = words(keys[bad], ctr) >> shift
        out[bad] = redo
        bad = bad[redo >= pu]
    return out.reshape(shape)


def uniform01(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    return (words(keys, counters) >> _U(11)).astype(np.float64) * (1.0 / (1 << 53))


def sender_keys(session_keys: np.ndarray, n: int) -> np.ndarray:
    """Share-stream keys, shape ``(len(session_keys), n)``."""
    q = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        tweak = q * _U(GOLDEN2)
    return mix64(np.asarray(session_keys, dtype=np.uint64)[:, None] ^ tweak[None, :])


def add_mod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    # both branches of np.where are evaluated; the discarded one may wrap
    with np.errstate(over="ignore"):
        s = a + b
        return np.where(s >= _U(p), s - _U(p), s)


def sub_mod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.where(a >= b, a - b, a + (_U(p) - b))


def _combine_halves(hi: np.ndarray, lo: np.ndarray, p: int) -> np.ndarray:
    pu = _U(p)
    x = hi % pu
    with np.errstate(over="ignore"):
        for _ in range(32):
            x = x << _U(1)
            x = np.where(x >= pu, x - pu, x)
    return add_mod(x, lo % pu, p)


def mod_sum(a: np.ndarray, axis: int, p: int) -> np.ndarray:
    """Sum of elements of ``Z_p`` along ``axis`` without uint64 overflow."""
    a = np.asarray(a, dtype=np.uint64)
    lo = (a & _M32).sum(axis=axis, dtype=np.uint64)
    hi = (a >> _U(32)).sum(axis=axis, dtype=np.uint64)
    return _combine_halves(hi, lo, p)


def group_mod_sum(values: np.ndarray, offsets: np.ndarray, p: int) -> np.ndarray:
    """Per-session sum of ``values`` rows, shape ``(S, m)``."""
    values = np.asarray(values, dtype=np.uint64)
    offsets = np.asarray(offsets, dtype=np.int64)
    n_sessions = len(offsets) - 1
    out = np.zeros((n_sessions, values.shape[1]), dtype=np.uint64)
    nonempty = offsets[1:] > offsets[:-1]
    if not nonempty.any():
        return out
    starts = offsets[:-1][nonempty]
    lo = np.add.reduceat(values & _M32, starts, axis=0)
    hi = np.add.reduceat(values >> _U(32), starts, axis=0)
    out[nonempty] = _combine_halves(hi, lo, p)
    return out


def _prepare(keys, offsets, values):
    keys = np.asarray(keys, dtype=np.uint64)
    offsets = np.asarray(offsets, dtype=np.int64)
    values = np.asarray(values, dtype=np.uint64)
    if values.ndim != 2 or offsets.shape[0] != keys.shape[0] + 1 or offsets[-1] != values.shape[0]:
        raise ValueError("inconsistent session batch layout")
    return keys, offsets, values


def _size_groups(offsets: np.ndarray):
    sizes = np.diff(offsets)
    for n in np.unique(sizes):
        if n == 0:
            continue
        yield int(n), np.nonzero(sizes == n)[0]


def _share_block(keys, offsets, values, sess, n, p):
    """Share tensor ``(len(sess), n, n, m)`` indexed [session, sender, recipient, component]."""
    m = values.shape[1]
    rows = offsets[sess][:, None] + np.arange(n)[None, :]
    vals = values[rows]
    sk = sender_keys(keys[sess], n)
    ctr = (np.arange(n - 1, dtype=np.uint64)[:, None] * _U(m)
           + np.arange(m, dtype=np.uint64)[None, :])
    rand = uniform_mod(sk[:, :, None, None], ctr[None, None, :, :], p)
    residual = sub_mod(vals, mod_sum(rand, 2, p), p)
    return np.concatenate([rand, residual[:, :, None, :]], axis=2)


def session_shares(keys, offsets, values, p: int) -> np.ndarray:
    """All shares of a session batch, rows ordered by (session, sender, recipient)."""
    keys, offsets, values = _prepare(keys, offsets, values)
    sizes = np.diff(offsets)
    m = values.shape[1]
    starts = np.concatenate([[0], np.cumsum(sizes * sizes)])
    out = np.zeros((int(starts[-1]), m), dtype=np.uint64)
    for n, sess in _size_groups(offsets):
        block = _share_block(keys, offsets, values, sess, n, p)
        rows = starts[sess][:, None] + np.arange(n * n)[None, :]
        out[rows.ravel()] = block.reshape(-1, m)
    return out


def session_partials(keys, offsets, values, p: int) -> np.ndarray:
    """Partial sums held by each participant after share exchange, shape ``(total, m)``."""
    keys, offsets, values = _prepare(keys, offsets, values)
    out = np.zeros_like(values)
    for n, sess in _size_groups(offsets):
        block = _share_block(keys, offsets, values, sess, n, p)
        partial = mod_sum(block, 1, p)
        rows = offsets[sess][:, None] + np.arange(n)[None, :]
        out[rows.ravel()] = partial.reshape(-1, values.shape[1])
    return out
