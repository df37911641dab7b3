"""Numba-compiled twin of the pure-Python CTPH engine.

``engine_run`` mirrors :func:`siren.fuzzyhash._py_engine` statement for
statement and returns the same state tuple; equivalence between the two
engines is property-tested.  This module is imported lazily so that the
package works (more slowly) without numba.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from siren.fuzzyhash import (
    HASH_INIT,
    MIN_BLOCKSIZE,
    NUM_BLOCKHASHES,
    ROLLING_WINDOW,
    SPAMSUM_LENGTH,
    SUM_TABLE,
)

_M32 = 0xFFFFFFFF
_SUM_TABLE = np.array(SUM_TABLE, dtype=np.int64)


@njit(cache=True)
def _engine_kernel(data, bhendlimit):  # pragma: no cover - exercised via wrapper
    n = data.size
    counts = np.zeros(NUM_BLOCKHASHES, np.int64)
    digests = np.zeros((NUM_BLOCKHASHES, SPAMSUM_LENGTH), np.int64)
    halfdigests = np.full(NUM_BLOCKHASHES, -1, np.int64)
    hs = np.full(NUM_BLOCKHASHES, HASH_INIT, np.int64)
    halfhs = np.full(NUM_BLOCKHASHES, HASH_INIT, np.int64)
    bhstart = 0
    bhend = 1
    rollmask = 0
    reduce_border = MIN_BLOCKSIZE * SPAMSUM_LENGTH
    need_lasthash = False
    lasth = -1

    window = np.zeros(ROLLING_WINDOW, np.int64)
    wn = 0
    h1 = 0
    h2 = 0
    h3 = 0

    for k in range(n):
        c = np.int64(data[k])
        h2 = (h2 - h1 + ROLLING_WINDOW * c) & _M32
        h1 = (h1 + c - window[wn]) & _M32
        window[wn] = c
        wn += 1
        if wn == ROLLING_WINDOW:
            wn = 0
        h3 = ((h3 << 5) ^ c) & _M32

        c6 = c & 0x3F
        for i in range(bhstart, bhend):
            hs[i] = _SUM_TABLE[hs[i], c6]
            halfhs[i] = _SUM_TABLE[halfhs[i], c6]
        if need_lasthash:
            lasth = _SUM_TABLE[lasth, c6]

        horg = (h1 + h2 + h3 + 1) & _M32
        if horg == 0:
            continue
        h = horg // MIN_BLOCKSIZE
        if h & rollmask:
            continue
        if horg % MIN_BLOCKSIZE:
            continue

        h >>= bhstart
        i = bhstart
        while True:
            if counts[i] == 0:
                if bhend <= bhendlimit:
                    hs[bhend] = hs[bhend - 1]
                    halfhs[bhend] = halfhs[bhend - 1]
                    counts[bhend] = 0
                    halfdigests[bhend] = -1
                    bhend += 1
                elif bhend == NUM_BLOCKHASHES and not need_lasthash:
                    need_lasthash = True
                    lasth = hs[bhend - 1]
            if counts[i] < SPAMSUM_LENGTH - 1:
                digests[i, counts[i]] = hs[i]
                halfdigests[i] = halfhs[i]
                counts[i] += 1
                hs[i] = HASH_INIT
                if counts[i] < SPAMSUM_LENGTH // 2:
                    halfhs[i] = HASH_INIT
                    halfdigests[i] = -1
            else:
                digests[i, SPAMSUM_LENGTH - 1] = hs[i]
                halfdigests[i] = halfhs[i]
                counts[i] += 1
                if (
                    bhend - bhstart >= 2
                    and reduce_border < n
                    and counts[bhstart + 1] >= SPAMSUM_LENGTH // 2
                ):
                    bhstart += 1
                    reduce_border *= 2
                    rollmask = rollmask * 2 + 1
            if h & 1:
                break
            h >>= 1
            i += 1
            if i >= bhend:
                break

    roll = (h1 + h2 + h3) & _M32
    return counts, digests, halfdigests, hs, halfhs, bhstart, bhend, roll, lasth


def engine_run(data: np.ndarray, bhendlimit: int):
    """Run the compiled engine and return state in pure-Python containers."""
    counts, digests, halfdigests, hs, halfhs, bhstart, bhend, roll, lasth = _engine_kernel(
        data, bhendlimit
    )
    return (
        counts.tolist(),
        digests.tolist(),
        halfdigests.tolist(),
        hs.tolist(),
        halfhs.tolist(),
        int(bhstart),
        int(bhend),
        int(roll),
        int(lasth),
    )
