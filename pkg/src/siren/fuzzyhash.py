"""SSDeep-compatible context-triggered piecewise hashing (CTPH).

A CTPH digest splits the input at content-defined trigger points -- positions
where a rolling hash over the last 7 bytes reaches a reset value modulo the
block size -- and condenses every piece into one character of a signature.
Because piece boundaries depend only on local content, inserting or deleting
bytes disturbs only nearby signature characters, so similar inputs produce
similar signatures.  Signatures are compared with a weighted edit distance
mapped onto a 0-100 score.

The digest text format is ``block_size:sig1:sig2`` where ``sig1`` holds up to
64 characters computed at ``block_size`` and ``sig2`` up to 32 characters
computed at ``2 * block_size`` (kept so that digests whose block sizes differ
by one step remain comparable).  Output is byte-compatible with the ssdeep
2.14.x tool; scores are integer-identical with its ``fuzzy_compare``.

Implementation notes
--------------------
Two interchangeable engines produce identical results:

- a pure-Python engine (readable reference, used for small inputs and as a
  fallback), and
- a numba-compiled twin of the same loop (see ``siren._spamsum_numba``),
  selected automatically for large inputs when numba is importable.

Both track all 31 candidate block sizes in parallel ("blockhash contexts"),
forking a new context the first time a smaller block size emits a character
and choosing the final block size only at digest time, so no re-hashing pass
is needed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

__all__ = [
    "FuzzyDigest",
    "DigestParseError",
    "ctph_digest",
    "ctph_digest_file",
    "ctph_compare",
    "parse_digest",
    "format_digest",
]

# Parameters shared with the reference implementation.  MIN_BLOCKSIZE is the
# smallest block size; block size at context index i is MIN_BLOCKSIZE << i.
ROLLING_WINDOW = 7
MIN_BLOCKSIZE = 3
HASH_INIT = 0x27
NUM_BLOCKHASHES = 31
SPAMSUM_LENGTH = 64

B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"
_B64_SET = frozenset(B64)

_FNV_PRIME = 0x01000193
_M32 = 0xFFFFFFFF

# The piecewise (non-rolling) hash is the low 6 bits of an FNV-1 step; only
# 6 bits of state survive each step, so the whole transition function is a
# 64 x 64 table: SUM_TABLE[h][c & 0x3f] = ((h * FNV_PRIME) ^ c) & 0x3f.
SUM_TABLE = [
    [((h * _FNV_PRIME) ^ c) & 0x3F for c in range(64)] for h in range(64)
]

# Inputs at least this large are routed to the numba engine when available.
_FAST_THRESHOLD = 32 * 1024

_ENGINES = ("auto", "pure", "fast")


class DigestParseError(ValueError):
    """Raised when digest text is not a well-formed CTPH digest."""


@dataclass(frozen=True)
class FuzzyDigest:
    """An SSDeep-format digest: block size plus two piecewise signatures."""

    block_size: int
    sig1: str
    sig2: str

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise DigestParseError(f"block size must be positive: {self.block_size!r}")
        if len(self.sig1) > SPAMSUM_LENGTH:
            raise DigestParseError(f"sig1 longer than {SPAMSUM_LENGTH} characters")
        if len(self.sig2) > SPAMSUM_LENGTH // 2:
            raise DigestParseError(f"sig2 longer than {SPAMSUM_LENGTH // 2} characters")
        for part in (self.sig1, self.sig2):
            if not _B64_SET.issuperset(part):
                raise DigestParseError(f"illegal signature character in {part!r}")

    def __str__(self) -> str:
        return f"{self.block_size}:{self.sig1}:{self.sig2}"


def parse_digest(text: str) -> FuzzyDigest:
    """Parse canonical digest text ``block_size:sig1:sig2``."""
    if not isinstance(text, str) or not text:
        raise DigestParseError("digest text must be a non-empty string")
    fields = text.split(":")
    if len(fields) != 3:
        raise DigestParseError(f"expected 3 colon-separated fields, got {len(fields)}: {text!r}")
    bs_text, sig1, sig2 = fields
    if not bs_text.isascii() or not bs_text.isdigit() or (len(bs_text) > 1 and bs_text[0] == "0"):
        raise DigestParseError(f"non-numeric block size: {bs_text!r}")
    return FuzzyDigest(int(bs_text), sig1, sig2)


def format_digest(digest: FuzzyDigest) -> str:
    """Render a digest in its canonical text form (inverse of parse_digest)."""
    return str(digest)


# ---------------------------------------------------------------------------
# Digest generation
# ---------------------------------------------------------------------------

def _bhendlimit_for(total_size: int) -> int:
    """Highest context index (plus one) worth maintaining for a known size."""
    bi = 0
    while (MIN_BLOCKSIZE << bi) * SPAMSUM_LENGTH < total_size:
        bi += 1
        if bi == NUM_BLOCKHASHES - 2:
            break
    return bi + 1


def _py_engine(data: bytes, bhendlimit: int):
    """Pure-Python CTPH engine pass.

    Returns the final engine state consumed by :func:`_digest_from_state`:
    ``(counts, digests, halfdigests, hs, halfhs, bhstart, bhend, roll_sum,
    lasth)`` where ``digests`` holds 6-bit character indices (not yet mapped
    through the 64-character alphabet) and ``halfdigests``/``lasth`` use -1
    for "unset".
    """
    n = len(data)
    counts = [0] * NUM_BLOCKHASHES
    digests = [[0] * SPAMSUM_LENGTH for _ in range(NUM_BLOCKHASHES)]
    halfdigests = [-1] * NUM_BLOCKHASHES
    hs = [HASH_INIT] * NUM_BLOCKHASHES
    halfhs = [HASH_INIT] * NUM_BLOCKHASHES
    bhstart = 0
    bhend = 1
    rollmask = 0
    reduce_border = MIN_BLOCKSIZE * SPAMSUM_LENGTH
    need_lasthash = False
    lasth = -1

    window = [0] * ROLLING_WINDOW
    wn = 0
    h1 = h2 = h3 = 0
    table = SUM_TABLE

    for c in data:
        # Rolling hash over the last ROLLING_WINDOW bytes (uint32 wraparound):
        # h1 is the plain sum, h2 the position-weighted sum, h3 a shift/xor mix.
        h2 = (h2 - h1 + ROLLING_WINDOW * c) & _M32
        h1 = (h1 + c - window[wn]) & _M32
        window[wn] = c
        wn += 1
        if wn == ROLLING_WINDOW:
            wn = 0
        h3 = ((h3 << 5) ^ c) & _M32

        c6 = c & 0x3F
        for i in range(bhstart, bhend):
            hs[i] = table[hs[i]][c6]
            halfhs[i] = table[halfhs[i]][c6]
        if need_lasthash:
            lasth = table[lasth][c6]

        horg = (h1 + h2 + h3 + 1) & _M32
        if horg == 0:
            continue
        h = horg // MIN_BLOCKSIZE
        if h & rollmask:
            continue
        if horg % MIN_BLOCKSIZE:
            continue

        # Trigger: every context whose block size divides horg emits one
        # signature character and resets its piecewise hash.
        h >>= bhstart
        i = bhstart
        while True:
            if counts[i] == 0:
                # First character at this block size: open the next context
                # (cloning the running hash state) so digest-time selection
                # can step one block size up.
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
                digests[i][counts[i]] = hs[i]
                halfdigests[i] = halfhs[i]
                counts[i] += 1
                hs[i] = HASH_INIT
                if counts[i] < SPAMSUM_LENGTH // 2:
                    halfhs[i] = HASH_INIT
                    halfdigests[i] = -1
            else:
                # Signature full: keep folding into the last slot so the tail
                # of the input still influences the digest.
                digests[i][SPAMSUM_LENGTH - 1] = hs[i]
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


def _digest_from_state(state, total_size: int) -> FuzzyDigest:
    """Select the final block size and render both signatures."""
    counts, digests, halfdigests, hs, halfhs, bhstart, bhend, roll, lasth = state

    # Initial guess: smallest block size whose full signature covers the
    # input; then walk down while the signature at the guess filled fewer
    # than half its slots.
    bi = bhstart
    while (MIN_BLOCKSIZE << bi) * SPAMSUM_LENGTH < total_size:
        bi += 1
    if bi >= bhend:
        bi = bhend - 1
    while bi > bhstart and min(counts[bi], SPAMSUM_LENGTH - 1) < SPAMSUM_LENGTH // 2:
        bi -= 1

    dindex = min(counts[bi], SPAMSUM_LENGTH - 1)
    sig1 = "".join(B64[v] for v in digests[bi][:dindex])
    if roll != 0:
        sig1 += B64[hs[bi]]
    elif counts[bi] >= SPAMSUM_LENGTH:
        sig1 += B64[digests[bi][SPAMSUM_LENGTH - 1]]

    if bi < bhend - 1:
        bj = bi + 1
        half = min(counts[bj], SPAMSUM_LENGTH - 1, SPAMSUM_LENGTH // 2 - 1)
        sig2 = "".join(B64[v] for v in digests[bj][:half])
        if roll != 0:
            sig2 += B64[halfhs[bj]]
        elif halfdigests[bj] >= 0:
            sig2 += B64[halfdigests[bj]]
    elif roll != 0:
        sig2 = B64[hs[bi]] if bi == 0 else B64[lasth]
    else:
        sig2 = ""

    return FuzzyDigest(MIN_BLOCKSIZE << bi, sig1, sig2)


_nb_engine = None
_nb_engine_failed = False


def _load_fast_engine():
    """Import the numba twin lazily; remember a failed import."""
    global _nb_engine, _nb_engine_failed
    if _nb_engine is None and not _nb_engine_failed:
        try:
            from siren._spamsum_numba import engine_run as _nb
        except Exception:
            _nb_engine_failed = True
        else:
            _nb_engine = _nb
    return _nb_engine


def _run_engine(data: bytes, engine: str) -> FuzzyDigest:
    if engine not in _ENGINES:
        raise ValueError(f"engine must be one of {_ENGINES}, got {engine!r}")
    total = len(data)
    bhendlimit = _bhendlimit_for(total)
    use_fast = engine == "fast" or (engine == "auto" and total >= _FAST_THRESHOLD)
    if use_fast:
        fast = _load_fast_engine()
        if fast is not None:
            import numpy as np

            arr = np.frombuffer(data, dtype=np.uint8)
            state = fast(arr, bhendlimit)
            return _digest_from_state(state, total)
        if engine == "fast":
            raise RuntimeError("numba engine requested but numba is not importable")
    return _digest_from_state(_py_engine(data, bhendlimit), total)


def ctph_digest(data: bytes | bytearray | memoryview, *, engine: str = "auto") -> FuzzyDigest:
    """Digest a byte sequence; deterministic and total (empty input allowed).

    ``engine`` selects the implementation: "pure" forces the pure-Python
    engine, "fast" the numba engine, "auto" (default) picks by input size.
    """
    if isinstance(data, (bytearray, memoryview)):
        data = bytes(data)
    elif not isinstance(data, bytes):
        raise TypeError(f"data must be bytes-like, got {type(data).__name__}")
    return _run_engine(data, engine)


def ctph_digest_file(path: str | os.PathLike, *, engine: str = "auto") -> FuzzyDigest:
    """Digest a file's contents (buffers the file; equivalent to ctph_digest)."""
    with open(path, "rb") as fh:
        return _run_engine(fh.read(), engine)


# ---------------------------------------------------------------------------
# Digest comparison
# ---------------------------------------------------------------------------

def _eliminate_sequences(s: str) -> str:
    """Collapse runs of more than 3 identical characters down to 3.

    Long runs carry almost no information and would otherwise dominate both
    the common-substring gate and the edit distance.
    """
    if len(s) < 4:
        return s
    out = list(s[:3])
    for i in range(3, len(s)):
        ch = s[i]
        if ch != out[-1] or ch != out[-2] or ch != out[-3]:
            out.append(ch)
    return "".join(out)


def _has_common_substring(s1: str, s2: str) -> bool:
    """True iff the strings share a common substring of ROLLING_WINDOW chars."""
    if len(s1) < ROLLING_WINDOW or len(s2) < ROLLING_WINDOW:
        return False
    grams = {s1[i : i + ROLLING_WINDOW] for i in range(len(s1) - ROLLING_WINDOW + 1)}
    return any(
        s2[j : j + ROLLING_WINDOW] in grams
        for j in range(len(s2) - ROLLING_WINDOW + 1)
    )


def _edit_distance(s1: str, s2: str) -> int:
    """Weighted edit distance: insert/remove cost 1, replace cost 2."""
    prev = list(range(len(s2) + 1))
    for i1, a in enumerate(s1):
        cur = [i1 + 1]
        for i2, b in enumerate(s2):
            cur.append(
                min(
                    prev[i2 + 1] + 1,
                    cur[i2] + 1,
                    prev[i2] + (0 if a == b else 2),
                )
            )
        prev = cur
    return prev[-1]


def _score_strings(s1: str, s2: str, block_size: int) -> int:
    """Score two signature strings computed at the same block size (0-100)."""
    if not _has_common_substring(s1, s2):
        return 0
    score = _edit_distance(s1, s2)
    # Scale the distance by the combined length (proportion changed), rescale
    # to 0-100, and invert so 100 means a perfect match.
    score = score * SPAMSUM_LENGTH // (len(s1) + len(s2))
    score = 100 * score // SPAMSUM_LENGTH
    score = 100 - score
    # Small block sizes cannot justify high scores on short signatures.
    if block_size < (99 + ROLLING_WINDOW) // ROLLING_WINDOW * MIN_BLOCKSIZE:
        cap = block_size // MIN_BLOCKSIZE * min(len(s1), len(s2))
        score = min(score, cap)
    return score


def ctph_compare(a: FuzzyDigest | str, b: FuzzyDigest | str) -> int:
    """Similarity between two digests on a 0-100 scale.

    Returns 0 when the block sizes are not within one doubling step of each
    other (such digests carry no comparable signature), 100 for effectively
    identical digests.  Accepts digest objects or digest text; malformed text
    raises :class:`DigestParseError`.
    """
    if isinstance(a, str):
        a = parse_digest(a)
    if isinstance(b, str):
        b = parse_digest(b)
    if not isinstance(a, FuzzyDigest) or not isinstance(b, FuzzyDigest):
        raise TypeError("ctph_compare expects FuzzyDigest or digest text")

    bs1, bs2 = a.block_size, b.block_size
    if bs1 != bs2 and bs1 * 2 != bs2 and (bs1 % 2 == 1 or bs1 // 2 != bs2):
        return 0

    s1b1 = _eliminate_sequences(a.sig1)
    s1b2 = _eliminate_sequences(a.sig2)
    s2b1 = _eliminate_sequences(b.sig1)
    s2b2 = _eliminate_sequences(b.sig2)

    if bs1 == bs2 and s1b1 == s2b1 and s1b2 == s2b2:
        return 100

    if bs1 == bs2:
        return max(
            _score_strings(s1b1, s2b1, bs1),
            _score_strings(s1b2, s2b2, bs1 * 2),
        )
    if bs1 * 2 == bs2:
        return _score_strings(s2b1, s1b2, bs2)
    return _score_strings(s1b1, s2b2, bs1)
