"""Binary linear codes, syndromes, exact desk-scale distance/decoding, and
Toeplitz two-universal extraction.

Bit strings are numpy uint8 arrays of 0/1 with index 0 the leftmost (first
transmitted) bit; that one convention is used everywhere, including hex
serialization and Toeplitz indexing.  Large-block operations run on rows
packed into uint64 words.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np

from .errors import ScaleExceeded

_DESK_SCALE = 24  # cap for exhaustive minimum-distance / coset-leader search


# ---------------------------------------------------------------------------
# Bit-string helpers
# ---------------------------------------------------------------------------

def as_bits(seq) -> np.ndarray:
    out = np.asarray(seq, dtype=np.uint8)
    if out.ndim != 1 or np.any(out > 1):
        raise ValueError("bit string must be a 1-D sequence of 0/1")
    return out


def random_bits(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def xor_bits(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) != len(b):
        raise ValueError(f"XOR needs equal lengths, got {len(a)} and {len(b)}")
    return np.bitwise_xor(a, b)


def bits_to_hex(bits: np.ndarray) -> str:
    """Hex serialization, bit 0 = most significant bit of the first nibble;
    the trailing partial byte is zero-padded on the right."""
    if len(bits) == 0:
        return ""
    return bytes(np.packbits(bits)).hex()


def hex_to_bits(hexstr: str, length: int) -> np.ndarray:
    if length == 0:
        return np.zeros(0, dtype=np.uint8)
    raw = np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8)
    return np.unpackbits(raw)[:length].astype(np.uint8)


def bits_to_int(bits: np.ndarray) -> int:
    """Integer with bit i of the string at binary position i (bit 0 = LSB),
    so XOR of integers matches XOR of strings position-wise."""
    value = 0
    for i, b in enumerate(bits):
        if b:
            value |= 1 << i
    return value


def int_to_bits(value: int, length: int) -> np.ndarray:
    return np.array([(value >> i) & 1 for i in range(length)], dtype=np.uint8)


def pack_rows(bits_2d: np.ndarray) -> np.ndarray:
    """Pack a (rows, n) 0/1 matrix into (rows, ceil(n/64)) uint64 words;
    column j lands in word j//64 at bit j%64."""
    rows, n = bits_2d.shape
    words = (n + 63) // 64
    padded = np.zeros((rows, words * 64), dtype=np.uint8)
    padded[:, :n] = bits_2d
    shifts = (np.arange(64, dtype=np.uint64))
    chunks = padded.reshape(rows, words, 64).astype(np.uint64)
    return (chunks << shifts).sum(axis=2, dtype=np.uint64)


def pack_vector(bits: np.ndarray) -> np.ndarray:
    return pack_rows(bits.reshape(1, -1))[0]


def packed_matvec(rows_packed: np.ndarray, x_packed: np.ndarray) -> np.ndarray:
    """GF(2) matrix-vector product on packed rows: parity of AND per row."""
    return (np.bitwise_count(rows_packed & x_packed[None, :]).sum(axis=1) & 1).astype(np.uint8)


def _packed_rank(rows_packed: np.ndarray, n: int) -> int:
    M = rows_packed.copy()
    nrows = M.shape[0]
    r = 0
    for col in range(n):
        if r == nrows:
            break
        w, b = divmod(col, 64)
        colbits = (M[r:, w] >> np.uint64(b)) & np.uint64(1)
        hits = np.nonzero(colbits)[0]
        if hits.size == 0:
            continue
        piv = r + int(hits[0])
        if piv != r:
            M[[r, piv]] = M[[piv, r]]
        below = ((M[r + 1:, w] >> np.uint64(b)) & np.uint64(1)).astype(bool)
        if below.any():
            # columns left of the pivot are already clear below; XOR only
            # the word range that can still change
            M[r + 1:, w:][below] ^= M[r, w:]
        r += 1
    return r


# ---------------------------------------------------------------------------
# Linear codes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearCode:
    """An [n, k] binary linear code held as a full-row-rank parity check.

    ``known_generator`` short-circuits the nullspace computation when the
    code was constructed generator-first (any basis of the row space works).
    """

    n: int
    k: int
    parity_packed: np.ndarray  # (n - k, ceil(n/64)) uint64
    known_generator: "np.ndarray | None" = None

    @cached_property
    def parity_check(self) -> np.ndarray:
        """(n-k, n) dense 0/1 view of the parity-check matrix."""
        r = self.n - self.k
        out = np.zeros((r, self.n), dtype=np.uint8)
        for j in range(self.n):
            w, b = divmod(j, 64)
            out[:, j] = ((self.parity_packed[:, w] >> np.uint64(b)) & np.uint64(1)).astype(np.uint8)
        return out

    @cached_property
    def generator_matrix(self) -> np.ndarray:
        """(k, n) generator derived from the parity check's GF(2) nullspace."""
        if self.known_generator is not None:
            return self.known_generator
        r = self.n - self.k
        if self.k == 0:
            return np.zeros((0, self.n), dtype=np.uint8)
        if r == 0:
            return np.eye(self.n, dtype=np.uint8)
        H = self.parity_check.copy()
        pivots: list[int] = []
        row = 0
        for col in range(self.n):
            if row == r:
                break
            hits = np.nonzero(H[row:, col])[0]
            if hits.size == 0:
                continue
            piv = row + int(hits[0])
            if piv != row:
                H[[row, piv]] = H[[piv, row]]
            mask = H[:, col].astype(bool).copy()
            mask[row] = False
            if mask.any():
                H[mask] ^= H[row]
            pivots.append(col)
            row += 1
        free = [c for c in range(self.n) if c not in pivots]
        G = np.zeros((self.k, self.n), dtype=np.uint8)
        for i, fc in enumerate(free):
            G[i, fc] = 1
            for prow, pc in enumerate(pivots):
                G[i, pc] = H[prow, fc]
        return G

    def codeword_ints(self):
        """Iterate all 2^k - 1 nonzero codewords as position-indexed ints
        (Gray-code order); desk scale only."""
        if self.k > _DESK_SCALE:
            raise ScaleExceeded(f"codeword enumeration capped at k <= {_DESK_SCALE}, got k={self.k}")
        rows = [bits_to_int(self.generator_matrix[i]) for i in range(self.k)]
        cw = 0
        for m in range(1, 1 << self.k):
            cw ^= rows[(m & -m).bit_length() - 1]
            yield cw


def matrix_to_hex(code: LinearCode) -> str:
    """Row-major hex of the dense parity check (rows concatenated)."""
    if code.n == code.k:
        return ""
    return bits_to_hex(code.parity_check.reshape(-1))


def sample_code(n: int, k: int, rng: np.random.Generator) -> LinearCode:
    """Draw an [n, k] code with i.i.d. uniform parity-check entries,
    resampling until the (n-k) x n check has full row rank (expected O(1)
    retries), so the code has exactly 2^(n-k) distinct syndromes."""
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    r = n - k
    words = (n + 63) // 64
    if r == 0:
        return LinearCode(n=n, k=k, parity_packed=np.zeros((0, words), dtype=np.uint64))
    tail_bits = n - (words - 1) * 64
    tail_mask = np.uint64((1 << tail_bits) - 1) if tail_bits < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    # full row rank of the leading r+64 columns certifies full row rank of H;
    # only on a miss (or when n is barely wider than r) scan the whole width
    cert_cols = min(n, r + 64)
    cert_words = (cert_cols + 63) // 64
    while True:
        packed = rng.integers(0, 2**64 - 1, size=(r, words), dtype=np.uint64, endpoint=True)
        packed[:, -1] &= tail_mask
        if _packed_rank(packed[:, :cert_words], cert_cols) == r or _packed_rank(packed, n) == r:
            return LinearCode(n=n, k=k, parity_packed=packed)


def syndrome(code: LinearCode, x: np.ndarray) -> np.ndarray:
    """Parity-check image of x: an (n-k)-bit string over GF(2)."""
    if len(x) != code.n:
        raise ValueError(f"syndrome input length {len(x)} != n={code.n}")
    if code.n == code.k:
        return np.zeros(0, dtype=np.uint8)
    return packed_matvec(code.parity_packed, pack_vector(as_bits(x)))


def min_distance(code: LinearCode) -> int:
    """Exact minimum Hamming weight over all nonzero codewords (k <= 24)."""
    if code.k == 0:
        raise ValueError("minimum distance undefined for a dimension-0 code")
    best = code.n + 1
    for cw in code.codeword_ints():
        w = cw.bit_count()
        if 0 < w < best:
            best = w
            if best == 1:
                break
    return best


def coset_decode(code: LinearCode, target_syndrome: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return y XOR e for the minimum-weight e with Syn(e) = Syn(y) XOR
    target_syndrome, ties broken by lexicographically smallest e (as a bit
    string, index 0 first).  Exhaustive weight-ordered search, n <= 24;
    a zero goal (already in the target coset) needs no search at any n.
    """
    y = as_bits(y)
    if len(y) != code.n:
        raise ValueError(f"coset_decode input length {len(y)} != n={code.n}")
    if len(target_syndrome) != code.n - code.k:
        raise ValueError("target syndrome has wrong length")
    goal_bits = xor_bits(syndrome(code, y), as_bits(target_syndrome))
    if not goal_bits.any():
        return y.copy()
    if code.n > _DESK_SCALE:
        raise ScaleExceeded(f"coset-leader search capped at n <= {_DESK_SCALE}, got n={code.n}")
    goal = bits_to_int(goal_bits)
    cols = [bits_to_int(code.parity_check[:, j]) for j in range(code.n)]
    for w in range(1, code.n + 1):
        matches = []
        for pos in combinations(range(code.n), w):
            acc = 0
            for j in pos:
                acc ^= cols[j]
            if acc == goal:
                matches.append(pos)
        if matches:
            best = min(tuple(int_to_bits(sum(1 << j for j in pos), code.n)) for pos in matches)
            return xor_bits(y, np.array(best, dtype=np.uint8))
    raise AssertionError("unreachable: every syndrome is hit (full-row-rank check)")


# ---------------------------------------------------------------------------
# Toeplitz extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToeplitzSeed:
    """Seed for the Toeplitz two-universal extractor {0,1}^n -> {0,1}^l.

    ``diagonal`` holds the n+l-1 bits that fill the constant diagonals:
    T[i][j] = diagonal[i - j + n - 1], i.e. row i reads the window
    diagonal[i : i+n] right-to-left.
    """

    n: int
    l: int
    diagonal: np.ndarray

    def __post_init__(self):
        if len(self.diagonal) != self.n + self.l - 1:
            raise ValueError(f"diagonal must have n+l-1 = {self.n + self.l - 1} bits, got {len(self.diagonal)}")

    @cached_property
    def matrix(self) -> np.ndarray:
        rows = np.lib.stride_tricks.sliding_window_view(self.diagonal, self.n)[: self.l]
        return rows[:, ::-1].copy()


def sample_toeplitz_seed(n: int, l: int, rng: np.random.Generator) -> ToeplitzSeed:
    return ToeplitzSeed(n=n, l=l, diagonal=random_bits(n + l - 1, rng))


def toeplitz_extract(x: np.ndarray, seed: ToeplitzSeed) -> np.ndarray:
    """Apply the seed's Toeplitz matrix to x over GF(2)."""
    x = as_bits(x)
    if len(x) != seed.n:
        raise ValueError(f"extractor input length {len(x)} != seed.n={seed.n}")
    return packed_matvec(pack_rows(seed.matrix), pack_vector(x))
