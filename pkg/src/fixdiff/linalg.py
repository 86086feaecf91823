"""
Dense linear algebra and deterministic randomness.

Contains:
- Rng: xoshiro256** generator seeded through splitmix64
- spectral_norm / operator_norms: operator 2-norms
- solve_dense: partial-pivot LU solve
- extreme_eigs_gram: largest and smallest eigenvalue of n^-1 X^T X
"""

import logging
import math
from typing import Callable, Iterator, Optional, Tuple

import numpy as np

from fixdiff.errors import ArgumentError, NonFiniteError, ShapeError, SingularSystemError

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi
PIVOT_THRESHOLD = 1e-12

# -------------------- PRNG --------------------


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def splitmix64(state: int) -> Tuple[int, int]:
    """Advance a splitmix64 state. Returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Rng:
    """
    xoshiro256** pseudo-random generator.

    The stream depends only on the seed, so experiments are reproducible
    across runs and platforms. An Rng is single-owner: parallel work takes
    independent children via child().
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform draw in (0, 1] built from the top 53 bits."""
        return ((self.next_u64() >> 11) + 1) * (1.0 / 9007199254740992.0)

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def gaussian(self, n: int) -> np.ndarray:
        """n standard normal draws by Box-Muller; pairs are never cached between calls."""
        if n < 0:
            raise ArgumentError("n must be non-negative")
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            u1 = self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(_TWO_PI * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(_TWO_PI * u2)
            i += 2
        return out

    def integers(self, n: int, high: int) -> np.ndarray:
        """n integers uniform in [0, high) by multiply-shift."""
        if high <= 0:
            raise ArgumentError("high must be positive")
        return np.array([(self.next_u64() * high) >> 64 for _ in range(n)], dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = (self.next_u64() * (i + 1)) >> 64
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def child(self, index: int) -> "Rng":
        """Independent generator whose seed lineage is (seed, index)."""
        _, mixed = splitmix64((self.seed ^ ((index + 1) * 0xD1B54A32D192ED03)) & _MASK64)
        return Rng(mixed)


def gaussian(rng: Rng, n: int) -> np.ndarray:
    """n i.i.d. standard normal draws from rng."""
    return rng.gaussian(n)


# -------------------- NORMS --------------------


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("non-finite matrix")


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={a.ndim}")
    return a


def _start_vectors(n: int) -> Iterator[np.ndarray]:
    # All-ones first; the second start covers matrices whose top singular
    # vector is orthogonal to it.
    yield np.full(n, 1.0 / math.sqrt(n))
    v = Rng(0x5EED).uniforms(n) - 0.5
    yield v / np.linalg.norm(v)


def _power_top_eig(
    apply: Callable[[np.ndarray], np.ndarray], v: np.ndarray, tol: float, max_iter: int
) -> float:
    """Top eigenvalue of a symmetric PSD operator by power iteration from v."""
    theta = 0.0
    for _ in range(max_iter):
        w = apply(v)
        theta = float(v @ w)
        if np.linalg.norm(w - theta * v) <= tol * max(1.0, abs(theta)):
            break
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    else:
        logger.debug("power iteration hit max_iter=%d (theta=%.6g)", max_iter, theta)
    return max(theta, 0.0)


def spectral_norm(m, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """
    Operator 2-norm by power iteration on M^T M.

    Vectors are treated as single columns, so their norm is the Euclidean norm.
    """
    if tol <= 0:
        raise ArgumentError("tol must be positive")
    a = _as_matrix(m)
    _check_finite(a)
    if a.size == 0 or not np.any(a):
        return 0.0
    if a.shape[1] == 1:
        return float(np.linalg.norm(a))

    def gram(v: np.ndarray) -> np.ndarray:
        return a.T @ (a @ v)

    theta = max(_power_top_eig(gram, v0, tol, max_iter) for v0 in _start_vectors(a.shape[1]))
    return math.sqrt(theta)


def operator_norms(stack: np.ndarray) -> np.ndarray:
    """Exact operator 2-norms of a stack of matrices with shape (..., r, c)."""
    a = np.asarray(stack, dtype=np.float64)
    _check_finite(a)
    if a.shape[-1] == 1:
        return np.linalg.norm(a[..., 0], axis=-1)
    return np.linalg.norm(a, ord=2, axis=(-2, -1))


# -------------------- DENSE SOLVE --------------------


def solve_dense(a, b) -> np.ndarray:
    """
    Solve A x = b by LU with partial pivoting.

    b may be a vector or a matrix of right-hand sides. Raises
    SingularSystemError when a pivot magnitude is at or below 1e-12.
    """
    lu = np.array(a, dtype=np.float64)
    if lu.ndim != 2 or lu.shape[0] != lu.shape[1]:
        raise ShapeError(f"solve_dense needs a square matrix, got {lu.shape}")
    rhs = np.array(b, dtype=np.float64)
    vector_rhs = rhs.ndim == 1
    if vector_rhs:
        rhs = rhs.reshape(-1, 1)
    n = lu.shape[0]
    if rhs.shape[0] != n:
        raise ShapeError(f"right-hand side has {rhs.shape[0]} rows, expected {n}")
    _check_finite(lu)
    _check_finite(rhs)

    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) <= PIVOT_THRESHOLD:
            raise SingularSystemError(k, float(abs(lu[p, k])))
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            rhs[[k, p]] = rhs[[p, k]]
        factors = lu[k + 1 :, k] / lu[k, k]
        lu[k + 1 :, k:] -= np.outer(factors, lu[k, k:])
        rhs[k + 1 :] -= np.outer(factors, rhs[k])

    x = np.empty_like(rhs)
    for k in range(n - 1, -1, -1):
        x[k] = (rhs[k] - lu[k, k + 1 :] @ x[k + 1 :]) / lu[k, k]
    return x[:, 0] if vector_rhs else x


# -------------------- GRAM SPECTRUM --------------------


def extreme_eigs_gram(x, tol: float = 1e-10, max_iter: int = 50000) -> Tuple[float, float]:
    """
    Largest and smallest eigenvalue (L, mu) of n^-1 X^T X, matrix-free.

    mu is recovered from the top eigenvalue of L*I - n^-1 X^T X. Both values
    are clamped to be non-negative.
    """
    a = _as_matrix(x)
    if a.size == 0:
        raise ArgumentError("X must be nonempty")
    _check_finite(a)
    n, d = a.shape
    if not np.any(a):
        return 0.0, 0.0

    def gram(v: np.ndarray) -> np.ndarray:
        return a.T @ (a @ v) / n

    big = max(_power_top_eig(gram, v0, tol, max_iter) for v0 in _start_vectors(d))

    def shifted(v: np.ndarray) -> np.ndarray:
        return big * v - gram(v)

    top_shift = max(_power_top_eig(shifted, v0, tol, max_iter) for v0 in _start_vectors(d))
    mu = min(max(big - top_shift, 0.0), big)
    return big, mu


def as_vector(v, length: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Contiguous float64 copy of v, optionally checking its length."""
    out = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    if length is not None and out.shape[0] != length:
        raise ShapeError(f"{name} has length {out.shape[0]}, expected {length}")
    return out
