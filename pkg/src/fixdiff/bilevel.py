"""
Hypergradients of f(lam) = E(w(lam), lam).

Contains:
- UpperLevel and the two concrete validation losses
- bitd_hypergrad, baid_fp_hypergrad, nsid_bilevel
- outer_loop with box / nonnegative projections

The outer loop is plumbing: no stationarity rate is claimed for it.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from fixdiff.deterministic import aid_fp_vjp, itd_vjp
from fixdiff.errors import ArgumentError, NonFiniteError
from fixdiff.linalg import Rng, as_vector
from fixdiff.maps import MapSelection, StochasticMapSelection, _softmax, minibatch_sampler
from fixdiff.solver import Trajectory
from fixdiff.stochastic import SampleStreams, StepSchedule, nsid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpperLevel:
    """
    Upper-level loss E(w, lam) with selected partial gradients.

    Each callable takes an optional token (None = full population). A
    sampler makes the loss usable by nsid_bilevel.
    """

    d: int
    m: int
    value_fn: Callable[[np.ndarray, np.ndarray, Any], float]
    grad_w_fn: Callable[[np.ndarray, np.ndarray, Any], np.ndarray]
    grad_lam_fn: Callable[[np.ndarray, np.ndarray, Any], np.ndarray]
    sampler: Optional[Callable[[Rng], Any]] = None
    name: str = "upper-level"
    meta: dict = field(default_factory=dict)

    def value(self, w, lam, token=None) -> float:
        return float(self.value_fn(as_vector(w, self.d), as_vector(lam, self.m), token))

    def grad_w(self, w, lam, token=None) -> np.ndarray:
        return self.grad_w_fn(as_vector(w, self.d), as_vector(lam, self.m), token)

    def grad_lam(self, w, lam, token=None) -> np.ndarray:
        return self.grad_lam_fn(as_vector(w, self.d), as_vector(lam, self.m), token)

    def sample_stream(self, rng: Rng, count: int) -> List[Any]:
        if self.sampler is None:
            return [None] * count
        return [self.sampler(rng) for _ in range(count)]

    def batch_grads(self, w, lam, tokens: Sequence[Any]) -> Tuple[np.ndarray, np.ndarray]:
        gw = np.zeros(self.d)
        gl = np.zeros(self.m)
        for tok in tokens:
            gw = gw + self.grad_w(w, lam, tok)
            gl = gl + self.grad_lam(w, lam, tok)
        return gw / len(tokens), gl / len(tokens)

    @classmethod
    def from_functions(cls, d: int, m: int, value, grad_w, grad_lam, name: str = "upper-level") -> "UpperLevel":
        """Deterministic loss from token-free callables."""
        return cls(
            d,
            m,
            lambda w, lam, _t: value(w, lam),
            lambda w, lam, _t: np.asarray(grad_w(w, lam), dtype=np.float64),
            lambda w, lam, _t: np.asarray(grad_lam(w, lam), dtype=np.float64),
            name=name,
        )


def validation_square_loss(x_val, y_val, m: int = 2, batch_size: Optional[int] = None) -> UpperLevel:
    """E(w) = n_v^-1 ||X_v w - y_v||^2, independent of lam."""
    x = np.ascontiguousarray(x_val, dtype=np.float64)
    y = as_vector(y_val, x.shape[0], "y_val")
    n, d = x.shape

    def rows(token):
        return (x, y) if token is None else (x[token], y[token])

    def value(w, lam, token):
        xr, yr = rows(token)
        r = xr @ w - yr
        return float(r @ r) / len(yr)

    def grad_w(w, lam, token):
        xr, yr = rows(token)
        return 2.0 / len(yr) * (xr.T @ (xr @ w - yr))

    return UpperLevel(
        d,
        m,
        value,
        grad_w,
        lambda w, lam, token: np.zeros(m),
        sampler=None if batch_size is None else minibatch_sampler(n, batch_size),
        name="validation-mse",
    )


def validation_cross_entropy(
    x_val, labels, n_classes: int, m: int, batch_size: Optional[int] = None
) -> UpperLevel:
    """Mean softmax cross-entropy of W (p x c, row-major) on a validation set."""
    x = np.ascontiguousarray(x_val, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64)
    n, p = x.shape
    if np.any(lab < 0) or np.any(lab >= n_classes):
        raise ArgumentError(f"label out of range [0, {n_classes})")
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), lab] = 1.0
    d = p * n_classes

    def rows(token):
        return (x, onehot) if token is None else (x[token], onehot[token])

    def value(w, lam, token):
        xr, yr = rows(token)
        z = xr @ w.reshape(p, n_classes)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-np.sum(yr * logp) / len(xr))

    def grad_w(w, lam, token):
        xr, yr = rows(token)
        probs = _softmax(xr @ w.reshape(p, n_classes))
        return (xr.T @ (probs - yr) / len(xr)).ravel()

    return UpperLevel(
        d,
        m,
        value,
        grad_w,
        lambda w, lam, token: np.zeros(m),
        sampler=None if batch_size is None else minibatch_sampler(n, batch_size),
        name="validation-cross-entropy",
    )


# -------------------- HYPERGRADIENTS --------------------


def bitd_hypergrad(upper: UpperLevel, mp: MapSelection, traj: Trajectory, lam) -> np.ndarray:
    """ITD reverse sweep seeded with d1E(w_t), plus d2E(w_t)."""
    w_t = traj.w_t
    return itd_vjp(mp, traj, lam, upper.grad_w(w_t, lam)).value + upper.grad_lam(w_t, lam)


def baid_fp_hypergrad(upper: UpperLevel, mp: MapSelection, w_t, lam, k: int) -> np.ndarray:
    """AID-FP seeded with d1E(w_t), plus d2E(w_t)."""
    return aid_fp_vjp(mp, w_t, lam, upper.grad_w(w_t, lam), k).value + upper.grad_lam(w_t, lam)


def nsid_bilevel(
    upper: UpperLevel,
    that: StochasticMapSelection,
    g: MapSelection,
    w_t,
    lam,
    k: int,
    J1: int,
    J2: int,
    sched: StepSchedule,
    streams: SampleStreams,
    zeta: Sequence[Any],
    q_hat: Optional[float] = None,
) -> np.ndarray:
    """Minibatch upper gradient over J1 tokens of zeta, then NSID with J2 tokens."""
    if k < 1 or J1 < 1 or J2 < 1:
        raise ArgumentError("nsid_bilevel needs k, J1, J2 >= 1")
    if len(zeta) < J1:
        raise ArgumentError(f"zeta stream has {len(zeta)} tokens, need {J1}")
    gw, gl = upper.batch_grads(w_t, lam, list(zeta[:J1]))
    r = nsid(that, g, w_t, lam, gw, k, J2, sched, streams, q_hat).value
    return r + gl


# -------------------- OUTER LOOP --------------------


@dataclass(frozen=True)
class OuterStep:
    lam: np.ndarray
    value: float
    grad: np.ndarray


def project_nonnegative(lam: np.ndarray) -> np.ndarray:
    return np.maximum(lam, 0.0)


def project_box(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    if lo > hi:
        raise ArgumentError("box needs lo <= hi")

    def proj(lam: np.ndarray) -> np.ndarray:
        return np.clip(lam, lo, hi)

    return proj


def outer_loop(
    lam0,
    hypergrad_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    projection: Callable[[np.ndarray], np.ndarray],
    steps: int,
    step_size: float,
    maximize: bool = False,
) -> List[OuterStep]:
    """
    Projected (ascent or) descent on lam; hypergrad_fn returns (f_t(lam), grad).

    The returned trace has steps + 1 entries, the last one evaluated at the
    final lam.
    """
    if steps < 0 or step_size <= 0:
        raise ArgumentError("outer_loop needs steps >= 0 and step_size > 0")
    lam = projection(np.array(lam0, dtype=np.float64))
    sign = 1.0 if maximize else -1.0
    trace: List[OuterStep] = []
    for s in range(steps + 1):
        if not np.all(np.isfinite(lam)):
            raise NonFiniteError(f"non-finite lam at outer step {s}")
        value, grad = hypergrad_fn(lam)
        trace.append(OuterStep(lam.copy(), float(value), np.asarray(grad, dtype=np.float64)))
        logger.debug("outer step %d: f=%.6g", s, value)
        if s < steps:
            lam = projection(lam + sign * step_size * np.asarray(grad))
    return trace
