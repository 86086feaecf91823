"""
Stochastic implicit differentiation.

Contains:
- StepSchedule (constant / harmonic) and theoretical_schedule
- SampleStreams: the two independent token streams
- stochastic_linear_solve: stochastic fixed-point iteration on the adjoint system
- nsid and sid_baseline
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from fixdiff.deterministic import DerivEstimate
from fixdiff.errors import ArgumentError, DivergenceError
from fixdiff.linalg import Rng, as_vector
from fixdiff.maps import MapSelection, StochasticMapSelection, compose, identity_map

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6

# -------------------- STEP SIZES --------------------


@dataclass(frozen=True)
class StepSchedule:
    """eta_i = a1 / (a2 + i) (harmonic) or a1 / a2 (constant)."""

    kind: str
    a1: float
    a2: float

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic"):
            raise ArgumentError(f"unknown schedule kind {self.kind!r}")
        if self.a1 <= 0:
            raise ArgumentError("a1 must be positive")
        if self.a2 < 0 or (self.kind == "constant" and self.a2 == 0):
            raise ArgumentError("a2 must be positive for constant and non-negative for harmonic schedules")

    def eta(self, i: int) -> float:
        if self.kind == "constant":
            return self.a1 / self.a2
        return self.a1 / (self.a2 + i)

    @property
    def label(self) -> str:
        return "const" if self.kind == "constant" else "dec"

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls("constant", float(eta), 1.0)

    @classmethod
    def harmonic(cls, a1: float, a2: float) -> "StepSchedule":
        return cls("harmonic", float(a1), float(a2))

    @classmethod
    def from_beta(cls, b1: float, b2: float, beta: float, kind: str = "harmonic") -> "StepSchedule":
        """a1 = b1 * beta and a2 = b2 * beta."""
        return cls(kind, b1 * beta, b2 * beta)

    @classmethod
    def theoretical(cls, q: float, sigma2: float = 0.0) -> "StepSchedule":
        beta, gamma = theoretical_schedule(q, sigma2)
        return cls.harmonic(beta, gamma)


def theoretical_schedule(q: float, sigma2: float = 0.0) -> Tuple[float, float]:
    """beta = 2 / (1 - q^2) and gamma = beta * (1 + sigma2)."""
    if not 0.0 <= q < 1.0:
        raise ArgumentError(f"q must lie in [0, 1), got {q}")
    if sigma2 < 0:
        raise ArgumentError("sigma2 must be non-negative")
    beta = 2.0 / (1.0 - q * q)
    return beta, beta * (1.0 + sigma2)


# Hand-tuned (a1, a2) per problem for the decreasing schedule.
SCHEDULE_PRESETS: Dict[str, Tuple[float, float]] = {
    "elastic": (0.5, 2.0),
    "poisoning": (2.0, 0.01),
}


# -------------------- SAMPLE STREAMS --------------------


@dataclass(frozen=True)
class SampleStreams:
    """first drives the minibatch means (J tokens); second drives the linear solve (k tokens)."""

    first: List[Any]
    second: List[Any]
    seed: Optional[int] = None

    @classmethod
    def draw(cls, sampler: StochasticMapSelection, seed: int, k: int, J: int, swap: bool = False) -> "SampleStreams":
        root = Rng(seed)
        rng1, rng2 = root.child(1), root.child(2)
        if swap:
            rng1, rng2 = rng2, rng1
        return cls(sampler.sample_stream(rng1, J), sampler.sample_stream(rng2, k), seed)


# -------------------- LINEAR SOLVE --------------------


def stochastic_linear_solve(
    that: StochasticMapSelection,
    g: MapSelection,
    w_t,
    lam,
    tbar,
    y,
    sched: StepSchedule,
    stream: List[Any],
    k: int,
    q_hat: Optional[float] = None,
) -> np.ndarray:
    """
    v_i = (1 - eta_i) v_{i-1} + eta_i (d1T_x(w_t)^T d1G(tbar)^T v_{i-1} + y), v_0 = 0.

    Raises DivergenceError when an iterate is non-finite or its norm exceeds
    1e6 * ||y|| / (1 - q_hat).
    """
    if k < 0:
        raise ArgumentError("k must be >= 0")
    if len(stream) < k:
        raise ArgumentError(f"stream has {len(stream)} tokens, need {k}")
    y = as_vector(y, that.d, "y")
    v = np.zeros(that.d)
    limit = DIVERGENCE_FACTOR * float(np.linalg.norm(y))
    if q_hat is not None and q_hat < 1.0:
        limit /= 1.0 - q_hat
    for i in range(1, k + 1):
        eta = sched.eta(i)
        psi = that.vjp_state_fn(w_t, lam, g.vjp_state_fn(tbar, lam, v), stream[i - 1]) + y
        v = (1.0 - eta) * v + eta * psi
        if not np.all(np.isfinite(v)) or (limit > 0.0 and np.linalg.norm(v) > limit):
            raise DivergenceError("linear-solve divergence", i, eta)
    return v


def nsid(
    that: StochasticMapSelection,
    g: MapSelection,
    w_t,
    lam,
    y,
    k: int,
    J: int,
    sched: StepSchedule,
    streams: SampleStreams,
    q_hat: Optional[float] = None,
    method: str = "NSID",
) -> DerivEstimate:
    """
    Estimate D_w(lam)^T y for w = G(E[T_x(w, lam)], lam).

    The first stream gives Tbar = mean T_x(w_t) and the minibatch estimate of
    d2T; the second stream drives the linear solve.
    """
    if k < 1 or J < 1:
        raise ArgumentError("NSID needs k >= 1 and J >= 1")
    if len(streams.first) < J:
        raise ArgumentError(f"first stream has {len(streams.first)} tokens, need {J}")
    start = time.perf_counter()
    w_t = as_vector(w_t, that.d, "w_t")
    lam = as_vector(lam, that.m, "lam")
    first = streams.first[:J]
    tbar = that.batch_eval(w_t, lam, first)
    v = stochastic_linear_solve(that, g, w_t, lam, tbar, y, sched, streams.second, k, q_hat)
    gv = g.vjp_state_fn(tbar, lam, v)
    value = that.batch_vjp_param(w_t, lam, gv, first) + g.vjp_param_fn(tbar, lam, v)
    return DerivEstimate(
        value,
        method,
        k=k,
        J=J,
        seed=streams.seed,
        wall_ms=(time.perf_counter() - start) * 1000.0,
        meta={"schedule": sched.label},
    )


def sid_baseline(
    that: StochasticMapSelection,
    g: MapSelection,
    w_t,
    lam,
    y,
    k: int,
    J: int,
    sched: StepSchedule,
    streams: SampleStreams,
    q_hat: Optional[float] = None,
) -> DerivEstimate:
    """NSID with G folded into every sample (biased) and an identity outer map."""
    return nsid(compose(g, that), identity_map(that.d, that.m), w_t, lam, y, k, J, sched, streams, q_hat, "SID")


def stochastic_epochs(k: int, J: int, batch_size: int, n_rows: int) -> float:
    """Passes over the data used by one stochastic estimate: (k + J) b / N."""
    return (k + J) * batch_size / n_rows


def poisoning_budget(k: int) -> int:
    """J = ceil(k / 20)."""
    return max(1, math.ceil(k / 20))
