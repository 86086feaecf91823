"""
Deterministic derivative estimators for w(lam) = Phi(w(lam), lam).

Contains:
- DerivEstimate
- itd_vjp / itd_jvp: differentiation through the recorded trajectory
- aid_fp_iterates / aid_fp_vjp: fixed-point solve of (I - d1Phi^T) v = y
- aid_cg_vjp: conjugate gradient on the same system
- estimate_error
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Optional

import numpy as np

from fixdiff.errors import ArgumentError, BreakdownError, NonFiniteError, ShapeError
from fixdiff.linalg import as_vector
from fixdiff.maps import MapSelection
from fixdiff.solver import Trajectory

logger = logging.getLogger(__name__)

METHODS = ("ITD-R", "ITD-F", "AID-FP", "AID-CG", "NSID", "SID")
CG_MODES = ("normal-eq", "direct-cg")


@dataclass(frozen=True)
class DerivEstimate:
    """A selected element of D_w(lam)^T y (or D_w(lam) lamdot in forward mode)."""

    value: np.ndarray
    method: str
    t: int = 0
    k: int = 0
    J: int = 0
    seed: Optional[int] = None
    wall_ms: float = 0.0
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"{self.method} produced a non-finite estimate")


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


# -------------------- ITD --------------------


def _require_recorded(traj: Trajectory) -> None:
    if not traj.recorded:
        raise ArgumentError("ITD requires full trajectory")


def itd_vjp(mp: MapSelection, traj: Trajectory, lam, y) -> DerivEstimate:
    """Reverse sweep over the stored iterates w_0 .. w_{t-1}."""
    _require_recorded(traj)
    start = time.perf_counter()
    lam = as_vector(lam, mp.m, "lam")
    alpha = as_vector(y, mp.d, "y")
    g = np.zeros(mp.m)
    for i in range(traj.t - 1, -1, -1):
        w_i = traj.iterates[i]
        g = g + mp.vjp_param_fn(w_i, lam, alpha)
        alpha = mp.vjp_state_fn(w_i, lam, alpha)
    return DerivEstimate(g, "ITD-R", t=traj.t, wall_ms=_elapsed_ms(start))


def itd_jvp(mp: MapSelection, traj: Trajectory, lam, lamdot) -> DerivEstimate:
    """Forward sweep: wdot_{i+1} = d1Phi(w_i) wdot_i + d2Phi(w_i) lamdot."""
    _require_recorded(traj)
    start = time.perf_counter()
    lam = as_vector(lam, mp.m, "lam")
    ld = as_vector(lamdot, mp.m, "lamdot")
    wdot = np.zeros(mp.d)
    for i in range(traj.t):
        wdot = mp.jvp_fn(traj.iterates[i], lam, wdot, ld)
    return DerivEstimate(wdot, "ITD-F", t=traj.t, wall_ms=_elapsed_ms(start))


# -------------------- AID --------------------


def aid_fp_iterates(mp: MapSelection, w_t, lam, y, k: int) -> Iterator[np.ndarray]:
    """Yields v_1 .. v_k of v_j = d1Phi(w_t)^T v_{j-1} + y, v_0 = 0."""
    if k < 0:
        raise ArgumentError("k must be >= 0")
    w_t = as_vector(w_t, mp.d, "w_t")
    lam = as_vector(lam, mp.m, "lam")
    y = as_vector(y, mp.d, "y")
    v = np.zeros(mp.d)
    for _ in range(k):
        v = mp.vjp_state_fn(w_t, lam, v) + y
        yield v


def aid_fp_vjp(mp: MapSelection, w_t, lam, y, k: int, t: int = 0) -> DerivEstimate:
    """k fixed-point steps on the adjoint system at the frozen point w_t."""
    start = time.perf_counter()
    v = np.zeros(mp.d)
    for v in aid_fp_iterates(mp, w_t, lam, y, k):
        pass
    value = mp.vjp_param_fn(as_vector(w_t, mp.d), as_vector(lam, mp.m), v)
    return DerivEstimate(value, "AID-FP", t=t, k=k, wall_ms=_elapsed_ms(start))


def aid_cg_vjp(
    mp: MapSelection, w_t, lam, y, k: int, mode: str = "normal-eq", t: int = 0, tol: float = 1e-14
) -> DerivEstimate:
    """
    Conjugate gradient on (I - d1Phi^T) v = y.

    "normal-eq" runs CG on A^T A v = A^T y with A = I - d1Phi^T, which is
    valid for nonsymmetric d1Phi. "direct-cg" runs CG on A itself and needs
    a symmetric d1Phi. Stops early once ||r|| <= tol * ||rhs||.
    """
    if mode not in CG_MODES:
        raise ArgumentError(f"unknown CG mode {mode!r}")
    if k < 1:
        raise ArgumentError("AID-CG needs k >= 1")
    start = time.perf_counter()
    w_t = as_vector(w_t, mp.d, "w_t")
    lam = as_vector(lam, mp.m, "lam")
    y = as_vector(y, mp.d, "y")
    zero_m = np.zeros(mp.m)

    def a_op(v):
        return v - mp.vjp_state_fn(w_t, lam, v)

    def at_op(v):
        return v - mp.jvp_fn(w_t, lam, v, zero_m)

    if mode == "normal-eq":

        def op(v):
            return at_op(a_op(v))

        rhs = at_op(y)
    else:
        op = a_op
        rhs = y

    v = np.zeros(mp.d)
    r = rhs.copy()
    rhs_norm = float(np.linalg.norm(rhs))
    iters = 0
    if rhs_norm > 0.0:
        p = r.copy()
        rr = float(r @ r)
        for i in range(1, k + 1):
            ap = op(p)
            curv = float(p @ ap)
            if not np.isfinite(curv):
                raise NonFiniteError(f"AID-CG non-finite curvature at iteration {i}")
            if curv <= 0.0:
                raise BreakdownError(i)
            alpha = rr / curv
            v = v + alpha * p
            r = r - alpha * ap
            iters = i
            rr_new = float(r @ r)
            if np.sqrt(rr_new) <= tol * rhs_norm:
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
    value = mp.vjp_param_fn(w_t, lam, v)
    logger.debug("AID-CG (%s) stopped after %d iterations", mode, iters)
    return DerivEstimate(value, "AID-CG", t=t, k=k, wall_ms=_elapsed_ms(start), meta={"mode": mode, "iterations": iters})


def estimate_error(est: DerivEstimate, ref: DerivEstimate) -> float:
    """Euclidean distance between two estimates of the same product."""
    a = np.asarray(est.value)
    b = np.asarray(ref.value)
    if a.shape != b.shape:
        raise ShapeError(f"estimate shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
