"""
Ground truth for derivative estimates.

Contains:
- jacobians / implicit_jacobian_oracle: dense (I - d1Phi)^-1 d2Phi
- reference_iterations / reference_vjp: long AID-FP run from w_0 = 0
- finite_diff_hypergrad
- local_contraction, log_slope, rate_constants
- certify_pwl_bound: rate bounds on piecewise-linear maps
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from fixdiff.deterministic import DerivEstimate, aid_fp_vjp, estimate_error, itd_vjp
from fixdiff.errors import ArgumentError, NonFiniteError
from fixdiff.linalg import as_vector, operator_norms, solve_dense
from fixdiff.maps import MapSelection
from fixdiff.solver import fixed_point_solve, iterations_for_accuracy, support_identification

logger = logging.getLogger(__name__)

ORACLE_MAX_DIM = 200
REFERENCE_ACCURACY = 1e-10
REFERENCE_CAP = 100000
CERTIFY_SLACK = 1e-9


# -------------------- DENSE ORACLE --------------------


def jacobians(mp: MapSelection, w, lam) -> Tuple[np.ndarray, np.ndarray]:
    """Materialize d1Phi (d x d) and d2Phi (d x m) column by column through jvp."""
    w = as_vector(w, mp.d, "w")
    lam = as_vector(lam, mp.m, "lam")
    zero_d = np.zeros(mp.d)
    zero_m = np.zeros(mp.m)
    eye_d = np.eye(mp.d)
    eye_m = np.eye(mp.m)
    a1 = np.column_stack([mp.jvp_fn(w, lam, eye_d[j], zero_m) for j in range(mp.d)])
    a2 = np.column_stack([mp.jvp_fn(w, lam, zero_d, eye_m[j]) for j in range(mp.m)])
    return a1.reshape(mp.d, mp.d), a2.reshape(mp.d, mp.m)


def _check_oracle_size(mp: MapSelection) -> None:
    if mp.d > ORACLE_MAX_DIM or mp.m > ORACLE_MAX_DIM:
        raise ArgumentError(f"dense oracle limited to d, m <= {ORACLE_MAX_DIM}; got d={mp.d}, m={mp.m}")


def implicit_jacobian_oracle(mp: MapSelection, lam, t_ref: int, w0=None) -> np.ndarray:
    """
    One element of the implicit derivative at w_ref = w_{t_ref}.

    Solves (I - d1Phi(w_ref)) W = d2Phi(w_ref); raises SingularSystemError
    when I - d1Phi is numerically singular.
    """
    _check_oracle_size(mp)
    lam = as_vector(lam, mp.m, "lam")
    start = np.zeros(mp.d) if w0 is None else w0
    w_ref = fixed_point_solve(mp, lam, start, t_ref, record=False).w_t
    a1, a2 = jacobians(mp, w_ref, lam)
    return solve_dense(np.eye(mp.d) - a1, a2)


# -------------------- REFERENCE PROTOCOL --------------------


def reference_iterations(q: float, accuracy: float = REFERENCE_ACCURACY, cap: int = REFERENCE_CAP) -> int:
    """t_ref = k_ref = ceil(ln(1/accuracy) / ln(1/q)), capped."""
    return iterations_for_accuracy(q, accuracy, cap)


def reference_vjp(
    mp: MapSelection,
    lam,
    y,
    t_ref: Optional[int] = None,
    k_ref: Optional[int] = None,
    q_hat: Optional[float] = None,
    w0=None,
) -> DerivEstimate:
    """
    AID-FP at w_{t_ref} with k_ref steps, starting from w_0 = 0.

    Missing budgets are derived from q_hat (or the map's declared
    contraction). meta holds w_ref, tref and kref.
    """
    if t_ref is None or k_ref is None:
        q = q_hat if q_hat is not None else mp.contraction
        if q is None:
            raise ArgumentError(f"reference for {mp.name} needs t_ref/k_ref or a contraction estimate")
        n_ref = reference_iterations(float(q))
        t_ref = n_ref if t_ref is None else t_ref
        k_ref = n_ref if k_ref is None else k_ref
    lam = as_vector(lam, mp.m, "lam")
    start = np.zeros(mp.d) if w0 is None else w0
    w_ref = fixed_point_solve(mp, lam, start, t_ref, record=False).w_t
    est = aid_fp_vjp(mp, w_ref, lam, y, k_ref, t=t_ref)
    logger.debug("reference for %s: tref=%d kref=%d", mp.name, t_ref, k_ref)
    return DerivEstimate(
        est.value,
        "reference",
        t=t_ref,
        k=k_ref,
        wall_ms=est.wall_ms,
        meta={"w_ref": w_ref, "tref": t_ref, "kref": k_ref},
    )


def finite_diff_hypergrad(f: Callable[[np.ndarray], float], lam, h: float = 1e-5) -> np.ndarray:
    """Central differences of f per coordinate; only meaningful away from kinks."""
    if h <= 0:
        raise ArgumentError("h must be positive")
    lam = np.array(lam, dtype=np.float64).ravel()
    grad = np.empty_like(lam)
    for j in range(lam.size):
        e = np.zeros_like(lam)
        e[j] = h
        hi = float(f(lam + e))
        lo = float(f(lam - e))
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NonFiniteError(f"non-finite evaluation at coordinate {j}")
        grad[j] = (hi - lo) / (2.0 * h)
    return grad


# -------------------- RATES --------------------


def local_contraction(mp: MapSelection, w, lam, iters: int = 200, window: int = 20, seed_vector=None) -> float:
    """
    Asymptotic growth rate of d1Phi(w) powers, i.e. its spectral radius.

    Geometric mean of the norm ratios over the last `window` power steps.
    """
    w = as_vector(w, mp.d, "w")
    lam = as_vector(lam, mp.m, "lam")
    zero_m = np.zeros(mp.m)
    v = np.ones(mp.d) if seed_vector is None else as_vector(seed_vector, mp.d, "seed_vector")
    v = v / np.linalg.norm(v)
    logs: List[float] = []
    for _ in range(iters):
        g = mp.jvp_fn(w, lam, v, zero_m)
        ng = float(np.linalg.norm(g))
        if ng == 0.0:
            return 0.0
        logs.append(math.log(ng))
        v = g / ng
    tail = logs[-min(window, len(logs)):]
    return math.exp(sum(tail) / len(tail))


def log_slope(ns, errors) -> float:
    """Least-squares slope of log(error) against n."""
    ns = np.asarray(ns, dtype=np.float64)
    errs = np.asarray(errors, dtype=np.float64)
    if ns.size < 2 or ns.size != errs.size:
        raise ArgumentError("log_slope needs at least two matching points")
    if np.any(errs <= 0):
        raise ArgumentError("log_slope needs positive errors")
    slope, _ = np.polyfit(ns, np.log(errs), 1)
    return float(slope)


@dataclass(frozen=True)
class RateConstants:
    """q, kappa = 1/(1-q), B_hat = ||d2Phi(w_ref)||, L (0 on piecewise-linear maps) and tau."""

    q: float
    kappa: float
    b_hat: float
    L: Optional[float]
    tau: Optional[int]

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ArgumentError(f"q must lie in [0, 1), got {self.q}")
        if self.b_hat < 0:
            raise ArgumentError("b_hat must be non-negative")


def rate_constants(mp: MapSelection, lam, w_ref, q: Optional[float] = None, traj=None) -> RateConstants:
    q = mp.contraction if q is None else q
    if q is None:
        raise ArgumentError(f"{mp.name} has no declared contraction; pass q")
    _, a2 = jacobians(mp, w_ref, lam)
    b_hat = float(operator_norms(a2[None])[0])
    tau = None
    if traj is not None:
        tau = support_identification(traj, w_ref, pattern_fn=mp.meta.get("piece_pattern"))
    L = 0.0 if mp.meta.get("piecewise_linear") else None
    return RateConstants(float(q), 1.0 / (1.0 - q), b_hat, L, tau)


# -------------------- PIECEWISE-LINEAR CERTIFICATION --------------------


@dataclass(frozen=True)
class BoundCheck:
    method: str
    n: int
    error: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.error <= self.bound + CERTIFY_SLACK

    @property
    def slack(self) -> float:
        return self.bound - self.error


@dataclass(frozen=True)
class PwlReport:
    applicable: bool
    reason: str = ""
    constants: Optional[RateConstants] = None
    checks: List[BoundCheck] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.applicable and all(c.passed for c in self.checks)

    def lines(self) -> List[str]:
        if not self.applicable:
            return [f"not applicable: {self.reason}"]
        return [
            f"{c.method} n={c.n}: error={c.error:.3e} bound={c.bound:.3e} {'ok' if c.passed else 'FAIL'}"
            for c in self.checks
        ]


def certify_pwl_bound(
    mp: MapSelection,
    lam,
    t: int,
    ks=range(1, 31),
    y=None,
    t_ref: Optional[int] = None,
) -> PwlReport:
    """
    Check the AID-FP and ITD error bounds of a piecewise-linear contraction.

    After support identification the AID-FP error at the frozen iterate w_t
    is at most B q^k / (1 - q). ITD from w_0 = 0 after t steps is checked
    against B q^t / (1 - q) + (B + 1) / (1 - q) (M / R) (tau / t) D_0 t q^(t-1)
    with D_0 = ||w_0 - w_ref||. The reference is the dense implicit solve.
    """
    if not mp.meta.get("piecewise_linear"):
        return PwlReport(False, f"{mp.name} is not built from affine pieces")
    q = mp.contraction
    if q is None:
        return PwlReport(False, f"{mp.name} declares no contraction constant")
    lam = as_vector(lam, mp.m, "lam")
    y = np.eye(mp.d)[0] if y is None else as_vector(y, mp.d, "y")
    if t_ref is None:
        t_ref = reference_iterations(q, 1e-14)
    w0 = np.zeros(mp.d)
    w_ref = fixed_point_solve(mp, lam, w0, t_ref, record=False).w_t
    traj = fixed_point_solve(mp, lam, w0, t, record=True)
    consts = rate_constants(mp, lam, w_ref, q, traj)
    if consts.tau is None:
        return PwlReport(False, "support not identified", consts)
    if t < consts.tau:
        return PwlReport(False, f"t={t} precedes support identification at {consts.tau}", consts)

    a1, a2 = jacobians(mp, w_ref, lam)
    exact = solve_dense(np.eye(mp.d) - a1, a2).T @ y
    ref = DerivEstimate(exact, "oracle")
    b_hat = consts.b_hat * float(np.linalg.norm(y))
    checks: List[BoundCheck] = []
    for k in ks:
        err = estimate_error(aid_fp_vjp(mp, traj.w_t, lam, y, k, t=t), ref)
        checks.append(BoundCheck("AID-FP", k, err, b_hat * q**k / (1.0 - q)))

    jump = float(mp.meta.get("jump_bound", 0.0))
    itd_bound = b_hat * q**t / (1.0 - q)
    radius = None
    if jump > 0.0 and t > 0:
        kink = mp.meta.get("kink_distance")
        if kink is None:
            return PwlReport(False, "kink distance unavailable", consts)
        radius = float(kink(w_ref))
        if not radius > 0.0:
            return PwlReport(False, "fixed point lies on a kink", consts, details={"radius": radius})
        delta0 = float(np.linalg.norm(w0 - w_ref))
        delta_bar = consts.tau / t
        itd_bound += (b_hat + 1.0) / (1.0 - q) * (jump / radius) * delta_bar * delta0 * t * q ** (t - 1)
    itd_err = estimate_error(itd_vjp(mp, traj, lam, y), ref)
    checks.append(BoundCheck("ITD", t, itd_err, itd_bound))
    return PwlReport(True, "", consts, checks, {"jump_bound": jump, "radius": radius, "t_ref": t_ref})
