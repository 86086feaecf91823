"""
Deterministic fixed-point solving and step-size constants.

Contains:
- Trajectory and fixed_point_solve
- ista_step_size / step_size_from_eigs: eta and q for proximal gradient
- estimate_q: empirical contraction constant
- support_identification
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from fixdiff.errors import ArgumentError, DivergenceError
from fixdiff.linalg import Rng, as_vector, extreme_eigs_gram
from fixdiff.maps import MapSelection

logger = logging.getLogger(__name__)

ZERO_THRESHOLD = 1e-12


@dataclass(frozen=True)
class Trajectory:
    """
    Iterates of w_i = Phi(w_{i-1}, lam).

    When recorded, `iterates` has shape (t+1, d); otherwise it only holds
    (w_0, w_t). Residuals are ||w_{i+1} - w_i|| for every step.
    """

    iterates: np.ndarray
    residuals: np.ndarray
    lam: np.ndarray
    t: int
    recorded: bool
    name: str = "map"

    @property
    def w_t(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def w_0(self) -> np.ndarray:
        return self.iterates[0]

    def __len__(self) -> int:
        return self.t + 1

    def head(self, t: int) -> "Trajectory":
        """The first t steps of a recorded trajectory."""
        if not self.recorded:
            raise ArgumentError("only recorded trajectories can be truncated")
        if not 0 <= t <= self.t:
            raise ArgumentError(f"t must lie in [0, {self.t}], got {t}")
        return Trajectory(self.iterates[: t + 1], self.residuals[:t], self.lam, t, True, self.name)


def fixed_point_solve(mp: MapSelection, lam, w0, t: int, record: bool = True) -> Trajectory:
    """Run t Picard iterations from w0; raises DivergenceError on a non-finite iterate."""
    if t < 0:
        raise ArgumentError("t must be >= 0")
    lam = as_vector(lam, mp.m, "lam")
    w = as_vector(w0, mp.d, "w0")
    first = w.copy()
    kept = [first] if record else []
    residuals = np.empty(t)
    for i in range(1, t + 1):
        nxt = mp.eval_fn(w, lam)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError("divergence", i)
        residuals[i - 1] = np.linalg.norm(nxt - w)
        w = nxt
        if record:
            kept.append(w)
    iterates = np.array(kept) if record else np.array([first, w])
    return Trajectory(iterates, residuals, lam.copy(), t, record, mp.name)


# -------------------- STEP SIZES --------------------


def step_size_from_eigs(big: float, small: float, lam2: float, c: float) -> Tuple[float, float]:
    """eta = 2 / (c(L + mu) + 2 lam2) and q = max |1 - eta(c s + lam2)| over s in {L, mu}."""
    if c <= 0:
        raise ArgumentError("c must be positive")
    if lam2 < 0:
        raise ArgumentError("lam2 must be non-negative")
    denom = c * (big + small) + 2.0 * lam2
    if denom <= 0:
        raise ArgumentError("degenerate step size: c(L + mu) + 2 lam2 must be positive")
    eta = 2.0 / denom
    q = max(abs(1.0 - eta * (c * big + lam2)), abs(1.0 - eta * (c * small + lam2)))
    return eta, q


def ista_step_size(x, lam2: float, c: float) -> Tuple[float, float]:
    """Step size and contraction constant from the spectrum of n^-1 X^T X."""
    big, small = extreme_eigs_gram(x)
    eta, q = step_size_from_eigs(big, small, lam2, c)
    logger.debug("ista_step_size: L=%.6g mu=%.6g lam2=%.6g c=%.6g -> eta=%.6g q=%.6g", big, small, lam2, c, eta, q)
    return eta, q


# -------------------- CONTRACTION ESTIMATE --------------------


@dataclass(frozen=True)
class QEstimate:
    """Empirical contraction constant; always flagged heuristic."""

    value: float
    samples: int
    heuristic: bool = True
    details: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return self.value


def estimate_q(
    mp: MapSelection,
    lam,
    samples: int,
    rng: Rng,
    center=None,
    radius: float = 1.0,
    power_steps: int = 10,
) -> QEstimate:
    """
    Largest realized Lipschitz quotient over random samples.

    For each sample point u (gaussian around `center`), collects
    ||Phi(u) - Phi(u')|| / ||u - u'|| for a nearby u' and ||d1Phi(u)^T v||
    for a unit v refined by a few power steps through jvp/vjp_state.
    """
    if samples < 1:
        raise ArgumentError("samples must be >= 1")
    lam = as_vector(lam, mp.m, "lam")
    base = np.zeros(mp.d) if center is None else as_vector(center, mp.d, "center")
    best_pair = 0.0
    best_vjp = 0.0
    for _ in range(samples):
        u = base + radius * rng.gaussian(mp.d)
        du = rng.gaussian(mp.d)
        du *= 1e-3 * radius / max(np.linalg.norm(du), 1e-300)
        num = np.linalg.norm(mp.eval_fn(u + du, lam) - mp.eval_fn(u, lam))
        best_pair = max(best_pair, float(num / np.linalg.norm(du)))

        v = rng.gaussian(mp.d)
        v /= max(np.linalg.norm(v), 1e-300)
        sigma = float(np.linalg.norm(mp.vjp_state_fn(u, lam, v)))
        for _ in range(power_steps):
            g = mp.jvp_fn(u, lam, mp.vjp_state_fn(u, lam, v), np.zeros(mp.m))
            ng = np.linalg.norm(g)
            if ng == 0.0:
                break
            v = g / ng
            sigma = max(sigma, float(np.linalg.norm(mp.vjp_state_fn(u, lam, v))))
        best_vjp = max(best_vjp, sigma)
    value = max(best_pair, best_vjp)
    if value >= 1.0:
        logger.warning("estimate_q for %s: q_hat=%.6g is not a contraction", mp.name, value)
    return QEstimate(value, samples, True, {"pair_quotient": best_pair, "vjp_quotient": best_vjp})


# -------------------- SUPPORT IDENTIFICATION --------------------


def support_pattern(w, threshold: float = ZERO_THRESHOLD) -> np.ndarray:
    return np.abs(np.asarray(w)) > threshold


def support_identification(
    traj: Trajectory,
    w_ref,
    threshold: float = ZERO_THRESHOLD,
    pattern_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Optional[int]:
    """
    First index from which every recorded iterate has w_ref's zero pattern.

    `pattern_fn` replaces the zero/nonzero pattern, e.g. the active piece of a
    relu map. Returns None if the last iterate does not match.
    """
    if not traj.recorded:
        raise ArgumentError("support identification needs a recorded trajectory")
    if pattern_fn is None:
        ref = support_pattern(w_ref, threshold)
        pats = support_pattern(traj.iterates, threshold)
    else:
        ref = np.asarray(pattern_fn(np.asarray(w_ref)))
        pats = np.array([pattern_fn(w) for w in traj.iterates])
    matches = np.all(pats == ref[None, :], axis=1)
    i = len(matches) - 1
    while i >= 0 and matches[i]:
        i -= 1
    tau = i + 1
    return tau if tau < len(matches) else None


def iterations_for_accuracy(q: float, accuracy: float = 1e-10, cap: int = 100000) -> int:
    """Smallest n with q^n <= accuracy, capped."""
    if not 0.0 <= q < 1.0:
        raise ArgumentError(f"q must lie in [0, 1), got {q}")
    if q == 0.0:
        return 1
    return min(cap, max(1, math.ceil(math.log(accuracy) / math.log(q))))
