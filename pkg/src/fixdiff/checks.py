"""
Property suites behind `fixdiff check`.

Suites:
- oracle: ITD / AID-FP / dense implicit Jacobian agreement on smooth maps
- excess: properties of the excess on random finite matrix sets
- pwl-bound: error bound certification on piecewise-linear maps
- adjoint: VJP/JVP adjoint identities of every map family
- rates: convergence-shape reproductions (slow)
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from fixdiff.bilevel import baid_fp_hypergrad, nsid_bilevel
from fixdiff.deterministic import DerivEstimate, aid_fp_vjp, estimate_error, itd_vjp
from fixdiff.errors import DivergenceError, FixdiffError, NonFiniteError
from fixdiff.experiments import stream_seed
from fixdiff.linalg import Rng, operator_norms
from fixdiff.maps import (
    ROLE_PERTURBATION,
    MapSelection,
    StochasticMapSelection,
    adjoint_defect,
    compose,
    grad_step_multinomial,
    grad_step_quadratic,
    identity_map,
    linear_map,
    prox_elastic_net_map,
    relu_linear_map,
    sum_maps,
    tanh_affine_map,
)
from fixdiff.problems import (
    build_elastic_net,
    build_poisoning,
    gen_elastic_net,
    lambda_max,
    noisy_scalar_map,
    poisoning_splits,
)
from fixdiff.reference import (
    certify_pwl_bound,
    finite_diff_hypergrad,
    implicit_jacobian_oracle,
    local_contraction,
    log_slope,
    reference_iterations,
    reference_vjp,
)
from fixdiff.setvalued import (
    MatrixSet,
    affine_apply,
    block,
    gap,
    inverse,
    minkowski_sum,
    set_product,
    sup_norm,
)
from fixdiff.solver import fixed_point_solve, support_identification
from fixdiff.stochastic import SampleStreams, StepSchedule, nsid, poisoning_budget, sid_baseline

logger = logging.getLogger(__name__)

TOLERANCE = 1e-9
ORACLE_RTOL = 1e-8


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def _norm(m: np.ndarray) -> float:
    return float(operator_norms(np.asarray(m, dtype=np.float64)[None])[0])


def _scaled(rng: Rng, d: int, q: float) -> np.ndarray:
    """Gaussian d x d matrix rescaled to operator norm q."""
    a = rng.gaussian(d * d).reshape(d, d)
    return a * (q / max(_norm(a), 1e-300))


# -------------------- ORACLE --------------------


def check_oracle(instances: int = 100, samples: int = 5, t: int = 400, seed: int = 0) -> List[CheckResult]:
    """Pairwise agreement of ITD, AID-FP and the dense oracle on random tanh-affine contractions."""
    rng = Rng(seed)
    worst = {"ITD vs oracle": 0.0, "AID-FP vs oracle": 0.0, "ITD vs AID-FP": 0.0}
    for _ in range(instances):
        d = 1 + int(rng.integers(1, 10)[0])
        m = 1 + int(rng.integers(1, 5)[0])
        q = 0.1 + 0.8 * rng.uniform()
        mp = tanh_affine_map(_scaled(rng, d, q), rng.gaussian(d * m).reshape(d, m), rng.gaussian(d))
        lam = rng.gaussian(m)
        traj = fixed_point_solve(mp, lam, np.zeros(d), t)
        jac = implicit_jacobian_oracle(mp, lam, t)
        for _ in range(samples):
            y = rng.gaussian(d)
            itd = itd_vjp(mp, traj, lam, y).value
            aid = aid_fp_vjp(mp, traj.w_t, lam, y, t).value
            oracle = jac.T @ y
            worst["ITD vs oracle"] = max(worst["ITD vs oracle"], _rel(itd, oracle))
            worst["AID-FP vs oracle"] = max(worst["AID-FP vs oracle"], _rel(aid, oracle))
            worst["ITD vs AID-FP"] = max(worst["ITD vs AID-FP"], _rel(itd, aid))
    return [
        CheckResult(f"oracle {name}", err <= ORACLE_RTOL, f"max rel {err:.2e} over {instances} maps")
        for name, err in worst.items()
    ]


# -------------------- EXCESS --------------------


def _random_set(rng: Rng, rows: int, cols: int, count: int = 0) -> MatrixSet:
    count = count or 1 + int(rng.integers(1, 6)[0])
    return MatrixSet((2.0 * rng.uniforms(count * rows * cols) - 1.0).reshape(count, rows, cols))


def _invertible_set(rng: Rng, n: int) -> MatrixSet:
    s = _random_set(rng, n, n)
    return MatrixSet(2.0 * np.eye(n)[None] + (0.5 / n) * s.stack)


def check_excess(trials: int = 1000, seed: int = 0) -> List[CheckResult]:
    """Worst violation (lhs - rhs) of each excess inequality over random sets."""
    rng = Rng(seed)
    worst: Dict[str, float] = {}

    def record(name: str, lhs: float, rhs: float) -> None:
        worst[name] = max(worst.get(name, -math.inf), lhs - rhs)

    def dim() -> int:
        return 1 + int(rng.integers(1, 5)[0])

    for _ in range(trials):
        r, c = dim(), dim()
        a, b, cc = _random_set(rng, r, c), _random_set(rng, r, c), _random_set(rng, r, c)
        record("triangle", gap(a, cc), gap(a, b) + gap(b, cc))

        a2, b2 = _random_set(rng, r, c), _random_set(rng, r, c)
        record("sum", gap(minkowski_sum(a, a2), minkowski_sum(b, b2)), gap(a, b) + gap(a2, b2))

        left = _random_set(rng, dim(), r)
        record("left product", gap(set_product(left, a), set_product(left, b)), sup_norm(left) * gap(a, b))
        right = _random_set(rng, c, dim())
        record(
            "right product",
            gap(set_product(a, right), set_product(b, right)),
            gap(a, b) * sup_norm(right),
        )

        record("inclusion", gap(a, b.union(cc)), gap(a, b))

        n = dim()
        ia, ib = _invertible_set(rng, n), _invertible_set(rng, n)
        inv_a, inv_b = inverse(ia), inverse(ib)
        record("inverse", gap(inv_a, inv_b), sup_norm(inv_a) * sup_norm(inv_b) * gap(ia, ib))

        rows = slice(0, 1 + int(rng.integers(1, r)[0]))
        cols = slice(int(rng.integers(1, c)[0]), c)
        record("block projection", gap(block(a, rows, cols), block(b, rows, cols)), gap(a, b))

        p1, p2 = dim(), dim()
        aa, ab = _random_set(rng, r, p1 + p2), _random_set(rng, r, p1 + p2)
        x, xy = _random_set(rng, p1, p2), _random_set(rng, p1, p2)
        a1, a2 = block(aa, cols=slice(0, p1)), block(aa, cols=slice(p1, None))
        record("affine sup", sup_norm(affine_apply(aa, x)), sup_norm(a1) * sup_norm(x) + sup_norm(a2))
        record("affine in X", gap(affine_apply(aa, x), affine_apply(aa, xy)), sup_norm(a1) * gap(x, xy))
        record("affine in A", gap(affine_apply(aa, x), affine_apply(ab, x)), (1.0 + sup_norm(x)) * gap(aa, ab))

        q = 0.99 * rng.uniform()
        a_q = _scaled(rng, n, q)
        record("neumann bound", _norm(np.linalg.inv(np.eye(n) - a_q)), 1.0 / (1.0 - q))
    return [
        CheckResult(f"excess {name}", v <= TOLERANCE, f"worst violation {v:.2e} over {trials} trials")
        for name, v in worst.items()
    ]


# -------------------- PIECEWISE-LINEAR BOUNDS --------------------


def _pwl_instances(seed: int):
    rng = Rng(seed)
    yield "scalar linear", linear_map([[0.5]], [[1.0]]), np.array([1.0]), 40, True
    yield "scalar relu", relu_linear_map([[0.5]], [[1.0]]), np.array([1.0]), 40, True
    a1 = _scaled(rng, 5, 0.6)
    mp = relu_linear_map(a1, rng.gaussian(10).reshape(5, 2), rng.gaussian(5))
    yield "5-dim relu", mp, np.array([1.0, -0.5]), 80, False


def check_pwl_bound(seed: int = 0) -> List[CheckResult]:
    """AID-FP and ITD bounds after support identification; equality on scalar instances."""
    out: List[CheckResult] = []
    for name, mp, lam, t, exact in _pwl_instances(seed):
        report = certify_pwl_bound(mp, lam, t)
        if not report.applicable:
            out.append(CheckResult(f"pwl {name}", False, report.reason))
            continue
        failed = [c for c in report.checks if not c.passed]
        tau = report.constants.tau if report.constants else None
        detail = f"tau={tau}, {len(report.checks)} bounds"
        if failed:
            detail += f", first failure {failed[0].method} n={failed[0].n}"
        out.append(CheckResult(f"pwl {name}", not failed, detail))
        if exact:
            aid = [c for c in report.checks if c.method == "AID-FP"]
            dev = max(abs(c.error - c.bound) for c in aid)
            out.append(CheckResult(f"pwl {name} equality", dev <= TOLERANCE, f"max |error - bound| {dev:.2e}"))
    return out


# -------------------- ADJOINT IDENTITIES --------------------


def _adjoint_maps(rng: Rng) -> List[MapSelection]:
    d, m = 4, 2
    a1 = _scaled(rng, d, 0.7)
    a2 = rng.gaussian(d * m).reshape(d, m)
    b = rng.gaussian(d)
    x = rng.gaussian(6 * d).reshape(6, d)
    y = rng.gaussian(6)
    labels = rng.integers(6, 3)
    quad = grad_step_quadratic(x, y, 0.1)
    prox = prox_elastic_net_map(d, 2, 0.3)
    lin = linear_map(a1, a2, b)
    tanh = tanh_affine_map(a1, a2, b)
    return [
        lin,
        relu_linear_map(a1, a2, b),
        tanh,
        prox,
        quad,
        compose(prox, quad),
        grad_step_multinomial(x[:, :2], labels, 0.5, n_classes=3),
        grad_step_multinomial(x[:, :2], labels, 0.5, lam2=0.1, n_classes=3, param_role=ROLE_PERTURBATION, n_clean=4),
        sum_maps([lin, tanh], [0.5, 0.5]),
        identity_map(d, m),
    ]


def check_adjoint(samples: int = 20, seed: int = 0) -> List[CheckResult]:
    """<v, J wdot> = <J^T v, wdot> for the state and parameter blocks of every family."""
    rng = Rng(seed)
    out = []
    for mp in _adjoint_maps(rng):
        worst = 0.0
        for _ in range(samples):
            u = rng.gaussian(mp.d)
            lam = np.abs(rng.gaussian(mp.m))
            worst = max(
                worst, adjoint_defect(mp, u, lam, rng.gaussian(mp.d), rng.gaussian(mp.d), rng.gaussian(mp.m))
            )
        out.append(CheckResult(f"adjoint {mp.name}", worst <= 1e-10, f"max defect {worst:.2e}"))
    return out


# -------------------- RATES --------------------


def _elastic_instance(seed: int, n: int = 100, d: int = 100, fraction: float = 0.05, lam2: float = 1.0):
    train, val, _ = gen_elastic_net(seed, n, d, min(30, d))
    lam = np.array([fraction * lambda_max(train), lam2])
    return build_elastic_net(train, val, lam), lam


def _reference_at(prob, lam):
    n_ref = reference_iterations(prob.q)
    w_ref = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), n_ref, record=False).w_t
    y = prob.upper.grad_w(w_ref, lam)
    return reference_vjp(prob.phi, lam, y, n_ref, n_ref), y


def _rates_itd_aid(fraction: float, seed: int) -> List[CheckResult]:
    prob, lam = _elastic_instance(seed, fraction=fraction)
    ref, y = _reference_at(prob, lam)
    w_ref = ref.meta["w_ref"]
    scale = max(float(np.linalg.norm(ref.value)), 1e-300)
    horizon = min(ref.t, 3000)
    traj = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), horizon)
    tau = support_identification(traj, w_ref)
    ts = sorted(set(range(3, horizon + 1, max(1, horizon // 60))) | ({tau + 20} if tau is not None else set()))
    ts = [t for t in ts if t <= horizon]
    itd_err, aid_err = {}, {}
    for t in ts:
        head = traj.head(t)
        itd_err[t] = estimate_error(itd_vjp(prob.phi, head, lam, y), ref) / scale
        aid_err[t] = estimate_error(aid_fp_vjp(prob.phi, head.w_t, lam, y, t), ref) / scale
    rho = local_contraction(prob.phi, w_ref, lam)
    tag = f"lam1={fraction:g}*lam_max"
    out = []
    for name, errs in (("ITD", itd_err), ("AID-FP", aid_err)):
        window = [t for t in ts if 1e-9 <= errs[t] <= 1e-5]
        if len(window) < 3 or rho <= 0.0:
            out.append(CheckResult(f"rates {name} slope ({tag})", False, f"{len(window)} points above the floor"))
            continue
        slope = log_slope(window, [errs[t] for t in window])
        lo, hi = 1.3 * math.log(rho), 0.7 * math.log(rho)
        out.append(
            CheckResult(
                f"rates {name} slope ({tag})", lo <= slope <= hi, f"slope {slope:.4f}, log rate {math.log(rho):.4f}"
            )
        )
    above_floor = [t for t in ts if itd_err[t] > 1e-10]
    worse = [t for t in above_floor if aid_err[t] > itd_err[t] * (1 + 1e-9)]
    out.append(CheckResult(f"rates AID-FP <= ITD ({tag})", not worse, f"violations at t={worse[:5]}"))
    if tau is None or tau + 20 > horizon:
        out.append(CheckResult(f"rates support identification ({tag})", False, "not identified"))
    else:
        t = tau + 20
        ok = aid_err[t] * 3.0 <= itd_err[t] or itd_err[t] <= 1e-10
        out.append(
            CheckResult(
                f"rates post-identification gap ({tag})",
                ok,
                f"tau={tau}, ITD {itd_err[t]:.2e} vs AID-FP {aid_err[t]:.2e} at t={t}",
            )
        )
    return out


def _rates_nsid_consistency(seed: int) -> CheckResult:
    prob, lam = _elastic_instance(seed)
    ref, y = _reference_at(prob, lam)
    w = ref.meta["w_ref"]
    k = 200
    that = StochasticMapSelection.from_deterministic(prob.T)
    streams = SampleStreams.draw(that, seed, k, 1)
    est = nsid(that, prob.G, w, lam, y, k, 1, StepSchedule.constant(1.0), streams)
    aid = aid_fp_vjp(prob.phi, w, lam, y, k)
    err = estimate_error(est, aid)
    return CheckResult("rates NSID reduces to AID-FP", err <= 1e-12 * max(1.0, np.linalg.norm(aid.value)), f"{err:.2e}")


def _nsid_errors(that, g, w, lam, y, ref: DerivEstimate, k: int, seeds: Sequence[int], sched, q) -> List[float]:
    errs = []
    for s in seeds:
        streams = SampleStreams.draw(that, stream_seed(s, k), k, k)
        try:
            errs.append(estimate_error(nsid(that, g, w, lam, y, k, k, sched, streams, q), ref) ** 2)
        except (DivergenceError, NonFiniteError):
            errs.append(math.inf)
    return errs


def _rate_check(name: str, errs_lo: List[float], errs_hi: List[float], k_lo: int, k_hi: int) -> List[CheckResult]:
    med_lo, med_hi = float(np.median(errs_lo)), float(np.median(errs_hi))
    drop = med_lo / med_hi if med_hi > 0 else math.inf
    ratio = (k_hi * med_hi) / (k_lo * med_lo) if med_lo > 0 else math.inf
    return [
        CheckResult(f"rates {name} MSE drop", drop >= 5.0, f"median sq. error {med_lo:.2e} -> {med_hi:.2e}"),
        CheckResult(f"rates {name} k*MSE ratio", 0.3 <= ratio <= 3.0, f"ratio {ratio:.3f}"),
    ]


def _rates_nsid_scalar(seeds: Sequence[int]) -> List[CheckResult]:
    that = noisy_scalar_map()
    g = identity_map(1, 1)
    lam = np.array([1.0])
    w = np.array([2.0])
    y = np.array([1.0])
    ref = DerivEstimate(np.array([2.0]), "closed-form")
    sched = StepSchedule.theoretical(0.6)
    lo = _nsid_errors(that, g, w, lam, y, ref, 100, seeds, sched, 0.6)
    hi = _nsid_errors(that, g, w, lam, y, ref, 1000, seeds, sched, 0.6)
    return _rate_check("NSID scalar", lo, hi, 100, 1000)


def _rates_nsid_elastic(seeds: Sequence[int]) -> List[CheckResult]:
    prob, lam = _elastic_instance(0, n=1000, d=50)
    ref, y = _reference_at(prob, lam)
    w = ref.meta["w_ref"]
    sched = StepSchedule.theoretical(prob.q)
    lo = _nsid_errors(prob.that, prob.G, w, lam, y, ref, 100, seeds, sched, prob.q)
    hi = _nsid_errors(prob.that, prob.G, w, lam, y, ref, 1000, seeds, sched, prob.q)
    return _rate_check("NSID elastic", lo, hi, 100, 1000)


def _rates_sid_bias(seeds: Sequence[int], k: int = 1000) -> List[CheckResult]:
    prob, lam = _elastic_instance(0, fraction=0.4)
    ref, y = _reference_at(prob, lam)
    w = ref.meta["w_ref"]
    dec = StepSchedule.theoretical(prob.q)
    out = []
    for sched in (StepSchedule.constant(min(1.0, dec.eta(1))), dec):
        nsid_errs, sid_errs = [], []
        for s in seeds:
            streams = SampleStreams.draw(prob.that, stream_seed(s, k), k, k)
            nsid_errs.append(_guarded_error(nsid, prob, w, lam, y, k, sched, streams, ref))
            sid_errs.append(_guarded_error(sid_baseline, prob, w, lam, y, k, sched, streams, ref))
        m_nsid, m_sid = float(np.median(nsid_errs)), float(np.median(sid_errs))
        out.append(
            CheckResult(f"rates SID-{sched.label} bias", m_sid >= m_nsid, f"SID {m_sid:.2e} vs NSID {m_nsid:.2e}")
        )
    return out


def _guarded_error(fn, prob, w, lam, y, k, sched, streams, ref) -> float:
    try:
        return estimate_error(fn(prob.that, prob.G, w, lam, y, k, k, sched, streams, prob.q), ref)
    except (DivergenceError, NonFiniteError):
        return math.inf


def _rates_bilevel_fd(seed: int, t: int = 500) -> CheckResult:
    prob, lam = _elastic_instance(seed, fraction=0.1)
    w_t = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), t, record=False).w_t
    hyper = baid_fp_hypergrad(prob.upper, prob.phi, w_t, lam, t)

    def f_t(lam_s: np.ndarray) -> float:
        w_s = fixed_point_solve(prob.phi, lam_s, np.zeros(prob.phi.d), t, record=False).w_t
        return prob.upper.value(w_s, lam_s)

    fd = finite_diff_hypergrad(f_t, lam)
    err = _rel(hyper, fd)
    return CheckResult("rates BAID-FP vs finite differences", err <= 1e-4, f"rel {err:.2e}")


def _rates_poisoning(seeds: Sequence[int], k: int = 2000, J: int = 100) -> List[CheckResult]:
    clean, corruptible, val = poisoning_splits(0)
    prob = build_poisoning(clean, corruptible, val)
    lam = prob.lam0
    n_ref = reference_iterations(min(prob.q, 0.999999))
    w = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), n_ref, record=False).w_t
    ref = baid_fp_hypergrad(prob.upper, prob.phi, w, lam, n_ref)
    scale = max(float(np.linalg.norm(ref)), 1e-300)
    sched = StepSchedule.theoretical(prob.q) if prob.q < 1.0 else StepSchedule.harmonic(2.0, 0.01)
    y = prob.upper.grad_w(w, lam)
    nsid_rel, sid_rel = [], []
    for s in seeds:
        root = Rng(s)
        streams = SampleStreams.draw(prob.that, stream_seed(s, k), k, J)
        zeta = prob.upper.sample_stream(root.child(3), J)
        try:
            est = nsid_bilevel(prob.upper, prob.that, prob.G, w, lam, k, J, J, sched, streams, zeta, prob.q)
            nsid_rel.append(float(np.linalg.norm(est - ref)) / scale)
        except (DivergenceError, NonFiniteError):
            nsid_rel.append(math.inf)
        try:
            est = sid_baseline(prob.that, prob.G, w, lam, y, k, poisoning_budget(k), sched, streams, prob.q)
            sid_rel.append(float(np.linalg.norm(est.value - ref)) / scale)
        except (DivergenceError, NonFiniteError):
            sid_rel.append(math.inf)
    med = float(np.median(nsid_rel))
    diverged = sum(math.isinf(e) for e in sid_rel)
    sid_med = float(np.median(sid_rel))
    return [
        CheckResult("rates NSID-Bilevel poisoning", med <= 0.1, f"median rel {med:.3f} over {len(seeds)} seeds"),
        CheckResult(
            "rates SID poisoning failure", diverged >= 1 or sid_med > med, f"{diverged} diverged, median rel {sid_med:.3f}"
        ),
    ]


def check_rates(seeds: int = 10, seed: int = 0) -> List[CheckResult]:
    seed_list = list(range(seed, seed + seeds))
    out: List[CheckResult] = []
    for fraction in (0.05, 0.4):
        out += _rates_itd_aid(fraction, seed)
    out.append(_rates_nsid_consistency(seed))
    out += _rates_nsid_scalar(seed_list)
    out += _rates_nsid_elastic(seed_list)
    out += _rates_sid_bias(seed_list)
    out.append(_rates_bilevel_fd(seed))
    out += _rates_poisoning(seed_list)
    return out


# -------------------- DRIVER --------------------


SUITES: Dict[str, Callable[..., List[CheckResult]]] = {
    "oracle": check_oracle,
    "excess": check_excess,
    "pwl-bound": check_pwl_bound,
    "adjoint": check_adjoint,
    "rates": check_rates,
}


def run_suite(name: str, **kwargs) -> List[CheckResult]:
    """Run one suite; an exception inside a suite becomes a failed check."""
    try:
        suite = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    start = time.perf_counter()
    try:
        results = suite(**kwargs)
    except FixdiffError as e:
        logger.error("suite %s aborted: %s", name, e)
        results = [CheckResult(name, False, f"{type(e).__name__}: {e}")]
    logger.info("suite %s finished in %.1fs", name, time.perf_counter() - start)
    return results
