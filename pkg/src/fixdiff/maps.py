"""
Maps with one fixed selection of their conservative derivative.

Contains:
- MapSelection / StochasticMapSelection: eval plus VJP/JVP contracts
- soft_threshold and its selection (kinks select the dead zone)
- prox_elastic_net_map: the soft-thresholding map G
- gradient-step maps T for the square loss and the multinomial model
- compose, sum_maps and hand-built test maps (linear, relu-linear, tanh-affine)

Derivatives are hand-derived and exact for the chosen selection; nothing is
differentiated numerically.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from fixdiff.errors import ArgumentError, ShapeError
from fixdiff.linalg import Rng, as_vector, spectral_norm

Vector = np.ndarray
Token = Any

# -------------------- MAP TYPES --------------------


@dataclass(frozen=True)
class MapSelection:
    """
    A map Phi(u, lam) together with one fixed selection Phi' of its derivative.

    vjp_state(u, lam, v) = d1Phi^T v, vjp_param(u, lam, v) = d2Phi^T v and
    jvp(u, lam, wdot, lamdot) = d1Phi wdot + d2Phi lamdot must be mutually
    adjoint. `lipschitz` bounds ||d1Phi|| when known.
    """

    d: int
    m: int
    eval_fn: Callable[[Vector, Vector], Vector]
    vjp_state_fn: Callable[[Vector, Vector, Vector], Vector]
    vjp_param_fn: Callable[[Vector, Vector, Vector], Vector]
    jvp_fn: Callable[[Vector, Vector, Vector, Vector], Vector]
    lipschitz: Optional[float] = None
    name: str = "map"
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def contraction(self) -> Optional[float]:
        """Declared contraction constant q < 1, or None when unknown."""
        if self.lipschitz is not None and self.lipschitz < 1.0:
            return self.lipschitz
        return None

    def eval(self, u, lam) -> Vector:
        return self.eval_fn(as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"))

    def __call__(self, u, lam) -> Vector:
        return self.eval(u, lam)

    def vjp_state(self, u, lam, v) -> Vector:
        return self.vjp_state_fn(as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"), as_vector(v, self.d, "v"))

    def vjp_param(self, u, lam, v) -> Vector:
        return self.vjp_param_fn(as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"), as_vector(v, self.d, "v"))

    def jvp(self, u, lam, wdot=None, lamdot=None) -> Vector:
        wd = np.zeros(self.d) if wdot is None else as_vector(wdot, self.d, "wdot")
        ld = np.zeros(self.m) if lamdot is None else as_vector(lamdot, self.m, "lamdot")
        return self.jvp_fn(as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"), wd, ld)


@dataclass(frozen=True)
class StochasticMapSelection:
    """
    Sampled map T_x(u, lam) whose mean over tokens is the deterministic map.

    Tokens are drawn by the caller through sample(rng); every callable takes
    the token as its last argument. `population` lists a finite token set
    whose average reproduces the deterministic map exactly.
    """

    d: int
    m: int
    eval_fn: Callable[[Vector, Vector, Token], Vector]
    vjp_state_fn: Callable[[Vector, Vector, Vector, Token], Vector]
    vjp_param_fn: Callable[[Vector, Vector, Vector, Token], Vector]
    jvp_fn: Callable[[Vector, Vector, Vector, Vector, Token], Vector]
    sampler: Callable[[Rng], Token]
    population: Optional[Sequence[Token]] = None
    lipschitz: Optional[float] = None
    name: str = "stochastic-map"
    batch_size: int = 1
    n_rows: int = 1
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def contraction(self) -> Optional[float]:
        if self.lipschitz is not None and self.lipschitz < 1.0:
            return self.lipschitz
        return None

    def sample(self, rng: Rng) -> Token:
        return self.sampler(rng)

    def sample_stream(self, rng: Rng, count: int) -> List[Token]:
        return [self.sampler(rng) for _ in range(count)]

    def eval(self, u, lam, token) -> Vector:
        return self.eval_fn(as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"), token)

    def vjp_state(self, u, lam, v, token) -> Vector:
        return self.vjp_state_fn(
            as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"), as_vector(v, self.d, "v"), token
        )

    def vjp_param(self, u, lam, v, token) -> Vector:
        return self.vjp_param_fn(
            as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"), as_vector(v, self.d, "v"), token
        )

    def jvp(self, u, lam, wdot, lamdot, token) -> Vector:
        wd = np.zeros(self.d) if wdot is None else as_vector(wdot, self.d, "wdot")
        ld = np.zeros(self.m) if lamdot is None else as_vector(lamdot, self.m, "lamdot")
        return self.jvp_fn(as_vector(u, self.d, "u"), as_vector(lam, self.m, "lam"), wd, ld, token)

    def batch_eval(self, u, lam, tokens: Sequence[Token]) -> Vector:
        acc = np.zeros(self.d)
        for tok in tokens:
            acc = acc + self.eval(u, lam, tok)
        return acc / len(tokens)

    def batch_vjp_param(self, u, lam, v, tokens: Sequence[Token]) -> Vector:
        acc = np.zeros(self.m)
        for tok in tokens:
            acc = acc + self.vjp_param(u, lam, v, tok)
        return acc / len(tokens)

    def expectation(self) -> MapSelection:
        """Deterministic map obtained by averaging over the finite population."""
        if not self.population:
            raise ArgumentError(f"{self.name} has no finite token population")
        pop = list(self.population)
        n = len(pop)

        def ev(u, lam):
            return sum(self.eval_fn(u, lam, t) for t in pop) / n

        def vs(u, lam, v):
            return sum(self.vjp_state_fn(u, lam, v, t) for t in pop) / n

        def vp(u, lam, v):
            return sum(self.vjp_param_fn(u, lam, v, t) for t in pop) / n

        def jv(u, lam, wd, ld):
            return sum(self.jvp_fn(u, lam, wd, ld, t) for t in pop) / n

        return MapSelection(self.d, self.m, ev, vs, vp, jv, self.lipschitz, f"E[{self.name}]")

    @classmethod
    def from_deterministic(cls, base: MapSelection) -> "StochasticMapSelection":
        """Zero-variance sampler: every token returns the deterministic map."""
        return cls(
            d=base.d,
            m=base.m,
            eval_fn=lambda u, lam, _t: base.eval_fn(u, lam),
            vjp_state_fn=lambda u, lam, v, _t: base.vjp_state_fn(u, lam, v),
            vjp_param_fn=lambda u, lam, v, _t: base.vjp_param_fn(u, lam, v),
            jvp_fn=lambda u, lam, wd, ld, _t: base.jvp_fn(u, lam, wd, ld),
            sampler=lambda _rng: None,
            population=[None],
            lipschitz=base.lipschitz,
            name=base.name,
        )


# -------------------- SOFT THRESHOLDING --------------------


def soft_threshold(u, theta: float) -> Vector:
    """Componentwise sign(u) * max(|u| - theta, 0)."""
    if theta < 0:
        raise ArgumentError(f"threshold must be >= 0, got {theta}")
    u = np.asarray(u, dtype=np.float64)
    return np.sign(u) * np.maximum(np.abs(u) - theta, 0.0)


def soft_threshold_selection(u, theta: float, v):
    """
    Selected VJP of soft-thresholding w.r.t. (u, theta).

    Returns (v * 1{|u| > theta}, sum(-sign(u) * 1{|u| > theta} * v)). At
    |u_i| = theta the dead-zone piece is selected.
    """
    if theta < 0:
        raise ArgumentError(f"threshold must be >= 0, got {theta}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    active = np.abs(u) > theta
    dstate = np.where(active, v, 0.0)
    dtheta = float(np.sum(-np.sign(u) * dstate))
    return dstate, dtheta


def prox_elastic_net_map(d: int, m: int, eta: float, lam1: Optional[float] = None, lam1_index: int = 0) -> MapSelection:
    """
    G(u, lam) = soft_threshold(u, eta * lam1).

    With lam1=None the threshold weight is read from lam[lam1_index] and
    d theta / d lam1 = eta; otherwise it is a fixed constant.
    """
    if eta <= 0:
        raise ArgumentError("eta must be positive")

    def theta_of(lam: Vector) -> float:
        return eta * (lam[lam1_index] if lam1 is None else lam1)

    def ev(u, lam):
        return soft_threshold(u, theta_of(lam))

    def vs(u, lam, v):
        return soft_threshold_selection(u, theta_of(lam), v)[0]

    def vp(u, lam, v):
        out = np.zeros(m)
        if lam1 is None:
            out[lam1_index] = eta * soft_threshold_selection(u, theta_of(lam), v)[1]
        return out

    def jv(u, lam, wd, ld):
        active = np.abs(u) > theta_of(lam)
        out = np.where(active, wd, 0.0)
        if lam1 is None:
            out = out - np.where(active, np.sign(u), 0.0) * (eta * ld[lam1_index])
        return out

    return MapSelection(d, m, ev, vs, vp, jv, lipschitz=1.0, name="soft-threshold")


# -------------------- SQUARE LOSS GRADIENT STEP --------------------


class _QuadraticStep:
    """w - eta * (s * |I|^-1 X_I^T (X_I w - y_I) + lam2 * w)."""

    def __init__(self, x, y, eta: float, loss_scale: float, lam2: Optional[float], m: int, lam2_index: int):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.y = as_vector(y, self.x.shape[0], "y")
        if eta <= 0:
            raise ArgumentError("eta must be positive")
        self.eta = float(eta)
        self.scale = float(loss_scale)
        self.lam2 = lam2
        self.m = m
        self.lam2_index = lam2_index
        n = self.x.shape[0]
        self.hess = self.scale / n * (self.x.T @ self.x)
        self.xty = self.scale / n * (self.x.T @ self.y)

    def _lam2(self, lam: Vector) -> float:
        return float(lam[self.lam2_index]) if self.lam2 is None else float(self.lam2)

    def _hvp(self, v: Vector, rows) -> Vector:
        if rows is None:
            return self.hess @ v
        xr = self.x[rows]
        return self.scale / len(rows) * (xr.T @ (xr @ v))

    def _grad(self, w: Vector, rows) -> Vector:
        if rows is None:
            return self.hess @ w - self.xty
        xr = self.x[rows]
        return self.scale / len(rows) * (xr.T @ (xr @ w - self.y[rows]))

    def eval(self, w, lam, rows=None):
        return w - self.eta * (self._grad(w, rows) + self._lam2(lam) * w)

    def vjp_state(self, w, lam, v, rows=None):
        return v - self.eta * (self._hvp(v, rows) + self._lam2(lam) * v)

    def vjp_param(self, w, lam, v, rows=None):
        out = np.zeros(self.m)
        if self.lam2 is None:
            out[self.lam2_index] = -self.eta * float(w @ v)
        return out

    def jvp(self, w, lam, wd, ld, rows=None):
        out = wd - self.eta * (self._hvp(wd, rows) + self._lam2(lam) * wd)
        if self.lam2 is None:
            out = out - self.eta * ld[self.lam2_index] * w
        return out


def grad_step_quadratic(
    x, y, eta: float, lam2: Optional[float] = None, m: int = 2, loss_scale: float = 2.0, lam2_index: int = 1
) -> MapSelection:
    """
    Full-batch gradient step T(w, lam) = w - eta * (s n^-1 X^T (X w - y) + lam2 w).

    lam2 defaults to lam[lam2_index] (elastic-net layout lam = (lam1, lam2)),
    in which case dT/dlam2 = -eta * w. eta is frozen.
    """
    step = _QuadraticStep(x, y, eta, loss_scale, lam2, m, lam2_index)
    d = step.x.shape[1]
    return MapSelection(
        d,
        m,
        step.eval,
        step.vjp_state,
        step.vjp_param,
        step.jvp,
        lipschitz=None,
        name="grad-step-quadratic",
        meta={"eta": step.eta, "loss_scale": step.scale},
    )


def minibatch_sampler(n_rows: int, batch_size: int) -> Callable[[Rng], np.ndarray]:
    """Token sampler: batch_size row indices drawn uniformly with replacement."""
    if not 1 <= batch_size:
        raise ArgumentError("batch_size must be >= 1")

    def sample(rng: Rng) -> np.ndarray:
        return rng.integers(batch_size, n_rows)

    return sample


def stochastic_grad_step_quadratic(
    x,
    y,
    eta: float,
    batch_size: int,
    lam2: Optional[float] = None,
    m: int = 2,
    loss_scale: float = 2.0,
    lam2_index: int = 1,
) -> StochasticMapSelection:
    """Minibatch version of grad_step_quadratic; tokens are row-index arrays."""
    step = _QuadraticStep(x, y, eta, loss_scale, lam2, m, lam2_index)
    n, d = step.x.shape
    return StochasticMapSelection(
        d=d,
        m=m,
        eval_fn=lambda w, lam, t: step.eval(w, lam, t),
        vjp_state_fn=lambda w, lam, v, t: step.vjp_state(w, lam, v, t),
        vjp_param_fn=lambda w, lam, v, t: step.vjp_param(w, lam, v, t),
        jvp_fn=lambda w, lam, wd, ld, t: step.jvp(w, lam, wd, ld, t),
        sampler=minibatch_sampler(n, batch_size),
        population=[np.array([i]) for i in range(n)],
        name="minibatch-grad-step-quadratic",
        batch_size=batch_size,
        n_rows=n,
        meta={"eta": step.eta, "loss_scale": step.scale},
    )


# -------------------- MULTINOMIAL GRADIENT STEP --------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_jvp(p: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Row-wise (diag(p) - p p^T) z."""
    return p * z - p * np.sum(p * z, axis=1, keepdims=True)


ROLE_NONE = "none"
ROLE_PERTURBATION = "perturbation"


class _MultinomialStep:
    """
    One gradient step on a weighted softmax cross-entropy plus ridge.

    W in R^{p x c} is flattened row-major. With role "perturbation" the
    parameter is vec(Gamma) in R^{n' p}, added to the rows after n_clean.
    """

    def __init__(self, x, labels, eta, n_classes, weights, lam2, role, n_clean):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        n_rows, self.p = self.x.shape
        lab = np.asarray(labels)
        if lab.shape != (n_rows,):
            raise ShapeError(f"labels length {lab.shape} does not match {n_rows} rows")
        if not np.all(lab == np.round(lab)):
            raise ArgumentError("labels must be integers")
        lab = lab.astype(np.int64)
        self.c = int(n_classes) if n_classes is not None else int(lab.max(initial=0)) + 1
        if np.any(lab < 0) or np.any(lab >= self.c):
            raise ArgumentError(f"label out of range [0, {self.c})")
        self.labels = lab
        self.onehot = np.zeros((n_rows, self.c))
        self.onehot[np.arange(n_rows), lab] = 1.0
        self.eta = float(eta)
        if self.eta < 0:
            raise ArgumentError("eta must be non-negative")
        self.n_rows = n_rows
        self.weights = (
            np.full(n_rows, 1.0 / n_rows) if weights is None else as_vector(weights, n_rows, "weights")
        )
        if role not in (ROLE_NONE, ROLE_PERTURBATION):
            raise ArgumentError(f"unknown parameter role {role!r}")
        self.role = role
        self.lam2 = lam2
        if role == ROLE_PERTURBATION:
            if lam2 is None:
                raise ArgumentError("perturbation role needs a fixed lam2")
            self.n_clean = int(n_clean if n_clean is not None else 0)
            self.n_corrupt = n_rows - self.n_clean
            self.m = self.n_corrupt * self.p
        else:
            self.n_clean = n_rows
            self.n_corrupt = 0
            self.m = 2
        self.d = self.p * self.c

    # rows is None (all rows, weight 1) or an index array with weight N/|I|
    def _rows(self, lam, rows):
        if self.role == ROLE_PERTURBATION and self.n_corrupt:
            design = self.x.copy()
            design[self.n_clean :] += lam.reshape(self.n_corrupt, self.p)
        else:
            design = self.x
        if rows is None:
            return design, self.onehot, self.weights
        scale = self.n_rows / len(rows)
        return design[rows], self.onehot[rows], self.weights[rows] * scale

    def _lam2(self, lam) -> float:
        if self.lam2 is not None:
            return float(self.lam2)
        return float(lam[1])

    def eval(self, u, lam, rows=None):
        w = u.reshape(self.p, self.c)
        xr, yr, om = self._rows(lam, rows)
        probs = _softmax(xr @ w)
        grad = xr.T @ (om[:, None] * (probs - yr))
        return (w - self.eta * (grad + self._lam2(lam) * w)).ravel()

    def _hvp(self, xr, om, probs, vmat):
        return xr.T @ (om[:, None] * _softmax_jvp(probs, xr @ vmat))

    def vjp_state(self, u, lam, v, rows=None):
        w = u.reshape(self.p, self.c)
        vmat = v.reshape(self.p, self.c)
        xr, _yr, om = self._rows(lam, rows)
        probs = _softmax(xr @ w)
        return (vmat - self.eta * (self._hvp(xr, om, probs, vmat) + self._lam2(lam) * vmat)).ravel()

    def vjp_param(self, u, lam, v, rows=None):
        w = u.reshape(self.p, self.c)
        vmat = v.reshape(self.p, self.c)
        if self.role == ROLE_NONE:
            out = np.zeros(2)
            if self.lam2 is None:
                out[1] = -self.eta * float(np.sum(w * vmat))
            return out
        if self.n_corrupt == 0:
            return np.zeros(0)
        xr, yr, om = self._rows(lam, rows)
        probs = _softmax(xr @ w)
        resid = om[:, None] * (probs - yr)
        sens = om[:, None] * _softmax_jvp(probs, xr @ vmat)
        per_row = -self.eta * (resid @ vmat.T + sens @ w.T)
        full = np.zeros((self.n_rows, self.p))
        if rows is None:
            full += per_row
        else:
            np.add.at(full, rows, per_row)
        return full[self.n_clean :].ravel()

    def jvp(self, u, lam, wd, ld, rows=None):
        w = u.reshape(self.p, self.c)
        wdm = wd.reshape(self.p, self.c)
        xr, yr, om = self._rows(lam, rows)
        probs = _softmax(xr @ w)
        out = wdm - self.eta * (self._hvp(xr, om, probs, wdm) + self._lam2(lam) * wdm)
        if self.role == ROLE_NONE:
            if self.lam2 is None:
                out = out - self.eta * ld[1] * w
            return out.ravel()
        if self.n_corrupt:
            dx_full = np.zeros((self.n_rows, self.p))
            dx_full[self.n_clean :] = ld.reshape(self.n_corrupt, self.p)
            dx = dx_full if rows is None else dx_full[rows]
            resid = om[:, None] * (probs - yr)
            dgrad = dx.T @ resid + xr.T @ (om[:, None] * _softmax_jvp(probs, dx @ w))
            out = out - self.eta * dgrad
        return out.ravel()


def grad_step_multinomial(
    x,
    labels,
    eta: float,
    lam2: Optional[float] = None,
    n_classes: Optional[int] = None,
    weights=None,
    param_role: str = ROLE_NONE,
    n_clean: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> Union[MapSelection, StochasticMapSelection]:
    """
    Gradient step on sum_i w_i * CE(softmax(x_i^T W), label_i) + lam2/2 ||W||^2.

    Rows after n_clean are the corruptible ones when param_role is
    "perturbation"; then lam = vec(Gamma) (row-major, n' x p) and lam2 must be
    fixed. With param_role "none", lam = (lam1, lam2). Passing batch_size gives
    the minibatch variant whose tokens are row-index arrays.
    """
    step = _MultinomialStep(x, labels, eta, n_classes, weights, lam2, param_role, n_clean)
    meta = {"eta": step.eta, "p": step.p, "classes": step.c, "role": step.role}
    if batch_size is None:
        return MapSelection(
            step.d, step.m, step.eval, step.vjp_state, step.vjp_param, step.jvp, name="grad-step-multinomial", meta=meta
        )
    return StochasticMapSelection(
        d=step.d,
        m=step.m,
        eval_fn=lambda u, lam, t: step.eval(u, lam, t),
        vjp_state_fn=lambda u, lam, v, t: step.vjp_state(u, lam, v, t),
        vjp_param_fn=lambda u, lam, v, t: step.vjp_param(u, lam, v, t),
        jvp_fn=lambda u, lam, wd, ld, t: step.jvp(u, lam, wd, ld, t),
        sampler=minibatch_sampler(step.n_rows, batch_size),
        population=[np.array([i]) for i in range(step.n_rows)],
        name="minibatch-grad-step-multinomial",
        batch_size=batch_size,
        n_rows=step.n_rows,
        meta=meta,
    )


# -------------------- COMBINATORS --------------------


def _check_compose(g: MapSelection, t) -> None:
    if g.d != t.d or g.m != t.m:
        raise ShapeError(f"cannot compose {g.name} (d={g.d}, m={g.m}) with {t.name} (d={t.d}, m={t.m})")


def _lip_product(a: Optional[float], b: Optional[float]) -> Optional[float]:
    return None if a is None or b is None else a * b


def compose(g: MapSelection, t: Union[MapSelection, StochasticMapSelection]):
    """
    Phi(u, lam) = G(T(u, lam), lam) with the chain-rule selection.

    A stochastic T yields a stochastic composite G(T_x(.), .), the biased
    sampler used by the SID baseline.
    """
    _check_compose(g, t)
    if isinstance(t, StochasticMapSelection):

        def sev(u, lam, tok):
            return g.eval_fn(t.eval_fn(u, lam, tok), lam)

        def svs(u, lam, v, tok):
            z = t.eval_fn(u, lam, tok)
            return t.vjp_state_fn(u, lam, g.vjp_state_fn(z, lam, v), tok)

        def svp(u, lam, v, tok):
            z = t.eval_fn(u, lam, tok)
            return t.vjp_param_fn(u, lam, g.vjp_state_fn(z, lam, v), tok) + g.vjp_param_fn(z, lam, v)

        def sjv(u, lam, wd, ld, tok):
            z = t.eval_fn(u, lam, tok)
            return g.jvp_fn(z, lam, t.jvp_fn(u, lam, wd, ld, tok), ld)

        return StochasticMapSelection(
            d=t.d,
            m=t.m,
            eval_fn=sev,
            vjp_state_fn=svs,
            vjp_param_fn=svp,
            jvp_fn=sjv,
            sampler=t.sampler,
            population=t.population,
            lipschitz=_lip_product(g.lipschitz, t.lipschitz),
            name=f"{g.name}∘{t.name}",
            batch_size=t.batch_size,
            n_rows=t.n_rows,
            meta=dict(t.meta),
        )

    def ev(u, lam):
        return g.eval_fn(t.eval_fn(u, lam), lam)

    def vs(u, lam, v):
        return t.vjp_state_fn(u, lam, g.vjp_state_fn(t.eval_fn(u, lam), lam, v))

    def vp(u, lam, v):
        z = t.eval_fn(u, lam)
        return t.vjp_param_fn(u, lam, g.vjp_state_fn(z, lam, v)) + g.vjp_param_fn(z, lam, v)

    def jv(u, lam, wd, ld):
        z = t.eval_fn(u, lam)
        return g.jvp_fn(z, lam, t.jvp_fn(u, lam, wd, ld), ld)

    return MapSelection(
        t.d, t.m, ev, vs, vp, jv, lipschitz=_lip_product(g.lipschitz, t.lipschitz), name=f"{g.name}∘{t.name}",
        meta=dict(t.meta),
    )


def sum_maps(maps: Sequence[MapSelection], weights: Optional[Sequence[float]] = None) -> MapSelection:
    """Weighted sum of maps and of their selected derivatives."""
    if not maps:
        raise ArgumentError("sum_maps needs at least one map")
    ws = [1.0] * len(maps) if weights is None else [float(w) for w in weights]
    if len(ws) != len(maps):
        raise ShapeError("one weight per map is required")
    d, m = maps[0].d, maps[0].m
    for mp in maps:
        if (mp.d, mp.m) != (d, m):
            raise ShapeError("sum_maps needs maps of equal dimensions")
    pairs = list(zip(ws, maps))

    def ev(u, lam):
        return sum(w * mp.eval_fn(u, lam) for w, mp in pairs)

    def vs(u, lam, v):
        return sum(w * mp.vjp_state_fn(u, lam, v) for w, mp in pairs)

    def vp(u, lam, v):
        return sum(w * mp.vjp_param_fn(u, lam, v) for w, mp in pairs)

    def jv(u, lam, wd, ld):
        return sum(w * mp.jvp_fn(u, lam, wd, ld) for w, mp in pairs)

    lips = [mp.lipschitz for mp in maps]
    lip = None if any(x is None for x in lips) else sum(abs(w) * x for w, x in zip(ws, lips))
    return MapSelection(d, m, ev, vs, vp, jv, lipschitz=lip, name="sum(" + ",".join(mp.name for mp in maps) + ")")


def identity_map(d: int, m: int) -> MapSelection:
    """Phi(u, lam) = u."""
    return MapSelection(
        d,
        m,
        lambda u, lam: u.copy(),
        lambda u, lam, v: v.copy(),
        lambda u, lam, v: np.zeros(m),
        lambda u, lam, wd, ld: wd.copy(),
        lipschitz=1.0,
        name="identity",
    )


def _affine_parts(a1, a2, b):
    a1 = np.atleast_2d(np.asarray(a1, dtype=np.float64))
    a2 = np.atleast_2d(np.asarray(a2, dtype=np.float64))
    d = a1.shape[0]
    if a1.shape != (d, d) or a2.shape[0] != d:
        raise ShapeError(f"A1 must be d x d and A2 d x m, got {a1.shape} and {a2.shape}")
    b = np.zeros(d) if b is None else as_vector(b, d, "b")
    return a1, a2, b


def linear_map(a1, a2, b=None) -> MapSelection:
    """Phi(u, lam) = A1 u + A2 lam + b (one affine piece)."""
    a1, a2, b = _affine_parts(a1, a2, b)
    d, m = a2.shape
    return MapSelection(
        d,
        m,
        lambda u, lam: a1 @ u + a2 @ lam + b,
        lambda u, lam, v: a1.T @ v,
        lambda u, lam, v: a2.T @ v,
        lambda u, lam, wd, ld: a1 @ wd + a2 @ ld,
        lipschitz=spectral_norm(a1),
        name="linear",
        meta={
            "piecewise_linear": True,
            "jump_bound": 0.0,
            "piece_pattern": lambda u: np.zeros(np.shape(u), dtype=bool),
            "A1": a1,
            "A2": a2,
        },
    )


def relu_linear_map(a1, a2, b=None) -> MapSelection:
    """
    Phi(u, lam) = A1 relu(u) + A2 lam + b, piecewise linear with L = 0.

    meta carries the piece-jump bound M = ||A1|| and kink_distance(u) =
    min_i |u_i|, the radius within which the active piece cannot change.
    """
    a1, a2, b = _affine_parts(a1, a2, b)
    d, m = a2.shape
    lip = spectral_norm(a1)

    def kink_distance(u) -> float:
        u = np.asarray(u, dtype=np.float64)
        return float(np.min(np.abs(u))) if u.size else float("inf")

    return MapSelection(
        d,
        m,
        lambda u, lam: a1 @ np.maximum(u, 0.0) + a2 @ lam + b,
        lambda u, lam, v: np.where(u > 0.0, a1.T @ v, 0.0),
        lambda u, lam, v: a2.T @ v,
        lambda u, lam, wd, ld: a1 @ np.where(u > 0.0, wd, 0.0) + a2 @ ld,
        lipschitz=lip,
        name="relu-linear",
        meta={
            "piecewise_linear": True,
            "jump_bound": lip,
            "kink_distance": kink_distance,
            "piece_pattern": lambda u: np.asarray(u) > 0.0,
            "A1": a1,
            "A2": a2,
        },
    )


def tanh_affine_map(a1, a2, b=None) -> MapSelection:
    """Smooth map Phi(u, lam) = tanh(A1 u + A2 lam + b) with ||d1Phi|| <= ||A1||."""
    a1, a2, b = _affine_parts(a1, a2, b)
    d, m = a2.shape

    def slope(u, lam):
        return 1.0 - np.tanh(a1 @ u + a2 @ lam + b) ** 2

    return MapSelection(
        d,
        m,
        lambda u, lam: np.tanh(a1 @ u + a2 @ lam + b),
        lambda u, lam, v: a1.T @ (slope(u, lam) * v),
        lambda u, lam, v: a2.T @ (slope(u, lam) * v),
        lambda u, lam, wd, ld: slope(u, lam) * (a1 @ wd + a2 @ ld),
        lipschitz=spectral_norm(a1),
        name="tanh-affine",
    )


# -------------------- ADJOINT CHECKS --------------------


def adjoint_defect(mp: MapSelection, u, lam, v, wdot, lamdot) -> float:
    """
    Largest relative violation of the two adjoint identities at one sample point.

    <v, jvp(wdot, 0)> = <vjp_state(v), wdot> and
    <v, jvp(0, lamdot)> = <vjp_param(v), lamdot>.
    """
    lhs_s = float(np.dot(v, mp.jvp(u, lam, wdot, None)))
    rhs_s = float(np.dot(mp.vjp_state(u, lam, v), wdot))
    lhs_p = float(np.dot(v, mp.jvp(u, lam, None, lamdot)))
    rhs_p = float(np.dot(mp.vjp_param(u, lam, v), lamdot))
    s = abs(lhs_s - rhs_s) / max(1.0, abs(lhs_s), abs(rhs_s))
    p = abs(lhs_p - rhs_p) / max(1.0, abs(lhs_p), abs(rhs_p))
    return max(s, p)
