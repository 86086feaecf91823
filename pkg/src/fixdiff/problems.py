"""
Concrete problems: synthetic elastic net and multinomial data poisoning.

Contains:
- Dataset / ProblemSpec
- gen_elastic_net, build_elastic_net, lambda_max
- gen_blobs, poisoning_splits, build_poisoning, accuracy
- noisy_scalar_map: two-slope scalar sampler with a known implicit derivative
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from fixdiff.bilevel import UpperLevel, project_box, project_nonnegative, validation_cross_entropy, validation_square_loss
from fixdiff.errors import ArgumentError, ShapeError
from fixdiff.linalg import Rng, as_vector
from fixdiff.maps import (
    ROLE_PERTURBATION,
    MapSelection,
    StochasticMapSelection,
    compose,
    grad_step_multinomial,
    grad_step_quadratic,
    prox_elastic_net_map,
    stochastic_grad_step_quadratic,
)
from fixdiff.solver import estimate_q, fixed_point_solve, ista_step_size, iterations_for_accuracy

logger = logging.getLogger(__name__)

PROVENANCE_CLOSED_FORM = "closed-form"
PROVENANCE_HEURISTIC = "heuristic"


@dataclass(frozen=True)
class Dataset:
    """
    Features X (n x d) and targets.

    Regression datasets have n_classes None; classification targets are
    integer labels in [0, n_classes).
    """

    X: np.ndarray
    targets: np.ndarray
    n_classes: Optional[int] = None
    tag: str = "train"

    def __post_init__(self):
        x = np.asarray(self.X, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"X must be 2-D, got shape {x.shape}")
        if np.shape(self.targets) != (x.shape[0],):
            raise ShapeError(f"{x.shape[0]} rows but targets have shape {np.shape(self.targets)}")
        if self.n_classes is not None:
            lab = np.asarray(self.targets)
            if np.any(lab < 0) or np.any(lab >= self.n_classes):
                raise ArgumentError(f"label out of range [0, {self.n_classes})")
        object.__setattr__(self, "X", x)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self.targets, dtype=np.int64)

    def subset(self, index, tag: Optional[str] = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.X[index], np.asarray(self.targets)[index], self.n_classes, tag or self.tag)


@dataclass(frozen=True)
class ProblemSpec:
    """
    Everything an experiment needs: w = G(T(w, lam), lam) plus the upper level.

    phi is the composite map with its contraction q recorded; q_provenance
    says whether q is a closed-form bound or a heuristic.
    """

    name: str
    T: MapSelection
    G: MapSelection
    phi: MapSelection
    that: StochasticMapSelection
    upper: UpperLevel
    lam0: np.ndarray
    lam_names: Tuple[str, ...]
    projection: Callable[[np.ndarray], np.ndarray]
    eta: float
    q: float
    q_provenance: str
    c: float
    batch_size: int
    n_rows: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.phi.d != self.upper.d or self.phi.m != self.upper.m or self.that.d != self.phi.d:
            raise ShapeError(f"{self.name}: map and upper-level dimensions differ")


# -------------------- ELASTIC NET --------------------


def gen_elastic_net(
    seed: int,
    n: int = 100,
    d: int = 100,
    n_informative: int = 30,
    correlated: bool = False,
    n_val: Optional[int] = None,
    noise_mean: float = 0.1,
) -> Tuple[Dataset, Dataset, np.ndarray]:
    """
    Gaussian design, sparse ground truth, y = X w_true + eps with eps ~ N(0.1, 1).

    The correlated variant draws the informative coordinates with covariance
    A^T A / ||A^T A|| for a standard normal square A. The validation set has
    2n rows unless n_val is given.
    """
    if n < 1 or d < 1:
        raise ArgumentError("n and d must be positive")
    if not 0 < n_informative <= d:
        raise ArgumentError(f"need 0 < n_informative <= d, got {n_informative} and d={d}")
    n_val = 2 * n if n_val is None else n_val
    root = Rng(seed)
    mixing = None
    if correlated:
        a = root.child(0).gaussian(n_informative * n_informative).reshape(n_informative, n_informative)
        gram_top = float(np.linalg.eigvalsh(a.T @ a)[-1])
        mixing = a / np.sqrt(gram_top)

    w_true = root.child(1).gaussian(d)
    w_true[n_informative:] = 0.0

    def draw(rng: Rng, rows: int, tag: str) -> Dataset:
        x = rng.gaussian(rows * d).reshape(rows, d)
        if mixing is not None:
            x[:, :n_informative] = x[:, :n_informative] @ mixing
        y = x @ w_true + noise_mean + rng.gaussian(rows)
        return Dataset(x, y, None, tag)

    train = draw(root.child(2), n, "train")
    val = draw(root.child(3), n_val, "val")
    return train, val, w_true


def lambda_max(ds: Dataset) -> float:
    """Smallest lam1 for which the lasso solution at lam2 = 0 is zero: ||2 n^-1 X^T y||_inf."""
    return float(np.max(np.abs(2.0 / ds.n_rows * (ds.X.T @ ds.targets))))


def build_elastic_net(
    train: Dataset,
    val: Dataset,
    lam,
    c: float = 1.0,
    batch_size: Optional[int] = None,
) -> ProblemSpec:
    """
    ISTA on n^-1 ||Xw - y||^2 + lam1 ||w||_1 + lam2/2 ||w||^2.

    eta and q are computed once at the given lam2 and stay frozen while lam
    varies. The square loss has Hessian 2 n^-1 X^T X, hence the factor 2 on c.
    """
    if c <= 0:
        raise ArgumentError("c must be positive")
    if train.n_features != val.n_features:
        raise ShapeError("train and validation feature counts differ")
    lam = as_vector(lam, 2, "lam")
    if np.any(lam < 0):
        raise ArgumentError("lam1 and lam2 must be non-negative")
    eta, q = ista_step_size(train.X, float(lam[1]), 2.0 * c)
    if not q < 1.0:
        raise ArgumentError(f"degenerate data: step size gives q={q:.6g}")
    n, d = train.X.shape
    b = max(1, n // 10) if batch_size is None else batch_size
    t_map = grad_step_quadratic(train.X, train.targets, eta)
    g_map = prox_elastic_net_map(d, 2, eta)
    phi = dataclasses.replace(compose(g_map, t_map), lipschitz=q, name="ista")
    that = stochastic_grad_step_quadratic(train.X, train.targets, eta, b)
    upper = validation_square_loss(val.X, val.targets, m=2, batch_size=max(1, val.n_rows // 10))
    logger.debug("elastic net: n=%d d=%d eta=%.6g q=%.6g b=%d", n, d, eta, q, b)
    return ProblemSpec(
        name="elastic-net",
        T=t_map,
        G=g_map,
        phi=phi,
        that=that,
        upper=upper,
        lam0=lam.copy(),
        lam_names=("lam1", "lam2"),
        projection=project_nonnegative,
        eta=eta,
        q=q,
        q_provenance=PROVENANCE_CLOSED_FORM,
        c=c,
        batch_size=b,
        n_rows=n,
        meta={"lambda_max": lambda_max(train)},
    )


def support_size(w, threshold: float = 1e-12) -> int:
    return int(np.sum(np.abs(np.asarray(w)) > threshold))


# -------------------- DATA POISONING --------------------


def gen_blobs(
    seed: int,
    n: int,
    p: int = 20,
    n_classes: int = 3,
    spread: float = 0.35,
    noise: float = 0.15,
    tag: str = "train",
) -> Dataset:
    """
    Gaussian blobs: class k has mean `spread` on coordinates 2k and 2k+1.

    Features stay small so the c = 0.1 gradient step remains contractive.
    """
    if p < 2 * n_classes:
        raise ArgumentError(f"need p >= 2 * n_classes, got p={p}")
    root = Rng(seed)
    labels = root.child(0).integers(n, n_classes)
    x = noise * root.child(1).gaussian(n * p).reshape(n, p)
    rows = np.arange(n)
    x[rows, 2 * labels] += spread
    x[rows, 2 * labels + 1] += spread
    return Dataset(x, labels, n_classes, tag)


def poisoning_splits(
    seed: int,
    n: int = 500,
    n_corrupt: int = 150,
    n_val: int = 500,
    p: int = 20,
    n_classes: int = 3,
) -> Tuple[Dataset, Dataset, Dataset]:
    """(clean, corruptible, validation) drawn from one blob population."""
    full = gen_blobs(seed, n + n_corrupt + n_val, p, n_classes)
    clean = full.subset(np.arange(n), "train")
    corrupt = full.subset(np.arange(n, n + n_corrupt), "corruptible")
    val = full.subset(np.arange(n + n_corrupt, n + n_corrupt + n_val), "val")
    return clean, corrupt, val


def init_perturbation(seed: int, n_corrupt: int, p: int, bound: float = 0.1) -> np.ndarray:
    """Standard normal entries clipped to [-bound, bound], flattened row-major."""
    return np.clip(Rng(seed).child(7).gaussian(n_corrupt * p), -bound, bound)


def build_poisoning(
    clean: Dataset,
    corruptible: Dataset,
    val: Dataset,
    lam1: float = 0.02,
    lam2: float = 0.1,
    c: float = 0.1,
    seed: int = 0,
    batch_size: Optional[int] = None,
    q_samples: int = 5,
) -> ProblemSpec:
    """
    Elastic-net multinomial regression on clean rows plus perturbed rows X~ + Gamma.

    The parameter is lam = vec(Gamma). The lower objective weights both halves
    equally: 1/(2n) per clean row and 1/(2n') per corruptible row. q comes
    from the step-size formula on the weighted design and is only a
    heuristic there; an empirical estimate near the fixed point is stored too.
    """
    if lam1 < 0 or lam2 < 0:
        raise ArgumentError("lam1 and lam2 must be non-negative")
    if clean.n_classes is None:
        raise ArgumentError("poisoning needs a classification dataset")
    n_classes = clean.n_classes
    p = clean.n_features
    for ds in (corruptible, val):
        if ds.n_features != p:
            raise ShapeError(f"{ds.tag} has {ds.n_features} features, expected {p}")
    n, n_c = clean.n_rows, corruptible.n_rows
    x = np.vstack([clean.X, corruptible.X])
    labels = np.concatenate([clean.labels, corruptible.labels])
    big_n = n + n_c
    if n_c:
        weights = np.concatenate([np.full(n, 0.5 / n), np.full(n_c, 0.5 / n_c)])
    else:
        weights = np.full(n, 1.0 / n)
    weighted = x * np.sqrt(weights * big_n)[:, None]
    eta, q_formula = ista_step_size(weighted, lam2, c)
    b = max(1, big_n // 10) if batch_size is None else batch_size

    common = dict(lam2=lam2, n_classes=n_classes, weights=weights, param_role=ROLE_PERTURBATION, n_clean=n)
    t_map = grad_step_multinomial(x, labels, eta, **common)
    that = grad_step_multinomial(x, labels, eta, batch_size=b, **common)
    d, m = t_map.d, t_map.m
    g_map = prox_elastic_net_map(d, m, eta, lam1=lam1)
    phi = compose(g_map, t_map)
    lam0 = init_perturbation(seed, n_c, p)

    warmup = min(2000, iterations_for_accuracy(min(q_formula, 0.999), 1e-8))
    w_guess = fixed_point_solve(phi, lam0, np.zeros(d), warmup, record=False).w_t
    q_est = estimate_q(phi, lam0, q_samples, Rng(seed).child(8), center=w_guess, radius=0.1)
    q = max(q_formula, q_est.value)
    if q >= 1.0:
        logger.warning("poisoning map does not look contractive (q=%.6g)", q)
    phi = dataclasses.replace(phi, lipschitz=q, name="multinomial-ista")
    upper = validation_cross_entropy(val.X, val.labels, n_classes, m, batch_size=max(1, val.n_rows // 10))
    logger.debug("poisoning: n=%d n'=%d p=%d eta=%.6g q=%.6g (estimate %.6g)", n, n_c, p, eta, q_formula, q_est.value)
    return ProblemSpec(
        name="poisoning",
        T=t_map,
        G=g_map,
        phi=phi,
        that=that,
        upper=upper,
        lam0=lam0,
        lam_names=tuple(f"gamma[{i}]" for i in range(m)),
        projection=project_box(-0.1, 0.1),
        eta=eta,
        q=q,
        q_provenance=PROVENANCE_HEURISTIC,
        c=c,
        batch_size=b,
        n_rows=big_n,
        meta={"q_formula": q_formula, "q_estimate": q_est, "n_classes": n_classes, "p": p, "lam1": lam1, "lam2": lam2},
    )


def accuracy(w, ds: Dataset) -> float:
    """Fraction of rows whose arg-max class score matches the label."""
    if ds.n_classes is None:
        raise ArgumentError("accuracy needs a classification dataset")
    scores = ds.X @ np.asarray(w, dtype=np.float64).reshape(ds.n_features, ds.n_classes)
    return float(np.mean(np.argmax(scores, axis=1) == ds.labels))


# -------------------- SCALAR NOISY MODEL --------------------


def noisy_scalar_map(slopes: Sequence[float] = (0.4, 0.6)) -> StochasticMapSelection:
    """
    T_x(w, lam) = s_x w + lam with s_x drawn uniformly from `slopes`.

    The mean map has slope s = mean(slopes), so w(lam) = lam / (1 - s) and
    the implicit derivative is 1 / (1 - s).
    """
    s = np.asarray(slopes, dtype=np.float64)
    if s.ndim != 1 or s.size == 0 or np.any(np.abs(s) >= 1.0):
        raise ArgumentError("slopes must be a non-empty list with |s| < 1")

    return StochasticMapSelection(
        d=1,
        m=1,
        eval_fn=lambda u, lam, tok: s[tok] * u + lam,
        vjp_state_fn=lambda u, lam, v, tok: s[tok] * v,
        vjp_param_fn=lambda u, lam, v, tok: v.copy(),
        jvp_fn=lambda u, lam, wd, ld, tok: s[tok] * wd + ld,
        sampler=lambda rng: int(rng.integers(1, s.size)[0]),
        population=list(range(s.size)),
        lipschitz=float(np.max(np.abs(s))),
        name="noisy-scalar",
    )
