"""
Experiment harness for the elastic-net and data-poisoning studies.

Contains:
- RunRecord and the runs.csv writer/reader
- run_elastic: ITD vs AID sweep over t, stochastic sweep over k = J
- run_poisoning: NSID / SID / AID-FP sweep with J = ceil(k / 20)
- solve_problem: single solve with an optional outer loop
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fixdiff.bilevel import baid_fp_hypergrad, outer_loop
from fixdiff.config import Config, effective_workers
from fixdiff.datasets import load_csv, load_idx, split
from fixdiff.deterministic import DerivEstimate, aid_cg_vjp, aid_fp_vjp, estimate_error, itd_vjp
from fixdiff.errors import ArgumentError, BreakdownError, ConfigError, DivergenceError, NonFiniteError
from fixdiff.pipeline import SweepCell, SweepOrchestrator
from fixdiff.problems import (
    Dataset,
    ProblemSpec,
    accuracy,
    build_elastic_net,
    build_poisoning,
    gen_elastic_net,
    lambda_max,
    poisoning_splits,
    support_size,
)
from fixdiff.reference import reference_iterations, reference_vjp
from fixdiff.solver import fixed_point_solve, support_identification
from fixdiff.stochastic import (
    SCHEDULE_PRESETS,
    SampleStreams,
    StepSchedule,
    nsid,
    poisoning_budget,
    sid_baseline,
    stochastic_epochs,
)
from fixdiff.svg import Series, line_plot

logger = logging.getLogger(__name__)

CSV_HEADER = ("method", "t", "k", "J", "epoch", "error", "seed", "wall_ms", "q", "tref", "kref")
DIVERGED = "div"
STREAM_SEED_STRIDE = 1000003

SWEEP_DETERMINISTIC = "deterministic"
SWEEP_STOCHASTIC = "stochastic"


# -------------------- RECORDS --------------------


@dataclass(frozen=True)
class RunRecord:
    """One CSV row; `sweep` is kept in memory only, for plotting."""

    method: str
    t: int
    k: int
    J: int
    epoch: float
    error: float
    seed: int
    wall_ms: float
    q: float
    tref: int
    kref: int
    sweep: str = field(default=SWEEP_DETERMINISTIC, compare=False)

    def __post_init__(self):
        if not (self.error >= 0):
            raise ArgumentError(f"{self.method}: error must be non-negative, got {self.error}")

    @property
    def diverged(self) -> bool:
        return math.isinf(self.error)

    def sort_key(self) -> Tuple:
        return (self.sweep, self.method, self.seed, self.t, self.k, self.J)

    def row(self, timing: bool = False) -> List[str]:
        return [
            self.method,
            str(self.t),
            str(self.k),
            str(self.J),
            repr(float(self.epoch)),
            DIVERGED if self.diverged else repr(float(self.error)),
            str(self.seed),
            f"{self.wall_ms:.3f}" if timing else "0",
            repr(float(self.q)),
            str(self.tref),
            str(self.kref),
        ]


def write_runs_csv(records: Sequence[RunRecord], path: Path, timing: bool = False) -> Path:
    """Rows in deterministic order; wall_ms only when timing is on."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in sorted(records, key=RunRecord.sort_key):
            writer.writerow(rec.row(timing))
    return path


def read_runs_csv(path: Path) -> List[RunRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ArgumentError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            RunRecord(
                method=r["method"],
                t=int(r["t"]),
                k=int(r["k"]),
                J=int(r["J"]),
                epoch=float(r["epoch"]),
                error=math.inf if r["error"] == DIVERGED else float(r["error"]),
                seed=int(r["seed"]),
                wall_ms=float(r["wall_ms"]),
                q=float(r["q"]),
                tref=int(r["tref"]),
                kref=int(r["kref"]),
            )
            for r in reader
        ]


@dataclass
class ExperimentOutput:
    files: List[Path] = field(default_factory=list)
    rows: int = 0
    interrupted: bool = False


@dataclass(frozen=True)
class _CellOutput:
    setting: str
    seed: int
    records: List[RunRecord]
    summary: Dict[str, Any]


# -------------------- SHARED PIECES --------------------


def make_schedules(cfg: Config, problem: str, q: float) -> Dict[str, StepSchedule]:
    """
    The decreasing schedule and the constant one sharing its first step.

    "theory" needs q < 1; otherwise the problem preset is used.
    """
    if cfg.schedule == "theory" and q < 1.0:
        dec = StepSchedule.theoretical(q)
    else:
        if cfg.schedule == "theory":
            logger.warning("q=%.6g is not a contraction; using the %s preset schedule", q, problem)
        dec = StepSchedule.harmonic(*SCHEDULE_PRESETS[problem])
    eta0 = cfg.const_eta if cfg.const_eta > 0 else min(1.0, dec.eta(1))
    return {"const": StepSchedule.constant(eta0), "dec": dec}


def stream_seed(seed: int, k: int) -> int:
    return seed * STREAM_SEED_STRIDE + k


def _reference(prob: ProblemSpec, lam: np.ndarray, cfg: Config) -> Tuple[DerivEstimate, np.ndarray]:
    """Reference product at w_ref, seeded with y = d1E(w_ref) held fixed for every estimate."""
    n_ref = reference_iterations(prob.q, cfg.ref_accuracy, cfg.ref_cap)
    w_ref = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), n_ref, record=False).w_t
    y = prob.upper.grad_w(w_ref, lam)
    ref = reference_vjp(prob.phi, lam, y, n_ref, n_ref)
    return ref, y


def _guarded(fn, *args, **kwargs) -> Optional[DerivEstimate]:
    try:
        return fn(*args, **kwargs)
    except (DivergenceError, BreakdownError, NonFiniteError) as e:
        logger.debug("%s diverged: %s", getattr(fn, "__name__", "estimator"), e)
        return None


def _stochastic_rows(
    prob: ProblemSpec,
    lam: np.ndarray,
    w_ref: np.ndarray,
    y: np.ndarray,
    ref: DerivEstimate,
    ks_js: Sequence[Tuple[int, int]],
    seed: int,
    schedules: Dict[str, StepSchedule],
    run_sid: bool,
) -> List[RunRecord]:
    """NSID, SID and AID-FP at w_ref over (k, J) budgets."""
    common = dict(seed=seed, q=prob.q, tref=ref.t, kref=ref.k, sweep=SWEEP_STOCHASTIC)
    out: List[RunRecord] = []

    def add(method: str, est: Optional[DerivEstimate], k: int, J: int, epoch: float) -> None:
        err = math.inf if est is None else estimate_error(est, ref)
        wall = 0.0 if est is None else est.wall_ms
        out.append(RunRecord(method, ref.t, k, J, epoch, err, wall_ms=wall, **common))

    for k, J in ks_js:
        streams = SampleStreams.draw(prob.that, stream_seed(seed, k), k, J)
        epoch = stochastic_epochs(k, J, prob.batch_size, prob.n_rows)
        for label, sched in schedules.items():
            est = _guarded(nsid, prob.that, prob.G, w_ref, lam, y, k, J, sched, streams, prob.q)
            add(f"NSID-{label}", est, k, J, epoch)
            if run_sid:
                est = _guarded(sid_baseline, prob.that, prob.G, w_ref, lam, y, k, J, sched, streams, prob.q)
                add(f"SID-{label}", est, k, J, epoch)
        add("AID-FP", aid_fp_vjp(prob.phi, w_ref, lam, y, k, t=ref.t), k, 0, float(k))
    return out


def _median_series(records: Sequence[RunRecord], method: str, x_of) -> Series:
    groups: Dict[float, List[float]] = {}
    for r in records:
        if r.method == method:
            groups.setdefault(float(x_of(r)), []).append(r.error)
    xs = sorted(groups)
    return Series(method, xs, [float(np.median(groups[x])) for x in xs], dashed=method.startswith("SID"))


def _plot_stochastic(records: Sequence[RunRecord], path: Path, title: str) -> Path:
    stoch = [r for r in records if r.sweep == SWEEP_STOCHASTIC]
    methods = sorted({r.method for r in stoch})
    series = [_median_series(stoch, m, lambda r: r.epoch) for m in methods]
    line_plot(series, title, "epochs", "median error to reference (euclidean)", path=path)
    return path


def _write_meta(path: Path, payload: Dict[str, Any]) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _execute(cfg: Config, cells: List[SweepCell], progress, title: str):
    orchestrator = SweepOrchestrator(effective_workers(cfg), progress, title)
    return orchestrator.run(cells)


def _seeds(cfg: Config) -> range:
    return range(cfg.seed, cfg.seed + cfg.seeds)


# -------------------- ELASTIC NET --------------------


def elastic_ts(cfg: Config) -> List[int]:
    ts = list(range(1, cfg.elastic_t_max + 1, cfg.elastic_t_step))
    if ts[-1] != cfg.elastic_t_max:
        ts.append(cfg.elastic_t_max)
    return ts


def setting_name(fraction: float) -> str:
    return f"lam1_{fraction:g}"


def _elastic_cell(cfg: Config, fraction: float, seed: int) -> _CellOutput:
    """One lam1 setting; y = d1E(w_ref) seeds every ITD, AID and stochastic estimate for all t and k."""
    train, val, _ = gen_elastic_net(
        seed, cfg.elastic_n, cfg.elastic_d, cfg.elastic_informative, cfg.elastic_correlated
    )
    lam = np.array([fraction * lambda_max(train), cfg.elastic_lam2])
    prob = build_elastic_net(train, val, lam, c=cfg.elastic_c)
    ref, y = _reference(prob, lam, cfg)
    w_ref = ref.meta["w_ref"]

    traj = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), cfg.elastic_t_max, record=True)
    tau = support_identification(traj, w_ref)
    common = dict(seed=seed, q=prob.q, tref=ref.t, kref=ref.k)
    records: List[RunRecord] = []
    for t in elastic_ts(cfg):
        head = traj.head(t)
        itd = itd_vjp(prob.phi, head, lam, y)
        records.append(RunRecord("ITD", t, 0, 0, float(t), estimate_error(itd, ref), wall_ms=itd.wall_ms, **common))
        aid = aid_fp_vjp(prob.phi, head.w_t, lam, y, t, t=t)
        records.append(RunRecord("AID-FP", t, t, 0, float(t), estimate_error(aid, ref), wall_ms=aid.wall_ms, **common))
        cg = _guarded(aid_cg_vjp, prob.phi, head.w_t, lam, y, t, cfg.cg_mode, t)
        cg_err = math.inf if cg is None else estimate_error(cg, ref)
        records.append(RunRecord("AID-CG", t, t, 0, float(t), cg_err, wall_ms=cg.wall_ms if cg else 0.0, **common))

    schedules = make_schedules(cfg, "elastic", prob.q)
    budgets = [(k, k) for k in cfg.elastic_k_grid]
    records += _stochastic_rows(prob, lam, w_ref, y, ref, budgets, seed, schedules, cfg.run_sid)
    summary = {
        "lam": [float(v) for v in lam],
        "eta": prob.eta,
        "q": prob.q,
        "tau": tau,
        "tref": ref.t,
        "support_size": support_size(w_ref),
        "schedules": {name: [s.kind, s.a1, s.a2] for name, s in schedules.items()},
    }
    logger.info("elastic %s seed %d: q=%.4f tau=%s tref=%d", setting_name(fraction), seed, prob.q, tau, ref.t)
    return _CellOutput(setting_name(fraction), seed, records, summary)


def _plot_deterministic(records: Sequence[RunRecord], tau: Optional[int], path: Path, title: str) -> Path:
    det = [r for r in records if r.sweep == SWEEP_DETERMINISTIC]
    series = [_median_series(det, m, lambda r: r.t) for m in ("ITD", "AID-FP", "AID-CG")]
    vlines = [(tau, "support identified")] if tau is not None else []
    line_plot(series, title, "t (= k)", "median error to reference (euclidean)", vlines=vlines, path=path)
    return path


def run_elastic(cfg: Config, out_dir: Path, progress=None) -> ExperimentOutput:
    """
    Deterministic and stochastic sweeps for every lam1 fraction.

    Each setting gets its own directory with runs.csv, deterministic.svg,
    stochastic.svg and meta.json. The support-identification marker is
    taken from the first seed.
    """
    cfg.validate()
    cells = [
        SweepCell((setting_name(f), s), f"{setting_name(f)} seed {s}", _cell_fn(_elastic_cell, cfg, f, s))
        for f in cfg.elastic_lam1_fractions
        for s in _seeds(cfg)
    ]
    result = _execute(cfg, cells, progress, "elastic net")
    out = ExperimentOutput(interrupted=result.interrupted)
    by_setting: Dict[str, List[_CellOutput]] = {}
    for cell in result.outputs:
        by_setting.setdefault(cell.setting, []).append(cell)
    for setting, cell_outputs in sorted(by_setting.items()):
        target = Path(out_dir) / setting
        records = [r for c in cell_outputs for r in c.records]
        tau = cell_outputs[0].summary["tau"]
        out.files.append(write_runs_csv(records, target / "runs.csv", cfg.timing))
        out.files.append(_plot_deterministic(records, tau, target / "deterministic.svg", f"elastic net, {setting}"))
        out.files.append(_plot_stochastic(records, target / "stochastic.svg", f"elastic net, {setting}"))
        out.files.append(
            _write_meta(
                target / "meta.json",
                {"setting": setting, "gap": "vertex", "seeds": {str(c.seed): c.summary for c in cell_outputs}},
            )
        )
        out.rows += len(records)
    return out


# -------------------- DATA POISONING --------------------


PoisoningSplits = Tuple[Dataset, Dataset, Dataset]


def poisoning_data(cfg: Config) -> Tuple[PoisoningSplits, Dict[str, Any]]:
    """
    (clean, corruptible, validation) splits and a description of their source.

    Without poisoning.images_path the splits are synthetic blobs. Otherwise
    the file is read as IDX images (when labels_path is set) or as CSV, and
    n + n_corrupt + n_val rows are drawn from it by a split seeded with cfg.seed.
    """
    if not cfg.poison_images_path:
        splits = poisoning_splits(
            cfg.seed, cfg.poison_n, cfg.poison_corrupt, cfg.poison_val, cfg.poison_p, cfg.poison_classes
        )
        return splits, {"source": "blobs", "p": cfg.poison_p}

    if cfg.poison_corrupt < 1:
        raise ConfigError("poisoning.n_corrupt", "must be >= 1 with a dataset file")
    for key, value in (("images_path", cfg.poison_images_path), ("labels_path", cfg.poison_labels_path)):
        if value and not Path(value).is_file():
            raise ConfigError(f"poisoning.{key}", f"no such file: {value}")
    source: Dict[str, Any]
    if cfg.poison_labels_path:
        ds = load_idx(cfg.poison_images_path, cfg.poison_labels_path, n_classes=cfg.poison_classes)
        source = {"source": "idx", "images_path": cfg.poison_images_path, "labels_path": cfg.poison_labels_path}
    else:
        ds = load_csv(cfg.poison_images_path, n_classes=cfg.poison_classes)
        source = {"source": "csv", "path": cfg.poison_images_path}

    counts = [cfg.poison_n, cfg.poison_corrupt, cfg.poison_val]
    tags = ["train", "corruptible", "val"]
    total = sum(counts)
    if ds.n_rows < total:
        raise ConfigError("poisoning.images_path", f"{ds.n_rows} rows, but n + n_corrupt + n_val = {total}")
    if ds.n_rows > total:
        counts.append(ds.n_rows - total)
        tags.append("unused")
    parts = split(ds, [c / ds.n_rows for c in counts], cfg.seed, tags)
    logger.info("poisoning data from %s: %d of %d rows, p=%d", source["source"], total, ds.n_rows, ds.n_features)
    source.update(rows=ds.n_rows, p=ds.n_features)
    return (parts[0], parts[1], parts[2]), source


def _poisoning_cell(cfg: Config, splits, seed: int) -> _CellOutput:
    clean, corruptible, val = splits
    prob = build_poisoning(
        clean, corruptible, val, cfg.poison_lam1, cfg.poison_lam2, cfg.poison_c, seed=seed
    )
    if prob.q >= 1.0:
        raise ArgumentError(f"poisoning map is not contractive (q={prob.q:.6g}); lower poisoning.c")
    lam = prob.lam0
    ref, y = _reference(prob, lam, cfg)
    w_ref = ref.meta["w_ref"]
    schedules = make_schedules(cfg, "poisoning", prob.q)
    budgets = [(k, poisoning_budget(k)) for k in cfg.poison_k_grid]
    records = _stochastic_rows(prob, lam, w_ref, y, ref, budgets, seed, schedules, cfg.run_sid)
    diverged = sum(r.diverged for r in records if r.method.startswith("SID"))
    if diverged:
        logger.info("seed %d: SID diverged in %d runs", seed, diverged)
    summary = {
        "eta": prob.eta,
        "q": prob.q,
        "q_provenance": prob.q_provenance,
        "q_formula": prob.meta["q_formula"],
        "q_estimate": float(prob.meta["q_estimate"]),
        "tref": ref.t,
        "val_accuracy": accuracy(w_ref, val),
        "sid_diverged": diverged,
        "schedules": {name: [s.kind, s.a1, s.a2] for name, s in schedules.items()},
    }
    return _CellOutput("poisoning", seed, records, summary)


def run_poisoning(cfg: Config, out_dir: Path, progress=None) -> ExperimentOutput:
    """
    Stochastic sweep on the poisoning problem.

    The dataset (synthetic blobs or the configured file) is drawn once from
    cfg.seed; each seed changes the initial perturbation and the minibatch
    streams. SID may diverge here; those rows
    carry the "div" sentinel.
    """
    cfg.validate()
    if cfg.run_sid:
        logger.warning("SID is biased on this problem and may diverge; diverged rows are written as %r", DIVERGED)
    splits, source = poisoning_data(cfg)
    cells = [
        SweepCell(("poisoning", s), f"poisoning seed {s}", _cell_fn(_poisoning_cell, cfg, splits, s))
        for s in _seeds(cfg)
    ]
    result = _execute(cfg, cells, progress, "data poisoning")
    out = ExperimentOutput(interrupted=result.interrupted)
    records = [r for c in result.outputs for r in c.records]
    target = Path(out_dir)
    out.files.append(write_runs_csv(records, target / "runs.csv", cfg.timing))
    out.files.append(_plot_stochastic(records, target / "stochastic.svg", "data poisoning"))
    out.files.append(
        _write_meta(
            target / "meta.json",
            {
                "setting": "poisoning",
                "gap": "vertex",
                "data": source,
                "seeds": {str(c.seed): c.summary for c in result.outputs},
            },
        )
    )
    out.rows = len(records)
    return out


def _cell_fn(fn, *args):
    return lambda: fn(*args)


# -------------------- SINGLE SOLVE --------------------


PROBLEMS = ("elastic", "poisoning")


def build_problem(cfg: Config, problem: str = "elastic") -> Tuple[ProblemSpec, np.ndarray, Dict[str, Any]]:
    """The configured problem at its initial lam, plus the datasets used."""
    if problem == "elastic":
        train, val, w_true = gen_elastic_net(
            cfg.seed, cfg.elastic_n, cfg.elastic_d, cfg.elastic_informative, cfg.elastic_correlated
        )
        lam = np.array([cfg.elastic_lam1_fractions[0] * lambda_max(train), cfg.elastic_lam2])
        return build_elastic_net(train, val, lam, c=cfg.elastic_c), lam, {"train": train, "val": val}
    if problem == "poisoning":
        (clean, corruptible, val), source = poisoning_data(cfg)
        prob = build_poisoning(
            clean, corruptible, val, cfg.poison_lam1, cfg.poison_lam2, cfg.poison_c, seed=cfg.seed
        )
        return prob, prob.lam0, {"train": clean, "val": val, "source": source}
    raise ArgumentError(f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)}")


def solve_problem(
    cfg: Config, problem: str = "elastic", outer_steps: int = 0, outer_lr: float = 0.01
) -> Dict[str, Any]:
    """
    Solve the lower problem to reference accuracy and report its constants.

    With outer_steps > 0, also runs projected hypergradient descent (ascent
    for poisoning) using BAID-FP at reference budgets.
    """
    cfg.validate()
    prob, lam, data = build_problem(cfg, problem)
    if prob.q >= 1.0:
        raise ArgumentError(f"{prob.name} map is not contractive (q={prob.q:.6g})")
    n_ref = reference_iterations(prob.q, cfg.ref_accuracy, cfg.ref_cap)
    traj = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), n_ref, record=False)
    w = traj.w_t
    report: Dict[str, Any] = {
        "problem": prob.name,
        "eta": prob.eta,
        "q": prob.q,
        "q_provenance": prob.q_provenance,
        "iterations": n_ref,
        "residual": float(traj.residuals[-1]) if n_ref else 0.0,
        "support_size": support_size(w),
        "validation_loss": prob.upper.value(w, lam),
        "hypergradient_norm": float(np.linalg.norm(baid_fp_hypergrad(prob.upper, prob.phi, w, lam, n_ref))),
    }
    if problem == "poisoning":
        report["validation_accuracy"] = accuracy(w, data["val"])

    if outer_steps > 0:

        def hypergrad(lam_s: np.ndarray) -> Tuple[float, np.ndarray]:
            w_s = fixed_point_solve(prob.phi, lam_s, np.zeros(prob.phi.d), n_ref, record=False).w_t
            return prob.upper.value(w_s, lam_s), baid_fp_hypergrad(prob.upper, prob.phi, w_s, lam_s, n_ref)

        trace = outer_loop(
            lam, hypergrad, prob.projection, outer_steps, outer_lr, maximize=(problem == "poisoning")
        )
        report["outer_values"] = [s.value for s in trace]
    return report
