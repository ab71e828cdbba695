"""Metrics and the benchmark harness.

All matrices are compared in a common labelling: the pipeline works on the
observed (permuted) columns and the ground truth is mapped to the same
labels through the scenario's stored permutations.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .discovery import direct_lingam
from .errors import DimensionMismatch, NoNegatives, NoPositives
from .pipeline import PipelineConfig, abs_lingam, abs_lingam_oracle
from .scenario import Scenario, ScenarioConfig, generate

METHODS = ("DirectLiNGAM", "Abs-LiNGAM", "Abs-LiNGAM-GT")
EMPTY_PRECISION = 1.0

CSV_COLUMNS = [
    "cell",
    "rep",
    "agg",
    "stat",
    "seed",
    "b",
    "abstract_edges",
    "d",
    "n_concrete",
    "n_joint",
    "abstract_noise",
    "n_bootstrap",
    "t_strategy",
    "method",
    "roc_auc",
    "pk_precision",
    "pk_recall",
    "t_f1",
    "t_nhd",
    "t_apc",
    "time_total_s",
    "time_concrete_s",
    "pair_evals",
    "error",
]
METRIC_COLUMNS = [
    "roc_auc",
    "pk_precision",
    "pk_recall",
    "t_f1",
    "t_nhd",
    "t_apc",
    "time_total_s",
    "time_concrete_s",
    "pair_evals",
]


# -- metrics -------------------------------------------------------------------


def roc_auc_edges(w_true: np.ndarray, w_hat: np.ndarray) -> float:
    """Edge ROC-AUC over ordered off-diagonal pairs.

    Labels are ``w_true != 0`` and scores ``|w_hat|``; ties get midranks, so
    the value equals the Mann-Whitney probability that a random edge
    outscores a random non-edge (ties counting one half).
    """
    w_true = np.asarray(w_true)
    w_hat = np.asarray(w_hat)
    if w_true.shape != w_hat.shape or w_true.ndim != 2 or w_true.shape[0] != w_true.shape[1]:
        raise DimensionMismatch(f"shapes {w_true.shape} and {w_hat.shape} are not matching square matrices")
    off = ~np.eye(w_true.shape[0], dtype=bool)
    labels = w_true[off] != 0
    scores = np.abs(w_hat[off])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0:
        raise NoPositives("ROC-AUC is undefined without true edges")
    if n_neg == 0:
        raise NoNegatives("ROC-AUC is undefined without true non-edges")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pk_scores(k_hat: Iterable, k_true: Iterable) -> tuple[float, float]:
    """Precision and recall of a set of forbidden pairs.

    An empty ``k_hat`` has precision 1.0 (no false claims); an empty
    ``k_true`` has recall 1.0.
    """
    k_hat = {tuple(p) for p in k_hat}
    k_true = {tuple(p) for p in k_true}
    hit = len(k_hat & k_true)
    precision = hit / len(k_hat) if k_hat else EMPTY_PRECISION
    recall = hit / len(k_true) if k_true else 1.0
    return precision, recall


def match_abstract(support_hat: np.ndarray, support_true: np.ndarray) -> np.ndarray:
    """Column permutation of ``support_hat`` maximizing overlap with ``support_true``.

    Returns ``perm`` such that ``support_hat[:, perm]`` is aligned with the
    true columns.  Both supports must have the same shape.
    """
    a = np.asarray(support_hat, dtype=float)
    b = np.asarray(support_true, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"supports {a.shape} and {b.shape} differ")
    overlap = b.T @ a  # overlap[i, j] = |true_i & hat_j|
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty(a.shape[1], dtype=int)
    perm[rows] = cols
    return perm


def t_support_metrics(t_hat, t_true, threshold: float = 0.0, align: bool = True) -> dict:
    """Support recovery of an abstraction matrix.

    Returns ``nhd`` (Hamming distance over ``d * b``), ``f1`` and ``apc``,
    the mean number of abstract variables assigned to a concrete one.
    Supports are ``|t| > threshold``; with ``align`` the estimated columns
    are first matched to the true ones by maximum overlap.
    """
    th = getattr(t_hat, "matrix_t", t_hat)
    tt = getattr(t_true, "matrix_t", t_true)
    sh = np.abs(np.asarray(th, dtype=float)) > threshold
    st = np.abs(np.asarray(tt, dtype=float)) > threshold
    if sh.shape != st.shape:
        raise DimensionMismatch(f"T shapes {sh.shape} and {st.shape} differ")
    if align and sh.shape[1] > 1:
        sh = sh[:, match_abstract(sh, st)]
    d, b = st.shape
    tp = int((sh & st).sum())
    denom = int(sh.sum() + st.sum())
    f1 = 1.0 if denom == 0 else 2.0 * tp / denom
    nhd = float((sh != st).sum()) / (d * b) if d * b else 0.0
    apc = float(sh.sum()) / d if d else 0.0
    return {"nhd": nhd, "f1": f1, "apc": apc}


@dataclass
class RunReport:
    method: str
    roc_auc: float = math.nan
    pk_precision: float = math.nan
    pk_recall: float = math.nan
    t_support_f1: float = math.nan
    t_support_nhd: float = math.nan
    abstract_per_concrete: float = math.nan
    timings: dict = field(default_factory=dict)
    pair_evals: int = 0
    error: str = ""

    def __post_init__(self):
        for name in ("roc_auc", "pk_precision", "pk_recall", "t_support_f1", "t_support_nhd"):
            v = getattr(self, name)
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not (math.isnan(self.abstract_per_concrete) or self.abstract_per_concrete >= 0):
            raise ValueError("abstract_per_concrete must be nonnegative")


# -- single run ------------------------------------------------------------------


def _safe_auc(w_true, scores) -> float:
    try:
        return roc_auc_edges(w_true, scores)
    except (NoPositives, NoNegatives):
        return math.nan


def evaluate_scenario(sc: Scenario, pcfg: PipelineConfig, methods: Sequence[str] = METHODS) -> list[RunReport]:
    """Run the requested methods on one scenario and score them."""
    w_true = sc.observed_w()
    k_true = sc.observed_k_true()
    t_true = sc.observed_t()
    out = []
    for method in methods:
        try:
            if method == "DirectLiNGAM":
                t0 = time.perf_counter()
                res = direct_lingam(sc.d_l, None, pcfg.discovery)
                elapsed = time.perf_counter() - t0
                p, r = pk_scores((), k_true)
                rep = RunReport(method, _safe_auc(w_true, res.scores), p, r, pair_evals=res.pair_evals)
                rep.timings = {"total": elapsed, "concrete": elapsed}
            elif method == "Abs-LiNGAM":
                res = abs_lingam(sc.d_l, sc.d_j_x, sc.d_j_y, pcfg)
                p, r = pk_scores(res.knowledge.forbidden_paths, k_true)
                tm = t_support_metrics(res.t_hat, t_true)
                rep = RunReport(
                    method,
                    _safe_auc(w_true, res.concrete.scores),
                    p,
                    r,
                    tm["f1"],
                    tm["nhd"],
                    tm["apc"],
                    pair_evals=res.report.pair_evals_concrete,
                )
                rep.timings = {"total": res.report.timings["total"], "concrete": res.report.timings["concrete_discovery"]}
            elif method == "Abs-LiNGAM-GT":
                res = abs_lingam_oracle(sc.d_l, sc.observed_m(), sc.observed_relevant_sets(), pcfg)
                p, r = pk_scores(res.knowledge.forbidden_paths, k_true)
                rep = RunReport(method, _safe_auc(w_true, res.concrete.scores), p, r, pair_evals=res.report.pair_evals_concrete)
                rep.timings = {"total": res.report.timings["total"], "concrete": res.report.timings["concrete_discovery"]}
            else:
                raise ValueError(f"unknown method {method!r}")
        except Exception as exc:  # noqa: BLE001 - recorded in the report, the run continues
            rep = RunReport(method, error=f"{type(exc).__name__}: {exc}")
        out.append(rep)
    return out


# -- benchmark -------------------------------------------------------------------


def rep_seed(base_seed: int, cell: int, rep: int) -> int:
    """Deterministic per-run scenario seed."""
    return int(np.random.SeedSequence([base_seed, cell, rep]).generate_state(1)[0])


def _row(cell, rep, seed, scfg: ScenarioConfig, pcfg: PipelineConfig, d, r: RunReport) -> dict:
    return {
        "cell": cell,
        "rep": rep,
        "agg": False,
        "stat": "",
        "seed": seed,
        "b": scfg.b,
        "abstract_edges": scfg.abstract_edges,
        "d": d,
        "n_concrete": scfg.n_concrete_samples,
        "n_joint": scfg.n_joint_samples,
        "abstract_noise": scfg.abstract_obs_noise_variance,
        "n_bootstrap": pcfg.n_bootstrap,
        "t_strategy": pcfg.t_strategy.value,
        "method": r.method,
        "roc_auc": r.roc_auc,
        "pk_precision": r.pk_precision,
        "pk_recall": r.pk_recall,
        "t_f1": r.t_support_f1,
        "t_nhd": r.t_support_nhd,
        "t_apc": r.abstract_per_concrete,
        "time_total_s": r.timings.get("total", math.nan),
        "time_concrete_s": r.timings.get("concrete", math.nan),
        "pair_evals": r.pair_evals,
        "error": r.error,
    }


def _run_task(task) -> list[dict]:
    cell, rep, base_seed, scfg, pcfg, methods = task
    seed = rep_seed(base_seed, cell, rep)
    cfg = replace(scfg, seed=seed)
    try:
        sc = generate(cfg)
    except Exception as exc:  # noqa: BLE001 - a failed cell is recorded, not fatal
        return [_row(cell, rep, seed, cfg, pcfg, "", RunReport(m, error=f"{type(exc).__name__}: {exc}")) for m in methods]
    return [_row(cell, rep, seed, cfg, pcfg, sc.d, r) for r in evaluate_scenario(sc, pcfg, methods)]


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and standard deviation rows per (cell, method), skipping NaNs."""
    out = []
    keys = sorted({(r["cell"], r["method"]) for r in rows if not r["agg"]}, key=lambda k: (k[0], METHODS.index(k[1]) if k[1] in METHODS else 99))
    for cell, method in keys:
        group = [r for r in rows if not r["agg"] and r["cell"] == cell and r["method"] == method]
        base = dict(group[0])
        for stat, fn in (("mean", np.nanmean), ("std", np.nanstd)):
            row = dict(base, rep="", seed="", d="", agg=True, stat=stat, error="")
            for col in METRIC_COLUMNS:
                vals = np.array([float(r[col]) for r in group if r[col] != ""], dtype=float)
                row[col] = float(fn(vals)) if np.isfinite(vals).any() else math.nan
            row["error"] = str(sum(bool(r["error"]) for r in group)) + " failed" if any(r["error"] for r in group) else ""
            out.append(row)
    return out


def write_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r.get(k, "")) for k in CSV_COLUMNS})
    return path


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def run_benchmark(
    grid: Sequence[tuple[ScenarioConfig, PipelineConfig]],
    repetitions: int = 1,
    seed: int = 0,
    jobs: int = 1,
    out_csv: str | Path | None = None,
    methods: Sequence[str] = METHODS,
) -> list[dict]:
    """Evaluate every grid cell ``repetitions`` times.

    Scenario seeds derive from ``(seed, cell, rep)``, so results do not
    depend on ``jobs``.  Returns per-run rows followed by aggregate rows;
    when ``out_csv`` is given the same rows are written there.
    """
    if repetitions < 0:
        raise ValueError("repetitions must be nonnegative")
    tasks = [(c, r, seed, scfg, pcfg, tuple(methods)) for c, (scfg, pcfg) in enumerate(grid) for r in range(repetitions)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    rows = [row for res in results for row in res]
    rows += aggregate(rows)
    if out_csv is not None:
        write_csv(rows, out_csv)
    return rows


def summary_table(rows: list[dict]) -> str:
    """Plain-text mean/std table of the aggregate rows."""
    agg = [r for r in rows if r["agg"]]
    lines = [f"{'cell':>4} {'method':<14} {'roc_auc':>15} {'pk_prec':>15} {'pk_rec':>15} {'t_f1':>8} {'time_s':>8} {'pairs':>9}"]
    for mean in (r for r in agg if r["stat"] == "mean"):
        std = next(r for r in agg if r["stat"] == "std" and r["cell"] == mean["cell"] and r["method"] == mean["method"])

        def pm(col):
            return f"{mean[col]:.3f}+-{std[col]:.3f}"

        lines.append(
            f"{mean['cell']:>4} {mean['method']:<14} {pm('roc_auc'):>15} {pm('pk_precision'):>15} "
            f"{pm('pk_recall'):>15} {mean['t_f1']:>8.3f} {mean['time_total_s']:>8.2f} {mean['pair_evals']:>9.0f}"
        )
    return "\n".join(lines)
