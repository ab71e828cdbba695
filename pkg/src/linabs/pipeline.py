"""Abs-LiNGAM: discovery of a concrete model guided by an abstract one.

Stages, in order:

1. fit the abstraction matrix ``T`` on paired samples,
2. build the abstract dataset ``D_L T`` and discover the abstract model,
3. turn missing abstract ancestry into forbidden concrete paths,
4. run constrained DirectLiNGAM on the concrete data.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .abstraction import FITTED_THRESHOLD, AbstractionMap, transitive_closure
from .discovery import DiscoveryConfig, DiscoveryResult, PriorKnowledge, direct_lingam
from .errors import DegenerateColumn, DimensionMismatch, PipelineStageError
from .scenario import forbidden_pairs
from .scm import LinearScm, is_dag, make_rng


class TStrategy(str, Enum):
    PLAIN = "Plain"
    TOP1 = "Top1"
    TOP1_REFIT = "Top1Refit"


@dataclass(frozen=True)
class PipelineConfig:
    t_threshold: float = FITTED_THRESHOLD
    t_strategy: TStrategy = TStrategy.PLAIN
    n_bootstrap: int = 0
    bootstrap_fraction: float = 0.5
    abstract_edge_vote: float = 0.5
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)

    def __post_init__(self):
        object.__setattr__(self, "t_strategy", TStrategy(self.t_strategy))
        if self.t_threshold < 0:
            raise ValueError("t_threshold must be nonnegative")
        if self.n_bootstrap < 0:
            raise ValueError("n_bootstrap must be nonnegative")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ValueError("bootstrap_fraction must lie in (0, 1]")
        if not 0.0 < self.abstract_edge_vote <= 1.0:
            raise ValueError("abstract_edge_vote must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "t_threshold": self.t_threshold,
            "t_strategy": self.t_strategy.value,
            "n_bootstrap": self.n_bootstrap,
            "bootstrap_fraction": self.bootstrap_fraction,
            "abstract_edge_vote": self.abstract_edge_vote,
            "discovery": {
                "prune_threshold": self.discovery.prune_threshold,
                "measure": self.discovery.measure,
                "rng_seed": self.discovery.rng_seed,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown pipeline fields: {sorted(unknown)}")
        if isinstance(d.get("discovery"), dict):
            d["discovery"] = DiscoveryConfig(**d["discovery"])
        return cls(**d)


@dataclass
class FittedAbstraction:
    """Estimated ``T`` plus the relevant sets used to build constraints.

    ``relevant_sets`` are disjoint.  When the masked estimate assigns a
    concrete variable to several abstract ones, the sets come from the Top-1
    support instead and ``overlap_resolved`` is set.
    """

    t_hat: AbstractionMap
    raw: np.ndarray
    relevant_sets: list
    overlap_resolved: bool = False


@dataclass
class PipelineReport:
    timings: dict = field(default_factory=dict)
    pair_evals_abstract: int = 0
    pair_evals_concrete: int = 0
    n_forbidden: int = 0
    overlap_resolved: bool = False
    dropped_abstract: list = field(default_factory=list)
    dropped_cycle_edges: list = field(default_factory=list)


@dataclass
class AbsLingamResult:
    t_hat: AbstractionMap | None
    m_hat: LinearScm | None
    w_hat: LinearScm
    knowledge: PriorKnowledge
    concrete: DiscoveryResult
    report: PipelineReport


# -- T fitting -----------------------------------------------------------------


def _top1_mask(t: np.ndarray, threshold: float) -> np.ndarray:
    mags = np.abs(t)
    keep = np.zeros_like(t, dtype=bool)
    if t.shape[1] == 0:
        return keep
    best = np.argmax(mags, axis=1)
    rows = np.arange(t.shape[0])
    keep[rows, best] = mags[rows, best] >= threshold
    return keep


def _sets_from_support(support: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(support[:, j]) for j in range(support.shape[1])]


def fit_abstraction(
    d_j_x: np.ndarray, d_j_y: np.ndarray, cfg: PipelineConfig | None = None
) -> FittedAbstraction:
    """Least-squares estimate of ``T`` from paired samples.

    Columns are centered within the paired dataset (an intercept), so the
    estimate is unaffected by a common shift of either side.  With fewer
    rows than concrete variables the minimum-norm solution is used.
    """
    cfg = cfg or PipelineConfig()
    x = np.asarray(d_j_x, dtype=float)
    y = np.asarray(d_j_y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"paired data shapes {x.shape} and {y.shape} do not match")
    n, d = x.shape
    if n < 1:
        raise DegenerateColumn("no paired samples")
    if n < d:
        warnings.warn(f"{n} paired samples for {d} concrete variables; using minimum-norm least squares", RuntimeWarning)
    y_sd = y.std(axis=0)
    if np.any(y_sd <= 1e-12):
        raise DegenerateColumn(f"abstract column {int(np.argmin(y_sd))} has zero variance")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    raw, *_ = np.linalg.lstsq(xc, yc, rcond=None)

    thr = cfg.t_threshold
    strategy = cfg.t_strategy
    if strategy is TStrategy.PLAIN:
        support = np.abs(raw) >= thr
        t = np.where(support, raw, 0.0)
    else:
        support = _top1_mask(raw, thr)
        t = np.where(support, raw, 0.0)
        if strategy is TStrategy.TOP1_REFIT:
            for j in range(t.shape[1]):
                cols = np.flatnonzero(support[:, j])
                if cols.size:
                    coef, *_ = np.linalg.lstsq(xc[:, cols], yc[:, j], rcond=None)
                    t[:, j] = 0.0
                    t[cols, j] = coef
    overlap = bool((support.sum(axis=1) > 1).any())
    sets = _sets_from_support(_top1_mask(t, 0.0) & (t != 0) if overlap else t != 0)
    return FittedAbstraction(AbstractionMap(t, 0.0), raw, sets, overlap)


def abstract_dataset(d_l: np.ndarray, t_hat: AbstractionMap | np.ndarray) -> np.ndarray:
    """Abstract samples ``T^T x`` for every concrete row."""
    tm = t_hat.matrix_t if isinstance(t_hat, AbstractionMap) else np.asarray(t_hat, dtype=float)
    x = np.asarray(d_l, dtype=float)
    if x.ndim != 2 or tm.ndim != 2 or x.shape[1] != tm.shape[0]:
        raise DimensionMismatch(f"data with {x.shape[-1]} columns cannot be mapped by T of shape {tm.shape}")
    return x @ tm


# -- abstract discovery ----------------------------------------------------------


def _break_cycles(w: np.ndarray, votes: np.ndarray) -> tuple[np.ndarray, list]:
    """Drop the least-voted edge (then smallest |w|) on a cycle until acyclic."""
    w = w.copy()
    dropped = []
    while not is_dag(w):
        reach = transitive_closure(w != 0)
        on_cycle = (w != 0) & reach.T  # u -> v with v reaching u
        cand = np.argwhere(on_cycle)
        keys = [(votes[u, v], abs(w[u, v]), u, v) for u, v in cand]
        _, _, u, v = min(keys)
        dropped.append((int(u), int(v)))
        w[u, v] = 0.0
    return w, dropped


def discover_abstract(
    d_h: np.ndarray, cfg: PipelineConfig | None = None
) -> tuple[LinearScm, dict]:
    """DirectLiNGAM on abstract data, optionally aggregated over subsamples.

    Abstract columns with zero variance (all-zero columns of a fitted ``T``)
    are left out and get no edges.  With ``n_bootstrap > 0`` each run uses a
    random subset of rows drawn without replacement; an edge is kept when it
    appears in at least ``abstract_edge_vote`` of the runs, with the mean
    weight over the runs where it appears.
    """
    cfg = cfg or PipelineConfig()
    y = np.asarray(d_h, dtype=float)
    n, b = y.shape
    active = np.flatnonzero(y.std(axis=0) > 1e-12)
    info = {"dropped": [int(j) for j in np.setdiff1d(np.arange(b), active)], "pair_evals": 0, "cycle_edges": []}
    w = np.zeros((b, b))
    if active.size < 2:
        return LinearScm(w), info
    ya = y[:, active]
    if cfg.n_bootstrap == 0:
        res = direct_lingam(ya, None, cfg.discovery)
        info["pair_evals"] = res.pair_evals
        w[np.ix_(active, active)] = res.weights
        return LinearScm(w), info

    rng = make_rng(cfg.discovery.rng_seed)
    size = max(active.size + 1, int(round(cfg.bootstrap_fraction * n)))
    size = min(size, n)
    k = active.size
    counts = np.zeros((k, k))
    sums = np.zeros((k, k))
    for _ in range(cfg.n_bootstrap):
        rows = np.sort(rng.choice(n, size=size, replace=False))
        res = direct_lingam(ya[rows], None, cfg.discovery)
        info["pair_evals"] += res.pair_evals
        present = res.weights != 0
        counts += present
        sums += np.where(present, res.weights, 0.0)
    frac = counts / cfg.n_bootstrap
    keep = frac >= cfg.abstract_edge_vote - 1e-12
    wa = np.where(keep, sums / np.maximum(counts, 1), 0.0)
    wa, dropped = _break_cycles(wa, frac)
    info["cycle_edges"] = [(int(active[u]), int(active[v])) for u, v in dropped]
    info["votes"] = frac
    w[np.ix_(active, active)] = wa
    return LinearScm(w), info


def derive_constraints(
    m_hat: LinearScm | np.ndarray, relevant: Sequence[Sequence[int]], n_vars: int
) -> PriorKnowledge:
    """Forbid ``k -> h`` whenever ``k`` is relevant for ``Y_i``, ``h`` for ``Y_j``
    and ``m_hat`` has no directed path from ``Y_i`` to ``Y_j``."""
    w = m_hat.weights if isinstance(m_hat, LinearScm) else np.asarray(m_hat)
    if w.shape[0] != len(relevant):
        raise DimensionMismatch(f"{len(relevant)} relevant sets for an abstract model on {w.shape[0]} variables")
    sets = [np.asarray(s, dtype=int) for s in relevant]
    return PriorKnowledge(n_vars, forbidden_pairs(w != 0, sets))


# -- end to end --------------------------------------------------------------------


def _run_stage(name: str, timings: dict, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        out = fn(*args, **kwargs)
    except PipelineStageError:
        raise
    except Exception as exc:  # noqa: BLE001 - rewrapped with the stage name
        raise PipelineStageError(name, exc) from exc
    timings[name] = time.perf_counter() - t0
    return out


def concrete_stage(
    d_l: np.ndarray, knowledge: PriorKnowledge, cfg: PipelineConfig, report: PipelineReport
) -> DiscoveryResult:
    res = _run_stage("concrete_discovery", report.timings, direct_lingam, d_l, knowledge, cfg.discovery)
    report.pair_evals_concrete = res.pair_evals
    report.n_forbidden = len(knowledge)
    return res


def abs_lingam(
    d_l: np.ndarray, d_j_x: np.ndarray, d_j_y: np.ndarray, cfg: PipelineConfig | None = None
) -> AbsLingamResult:
    """Run the full pipeline on concrete data and paired samples."""
    cfg = cfg or PipelineConfig()
    d_l = np.asarray(d_l, dtype=float)
    if d_l.ndim != 2 or np.asarray(d_j_x).ndim != 2 or d_l.shape[1] != np.asarray(d_j_x).shape[1]:
        raise DimensionMismatch("concrete and paired datasets must have the same number of columns")
    report = PipelineReport()
    t0 = time.perf_counter()
    fitted = _run_stage("fit_abstraction", report.timings, fit_abstraction, d_j_x, d_j_y, cfg)
    report.overlap_resolved = fitted.overlap_resolved
    d_h = _run_stage("abstract_dataset", report.timings, abstract_dataset, d_l, fitted.t_hat)
    m_hat, info = _run_stage("abstract_discovery", report.timings, discover_abstract, d_h, cfg)
    report.pair_evals_abstract = info["pair_evals"]
    report.dropped_abstract = info["dropped"]
    report.dropped_cycle_edges = info["cycle_edges"]
    knowledge = _run_stage(
        "constraints", report.timings, derive_constraints, m_hat, fitted.relevant_sets, d_l.shape[1]
    )
    res = concrete_stage(d_l, knowledge, cfg, report)
    report.timings["total"] = time.perf_counter() - t0
    return AbsLingamResult(fitted.t_hat, m_hat, res.model, knowledge, res, report)


def abs_lingam_oracle(
    d_l: np.ndarray,
    m_true: LinearScm | np.ndarray,
    relevant: Sequence[Sequence[int]],
    cfg: PipelineConfig | None = None,
) -> AbsLingamResult:
    """Constrained concrete discovery from ground-truth ``M`` and relevant sets."""
    cfg = cfg or PipelineConfig()
    d_l = np.asarray(d_l, dtype=float)
    report = PipelineReport()
    t0 = time.perf_counter()
    knowledge = _run_stage("constraints", report.timings, derive_constraints, m_true, relevant, d_l.shape[1])
    res = concrete_stage(d_l, knowledge, cfg, report)
    report.timings["total"] = time.perf_counter() - t0
    m = m_true if isinstance(m_true, LinearScm) else LinearScm(np.asarray(m_true, dtype=float))
    return AbsLingamResult(None, m, res.model, knowledge, res, report)
