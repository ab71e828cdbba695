"""Synthetic (abstract model, abstraction, concrete model, data) scenarios."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .abstraction import (
    AbstractionMap,
    check_block_abstraction,
    exogenous_map,
    implied_abstract_graph,
    transitive_closure,
)
from .concretize import ConcretizeConfig, sample_concretization
from .errors import ResampleExhausted, TooManyEdges
from .scm import LinearScm, NoiseSpec, make_rng, reduced_form, sample_noise, topological_order

WEIGHT_RANGE = (0.5, 2.0)


def _signed_uniform(rng: np.random.Generator, size, lo=WEIGHT_RANGE[0], hi=WEIGHT_RANGE[1]):
    """Uniform on [-hi, -lo] U [lo, hi]."""
    return rng.uniform(lo, hi, size) * rng.choice((-1.0, 1.0), size)


@dataclass(frozen=True)
class ScenarioConfig:
    b: int = 5
    abstract_edges: int = 8
    block_size_range: tuple[int, int] = (5, 10)
    ignored_block_size_range: tuple[int, int] = (1, 5)
    n_concrete_samples: int = 15000
    n_joint_samples: int = 150
    noise: NoiseSpec = field(default_factory=NoiseSpec.exponential)
    abstract_obs_noise_variance: float = 0.0
    inner_edge_prob: float = 1.0
    dirichlet_alpha: float = 1.0
    seed: int = 0
    max_resample: int = 50

    def __post_init__(self):
        lo, hi = self.block_size_range
        if not 1 <= lo <= hi:
            raise ValueError(f"block_size_range must satisfy 1 <= min <= max, got {self.block_size_range}")
        lo, hi = self.ignored_block_size_range
        if not 0 <= lo <= hi:
            raise ValueError(
                f"ignored_block_size_range must satisfy 0 <= min <= max, got {self.ignored_block_size_range}"
            )
        if self.b < 1:
            raise ValueError("b must be positive")
        if not 0 <= self.abstract_edges <= self.b * (self.b - 1) // 2:
            raise TooManyEdges(f"{self.abstract_edges} edges do not fit a DAG on {self.b} nodes")
        if self.n_joint_samples > self.n_concrete_samples:
            raise ValueError("n_joint_samples must not exceed n_concrete_samples")
        if self.n_joint_samples < 1 or self.n_concrete_samples < 1:
            raise ValueError("sample sizes must be positive")
        if self.abstract_obs_noise_variance < 0:
            raise ValueError("abstract_obs_noise_variance must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = self.noise.to_dict()
        d["block_size_range"] = list(self.block_size_range)
        d["ignored_block_size_range"] = list(self.ignored_block_size_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "noise" in d and isinstance(d["noise"], dict):
            d["noise"] = NoiseSpec.from_dict(d["noise"])
        for key in ("block_size_range", "ignored_block_size_range"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Layout:
    """Block membership used to build ``T`` (generation coordinates)."""

    blocks: list[np.ndarray]
    ignored: np.ndarray


@dataclass
class Scenario:
    """A generated problem instance.

    ``h``, ``l`` and ``t`` live in generation coordinates (blocks contiguous,
    following the abstract topological order).  The datasets are
    standardized and column-permuted: observed concrete column ``c`` is
    generation variable ``perm_concrete[c]``, likewise for abstract columns.
    """

    config: ScenarioConfig
    h: LinearScm
    l: LinearScm
    t: AbstractionMap
    layout: Layout
    perm_concrete: np.ndarray
    perm_abstract: np.ndarray
    d_l: np.ndarray
    d_j_x: np.ndarray
    d_j_y: np.ndarray
    k_true: frozenset
    scales: dict

    @property
    def d(self) -> int:
        return self.l.n_vars

    @property
    def b(self) -> int:
        return self.h.n_vars

    def _inv(self, perm):
        inv = np.empty(len(perm), dtype=int)
        inv[perm] = np.arange(len(perm))
        return inv

    def observed_w(self) -> np.ndarray:
        p = self.perm_concrete
        return self.l.weights[np.ix_(p, p)]

    def observed_m(self) -> np.ndarray:
        p = self.perm_abstract
        return self.h.weights[np.ix_(p, p)]

    def observed_t(self) -> AbstractionMap:
        return self.t.permuted(self.perm_concrete, self.perm_abstract)

    def observed_k_true(self) -> frozenset:
        inv = self._inv(self.perm_concrete)
        return frozenset((int(inv[a]), int(inv[b])) for a, b in self.k_true)

    def observed_relevant_sets(self) -> list[np.ndarray]:
        inv = self._inv(self.perm_concrete)
        tm = self.t.matrix_t
        return [np.sort(inv[np.flatnonzero(tm[:, j] != 0)]) for j in self.perm_abstract]


def sample_abstract_model(b: int, n_edges: int, rng: np.random.Generator) -> LinearScm:
    """Random DAG with exactly ``n_edges`` edges under a random node ordering.

    Weights are uniform on ``[-2, -0.5] U [0.5, 2]``.
    """
    pairs = [(i, j) for i in range(b) for j in range(i + 1, b)]
    if n_edges > len(pairs) or n_edges < 0:
        raise TooManyEdges(f"{n_edges} edges do not fit a DAG on {b} nodes")
    order = rng.permutation(b)
    chosen = rng.choice(len(pairs), size=n_edges, replace=False) if n_edges else []
    w = np.zeros((b, b))
    for idx in chosen:
        i, j = pairs[idx]
        w[order[i], order[j]] = _signed_uniform(rng, None)
    return LinearScm(w)


def sample_abstraction_map(
    m: LinearScm,
    block_size_range: Sequence[int],
    rng: np.random.Generator,
    ignored_block_size_range: Sequence[int] = (0, 0),
) -> tuple[AbstractionMap, Layout]:
    """Random block layout and abstraction matrix for ``m``.

    Each abstract variable gets a contiguous block (blocks follow the
    topological order of ``m``) whose size is uniform over the range.  At
    least half of each block is relevant and the rest are relevant with
    probability 1/2; relevant members sit at the end of their block.  A final
    block of ignored variables maps to zero.
    """
    lo, hi = block_size_range
    b = m.n_vars
    sizes = rng.integers(lo, hi + 1, size=b)
    n_ignored = int(rng.integers(ignored_block_size_range[0], ignored_block_size_range[1] + 1))
    d = int(sizes.sum()) + n_ignored
    t = np.zeros((d, b))
    blocks: list[np.ndarray] = [np.zeros(0, dtype=int)] * b
    offset = 0
    for j in topological_order(m):
        size = int(sizes[j])
        n_rel = math.ceil(size / 2)
        n_rel += int((rng.random(size - n_rel) < 0.5).sum())
        idx = np.arange(offset, offset + size)
        rel = idx[size - n_rel :]
        t[rel, j] = _signed_uniform(rng, n_rel)
        blocks[j] = idx
        offset += size
    ignored = np.arange(offset, d)
    return AbstractionMap(t), Layout(blocks, ignored)


def forbidden_pairs(m_support: np.ndarray, relevant: Sequence[np.ndarray]) -> frozenset:
    """``{(k, h) : k in R_i, h in R_j, i != j, no directed path Y_i -> Y_j}``."""
    reach = transitive_closure(np.asarray(m_support) != 0)
    out = set()
    b = len(relevant)
    for i in range(b):
        for j in range(b):
            if i == j or reach[i, j]:
                continue
            for k in relevant[i]:
                for h in relevant[j]:
                    out.add((int(k), int(h)))
    return frozenset(out)


def _standardize(a: np.ndarray, mean=None, std=None):
    mean = a.mean(axis=0) if mean is None else mean
    std = a.std(axis=0) if std is None else std
    std = np.where(std > 0, std, 1.0)
    return (a - mean) / std, mean, std


def generate(config: ScenarioConfig) -> Scenario:
    """Build a scenario: models, exogenous draws, datasets and ground truth.

    Concrete rows are ``x = F^T e``; the joint dataset reuses the first
    ``n_joint_samples`` exogenous draws with ``y = G^T S^T e`` plus optional
    Gaussian noise.  Concretizations whose abstract graph would be hidden by
    cancelling paths are rejected and resampled.
    """
    rng = make_rng(config.seed)
    ccfg = ConcretizeConfig(
        inner_edge_prob=config.inner_edge_prob,
        dirichlet_alpha=config.dirichlet_alpha,
        ignored_edge_prob=config.inner_edge_prob,
        noise=config.noise,
    )
    for _ in range(config.max_resample):
        h = sample_abstract_model(config.b, config.abstract_edges, rng)
        t, layout = sample_abstraction_map(
            h, config.block_size_range, rng, config.ignored_block_size_range
        )
        l = sample_concretization(h, t, ccfg, blocks=layout.blocks, rng=rng)
        implied = implied_abstract_graph(l, t)
        if np.array_equal(implied.adjacency, h.weights != 0) and not implied.cancellations:
            break
    else:
        raise ResampleExhausted("could not draw a concretization free of cancelling paths")

    n_l, n_j = config.n_concrete_samples, config.n_joint_samples
    f = reduced_form(l)
    g = reduced_form(h)
    s = exogenous_map(l, t).matrix_s
    e = sample_noise(l, n_l, rng)
    x = e @ f
    y = e[:n_j] @ s @ g
    if config.abstract_obs_noise_variance > 0:
        y = y + rng.normal(0.0, math.sqrt(config.abstract_obs_noise_variance), y.shape)

    x_std, mu_x, sd_x = _standardize(x)
    xj_std, _, _ = _standardize(x[:n_j], mu_x, sd_x)
    yj_std, mu_y, sd_y = _standardize(y)

    perm_c = rng.permutation(l.n_vars)
    perm_a = rng.permutation(h.n_vars)
    relevant = [np.flatnonzero(t.matrix_t[:, j] != 0) for j in range(t.b)]
    k_true = forbidden_pairs(h.weights != 0, relevant)
    return Scenario(
        config=config,
        h=h,
        l=l,
        t=t,
        layout=layout,
        perm_concrete=perm_c,
        perm_abstract=perm_a,
        d_l=x_std[:, perm_c],
        d_j_x=xj_std[:, perm_c],
        d_j_y=yj_std[:, perm_a],
        k_true=k_true,
        scales={
            "concrete_mean": mu_x[perm_c],
            "concrete_std": sd_x[perm_c],
            "abstract_mean": mu_y[perm_a],
            "abstract_std": sd_y[perm_a],
        },
    )


def verify_scenario(sc: Scenario, tol: float = 1e-8) -> bool:
    return check_block_abstraction(sc.l, sc.h, sc.t, tol).ok


# -- files ------------------------------------------------------------------


def _write_csv(path: Path, data: np.ndarray, prefix: str) -> None:
    header = ",".join(f"{prefix}{i}" for i in range(data.shape[1]))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_csv(path: str | Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data


def save_scenario(sc: Scenario, out_dir: str | Path) -> Path:
    """Write ``manifest.json`` plus ``d_l.csv``, ``d_j_x.csv``, ``d_j_y.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "d_l.csv", sc.d_l, "x")
    _write_csv(out / "d_j_x.csv", sc.d_j_x, "x")
    _write_csv(out / "d_j_y.csv", sc.d_j_y, "y")
    manifest = {
        "config": sc.config.to_dict(),
        "files": {"d_l": "d_l.csv", "d_j_x": "d_j_x.csv", "d_j_y": "d_j_y.csv"},
        "h": sc.h.to_dict(),
        "l": sc.l.to_dict(),
        "t": sc.t.to_dict(),
        "layout": {
            "blocks": [blk.tolist() for blk in sc.layout.blocks],
            "ignored": sc.layout.ignored.tolist(),
        },
        "perm_concrete": sc.perm_concrete.tolist(),
        "perm_abstract": sc.perm_abstract.tolist(),
        "k_true": sorted([list(p) for p in sc.k_true]),
        "scales": {k: v.tolist() for k, v in sc.scales.items()},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_scenario(manifest_path: str | Path) -> Scenario:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    man = json.loads(path.read_text())
    base = path.parent
    files = man["files"]
    return Scenario(
        config=ScenarioConfig.from_dict(man["config"]),
        h=LinearScm.from_dict(man["h"]),
        l=LinearScm.from_dict(man["l"]),
        t=AbstractionMap.from_dict(man["t"]),
        layout=Layout(
            [np.asarray(b, dtype=int) for b in man["layout"]["blocks"]],
            np.asarray(man["layout"]["ignored"], dtype=int),
        ),
        perm_concrete=np.asarray(man["perm_concrete"], dtype=int),
        perm_abstract=np.asarray(man["perm_abstract"], dtype=int),
        d_l=read_csv(base / files["d_l"]),
        d_j_x=read_csv(base / files["d_j_x"]),
        d_j_y=read_csv(base / files["d_j_y"]),
        k_true=frozenset(tuple(p) for p in man["k_true"]),
        scales={k: np.asarray(v) for k, v in man["scales"].items()},
    )
