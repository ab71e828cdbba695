"""Linear structural causal models.

A linear SCM over ``n`` variables is ``X = W^T X + E`` where ``W[i, j]`` is the
direct effect of variable ``i`` on variable ``j``.  The reduced form maps
exogenous to endogenous values, ``x = F^T e`` with ``F = (I - W)^{-1}``.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import IndexOutOfRange, NotADag, NotBlockTriangular, ShapeMismatch

# PCG64 via numpy.random.default_rng is the only generator used in the package.
RNG_ALGORITHM = "numpy.PCG64"


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class NoiseSpec:
    """Distribution of one exogenous term.

    ``kind`` is one of ``"exponential"`` (``a`` = rate), ``"uniform"``
    (``a`` = lo, ``b`` = hi) or ``"gaussian"`` (``a`` = mean, ``b`` = variance).
    """

    kind: str
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind == "exponential":
            if not self.a > 0:
                raise ValueError(f"exponential rate must be positive, got {self.a}")
        elif self.kind == "uniform":
            if not self.a < self.b:
                raise ValueError(f"uniform bounds must satisfy lo < hi, got ({self.a}, {self.b})")
        elif self.kind == "gaussian":
            if not self.b >= 0:
                raise ValueError(f"gaussian variance must be >= 0, got {self.b}")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "NoiseSpec":
        return cls("exponential", float(rate), 0.0)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "NoiseSpec":
        return cls("uniform", float(lo), float(hi))

    @classmethod
    def gaussian(cls, mean: float = 0.0, variance: float = 1.0) -> "NoiseSpec":
        return cls("gaussian", float(mean), float(variance))

    @property
    def mean(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.a
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        return self.a

    @property
    def variance(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.a**2
        if self.kind == "uniform":
            return (self.b - self.a) ** 2 / 12.0
        return self.b

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.a, size)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return rng.normal(self.a, np.sqrt(self.b), size)

    def to_dict(self) -> dict:
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.a}
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.a, "hi": self.b}
        return {"kind": "gaussian", "mean": self.a, "variance": self.b}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseSpec":
        kind = d["kind"]
        if kind == "exponential":
            return cls.exponential(d.get("rate", 1.0))
        if kind == "uniform":
            return cls.uniform(d["lo"], d["hi"])
        if kind == "gaussian":
            return cls.gaussian(d.get("mean", 0.0), d.get("variance", 1.0))
        raise ValueError(f"unknown noise kind {kind!r}")


@dataclass(frozen=True)
class Intervention:
    """Hard intervention: ``assignments[i] = v`` replaces the mechanism of ``i``."""

    assignments: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "assignments", {int(k): float(v) for k, v in dict(self.assignments).items()}
        )

    @property
    def targets(self) -> list[int]:
        return sorted(self.assignments)

    def __len__(self) -> int:
        return len(self.assignments)

    def check(self, n_vars: int) -> None:
        for k in self.assignments:
            if not 0 <= k < n_vars:
                raise IndexOutOfRange(f"intervention target {k} outside [0, {n_vars})")


def _as_weights(scm_or_weights) -> np.ndarray:
    if isinstance(scm_or_weights, LinearScm):
        return scm_or_weights.weights
    return np.asarray(scm_or_weights, dtype=float)


def topological_order(scm_or_weights) -> np.ndarray:
    """Kahn ordering of the nonzero support; ties go to the smallest index."""
    w = _as_weights(scm_or_weights)
    n = w.shape[0]
    adj = w != 0
    indeg = adj.sum(axis=0)
    heap = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, int(j))
    if len(order) != n:
        raise NotADag("support of the weight matrix contains a cycle")
    return np.asarray(order, dtype=int)


def is_dag(weights) -> bool:
    try:
        topological_order(weights)
    except NotADag:
        return False
    return True


@dataclass(frozen=True, eq=False)
class LinearScm:
    """Linear SCM with weight matrix ``weights`` and per-variable noise."""

    weights: np.ndarray
    noise: tuple = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeMismatch(f"weights must be square, got shape {w.shape}")
        if np.any(np.diag(w) != 0):
            raise NotADag("diagonal entries (self loops) must be exactly zero")
        topological_order(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        noise = tuple(self.noise) if self.noise else (NoiseSpec.exponential(1.0),) * w.shape[0]
        if len(noise) != w.shape[0]:
            raise ShapeMismatch(f"{len(noise)} noise specs for {w.shape[0]} variables")
        object.__setattr__(self, "noise", noise)

    @property
    def n_vars(self) -> int:
        return self.weights.shape[0]

    @property
    def support(self) -> np.ndarray:
        return self.weights != 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearScm):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.noise == other.noise

    def permuted(self, perm: Sequence[int]) -> "LinearScm":
        """Relabel so that new variable ``c`` is old variable ``perm[c]``."""
        perm = np.asarray(perm, dtype=int)
        return LinearScm(self.weights[np.ix_(perm, perm)], tuple(self.noise[p] for p in perm))

    def subgraph(self, keep: Iterable[int]) -> "LinearScm":
        keep = np.asarray(sorted(keep), dtype=int)
        return LinearScm(self.weights[np.ix_(keep, keep)], tuple(self.noise[k] for k in keep))

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "weights": self.weights.ravel().tolist(),
            "noise": [nz.to_dict() for nz in self.noise],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearScm":
        n = int(d["n_vars"])
        w = np.asarray(d["weights"], dtype=float).reshape(n, n)
        noise = tuple(NoiseSpec.from_dict(x) for x in d.get("noise", [])) or ()
        return cls(w, noise)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LinearScm":
        return cls.from_dict(json.loads(text))


def reduced_form(scm_or_weights, method: str = "triangular") -> np.ndarray:
    """Return ``F = (I - W)^{-1}``.

    ``method="triangular"`` permutes to a topological order and back-substitutes;
    ``method="lu"`` uses a dense LU solve.
    """
    w = _as_weights(scm_or_weights)
    n = w.shape[0]
    if method == "lu":
        topological_order(w)
        return np.linalg.solve(np.eye(n) - w, np.eye(n))
    order = topological_order(w)
    a = np.eye(n) - w[np.ix_(order, order)]
    f_perm = solve_triangular(a, np.eye(n), lower=False, unit_diagonal=True)
    inv = np.empty(n, dtype=int)
    inv[order] = np.arange(n)
    return f_perm[np.ix_(inv, inv)]


def apply_intervention(scm: LinearScm, iv: Intervention | None) -> LinearScm:
    """Cut incoming edges of intervened variables and pin their noise to a constant."""
    if iv is None or len(iv) == 0:
        return scm
    iv.check(scm.n_vars)
    w = scm.weights.copy()
    noise = list(scm.noise)
    for k, v in iv.assignments.items():
        w[:, k] = 0.0
        noise[k] = NoiseSpec.gaussian(v, 0.0)
    return LinearScm(w, tuple(noise))


def sample_noise(scm: LinearScm, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an ``n_samples x n_vars`` exogenous matrix, column by column."""
    e = np.empty((n_samples, scm.n_vars))
    for j, nz in enumerate(scm.noise):
        e[:, j] = nz.sample(rng, n_samples)
    return e


def simulate(
    scm: LinearScm,
    n_samples: int,
    rng_seed: int | np.random.Generator | None = 0,
    iv: Intervention | None = None,
) -> np.ndarray:
    """Sample ``n_samples`` rows of ``x = F_iv^T e``.

    The exogenous draw is the same with and without an intervention at equal
    seed; intervened coordinates are then overwritten with their constants.
    """
    rng = make_rng(rng_seed)
    e = sample_noise(scm, n_samples, rng)
    w = scm.weights
    assignments = {} if iv is None else iv.assignments
    if iv is not None:
        iv.check(scm.n_vars)
    x = np.zeros_like(e)
    for j in topological_order(w):
        if j in assignments:
            x[:, j] = assignments[j]
            continue
        parents = np.flatnonzero(w[:, j])
        x[:, j] = e[:, j] + (x[:, parents] @ w[parents, j] if parents.size else 0.0)
    return x


def reduced_form_under(scm: LinearScm, iv: Intervention | None) -> np.ndarray:
    return reduced_form(apply_intervention(scm, iv))


# -- block decomposition ------------------------------------------------------


@dataclass
class BlockDecomposition:
    """Blockwise reduced form of a block upper-triangular ``W``.

    ``diag[k] = (I - W_kk)^{-1}``; for ``i < j``,
    ``off_diag[i, j] = F_ii (W_ij + R_ij) F_jj`` with
    ``R_ij = sum_{i<k<j} W_ik F_kk (W_kj + R_kj)``.
    """

    block_sizes: list[int]
    diag: list[np.ndarray]
    off_diag: dict[tuple[int, int], np.ndarray]
    remainder: dict[tuple[int, int], np.ndarray]
    order: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_sizes)])

    def assemble(self, original_labels: bool = True) -> np.ndarray:
        """Assemble the full matrix; by default in the input labelling."""
        off = self.offsets
        n = int(off[-1])
        f = np.zeros((n, n))
        for k, fk in enumerate(self.diag):
            f[off[k] : off[k + 1], off[k] : off[k + 1]] = fk
        for (i, j), fij in self.off_diag.items():
            f[off[i] : off[i + 1], off[j] : off[j + 1]] = fij
        if not original_labels:
            return f
        inv = np.empty(n, dtype=int)
        inv[self.order] = np.arange(n)
        return f[np.ix_(inv, inv)]


def blockwise_reduced_form(
    scm_or_weights, block_sizes: Sequence[int], order: Sequence[int] | None = None
) -> BlockDecomposition:
    """Reduced form computed block by block.

    ``order`` (default identity) permutes the variables into block order; the
    permuted weights must be block upper triangular for ``block_sizes``.
    """
    w = _as_weights(scm_or_weights)
    n = w.shape[0]
    sizes = [int(s) for s in block_sizes]
    if any(s <= 0 for s in sizes) or sum(sizes) != n:
        raise ShapeMismatch(f"block sizes {sizes} do not partition {n} variables")
    order = np.arange(n) if order is None else np.asarray(order, dtype=int)
    wp = w[np.ix_(order, order)]
    off = np.concatenate([[0], np.cumsum(sizes)])
    nb = len(sizes)

    def blk(i, j):
        return wp[off[i] : off[i + 1], off[j] : off[j + 1]]

    for i in range(nb):
        for j in range(i):
            if np.any(blk(i, j) != 0):
                raise NotBlockTriangular(f"block ({i}, {j}) below the diagonal is nonzero")

    diag = []
    for k in range(nb):
        wk = blk(k, k)
        topological_order(wk)
        diag.append(np.linalg.solve(np.eye(sizes[k]) - wk, np.eye(sizes[k])))

    remainder: dict[tuple[int, int], np.ndarray] = {}
    off_diag: dict[tuple[int, int], np.ndarray] = {}
    # R_ij depends on R_kj for k > i, so fill each column j bottom-up.
    for j in range(nb):
        for i in range(j - 1, -1, -1):
            r = np.zeros((sizes[i], sizes[j]))
            for k in range(i + 1, j):
                r += blk(i, k) @ diag[k] @ (blk(k, j) + remainder[k, j])
            remainder[i, j] = r
            off_diag[i, j] = diag[i] @ (blk(i, j) + r) @ diag[j]
    return BlockDecomposition(sizes, diag, off_diag, remainder, order)
