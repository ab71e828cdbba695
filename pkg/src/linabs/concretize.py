"""Sampling concrete models that a given abstract model abstracts.

For each abstract target ``Y_j`` the inner block ``W_jj`` is a random DAG and
``s_j = (I - W_jj)^{-1} t_j``.  Every row ``k`` of a cross block ``W_ij`` is
``m_ij [t_i]_k c^T`` with ``c = v / s_j`` for a simplex sample ``v``, which
makes ``W_ij s_j = m_ij t_i`` hold by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .abstraction import AbstractionMap, relevant_sets
from .errors import InvalidAbstraction, ResampleExhausted
from .scm import LinearScm, NoiseSpec, make_rng, topological_order

MIN_EXOGENOUS_COEF = 1e-3


@dataclass(frozen=True)
class ConcretizeConfig:
    inner_edge_prob: float = 0.5
    inner_weight_mean: float = 0.0
    inner_weight_std: float = 1.0
    dirichlet_alpha: float = 1.0
    ignored_edge_prob: float = 0.5
    rng_seed: int = 0
    max_resample: int = 100
    barycenter: bool = False
    noise: NoiseSpec = field(default_factory=NoiseSpec.exponential)

    def __post_init__(self):
        if not 0.0 <= self.inner_edge_prob <= 1.0:
            raise ValueError("inner_edge_prob must lie in [0, 1]")
        if not 0.0 <= self.ignored_edge_prob <= 1.0:
            raise ValueError("ignored_edge_prob must lie in [0, 1]")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.max_resample < 1:
            raise ValueError("max_resample must be >= 1")
        if self.inner_weight_std < 0:
            raise ValueError("inner_weight_std must be nonnegative")


def sample_inner_block(
    t_block: np.ndarray, cfg: ConcretizeConfig, rng: np.random.Generator
) -> np.ndarray:
    """Random strictly upper-triangular block for one abstract variable.

    ``t_block`` is the abstraction vector restricted to the block, in
    block-local order with all irrelevant (zero) entries before the relevant
    ones.  Every irrelevant variable gets a directed path to a relevant one,
    and the block is resampled until every entry of ``(I - W)^{-1} t_block``
    has magnitude at least ``1e-3``.
    """
    t_block = np.asarray(t_block, dtype=float)
    n = t_block.size
    relevant = t_block != 0
    if not relevant.any():
        raise ValueError("a block needs at least one relevant variable")
    n_irr = int(np.argmax(relevant))
    if relevant[n_irr:].sum() != n - n_irr:
        raise ValueError("irrelevant variables must precede relevant ones in block order")
    if n == 1:
        return np.zeros((1, 1))

    for _ in range(cfg.max_resample):
        mask = np.triu(rng.random((n, n)) < cfg.inner_edge_prob, k=1)
        w = np.where(mask, rng.normal(cfg.inner_weight_mean, cfg.inner_weight_std, (n, n)), 0.0)
        # Walk irrelevant variables backwards so later ones already reach a relevant one.
        for k in range(n_irr - 1, -1, -1):
            if not np.any(w[k, k + 1 :] != 0):
                target = int(rng.integers(k + 1, n))
                w[k, target] = rng.normal(cfg.inner_weight_mean, cfg.inner_weight_std)
        s = np.linalg.solve(np.eye(n) - w, t_block)
        if np.all(np.abs(s) >= MIN_EXOGENOUS_COEF):
            return w
    raise ResampleExhausted(f"no inner block with |s| >= {MIN_EXOGENOUS_COEF} after {cfg.max_resample} draws")


def default_blocks(t: AbstractionMap) -> tuple[list[np.ndarray], np.ndarray]:
    """Blocks equal to relevant sets; every irrelevant variable is ignored."""
    sets, _ = relevant_sets(t)
    used = np.zeros(t.d, dtype=bool)
    for s in sets:
        used[s] = True
    return [np.asarray(s, dtype=int) for s in sets], np.flatnonzero(~used)


def sample_concretization(
    m: LinearScm,
    t: AbstractionMap,
    cfg: ConcretizeConfig | None = None,
    blocks: Sequence[Sequence[int]] | None = None,
    rng: np.random.Generator | None = None,
) -> LinearScm:
    """Draw a concrete model ``L`` such that ``m`` is a ``T``-abstraction of it.

    ``blocks[j]`` lists the concrete variables of ``Y_j``'s block (its
    relevant set plus any irrelevant members); concrete variables in no
    block are ignored and only receive edges from block variables.  By
    default blocks equal the relevant sets.
    """
    cfg = cfg or ConcretizeConfig()
    rng = make_rng(cfg.rng_seed) if rng is None else rng
    problems = t.problems()
    if problems:
        raise InvalidAbstraction("; ".join(problems))
    if m.n_vars != t.b:
        raise InvalidAbstraction(f"abstract model has {m.n_vars} variables but T has {t.b} columns")
    sets, _ = relevant_sets(t)
    if blocks is None:
        block_list, ignored = default_blocks(t)
    else:
        block_list = [np.asarray(blk, dtype=int) for blk in blocks]
        used = np.zeros(t.d, dtype=bool)
        for j, blk in enumerate(block_list):
            if used[blk].any():
                raise InvalidAbstraction("blocks overlap")
            if not set(sets[j].tolist()) <= set(blk.tolist()):
                raise InvalidAbstraction(f"block of Y{j} misses part of its relevant set")
            used[blk] = True
        ignored = np.flatnonzero(~used)
        if t.support[ignored].any():
            raise InvalidAbstraction("a relevant variable is outside every block")

    tm = t.matrix_t
    # Block-local order: irrelevant members first, then relevant ones.
    local = []
    for j, blk in enumerate(block_list):
        irr = [k for k in blk if tm[k, j] == 0]
        rel = [k for k in blk if tm[k, j] != 0]
        local.append(np.asarray(irr + rel, dtype=int))

    w = np.zeros((t.d, t.d))
    s_cols = []
    for j in range(t.b):
        bj = local[j]
        w_jj = sample_inner_block(tm[bj, j], cfg, rng)
        w[np.ix_(bj, bj)] = w_jj
        s_cols.append(np.linalg.solve(np.eye(bj.size) - w_jj, tm[bj, j]))

    for j in topological_order(m):
        bj, s_j = local[j], s_cols[j]
        for i in range(t.b):
            if i == j:
                continue
            m_ij = m.weights[i, j]
            for k in local[i]:
                if m_ij == 0 or tm[k, i] == 0:
                    continue
                if cfg.barycenter:
                    v = np.full(bj.size, 1.0 / bj.size)
                else:
                    v = rng.dirichlet(np.full(bj.size, cfg.dirichlet_alpha))
                c = v / s_j
                w[k, bj] = m_ij * tm[k, i] * c

    block_vars = np.concatenate(local) if local else np.zeros(0, dtype=int)
    for g in ignored:
        parents = block_vars[rng.random(block_vars.size) < cfg.ignored_edge_prob]
        w[parents, g] = rng.normal(cfg.inner_weight_mean, cfg.inner_weight_std, parents.size)

    return LinearScm(w, (cfg.noise,) * t.d)
