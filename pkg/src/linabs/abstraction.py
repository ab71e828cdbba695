"""Linear abstractions between a concrete and an abstract linear SCM.

An abstraction is a ``d x b`` matrix ``T``; abstract values are ``y = T^T x``.
This module derives relevant sets, concrete blocks and the exogenous map from
``T`` and the concrete graph, and checks whether an abstract model is a valid
``T``-abstraction, either from the weights (block condition) or by brute force
over hard interventions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, OverlappingBlocks, SingularBlock
from .scm import Intervention, LinearScm, make_rng, reduced_form, topological_order

EXACT_THRESHOLD = 1e-9
FITTED_THRESHOLD = 0.01
CANCELLATION_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class AbstractionMap:
    """Matrix ``T`` (``d x b``); column ``j`` is the abstraction vector of ``Y_j``."""

    matrix_t: np.ndarray
    threshold: float = EXACT_THRESHOLD

    def __post_init__(self):
        t = np.array(self.matrix_t, dtype=float)
        if t.ndim != 2:
            raise DimensionMismatch(f"T must be a matrix, got shape {t.shape}")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        t.setflags(write=False)
        object.__setattr__(self, "matrix_t", t)

    @property
    def d(self) -> int:
        return self.matrix_t.shape[0]

    @property
    def b(self) -> int:
        return self.matrix_t.shape[1]

    @property
    def support(self) -> np.ndarray:
        return np.abs(self.matrix_t) > self.threshold

    def column(self, j: int) -> np.ndarray:
        return self.matrix_t[:, j]

    def full_column_rank(self) -> bool:
        return self.b == 0 or np.linalg.matrix_rank(self.matrix_t) == self.b

    def problems(self) -> list[str]:
        """Validation failures (empty list when ``T`` is a usable abstraction)."""
        out = []
        if not self.full_column_rank():
            out.append("T is not full column rank")
        sets, ok = relevant_sets(self)
        for j, s in enumerate(sets):
            if len(s) == 0:
                out.append(f"relevant set of Y{j} is empty")
        if not ok and all(len(s) for s in sets):
            out.append("relevant sets overlap")
        return out

    def permuted(self, row_perm: Sequence[int], col_perm: Sequence[int]) -> "AbstractionMap":
        return AbstractionMap(self.matrix_t[np.ix_(row_perm, col_perm)], self.threshold)

    def to_dict(self) -> dict:
        return {"d": self.d, "b": self.b, "t": self.matrix_t.ravel().tolist(), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AbstractionMap":
        t = np.asarray(d["t"], dtype=float).reshape(int(d["d"]), int(d["b"]))
        return cls(t, float(d.get("threshold", EXACT_THRESHOLD)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "AbstractionMap":
        return cls.from_dict(json.loads(text))


@dataclass
class BlockStructure:
    relevant_sets: list[np.ndarray]
    blocks: list[np.ndarray]
    ignored: np.ndarray
    block_order: np.ndarray | None
    abstract_order: np.ndarray | None = None

    @property
    def block_sizes(self) -> list[int]:
        return [len(b) for b in self.blocks]

    def block_of(self) -> np.ndarray:
        """``out[i]`` = abstract index owning concrete variable ``i``, or -1."""
        n = sum(len(b) for b in self.blocks) + len(self.ignored)
        out = np.full(n, -1, dtype=int)
        for j, blk in enumerate(self.blocks):
            out[blk] = j
        return out


@dataclass
class ExogenousMap:
    matrix_s: np.ndarray


@dataclass
class Violation:
    """Concrete witness that no abstract model can ``T``-abstract the concrete one.

    ``source_var`` and ``witness_var`` lie in the relevant set of
    ``source_abstract``; ``source_var`` has a ``T``-direct path into the
    relevant set of ``target_abstract`` while ``witness_var`` has none.
    """

    source_var: int
    witness_var: int
    source_abstract: int
    target_abstract: int


@dataclass
class ImpliedGraph:
    adjacency: np.ndarray
    violations: list[Violation] = field(default_factory=list)
    cancellations: list[tuple[int, int]] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.violations


@dataclass
class AbstractionCheck:
    ok: bool
    max_residual: float
    ordering_ok: bool
    reason: str | None = None
    residuals: dict = field(default_factory=dict)


# -- relevant sets and T-direct paths ----------------------------------------


def relevant_sets(t: AbstractionMap) -> tuple[list[np.ndarray], bool]:
    """Per-column supports of ``T`` and whether they are nonempty and disjoint."""
    sup = t.support
    sets = [np.flatnonzero(sup[:, j]) for j in range(t.b)]
    valid = all(len(s) > 0 for s in sets) and bool(np.all(sup.sum(axis=1) <= 1))
    return sets, valid


def _closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a boolean adjacency matrix."""
    n = adj.shape[0]
    reach = adj.astype(bool) | np.eye(n, dtype=bool)
    # Repeated squaring; log2(n) boolean products.
    while True:
        nxt = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
        if np.array_equal(nxt, reach):
            return reach
        reach = nxt


def transitive_closure(adj: np.ndarray) -> np.ndarray:
    """``out[a, b]`` is true iff a directed path of length >= 1 goes from a to b."""
    adj = np.asarray(adj) != 0
    if adj.shape[0] == 0:
        return adj.copy()
    return (adj.astype(np.int64) @ _closure(adj).astype(np.int64)) > 0


def t_direct_reachability(graph: np.ndarray, relevant: np.ndarray) -> np.ndarray:
    """Paths whose interior vertices are all irrelevant.

    ``graph`` is the (weighted or boolean) adjacency; ``relevant`` is a
    boolean mask over the concrete variables.
    """
    adj = np.asarray(graph) != 0
    relevant = np.asarray(relevant, dtype=bool)
    irr = np.flatnonzero(~relevant)
    out = adj.copy()
    if irr.size:
        c = _closure(adj[np.ix_(irr, irr)]).astype(np.int64)
        via = adj[:, irr].astype(np.int64) @ c @ adj[irr, :].astype(np.int64)
        out |= via > 0
    return out


def t_direct_effects(weights: np.ndarray, relevant: np.ndarray) -> np.ndarray:
    """Total effect carried only along paths with irrelevant interiors."""
    w = np.asarray(weights, dtype=float)
    irr = np.flatnonzero(~np.asarray(relevant, dtype=bool))
    out = w.copy()
    if irr.size:
        f_irr = np.linalg.solve(np.eye(irr.size) - w[np.ix_(irr, irr)], w[irr, :])
        out += w[:, irr] @ f_irr
    return out


def _relevant_mask(sets: list[np.ndarray], d: int) -> np.ndarray:
    mask = np.zeros(d, dtype=bool)
    for s in sets:
        mask[s] = True
    return mask


# -- blocks --------------------------------------------------------------------


def concrete_blocks(
    l: LinearScm, t: AbstractionMap, abstract_order: Sequence[int] | None = None
) -> BlockStructure:
    """Relevant variables plus irrelevant ones with a ``T``-direct path into them.

    ``block_order`` lists concrete indices block by block (following
    ``abstract_order`` if given, otherwise an order derived from the concrete
    edges between blocks), each block internally topologically sorted, with
    the ignored variables last.  It is ``None`` when no such order exists.
    """
    if l.n_vars != t.d:
        raise DimensionMismatch(f"concrete model has {l.n_vars} variables, T has {t.d} rows")
    sets, _ = relevant_sets(t)
    relevant = _relevant_mask(sets, t.d)
    reach = t_direct_reachability(l.weights, relevant)
    owner = np.full(t.d, -1, dtype=int)
    blocks = []
    for j, rs in enumerate(sets):
        members = set(rs.tolist())
        if rs.size:
            feeders = np.flatnonzero(~relevant & reach[:, rs].any(axis=1))
            members.update(feeders.tolist())
        blk = np.asarray(sorted(members), dtype=int)
        clash = blk[owner[blk] >= 0]
        if clash.size:
            other = owner[clash[0]]
            raise OverlappingBlocks(
                f"concrete variable {clash[0]} is in the blocks of Y{other} and Y{j}"
            )
        owner[blk] = j
        blocks.append(blk)
    ignored = np.flatnonzero(owner < 0)
    order, a_order = _block_order(l.weights, blocks, ignored, abstract_order)
    return BlockStructure(sets, blocks, ignored, order, a_order)


def _block_order(w, blocks, ignored, abstract_order):
    b = len(blocks)
    owner = np.full(w.shape[0], -1, dtype=int)
    for j, blk in enumerate(blocks):
        owner[blk] = j
    if abstract_order is None:
        quotient = np.zeros((b, b))
        src, dst = np.nonzero(w)
        for u, v in zip(src, dst):
            if owner[u] >= 0 and owner[v] >= 0 and owner[u] != owner[v]:
                quotient[owner[u], owner[v]] = 1.0
        try:
            abstract_order = topological_order(quotient)
        except Exception:
            return None, None
    abstract_order = np.asarray(abstract_order, dtype=int)
    parts = []
    for j in abstract_order:
        blk = blocks[j]
        local = topological_order(w[np.ix_(blk, blk)])
        parts.append(blk[local])
    if ignored.size:
        parts.append(ignored[topological_order(w[np.ix_(ignored, ignored)])])
    order = np.concatenate(parts) if parts else np.zeros(0, dtype=int)
    wp = w[np.ix_(order, order)]
    if np.any(np.tril(wp) != 0):
        return None, abstract_order
    return order, abstract_order


def exogenous_map(
    l: LinearScm, t: AbstractionMap, blocks: BlockStructure | None = None
) -> ExogenousMap:
    """Blockwise ``s_k = (I - W_kk)^{-1} t_k``, zero outside block ``k``."""
    if blocks is None:
        blocks = concrete_blocks(l, t)
    s = np.zeros((t.d, t.b))
    for k, blk in enumerate(blocks.blocks):
        if blk.size == 0:
            continue
        a = np.eye(blk.size) - l.weights[np.ix_(blk, blk)]
        try:
            s[blk, k] = np.linalg.solve(a, t.matrix_t[blk, k])
        except np.linalg.LinAlgError as exc:
            raise SingularBlock(f"block of Y{k} is singular") from exc
    return ExogenousMap(s)


def exogenous_map_dense(l: LinearScm, h: LinearScm, t: AbstractionMap) -> ExogenousMap:
    """``S = F T G^{-1}`` from the two reduced forms."""
    f = reduced_form(l)
    g_inv = np.eye(h.n_vars) - h.weights
    return ExogenousMap(f @ t.matrix_t @ g_inv)


# -- graphical conditions -------------------------------------------------------


def implied_abstract_graph(
    l: LinearScm, t: AbstractionMap, cancellation_tol: float = CANCELLATION_TOL
) -> ImpliedGraph:
    """Abstract edges implied by ``T``-direct connectivity of relevant sets.

    ``Y_i -> Y_j`` is present when every relevant variable of ``Y_i`` reaches
    the relevant set of ``Y_j`` through a ``T``-direct path that carries a
    nonzero effect.  Pairs where only some relevant variables of ``Y_i`` have
    such a path are reported as violations: no abstract model can abstract
    ``l`` under ``T``.  Paths whose carried effect falls below
    ``cancellation_tol`` are reported as potential cancellations; the
    guarantee that the implied graph matches the true abstract graph only
    holds for faithful models.
    """
    if l.n_vars != t.d:
        raise DimensionMismatch(f"concrete model has {l.n_vars} variables, T has {t.d} rows")
    sets, _ = relevant_sets(t)
    relevant = _relevant_mask(sets, t.d)
    reach = t_direct_reachability(l.weights, relevant)
    eff = np.abs(t_direct_effects(l.weights, relevant))
    b = t.b
    adj = np.zeros((b, b), dtype=bool)
    violations: list[Violation] = []
    cancellations: list[tuple[int, int]] = []
    for i, j in itertools.permutations(range(b), 2):
        src, dst = sets[i], sets[j]
        if src.size == 0 or dst.size == 0:
            continue
        graph_hit = reach[np.ix_(src, dst)]
        effect_hit = graph_hit & (eff[np.ix_(src, dst)] >= cancellation_tol)
        has_path = graph_hit.any(axis=1)
        for a, bb in zip(*np.nonzero(graph_hit & ~effect_hit)):
            cancellations.append((int(src[a]), int(dst[bb])))
        if has_path.any() and not has_path.all():
            violations.append(
                Violation(
                    int(src[np.flatnonzero(has_path)[0]]),
                    int(src[np.flatnonzero(~has_path)[0]]),
                    i,
                    j,
                )
            )
        adj[i, j] = bool(effect_hit.any(axis=1).all())
    return ImpliedGraph(adj, violations, cancellations)


def check_block_abstraction(
    l: LinearScm, h: LinearScm, t: AbstractionMap, tol: float = 1e-8
) -> AbstractionCheck:
    """Weight-level test of ``T``-abstraction.

    Holds iff (a) every concrete edge between two blocks goes from the block
    of an abstract ancestor to the block of its descendant, with no edge from
    an ignored variable into a block, so the blocks can follow every
    topological order of ``h``; and (b) ``W_ij s_j = m_ij t_i`` for all
    ``i != j`` within ``tol`` (max-norm).
    """
    if l.n_vars != t.d or h.n_vars != t.b:
        raise DimensionMismatch(
            f"shapes disagree: L has {l.n_vars} vars, H has {h.n_vars}, T is {t.d}x{t.b}"
        )
    sets, valid = relevant_sets(t)
    if not valid:
        return AbstractionCheck(False, float("inf"), False, "relevant sets empty or overlapping")
    try:
        blocks = concrete_blocks(l, t)
    except OverlappingBlocks as exc:
        return AbstractionCheck(False, float("inf"), False, str(exc))

    w, m = l.weights, h.weights
    owner = blocks.block_of()
    anc = transitive_closure(m)
    ordering_ok = True
    src, dst = np.nonzero(w)
    for u, v in zip(src, dst):
        bu, bv = owner[u], owner[v]
        if bv < 0:
            continue
        if bu < 0 or (bu != bv and not anc[bu, bv]):
            ordering_ok = False
            break

    s = exogenous_map(l, t, blocks).matrix_s
    residuals = {}
    worst = 0.0
    for i, j in itertools.permutations(range(t.b), 2):
        bi, bj = blocks.blocks[i], blocks.blocks[j]
        lhs = w[np.ix_(bi, bj)] @ s[bj, j]
        rhs = m[i, j] * t.matrix_t[bi, i]
        r = float(np.max(np.abs(lhs - rhs))) if bi.size else 0.0
        residuals[i, j] = r
        worst = max(worst, r)
    ok = ordering_ok and worst <= tol
    reason = None
    if not ordering_ok:
        reason = "concrete blocks cannot follow every abstract topological order"
    elif not ok:
        reason = f"block condition residual {worst:.3g} exceeds {tol:g}"
    return AbstractionCheck(ok, worst, ordering_ok, reason, residuals)


# -- intervention map and brute-force consistency -----------------------------


def map_intervention(t: AbstractionMap, iv: Intervention) -> Intervention | None:
    """Abstract intervention induced by ``iv``, or ``None`` if undefined.

    Defined only when ``iv`` fixes exactly the union of the relevant sets of
    some abstract variables; then ``Y_j <- t_j^T x``.
    """
    sets, _ = relevant_sets(t)
    targets = set(iv.assignments)
    if not targets:
        return Intervention({})
    out = {}
    covered = set()
    for j, rs in enumerate(sets):
        rs_set = set(rs.tolist())
        hit = rs_set & targets
        if not hit:
            continue
        if hit != rs_set:
            return None
        out[j] = float(sum(t.matrix_t[k, j] * iv.assignments[k] for k in rs_set))
        covered |= rs_set
    if covered != targets:
        return None
    return Intervention(out)


def _solve_intervened(w: np.ndarray, e: np.ndarray, assignments: Mapping[int, float]) -> np.ndarray:
    """Values of an intervened linear SCM for exogenous rows ``e`` (k x n)."""
    wi = w.copy()
    e = e.copy()
    for k, v in assignments.items():
        wi[:, k] = 0.0
        e[:, k] = v
    f = np.linalg.solve(np.eye(w.shape[0]) - wi, np.eye(w.shape[0]))
    return e @ f


def brute_force_consistency(
    l: LinearScm,
    h: LinearScm,
    t: AbstractionMap,
    max_subset: int | None = None,
    n_random: int = 8,
    seed: int = 0,
) -> float:
    """Largest violation of ``T^T L^i(e) = H^{w(i)}(S^T e)`` over a finite protocol.

    For every abstract subset ``V`` (up to ``max_subset`` variables) and every
    sign pattern in ``{-1, +1}^V``, the concrete intervention puts the whole
    target value on one relevant variable of each ``Y`` in ``V`` and zero on
    the rest of its relevant set; every choice of carrier variable is tried
    for each ``Y`` in turn.  Both sides are evaluated on ``e = 0``, the
    canonical basis and ``n_random`` Gaussian draws.  ``S = F T G^{-1}``.
    """
    if l.n_vars != t.d or h.n_vars != t.b:
        raise DimensionMismatch("model and abstraction shapes disagree")
    sets, _ = relevant_sets(t)
    b, d = t.b, t.d
    if max_subset is None:
        max_subset = min(b, 3)
    s = exogenous_map_dense(l, h, t).matrix_s
    rng = make_rng(seed)
    e = np.vstack([np.zeros(d), np.eye(d), rng.normal(size=(n_random, d))])
    u = e @ s
    tm = t.matrix_t
    worst = 0.0

    def compare(concrete_iv, abstract_iv):
        nonlocal worst
        x = _solve_intervened(l.weights, e, concrete_iv)
        y = _solve_intervened(h.weights, u, abstract_iv)
        worst = max(worst, float(np.max(np.abs(x @ tm - y))))

    compare({}, {})
    usable = [j for j in range(b) if len(sets[j])]
    for size in range(1, max_subset + 1):
        for subset in itertools.combinations(usable, size):
            for signs in itertools.product((-1.0, 1.0), repeat=size):
                target = dict(zip(subset, signs))
                carriers = [{j: int(sets[j][0]) for j in subset}]
                for j in subset:
                    for k in sets[j][1:]:
                        choice = dict(carriers[0])
                        choice[j] = int(k)
                        carriers.append(choice)
                for choice in carriers:
                    civ = {}
                    for j in subset:
                        for k in sets[j]:
                            civ[int(k)] = 0.0
                        c = choice[j]
                        civ[c] = target[j] / tm[c, j]
                    compare(civ, target)
    return worst
