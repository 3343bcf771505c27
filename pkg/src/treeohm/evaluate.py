"""Exact effective resistance of sampled trees via series-parallel reduction.

Three evaluation routes produce bit-identical resistances for the same
stream: a memory-light recursive evaluator (resistance_streaming), a
vectorized level fold over the same draw sequence (resistance_fast), and an
explicit-tree fold (sample_tree_explicit + resistance_of_tree).  All of them
draw one uniform per edge in depth-first pre-order with children visited
left to right, and combine children in conductance space, summed left to
right, with a single reciprocal per node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import (
    GuardError,
    LEVEL_CAP,
    MEMORY_GUARD,
    RngStream,
    TreeModel,
    ValidationError,
    WeightDistribution,
    dist_sample,
    dist_sample_block,
    level_scales,
    sample_offspring,
    sample_offspring_block,
)

_UNIT_WEIGHT = WeightDistribution.constant(1.0)


@dataclass(frozen=True)
class ResistanceSample:
    """One evaluated tree: depth parameter, replicate id, R and C = 1/R."""

    n: int
    replicate: int
    resistance: float
    conductance: float


@dataclass(frozen=True)
class SampledTree:
    """An explicit edge-rooted tree; node i carries its incoming edge.

    Nodes are stored in depth-first pre-order (children left to right), so a
    node's id is always greater than its parent's.  Node 0 sits below the
    unique level-1 root edge; the injection vertex above it is implicit.
    Leaves are exactly the nodes at level n_levels.
    """

    parent: np.ndarray
    level: np.ndarray
    weight: np.ndarray
    resistance: np.ndarray
    n_levels: int
    lam: float
    shape: str
    beta: int | None = None

    def __post_init__(self) -> None:
        for arr in (self.parent, self.level, self.weight, self.resistance):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return int(self.parent.shape[0])

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.level == self.n_levels)

    def children_lists(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.n_nodes)]
        parent = self.parent
        for i in range(1, self.n_nodes):
            kids[parent[i]].append(i)
        return kids

    def level_counts(self) -> np.ndarray:
        """Number of nodes per level, index 0 = level 1 (the root edge)."""
        return np.bincount(self.level, minlength=self.n_levels + 1)[1:]


def reweighted(tree: SampledTree, node: int, x: float) -> SampledTree:
    """Copy of the tree with one edge weight replaced (resistance rescaled)."""
    if not (0 <= node < tree.n_nodes):
        raise ValidationError(f"node {node} out of range")
    if not (x > 0.0):
        raise ValidationError(f"edge weight must be > 0, got {x}")
    weight = tree.weight.copy()
    resistance = tree.resistance.copy()
    weight[node] = x
    scales = level_scales(tree.lam, tree.n_levels)
    resistance[node] = scales[tree.level[node] - 1] * x
    return SampledTree(
        tree.parent.copy(), tree.level.copy(), weight, resistance,
        tree.n_levels, tree.lam, tree.shape, tree.beta,
    )


# ---------------------------------------------------------------------------
# regular-tree layout (cached): pre-order levels, parents, and the gather
# index that reorders a pre-order draw block into level-major storage
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _dfs_layout(beta: int, n_levels: int):
    sizes = [1] * (n_levels + 1)  # sizes[l] = nodes in a subtree hanging at level l
    for l in range(n_levels - 1, 0, -1):
        sizes[l] = 1 + beta * sizes[l + 1]
    n = sizes[1]
    if n > MEMORY_GUARD:
        raise GuardError(
            f"regular tree with {n} nodes exceeds the {MEMORY_GUARD}-node guard"
        )
    level = np.empty(n, dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    parent = np.empty(n, dtype=np.int64)
    stack = [(1, 0, -1)]
    i = 0
    while stack:
        l, p, par = stack.pop()
        level[i] = l
        pos[i] = p
        parent[i] = par
        if l < n_levels:
            base = p * beta
            for j in range(beta - 1, -1, -1):
                stack.append((l + 1, base + j, i))
        i += 1
    offsets = np.concatenate(([0], np.cumsum(beta ** np.arange(n_levels, dtype=np.int64))))
    # src[t] = pre-order index feeding level-major slot t
    src = np.empty(n, dtype=np.int64)
    src[offsets[level - 1] + pos] = np.arange(n, dtype=np.int64)
    return level, parent, offsets, src


def _fold_level_major(w: np.ndarray, offsets: np.ndarray, scales: np.ndarray,
                      n_levels: int, beta: int) -> float:
    """Series-parallel fold of level-major weights; ops mirror the scalar
    recursion exactly (left-to-right conductance sums, one reciprocal)."""
    r = w[offsets[n_levels - 1]:offsets[n_levels]] * scales[n_levels - 1]
    sub = r
    for l in range(n_levels - 1, 0, -1):
        cond = 1.0 / sub
        cond = cond.reshape(-1, beta)
        csum = cond[:, 0]
        for j in range(1, beta):
            csum = csum + cond[:, j]
        r = w[offsets[l - 1]:offsets[l]] * scales[l - 1]
        sub = r + 1.0 / csum
    return float(sub[0])


# ---------------------------------------------------------------------------
# evaluators
# ---------------------------------------------------------------------------


def resistance_streaming(model: TreeModel, n: int, rng: RngStream) -> ResistanceSample:
    """Effective resistance of a depth-n regular tree without materializing it.

    Depth-first recursion in O(n) memory: each call draws the edge weight,
    then resolves its children left to right and combines them in parallel.
    """
    if model.shape != "regular":
        raise ValidationError("streaming evaluation requires the regular shape")
    if n < 1:
        raise ValidationError(f"depth n={n} must be >= 1")
    if n > LEVEL_CAP:
        raise GuardError(f"depth n={n} exceeds the level cap {LEVEL_CAP}")
    scales = level_scales(model.lam, n)
    beta = int(model.beta)
    dist = model.weights

    def rec(lvl: int) -> float:
        x = dist_sample(dist, rng)
        r = scales[lvl - 1] * x
        if lvl == n:
            return r
        c = 0.0
        for _ in range(beta):
            c += 1.0 / rec(lvl + 1)
        return r + 1.0 / c

    r_total = rec(1)
    return ResistanceSample(n, rng.stream_index, r_total, 1.0 / r_total)


def resistance_fast(model: TreeModel, n: int, rng: RngStream) -> ResistanceSample:
    """Vectorized twin of resistance_streaming: one block draw in the same
    pre-order, reordered level-major, folded level by level.  Bit-identical
    to the recursion on the same stream, at the cost of O(beta^n) memory."""
    if model.shape != "regular":
        raise ValidationError("fast evaluation requires the regular shape")
    if n < 1:
        raise ValidationError(f"depth n={n} must be >= 1")
    if n > LEVEL_CAP:
        raise GuardError(f"depth n={n} exceeds the level cap {LEVEL_CAP}")
    _, _, offsets, src = _dfs_layout(int(model.beta), n)
    scales = level_scales(model.lam, n)
    w_pre = dist_sample_block(model.weights, rng, int(offsets[-1]))
    w_lm = w_pre[src]
    r_total = _fold_level_major(w_lm, offsets, scales, n, int(model.beta))
    return ResistanceSample(n, rng.stream_index, r_total, 1.0 / r_total)


def sample_tree_explicit(model: TreeModel, n: int, rng: RngStream) -> SampledTree:
    """Materialize a depth-n tree, drawing weights in pre-order.

    Regular shape consumes one uniform per edge; the branching shape
    additionally draws one offspring count per internal node, right after
    that node's weight.
    """
    if n < 1:
        raise ValidationError(f"depth n={n} must be >= 1")
    if n > LEVEL_CAP:
        raise GuardError(f"depth n={n} exceeds the level cap {LEVEL_CAP}")
    if model.shape == "regular":
        level, parent, offsets, _ = _dfs_layout(int(model.beta), n)
        scales = level_scales(model.lam, n)
        weight = dist_sample_block(model.weights, rng, int(offsets[-1]))
        resistance = weight * scales[level - 1]
        return SampledTree(parent.copy(), level.copy(), weight, resistance,
                           n, model.lam, "regular", int(model.beta))

    # branching shape: depth parameter n means n+1 edge levels (the root edge
    # sits above the depth-0 node, leaves are the depth-n nodes)
    n_levels = n + 1
    scales = level_scales(model.lam, n_levels)
    parents: list[int] = []
    levels: list[int] = []
    weights: list[float] = []
    stack = [(1, -1)]
    while stack:
        lvl, par = stack.pop()
        i = len(parents)
        if i >= MEMORY_GUARD:
            raise GuardError(
                f"branching tree exceeded the {MEMORY_GUARD}-node guard "
                f"(realized {i} nodes)"
            )
        parents.append(par)
        levels.append(lvl)
        weights.append(dist_sample(model.weights, rng))
        if lvl < n_levels:
            b = sample_offspring(model, rng)
            for _ in range(b):
                stack.append((lvl + 1, i))
    parent = np.array(parents, dtype=np.int64)
    level = np.array(levels, dtype=np.int64)
    weight = np.array(weights, dtype=np.float64)
    resistance = weight * scales[level - 1]
    return SampledTree(parent, level, weight, resistance,
                       n_levels, model.lam, "gw", None)


def _upward_pass(tree: SampledTree) -> tuple[np.ndarray, np.ndarray]:
    """Subtree resistances and per-node child conductance sums.

    sub[i] is the resistance of edge i plus everything below it, seen from
    node i's parent; csum[i] is the left-to-right sum of children subtree
    conductances (0.0 at leaves).  Shared by the resistance fold and the
    flow solver so their totals agree bit for bit.
    """
    n = tree.n_nodes
    parent = tree.parent
    r = tree.resistance
    kids = tree.children_lists()
    sub = np.empty(n, dtype=np.float64)
    csum = np.zeros(n, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        ks = kids[i]
        if not ks:
            sub[i] = r[i]
        else:
            c = 0.0
            for k in ks:
                c += 1.0 / sub[k]
            csum[i] = c
            sub[i] = r[i] + 1.0 / c
    return sub, csum


def resistance_of_tree(tree: SampledTree, replicate: int = -1) -> ResistanceSample:
    """Post-order series-parallel fold over an explicit tree.

    Exact for any tree whose leaves all sit at the bottom level and are held
    at one potential: branches below a node meet again only at the sink, so
    they combine in parallel.
    """
    sub, _ = _upward_pass(tree)
    r_total = float(sub[0])
    return ResistanceSample(tree.n_levels, replicate, r_total, 1.0 / r_total)


# ---------------------------------------------------------------------------
# branching-process utilities
# ---------------------------------------------------------------------------


def gw_generations(
    offspring: tuple[tuple[int, float], ...],
    n: int,
    rng: RngStream,
    population_guard: int = MEMORY_GUARD,
) -> np.ndarray:
    """Generation sizes (Z_0, ..., Z_n): Z_0 = 1, each node begets i.i.d.
    offspring.  Draws happen generation by generation in one block each."""
    model = TreeModel.galton_watson(offspring, _UNIT_WEIGHT)
    z = np.empty(n + 1, dtype=np.int64)
    z[0] = 1
    total = 1
    for i in range(n):
        counts = sample_offspring_block(model, rng, int(z[i]))
        z[i + 1] = int(counts.sum())
        total += int(z[i + 1])
        if total > population_guard:
            raise GuardError(
                f"branching population exceeded the {population_guard}-node guard"
            )
    return z


def gw_shorted_resistance(z: np.ndarray, lam: float) -> float:
    """Sum of lam**i / Z_i over generations: the resistance of the unit-weight
    network with each depth class merged into one vertex.  Merging vertices
    never raises resistance, so this lower-bounds the exact unit-weight R."""
    z = np.asarray(z)
    if np.any(z < 1):
        raise ValidationError("generation sizes must all be >= 1")
    scales = level_scales(lam, len(z))
    return math.fsum(scales[i] / z[i] for i in range(len(z)))


def shorted_resistance_of_tree(tree: SampledTree) -> float:
    """Weighted version of the level-shorted resistance: each level's edges in
    parallel, levels in series.  Lower-bounds resistance_of_tree for every
    weight assignment; equals gw_shorted_resistance when all weights are 1."""
    scales = level_scales(tree.lam, tree.n_levels)
    total = []
    for l in range(1, tree.n_levels + 1):
        w = tree.weight[tree.level == l]
        total.append(scales[l - 1] / float(np.sum(1.0 / w)))
    return math.fsum(total)


def gw_w_estimate(z_n: int, lam: float, n: int) -> float:
    """Normalized generation size Z_n / lam**n, the finite-depth stand-in for
    the martingale limit of the branching process."""
    if n < 1:
        raise ValidationError(f"depth n={n} must be >= 1")
    return float(z_n) / lam**n
