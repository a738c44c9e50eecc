"""Predictor graph and the overlapping neighbourhood groups derived from it.

Feature indices are 1-based at every external surface (edge-list files,
``from_edge_list``) and 0-based inside the arrays held by the classes here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np


class GraphError(ValueError):
    """Raised for malformed edge lists or group weights."""


@dataclass(frozen=True)
class PredictorGraph:
    """Undirected, unweighted, loop-free graph on ``p`` features.

    ``edges`` is an ``(e, 2)`` integer array of 0-based pairs with
    ``edges[:, 0] < edges[:, 1]``, sorted lexicographically and unique.
    """

    p: int
    edges: np.ndarray = field(repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def edge_list(self) -> list[Tuple[int, int]]:
        """Edges as 1-based ``(j, k)`` tuples with ``j < k``."""
        return [(int(a) + 1, int(b) + 1) for a, b in self.edges]

    def adjacency_lists(self) -> list[np.ndarray]:
        """Sorted 0-based neighbour arrays, one per node."""
        nbrs: list[list[int]] = [[] for _ in range(self.p)]
        for a, b in self.edges:
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        return [np.array(sorted(n), dtype=np.int64) for n in nbrs]

    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self.p, self.p), dtype=np.int8)
        if self.n_edges:
            A[self.edges[:, 0], self.edges[:, 1]] = 1
            A[self.edges[:, 1], self.edges[:, 0]] = 1
        return A

    def __eq__(self, other):
        if not isinstance(other, PredictorGraph):
            return NotImplemented
        return self.p == other.p and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash((self.p, self.edges.tobytes()))


def _canonical_edges(p: int, pairs: Iterable[Sequence[int]], one_based: bool) -> np.ndarray:
    offset = 1 if one_based else 0
    seen = set()
    for pair in pairs:
        if len(pair) != 2:
            raise GraphError(f"edge {tuple(pair)!r} does not have two endpoints")
        j, k = int(pair[0]), int(pair[1])
        for v in (j, k):
            if not offset <= v < p + offset:
                lo, hi = offset, p - 1 + offset
                raise GraphError(f"edge ({j}, {k}): index {v} out of range [{lo}, {hi}]")
        if j == k:
            raise GraphError(f"edge ({j}, {k}) is a self-loop")
        a, b = (j, k) if j < k else (k, j)
        seen.add((a - offset, b - offset))
    if not seen:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(seen), dtype=np.int64)


def from_edge_list(p: int, pairs: Iterable[Sequence[int]]) -> PredictorGraph:
    """Build a graph from 1-based index pairs.

    Duplicates and reversed orientations collapse to one edge; self-loops and
    out-of-range indices raise :class:`GraphError` naming the pair.
    """
    if p < 1:
        raise GraphError(f"p must be positive, got {p}")
    return PredictorGraph(p, _canonical_edges(p, pairs, one_based=True))


def empty_graph(p: int) -> PredictorGraph:
    return PredictorGraph(p, np.zeros((0, 2), dtype=np.int64))


def from_adjacency(A: np.ndarray, tol: float = 0.0) -> PredictorGraph:
    """Graph of the off-diagonal support ``|A_jk| > tol`` of a square matrix."""
    A = np.asarray(A)
    mask = np.abs(A) > tol
    mask = mask | mask.T
    j, k = np.nonzero(np.triu(mask, 1))
    return PredictorGraph(A.shape[0], np.column_stack([j, k]))


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Neighbourhood groups ``A_j = {j} ∪ N(j)`` and their flattened layout.

    The latent coefficient blocks of all groups are stored stacked row-wise;
    group ``j`` owns rows ``offsets[j]:offsets[j + 1]`` and row ``r`` refers
    to feature ``members[r]``.
    """

    groups: tuple
    sizes: np.ndarray
    members: np.ndarray
    group_of_row: np.ndarray
    offsets: np.ndarray

    @property
    def p(self) -> int:
        return len(self.groups)

    @property
    def total_size(self) -> int:
        return int(self.offsets[-1])

    def one_based(self) -> list[list[int]]:
        return [[int(k) + 1 for k in g] for g in self.groups]


def neighborhoods(g: PredictorGraph) -> NeighborhoodIndex:
    adj = g.adjacency_lists()
    groups = []
    for j, nb in enumerate(adj):
        grp = np.sort(np.concatenate([nb, [j]])).astype(np.int64)
        grp.setflags(write=False)
        groups.append(grp)
    sizes = np.array([len(a) for a in groups], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    members = np.concatenate(groups).astype(np.int64)
    group_of_row = np.repeat(np.arange(g.p, dtype=np.int64), sizes)
    for arr in (sizes, offsets, members, group_of_row):
        arr.setflags(write=False)
    return NeighborhoodIndex(tuple(groups), sizes, members, group_of_row, offsets)


@dataclass(frozen=True)
class GroupWeights:
    tau: np.ndarray
    d: np.ndarray


def group_weights(nb: NeighborhoodIndex, d: Optional[Sequence[float]] = None) -> GroupWeights:
    """Penalty weights ``tau_j = sqrt(a_j) * d_j`` (``d_j = 1`` by default)."""
    sizes = np.asarray(nb.sizes if isinstance(nb, NeighborhoodIndex) else nb, dtype=float)
    if d is None:
        d_arr = np.ones_like(sizes)
    else:
        d_arr = np.asarray(d, dtype=float).reshape(-1)
        if d_arr.shape != sizes.shape:
            raise GraphError(f"d has length {d_arr.size}, expected {sizes.size}")
        bad = ~np.isfinite(d_arr) | (d_arr <= 0)
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise GraphError(f"d_{j + 1} = {d_arr[j]!r} must be finite and positive")
    return GroupWeights(np.sqrt(sizes) * d_arr, d_arr)


def remove_edges_random(g: PredictorGraph, fraction: float, seed=None) -> PredictorGraph:
    """Drop ``round(fraction * |E|)`` edges chosen uniformly without replacement.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if not 0.0 <= fraction < 1.0:
        raise GraphError(f"fraction must lie in [0, 1), got {fraction}")
    n_drop = int(round(fraction * g.n_edges))
    if n_drop == 0:
        return g
    rng = np.random.default_rng(seed)
    drop = rng.choice(g.n_edges, size=n_drop, replace=False)
    keep = np.ones(g.n_edges, dtype=bool)
    keep[drop] = False
    return PredictorGraph(g.p, g.edges[keep])


def read_edge_file(path, p: int) -> PredictorGraph:
    """Parse a whitespace-separated, 1-based edge list; ``#`` starts a comment line."""
    pairs = []
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            toks = s.split()
            if len(toks) != 2:
                raise GraphError(f"{path}:{lineno}: expected two indices, got {s!r}")
            try:
                pairs.append((int(toks[0]), int(toks[1])))
            except ValueError:
                raise GraphError(f"{path}:{lineno}: non-integer index in {s!r}") from None
    try:
        return from_edge_list(p, pairs)
    except GraphError as exc:
        raise GraphError(f"{path}: {exc}") from None


def write_edge_file(path, g: PredictorGraph) -> None:
    with Path(path).open("w") as fh:
        fh.write(f"# p={g.p} edges={g.n_edges}\n")
        for j, k in g.edge_list():
            fh.write(f"{j} {k}\n")
