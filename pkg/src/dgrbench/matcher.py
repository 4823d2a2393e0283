"""MWPM decoding over a :class:`~dgrbench.dem.DecodingGraph`.

Flipped detectors are reduced to a dense syndrome graph: every flipped
detector gets a boundary twin at its shortest distance to the boundary, twins
are joined at weight zero, and detector pairs are joined at their shortest
path distance. A minimum-weight perfect matching of that graph is expanded
back to decoding-graph edges with XOR cancellation.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from dgrbench.blossom import min_weight_perfect_matching
from dgrbench.dem import BOUNDARY, DecodingGraph
from dgrbench.errors import ContractViolation, MatchingSizeError

_PATH_CACHE_LIMIT = 4096


@dataclass(frozen=True, eq=False)
class ShortestPaths:
    source: int
    distances: np.ndarray
    pred_edge: np.ndarray  # edge used to reach each node, -1 at the source / unreachable
    pred_node: np.ndarray

    def path_edges(self, target: int) -> list[int]:
        out = []
        node = target
        while node != self.source:
            eid = int(self.pred_edge[node])
            if eid < 0:
                raise ContractViolation(f"node {target} is unreachable from {self.source}")
            out.append(eid)
            node = int(self.pred_node[node])
        return out


@dataclass(frozen=True)
class Matching:
    edges: frozenset[int]
    weight: float
    # (detector, partner) with partner == BOUNDARY for boundary matches
    pairs: tuple[tuple[int, int], ...] = ()

    @classmethod
    def empty(cls) -> "Matching":
        return cls(frozenset(), 0.0, ())

    def __len__(self) -> int:
        return len(self.edges)


def shortest_paths(graph: DecodingGraph, source: int) -> ShortestPaths:
    """Dijkstra from ``source``; ``graph.boundary_node`` addresses the boundary.

    Ties keep the first predecessor found, scanning neighbours in edge-id
    order, so results are reproducible.
    """
    cache = graph._paths
    hit = cache.get(source)
    if hit is not None:
        return hit

    n = graph.num_detectors + 1
    if not 0 <= source < n:
        raise ContractViolation(f"source node {source} out of range")
    weights = graph.weights
    adjacency = graph.topology.adjacency
    dist = np.full(n, math.inf)
    pred_edge = np.full(n, -1, dtype=np.int64)
    pred_node = np.full(n, -1, dtype=np.int64)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, node = heapq.heappop(heap)
        if done[node]:
            continue
        done[node] = True
        for other, eid in adjacency[node]:
            nd = d + weights[eid]
            if nd < dist[other]:
                dist[other] = nd
                pred_edge[other] = eid
                pred_node[other] = node
                heapq.heappush(heap, (nd, other))

    result = ShortestPaths(source, dist, pred_edge, pred_node)
    if len(cache) < _PATH_CACHE_LIMIT:
        cache[source] = result
    return result


def blossom_mwpm(weights: np.ndarray) -> list[tuple[int, int]]:
    """Exact minimum-weight perfect matching of a dense, even-sized weight matrix."""
    return min_weight_perfect_matching(weights)


def _check_detectors(graph: DecodingGraph, detectors: Iterable[int]) -> list[int]:
    dets = sorted(set(int(d) for d in detectors))
    if dets and not (0 <= dets[0] and dets[-1] < graph.num_detectors):
        raise ContractViolation(f"detector index out of range for a graph with {graph.num_detectors} detectors")
    return dets


def _distance_tables(graph: DecodingGraph, dets: Sequence[int]) -> tuple[list[ShortestPaths], np.ndarray, np.ndarray]:
    trees = [shortest_paths(graph, d) for d in dets]
    index = np.array(dets, dtype=np.int64)
    pair = np.array([tree.distances[index] for tree in trees]) if dets else np.zeros((0, 0))
    to_boundary = np.array([tree.distances[graph.boundary_node] for tree in trees])
    return trees, pair, to_boundary


def syndrome_graph(pair: np.ndarray, to_boundary: np.ndarray) -> np.ndarray:
    """Dense ``2k x 2k`` weights: detectors, then one boundary twin per detector."""
    k = len(to_boundary)
    dense = np.full((2 * k, 2 * k), math.inf)
    dense[:k, :k] = pair
    dense[k:, k:] = 0.0
    for i in range(k):
        dense[i, i] = math.inf
        dense[k + i, k + i] = math.inf
        dense[i, k + i] = dense[k + i, i] = to_boundary[i]
    return dense


def _expand(
    graph: DecodingGraph,
    dets: Sequence[int],
    trees: Sequence[ShortestPaths],
    pairs: Iterable[tuple[int, int]],
) -> Matching:
    chosen: set[int] = set()
    served = []
    for a, b in pairs:
        if b == BOUNDARY:
            path = trees[a].path_edges(graph.boundary_node)
            served.append((dets[a], BOUNDARY))
        else:
            path = trees[a].path_edges(dets[b])
            served.append((dets[a], dets[b]))
        chosen.symmetric_difference_update(path)
    weight = math.fsum(float(graph.weights[e]) for e in chosen)
    return Matching(frozenset(chosen), weight, tuple(sorted(served)))


def _pairs_from_twins(k: int, matched: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    for i, j in matched:
        i, j = min(i, j), max(i, j)
        if j < k:
            out.append((i, j))
        elif i < k:
            out.append((i, BOUNDARY))
    return out


def decode(graph: DecodingGraph, detectors: Iterable[int]) -> Matching:
    dets = _check_detectors(graph, detectors)
    k = len(dets)
    if k == 0:
        return Matching.empty()
    trees, pair, to_boundary = _distance_tables(graph, dets)
    if k == 1:
        pairs = [(0, BOUNDARY)]
    elif k == 2:
        if pair[0, 1] <= to_boundary[0] + to_boundary[1]:
            pairs = [(0, 1)]
        else:
            pairs = [(0, BOUNDARY), (1, BOUNDARY)]
    else:
        matched = blossom_mwpm(syndrome_graph(pair, to_boundary))
        pairs = _pairs_from_twins(k, matched)
    return _expand(graph, dets, trees, pairs)


def exact_oracle_decode(graph: DecodingGraph, detectors: Iterable[int], limit: int = 12) -> Matching:
    """Exhaustive minimum over all detector pairings (boundary allowed), by subset DP."""
    dets = _check_detectors(graph, detectors)
    k = len(dets)
    if k > limit:
        raise MatchingSizeError(f"exact oracle supports at most {limit} detectors, got {k}")
    if k == 0:
        return Matching.empty()
    trees, pair, to_boundary = _distance_tables(graph, dets)

    full = (1 << k) - 1
    best = [math.inf] * (1 << k)
    choice: list[Optional[tuple[int, int]]] = [None] * (1 << k)
    best[0] = 0.0
    for mask in range(1, full + 1):
        # lowest set detector is paired first, so each pairing is enumerated once
        i = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << i)
        cand = best[rest] + to_boundary[i]
        pick = (i, BOUNDARY)
        bits = rest
        while bits:
            j = (bits & -bits).bit_length() - 1
            bits &= bits - 1
            value = best[rest & ~(1 << j)] + pair[i, j]
            if value < cand:
                cand, pick = value, (i, j)
        best[mask] = cand
        choice[mask] = pick

    pairs = []
    mask = full
    while mask:
        i, j = choice[mask]
        pairs.append((i, j))
        mask &= ~(1 << i)
        if j != BOUNDARY:
            mask &= ~(1 << j)
    return _expand(graph, dets, trees, pairs)


def pairing_weight(graph: DecodingGraph, matching: Matching) -> float:
    """Sum of shortest-path distances over the pairs a matching serves."""
    total = []
    for a, b in matching.pairs:
        tree = shortest_paths(graph, a)
        total.append(float(tree.distances[graph.boundary_node if b == BOUNDARY else b]))
    return math.fsum(total)


def predict_observables(graph: DecodingGraph, matching: Matching) -> int:
    mask = 0
    for eid in matching.edges:
        mask ^= graph.topology.observables[eid]
    return mask


def boundary_parity_ok(graph: DecodingGraph, matching: Matching, detectors: Iterable[int]) -> bool:
    """True when the XOR of matched-edge endpoints equals the flipped detector set."""
    parity: set[int] = set()
    for eid in matching.edges:
        a, b = graph.topology.keys[eid]
        parity ^= {a}
        if b != BOUNDARY:
            parity ^= {b}
    return parity == set(detectors)
