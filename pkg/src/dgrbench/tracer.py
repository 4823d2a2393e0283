"""Occurrence and correlation tracers over decoded trials."""

from __future__ import annotations

import itertools
import logging
from collections import Counter, deque
from pathlib import Path
from typing import Deque, Iterable, Optional, Union

import numpy as np

from dgrbench.dem import DecodingGraph, EdgeProbs, PairProbs, weights_from_probs
from dgrbench.errors import GraphMismatchError, InsufficientDataError
from dgrbench.matcher import Matching
from dgrbench.sample_loader import write_csv

logger = logging.getLogger(__name__)


class TraceStore:
    """Per-edge and per-edge-pair match counters.

    Pair counting is restricted to ``candidate_pairs`` unless ``full_pairs``
    is set. With ``window`` the store only reflects the most recent
    ``window`` trials.
    """

    def __init__(
        self,
        graph: DecodingGraph,
        *,
        window: Optional[int] = None,
        full_pairs: bool = False,
        max_hops: int = 2,
    ) -> None:
        self.topology = graph.topology
        self.num_edges = graph.num_edges
        self.trials = 0
        self.edge_counts = np.zeros(self.num_edges, dtype=np.int64)
        self.pair_counts: Counter[tuple[int, int]] = Counter()
        self.full_pairs = full_pairs
        self.candidates = None if full_pairs else graph.candidate_pairs(max_hops)
        if window is not None and window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self._recent: Optional[Deque[frozenset[int]]] = deque() if window else None

    def _pairs_of(self, edges: Iterable[int]) -> Iterable[tuple[int, int]]:
        for pair in itertools.combinations(sorted(edges), 2):
            if self.candidates is None or pair in self.candidates:
                yield pair

    def _apply(self, edges: frozenset[int], sign: int) -> None:
        if edges:
            self.edge_counts[list(edges)] += sign
        for pair in self._pairs_of(edges):
            self.pair_counts[pair] += sign
            if self.pair_counts[pair] == 0:
                del self.pair_counts[pair]
        self.trials += sign

    def record(self, matching: Matching) -> "TraceStore":
        edges = frozenset(matching.edges)
        self._apply(edges, +1)
        if self._recent is not None:
            self._recent.append(edges)
            if len(self._recent) > self.window:
                self._apply(self._recent.popleft(), -1)
        return self

    def record_many(self, matchings: Iterable[Matching]) -> "TraceStore":
        for m in matchings:
            self.record(m)
        return self

    def reset(self) -> None:
        self.trials = 0
        self.edge_counts[:] = 0
        self.pair_counts.clear()

    def refresh(self) -> "TraceStore":
        """Rebuild the counters from the look-back ring."""
        if self._recent is None:
            return self
        recent = list(self._recent)
        self.reset()
        for edges in recent:
            self._apply(edges, +1)
        return self

    # estimates --------------------------------------------------------------

    def _require_trials(self) -> None:
        if self.trials < 1:
            raise InsufficientDataError("the tracer has not recorded any trials")

    def estimate_edge_probs(self) -> EdgeProbs:
        self._require_trials()
        probs = self.edge_counts / self.trials
        # never-seen edges count as half an occurrence
        return np.where(self.edge_counts == 0, 0.5 / self.trials, probs)

    def estimate_pair_probs(self) -> PairProbs:
        self._require_trials()
        return {pair: count / self.trials for pair, count in sorted(self.pair_counts.items()) if count > 0}

    @property
    def pair_floor(self) -> float:
        """Smallest edge probability whose ratios the heuristic re-weighter trusts."""
        self._require_trials()
        return 10.0 * (0.5 / self.trials)

    # merging ----------------------------------------------------------------

    def merge(self, other: "TraceStore") -> "TraceStore":
        if other.topology is not self.topology and other.topology.keys != self.topology.keys:
            raise GraphMismatchError("cannot merge tracers built on different decoding graphs")
        if self.full_pairs != other.full_pairs or self.candidates != other.candidates:
            raise GraphMismatchError("cannot merge tracers that count different edge pairs")
        merged = TraceStore.__new__(TraceStore)
        merged.topology = self.topology
        merged.num_edges = self.num_edges
        merged.trials = self.trials + other.trials
        merged.edge_counts = self.edge_counts + other.edge_counts
        merged.pair_counts = self.pair_counts + other.pair_counts
        merged.full_pairs = self.full_pairs
        merged.candidates = self.candidates
        merged.window = None
        merged._recent = None
        return merged

    def same_counts(self, other: "TraceStore") -> bool:
        return (
            self.trials == other.trials
            and np.array_equal(self.edge_counts, other.edge_counts)
            and dict(self.pair_counts) == dict(other.pair_counts)
        )

    # reporting --------------------------------------------------------------

    def memory_report(self) -> dict[str, int]:
        pairs = len(self.pair_counts)
        return {
            "edges": self.num_edges,
            "tracked_pairs": pairs,
            "bytes_int64": 8 * self.num_edges + pairs * (8 + 2 * 8),
            # sparse COO at INT16 counts with INT16 coordinates
            "bytes_int16_sparse": 2 * self.num_edges + pairs * 3 * 2,
        }


def record(store: TraceStore, matching: Matching) -> TraceStore:
    return store.record(matching)


def estimate_edge_probs(store: TraceStore) -> EdgeProbs:
    return store.estimate_edge_probs()


def estimate_pair_probs(store: TraceStore) -> PairProbs:
    return store.estimate_pair_probs()


def merge(a: TraceStore, b: TraceStore) -> TraceStore:
    return a.merge(b)


def weight_mse(store: TraceStore, true_graph: DecodingGraph, min_p: float = 0.0) -> float:
    """Mean squared error of estimated weights over edges whose true probability is at least ``min_p``."""
    estimated = weights_from_probs(np.clip(store.estimate_edge_probs(), 1e-300, 0.5))
    mask = true_graph.probabilities >= min_p
    if not np.any(mask):
        raise InsufficientDataError(f"no edge has true probability >= {min_p}")
    diff = estimated[mask] - true_graph.weights[mask]
    return float(np.mean(diff * diff))


def export_counts(store: TraceStore, edges_path: Union[str, Path], pairs_path: Union[str, Path]) -> None:
    write_csv(edges_path, ["edge_id", "count"], ((i, int(c)) for i, c in enumerate(store.edge_counts)))
    write_csv(
        pairs_path,
        ["edge_i", "edge_j", "count"],
        ((i, j, int(c)) for (i, j), c in sorted(store.pair_counts.items())),
    )


def export_heatmap(store: TraceStore, graph: DecodingGraph, path: Union[str, Path]) -> None:
    """Estimated vs ground-truth co-occurrence probabilities over the union of both supports."""
    estimated = store.estimate_pair_probs()
    truth = graph.corr_truth
    keys = sorted(set(estimated) | set(truth))
    write_csv(
        path,
        ["edge_i", "edge_j", "estimated", "truth"],
        ((i, j, float(estimated.get((i, j), 0.0)), float(truth.get((i, j), 0.0))) for i, j in keys),
    )
