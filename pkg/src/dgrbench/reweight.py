"""Alignment and correlation re-weighting, and the two-pass decoder built on them."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from dgrbench.config import ReweightPolicy
from dgrbench.dem import DecodingGraph, DetectorErrorModel, EdgeProbs, PairProbs
from dgrbench.errors import ConfigError, InsufficientDataError
from dgrbench.matcher import Matching, decode
from dgrbench.nnrw import FeatureExtractor, MlpParams, nn_corr_reweight
from dgrbench.sampler import sample_batch

logger = logging.getLogger(__name__)


def alignment_reweight(graph: DecodingGraph, edge_probs: EdgeProbs) -> DecodingGraph:
    """Replace every edge weight by the weight of its traced probability."""
    p = np.asarray(edge_probs, dtype=np.float64)
    if p.shape != (graph.num_edges,):
        raise InsufficientDataError(f"expected {graph.num_edges} edge estimates, got shape {p.shape}")
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0):
        raise InsufficientDataError("edge estimates must be finite and positive")
    return graph.with_probabilities(np.minimum(p, 0.5))


@dataclass(frozen=True, eq=False)
class CorrelationTable:
    """Directed ``p(e_i, e_j) / p(e_i)`` ratios, with ``e_i`` the influencing edge."""

    source: np.ndarray
    target: np.ndarray
    ratio: np.ndarray

    @classmethod
    def build(cls, pair_probs: PairProbs, edge_probs: EdgeProbs, min_edge_prob: float = 0.0) -> "CorrelationTable":
        p = np.asarray(edge_probs, dtype=np.float64)
        if pair_probs:
            pairs = np.array(list(pair_probs.keys()), dtype=np.int64)
            joint = np.fromiter(pair_probs.values(), dtype=np.float64, count=len(pair_probs))
        else:
            pairs = np.zeros((0, 2), dtype=np.int64)
            joint = np.zeros(0)
        source = np.concatenate([pairs[:, 0], pairs[:, 1]])
        target = np.concatenate([pairs[:, 1], pairs[:, 0]])
        joint = np.concatenate([joint, joint])
        marginal = p[source]
        # ratios over rarely seen edges are noise
        keep = (marginal > 0.0) & (marginal >= min_edge_prob) & (joint > 0.0)
        return cls(source[keep], target[keep], joint[keep] / marginal[keep])

    def __len__(self) -> int:
        return len(self.ratio)

    def deltas(self, num_edges: int, matched: Iterable[int], scale: float = 1.0) -> np.ndarray:
        in_m0 = np.zeros(num_edges, dtype=bool)
        edges = list(matched)
        if edges:
            in_m0[edges] = True
        signed = np.where(in_m0[self.source], -self.ratio, self.ratio)
        out = np.zeros(num_edges)
        np.add.at(out, self.target, scale * signed)
        return out


def heuristic_corr_reweight(
    graph: DecodingGraph,
    m0: Matching,
    pair_probs: PairProbs,
    edge_probs: EdgeProbs,
    *,
    scale: float = 1.0,
    min_edge_prob: float = 0.0,
    table: Optional[CorrelationTable] = None,
) -> DecodingGraph:
    """Lower the weights of edges correlated with the first-pass matching and raise the rest.

    ``w_j`` moves by ``-p(e_i, e_j)/p(e_i)`` for every matched partner ``e_i``
    and by ``+p(e_i, e_j)/p(e_i)`` for every unmatched one. Results are floored
    at zero.
    """
    if table is None:
        table = CorrelationTable.build(pair_probs, edge_probs, min_edge_prob)
    return graph.with_weights(graph.weights + table.deltas(graph.num_edges, m0.edges, scale))


def difficulty_trigger(detectors: Iterable[int], threshold: int) -> bool:
    return len(set(detectors)) >= threshold


def two_pass_decode(
    graph: DecodingGraph,
    detectors: Iterable[int],
    policy: ReweightPolicy,
    pair_probs: PairProbs,
    edge_probs: EdgeProbs,
    nn: Optional[MlpParams] = None,
) -> Matching:
    return Reweighter(graph, policy, edge_probs, pair_probs, nn).decode(detectors)[0]


@dataclass(eq=False)
class Reweighter:
    """Second-pass decoder bound to one graph and one set of trace estimates.

    ``graph`` is the graph the first pass runs on, normally the aligned one.
    """

    graph: DecodingGraph
    policy: ReweightPolicy
    edge_probs: EdgeProbs
    pair_probs: PairProbs
    nn: Optional[MlpParams] = None
    triggered: int = 0
    decoded: int = 0
    _table: Optional[CorrelationTable] = field(default=None, init=False, repr=False)
    _extractor: Optional[FeatureExtractor] = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        corr = self.policy.correlation
        if corr.mode == "heuristic":
            floor = corr.pair_floor if corr.pair_floor is not None else 0.0
            self._table = CorrelationTable.build(self.pair_probs, self.edge_probs, floor)
            logger.debug("heuristic re-weighter tracks %d directed ratios", len(self._table))
        elif corr.mode == "nn":
            if self.nn is None:
                raise ConfigError("correlation mode 'nn' needs trained parameters")
            self._extractor = FeatureExtractor(self.graph, self.pair_probs)

    @property
    def threshold(self) -> int:
        trigger = self.policy.correlation.trigger
        return 0 if trigger is None else trigger

    @property
    def trigger_rate(self) -> float:
        return self.triggered / self.decoded if self.decoded else 0.0

    def decode(self, detectors: Iterable[int]) -> tuple[Matching, bool]:
        dets = tuple(detectors)
        self.decoded += 1
        m0 = decode(self.graph, dets)
        mode = self.policy.correlation.mode
        if mode == "off" or not dets or not difficulty_trigger(dets, self.threshold):
            return m0, False
        self.triggered += 1
        if mode == "heuristic":
            second = heuristic_corr_reweight(
                self.graph,
                m0,
                self.pair_probs,
                self.edge_probs,
                scale=self.policy.correlation.scale,
                table=self._table,
            )
        else:
            second = nn_corr_reweight(self.graph, m0, self.pair_probs, self.nn, self._extractor)
        return decode(second, dets), True


def syndrome_weight_tail(model: DetectorErrorModel, shots: int, seed: int) -> np.ndarray:
    """``tail[t]`` is the fraction of shots with at least ``t`` flipped detectors."""
    counts = np.fromiter((len(s.detectors) for s in sample_batch(model, shots, seed)), dtype=np.int64, count=shots)
    hist = np.bincount(counts, minlength=1)
    return hist[::-1].cumsum()[::-1] / shots


def calibrate_trigger(
    model: DetectorErrorModel,
    shots: int,
    seed: int,
    target_rate: float = 0.15,
    band: tuple[float, float] = (0.10, 0.20),
) -> tuple[int, float]:
    """Pick the detector-count threshold whose trigger rate is closest to ``target_rate``.

    Thresholds whose rate falls inside ``band`` are preferred; a warning is
    logged when none does.
    """
    tail = syndrome_weight_tail(model, shots, seed)
    candidates = list(range(1, len(tail)))
    if not candidates:
        logger.warning("no shot flipped any detector; trigger disabled")
        return len(tail), 0.0
    lo, hi = band
    in_band = [t for t in candidates if lo <= tail[t] <= hi]
    pool = in_band or candidates
    tau = min(pool, key=lambda t: (abs(tail[t] - target_rate), t))
    if not in_band:
        logger.warning("no threshold lands in [%.2f, %.2f]; using %d at rate %.3f", lo, hi, tau, tail[tau])
    logger.info("calibrated trigger %d with rate %.3f over %d shots", tau, tail[tau], shots)
    return tau, float(tail[tau])
