"""Detector error models, decoding graphs and the probability/weight math.

The text format is line oriented::

    dem v1 detectors 4 observables 1
    error(0.001) D0 D1
    channel {
        error(0.003) D0 D1
        error(0.003) D0 D1 ^ D2 D3 L0
    }
    coord D0 0.5 0.5 0
    etype D0,D1 3
    qrow 1 0

``channel { ... }`` groups mutually exclusive mechanisms, ``^`` separates the
graph-like components of one mechanism, ``etype`` pins an edge type id and
``qrow`` records the data-qubit row of a channel.
"""

from __future__ import annotations

import itertools
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from dgrbench.errors import (
    DecompositionRequiredError,
    DemRangeError,
    DemSyntaxError,
)

logger = logging.getLogger(__name__)

BOUNDARY = -1
FORMAT_VERSION = "v1"

EdgeKey = tuple[int, int]
EdgeProbs = np.ndarray
PairProbs = dict[tuple[int, int], float]


def weight_from_prob(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    return -math.log(p / (1.0 - p))


def prob_from_weight(w: float) -> float:
    if w >= 0:
        z = math.exp(-w)
        return z / (1.0 + z)
    return 1.0 / (1.0 + math.exp(w))


def weights_from_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if np.any((probs <= 0.0) | (probs >= 1.0)):
        raise ValueError("every probability must lie in (0, 1)")
    return -np.log(probs / (1.0 - probs))


def xor_probability(p: float, q: float) -> float:
    """Probability that exactly one of two independent events happens."""
    return p * (1.0 - q) + q * (1.0 - p)


def edge_key(detectors: Sequence[int]) -> EdgeKey:
    if len(detectors) == 1:
        return (detectors[0], BOUNDARY)
    a, b = detectors
    return (a, b) if a < b else (b, a)


# ---------------------------------------------------------------------------
# Model types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    detectors: tuple[int, ...]
    observables: int = 0


@dataclass(frozen=True)
class Mechanism:
    probability: float
    components: tuple[Component, ...]

    def with_probability(self, p: float) -> "Mechanism":
        return Mechanism(p, self.components)


@dataclass(frozen=True)
class ExclusiveChannel:
    mechanisms: tuple[Mechanism, ...]

    @property
    def total_probability(self) -> float:
        return sum(m.probability for m in self.mechanisms)


@dataclass(frozen=True)
class ModelMetadata:
    coords: Mapping[int, tuple[float, ...]] = field(default_factory=dict)
    edge_types: Mapping[EdgeKey, int] = field(default_factory=dict)
    channel_rows: Mapping[int, int] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not (self.coords or self.edge_types or self.channel_rows)


@dataclass(frozen=True)
class DetectorErrorModel:
    num_detectors: int
    num_observables: int
    channels: tuple[ExclusiveChannel, ...] = ()
    metadata: ModelMetadata = field(default_factory=ModelMetadata)

    def iter_mechanisms(self) -> Iterator[tuple[int, int, Mechanism]]:
        """Yield ``(channel_index, global_mechanism_index, mechanism)``."""
        gid = 0
        for c, channel in enumerate(self.channels):
            for mech in channel.mechanisms:
                yield c, gid, mech
                gid += 1

    @property
    def num_mechanisms(self) -> int:
        return sum(len(ch.mechanisms) for ch in self.channels)

    def mechanism_probabilities(self) -> np.ndarray:
        return np.array([m.probability for _, _, m in self.iter_mechanisms()], dtype=np.float64)

    def with_mechanism_probabilities(self, probs: Sequence[float]) -> "DetectorErrorModel":
        """Same topology and metadata, new per-mechanism probabilities."""
        if len(probs) != self.num_mechanisms:
            raise ValueError(f"expected {self.num_mechanisms} probabilities, got {len(probs)}")
        it = iter(probs)
        channels = tuple(
            ExclusiveChannel(tuple(m.with_probability(float(next(it))) for m in ch.mechanisms))
            for ch in self.channels
        )
        return DetectorErrorModel(self.num_detectors, self.num_observables, channels, self.metadata)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^dem\s+(\S+)\s+detectors\s+(\d+)\s+observables\s+(\d+)$")
_TOKEN_RE = re.compile(r"error\(\s*([^)\s]*)\s*\)|D(\d+)|L(\d+)|\^|channel|\{|\}|\S+")


def _parse_float(text: str, line: int, col: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DemSyntaxError(f"invalid {what} {text!r}", line, col) from None


class _DemParser:
    def __init__(self) -> None:
        self.header: Optional[tuple[int, int]] = None
        self.channels: list[list[Mechanism]] = []
        self.in_block: Optional[list[Mechanism]] = None
        self.block_line = 0
        self.pending: Optional[tuple[float, list[Component], list[int], int, int, int]] = None
        self.coords: dict[int, tuple[float, ...]] = {}
        self.edge_types: dict[EdgeKey, int] = {}
        self.channel_rows: dict[int, int] = {}
        self.qrow_lines: dict[int, int] = {}
        self.max_detector = -1
        self.max_observable = -1
        self.detector_refs: list[tuple[int, int, int]] = []
        self.observable_refs: list[tuple[int, int, int]] = []

    # mechanisms -----------------------------------------------------------

    def _start(self, p: float, line: int, col: int) -> None:
        self._finish()
        self.pending = (p, [], [], 0, line, col)

    def _close_component(self) -> None:
        assert self.pending is not None
        p, comps, dets, obs, line, col = self.pending
        if not dets:
            raise DemSyntaxError("component must flip at least one detector", line, col)
        if len(set(dets)) != len(dets):
            raise DemSyntaxError("component lists a detector twice", line, col)
        comps.append(Component(tuple(dets), obs))
        self.pending = (p, comps, [], 0, line, col)

    def _finish(self) -> None:
        if self.pending is None:
            return
        self._close_component()
        p, comps, _, _, line, col = self.pending
        seen: set[int] = set()
        for comp in comps:
            if seen.intersection(comp.detectors):
                raise DemSyntaxError("components of one mechanism must be disjoint", line, col)
            seen.update(comp.detectors)
        mech = Mechanism(p, tuple(comps))
        self.pending = None
        if self.in_block is not None:
            self.in_block.append(mech)
        else:
            self.channels.append([mech])

    # lines ----------------------------------------------------------------

    def feed_line(self, raw: str, lineno: int) -> None:
        text = raw.split("#", 1)[0].strip()
        if not text:
            return
        head = text.split(None, 1)[0]
        if head == "dem":
            self._header(text, lineno)
            return
        if head in ("coord", "etype", "qrow"):
            self._finish()
            getattr(self, f"_meta_{head}")(text.split()[1:], lineno)
            return
        for match in _TOKEN_RE.finditer(text):
            self._token(match, lineno, match.start() + 1 + (len(raw) - len(raw.lstrip())))
        # mechanisms end at the end of their line
        self._finish()

    def _header(self, text: str, lineno: int) -> None:
        if self.header is not None or self.channels or self.pending:
            raise DemSyntaxError("header must come first and appear once", lineno, 1)
        match = _HEADER_RE.match(text)
        if not match:
            raise DemSyntaxError("malformed header, expected 'dem v1 detectors <n> observables <m>'", lineno, 1)
        if match.group(1) != FORMAT_VERSION:
            raise DemSyntaxError(f"unsupported format version {match.group(1)!r}", lineno, 5)
        self.header = (int(match.group(2)), int(match.group(3)))

    def _token(self, match: re.Match, line: int, col: int) -> None:
        tok = match.group(0)
        if match.group(1) is not None or tok.startswith("error("):
            p = _parse_float(match.group(1) or "", line, col, "probability")
            if not 0.0 < p < 1.0:
                raise DemRangeError(f"probability {p!r} outside (0, 1)", line, col)
            self._start(p, line, col)
        elif match.group(2) is not None or match.group(3) is not None:
            if self.pending is None:
                raise DemSyntaxError(f"target {tok!r} outside an error instruction", line, col)
            p, comps, dets, obs, l0, c0 = self.pending
            if match.group(2) is not None:
                idx = int(match.group(2))
                dets.append(idx)
                self.max_detector = max(self.max_detector, idx)
                self.detector_refs.append((idx, line, col))
            else:
                idx = int(match.group(3))
                obs ^= 1 << idx
                self.max_observable = max(self.max_observable, idx)
                self.observable_refs.append((idx, line, col))
            self.pending = (p, comps, dets, obs, l0, c0)
        elif tok == "^":
            if self.pending is None:
                raise DemSyntaxError("'^' outside an error instruction", line, col)
            self._close_component()
        elif tok == "channel":
            self._finish()
            if self.in_block is not None:
                raise DemSyntaxError("channel blocks cannot nest", line, col)
            self.in_block = []
            self.block_line = line
        elif tok == "{":
            if self.in_block is None or self.in_block:
                raise DemSyntaxError("'{' must follow 'channel'", line, col)
        elif tok == "}":
            self._finish()
            if self.in_block is None:
                raise DemSyntaxError("unbalanced '}'", line, col)
            if not self.in_block:
                raise DemSyntaxError("empty channel block", line, col)
            total = sum(m.probability for m in self.in_block)
            if total > 1.0 + 1e-12:
                raise DemRangeError(f"channel probabilities sum to {total!r} > 1", line, col)
            self.channels.append(self.in_block)
            self.in_block = None
        else:
            raise DemSyntaxError(f"unexpected token {tok!r}", line, col)

    def _meta_coord(self, args: list[str], lineno: int) -> None:
        if len(args) < 2 or not args[0].startswith("D"):
            raise DemSyntaxError("expected 'coord D<i> <x> <y> <t>'", lineno, 1)
        det = self._det_index(args[0], lineno)
        self.coords[det] = tuple(_parse_float(a, lineno, 1, "coordinate") for a in args[1:])
        self.detector_refs.append((det, lineno, 1))

    def _meta_etype(self, args: list[str], lineno: int) -> None:
        if len(args) != 2:
            raise DemSyntaxError("expected 'etype D<i>,D<j>|B <type-id>'", lineno, 1)
        parts = args[0].split(",")
        if len(parts) != 2:
            raise DemSyntaxError(f"bad edge signature {args[0]!r}", lineno, 7)
        dets = [self._det_index(parts[0], lineno)]
        if parts[1] != "B":
            dets.append(self._det_index(parts[1], lineno))
        for d in dets:
            self.detector_refs.append((d, lineno, 7))
        try:
            self.edge_types[edge_key(dets)] = int(args[1])
        except ValueError:
            raise DemSyntaxError(f"bad type id {args[1]!r}", lineno, 1) from None

    def _meta_qrow(self, args: list[str], lineno: int) -> None:
        try:
            channel, row = (int(a) for a in args)
        except ValueError:
            raise DemSyntaxError("expected 'qrow <channel-index> <row>'", lineno, 1) from None
        self.channel_rows[channel] = row
        self.qrow_lines[channel] = lineno

    @staticmethod
    def _det_index(token: str, lineno: int) -> int:
        if not re.fullmatch(r"D\d+", token):
            raise DemSyntaxError(f"expected detector token, got {token!r}", lineno, 1)
        return int(token[1:])

    def result(self) -> DetectorErrorModel:
        self._finish()
        if self.in_block is not None:
            raise DemSyntaxError("unterminated channel block", self.block_line, 1)
        if self.header is not None:
            n_det, n_obs = self.header
            for idx, line, col in self.detector_refs:
                if idx >= n_det:
                    raise DemRangeError(f"detector D{idx} exceeds declared count {n_det}", line, col)
            for idx, line, col in self.observable_refs:
                if idx >= n_obs:
                    raise DemRangeError(f"observable L{idx} exceeds declared count {n_obs}", line, col)
        else:
            n_det = max([self.max_detector] + list(self.coords)) + 1
            n_obs = self.max_observable + 1
        for channel in self.channel_rows:
            if channel >= len(self.channels):
                raise DemRangeError(f"qrow refers to missing channel {channel}", self.qrow_lines[channel], 6)
        return DetectorErrorModel(
            num_detectors=n_det,
            num_observables=n_obs,
            channels=tuple(ExclusiveChannel(tuple(ch)) for ch in self.channels),
            metadata=ModelMetadata(self.coords, self.edge_types, self.channel_rows),
        )


def parse_dem(text: str) -> DetectorErrorModel:
    parser = _DemParser()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parser.feed_line(raw, lineno)
    return parser.result()


def _format_mechanism(mech: Mechanism) -> str:
    parts = []
    for comp in mech.components:
        targets = [f"D{d}" for d in comp.detectors]
        obs, k = comp.observables, 0
        while obs:
            if obs & 1:
                targets.append(f"L{k}")
            obs >>= 1
            k += 1
        parts.append(" ".join(targets))
    # repr() gives the shortest decimal that round-trips the binary value
    return f"error({mech.probability!r}) " + " ^ ".join(parts)


def serialize_dem(model: DetectorErrorModel) -> str:
    lines = [f"dem {FORMAT_VERSION} detectors {model.num_detectors} observables {model.num_observables}"]
    for channel in model.channels:
        if len(channel.mechanisms) == 1:
            lines.append(_format_mechanism(channel.mechanisms[0]))
        else:
            lines.append("channel {")
            lines.extend("    " + _format_mechanism(m) for m in channel.mechanisms)
            lines.append("}")
    meta = model.metadata
    for det in sorted(meta.coords):
        lines.append(f"coord D{det} " + " ".join(repr(float(x)) for x in meta.coords[det]))
    for (a, b), type_id in sorted(meta.edge_types.items()):
        sig = f"D{a},B" if b == BOUNDARY else f"D{a},D{b}"
        lines.append(f"etype {sig} {type_id}")
    for channel, row in sorted(meta.channel_rows.items()):
        lines.append(f"qrow {channel} {row}")
    return "\n".join(lines) + "\n"


def load_dem(path: Union[str, Path]) -> DetectorErrorModel:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_dem(handle.read())


def save_dem(model: DetectorErrorModel, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(serialize_dem(model))


# ---------------------------------------------------------------------------
# Decoding graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    id: int
    u: int
    v: int
    probability: float
    weight: float
    type_id: int
    observables: int

    @property
    def is_boundary(self) -> bool:
        return self.v == BOUNDARY


@dataclass(frozen=True, eq=False)
class GraphTopology:
    """Weight-independent part of a decoding graph, shared by re-weighted copies."""

    num_detectors: int
    num_observables: int
    keys: tuple[EdgeKey, ...]
    observables: tuple[int, ...]
    type_ids: tuple[int, ...]
    corr_pairs: tuple[tuple[int, int], ...]
    mechanism_edges: tuple[tuple[int, ...], ...]
    anchors: Optional[tuple[tuple[float, ...], ...]] = None

    @property
    def boundary_node(self) -> int:
        return self.num_detectors

    @property
    def num_types(self) -> int:
        return max(self.type_ids, default=-1) + 1

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node (boundary node last) the ``(neighbour, edge_id)`` list in edge-id order."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_detectors + 1)]
        for eid, (a, b) in enumerate(self.keys):
            node_b = self.boundary_node if b == BOUNDARY else b
            adj[a].append((node_b, eid))
            adj[node_b].append((a, eid))
        return tuple(tuple(row) for row in adj)

    @cached_property
    def partners(self) -> tuple[tuple[int, ...], ...]:
        """Structurally correlated partners of every edge, in canonical spatial order."""
        raw: list[set[int]] = [set() for _ in self.keys]
        for i, j in self.corr_pairs:
            raw[i].add(j)
            raw[j].add(i)
        ordered = []
        for eid, group in enumerate(raw):
            if self.anchors is None:
                ordered.append(tuple(sorted(group)))
                continue
            here = self.anchors[eid]
            ordered.append(
                tuple(
                    sorted(
                        group,
                        key=lambda j: (
                            tuple(round(a - b, 6) for a, b in zip(self.anchors[j], here)),
                            self.type_ids[j],
                            j,
                        ),
                    )
                )
            )
        return tuple(ordered)

    @cached_property
    def max_related(self) -> int:
        return max((len(p) for p in self.partners), default=0)

    def candidate_pairs(self, max_hops: int = 2) -> frozenset[tuple[int, int]]:
        """Edge pairs within ``max_hops`` of each other plus all structurally correlated pairs.

        Two edges are one hop apart when they share a detector; the boundary
        node does not count as shared.
        """
        incident: list[list[int]] = [[] for _ in range(self.num_detectors)]
        for eid, (a, b) in enumerate(self.keys):
            incident[a].append(eid)
            if b != BOUNDARY:
                incident[b].append(eid)

        def touching(eid: int) -> set[int]:
            a, b = self.keys[eid]
            out = set(incident[a])
            if b != BOUNDARY:
                out.update(incident[b])
            return out

        pairs: set[tuple[int, int]] = set(self.corr_pairs)
        for eid in range(len(self.keys)):
            frontier = {eid}
            reached = {eid}
            for _ in range(max_hops):
                nxt: set[int] = set()
                for f in frontier:
                    nxt |= touching(f)
                frontier = nxt - reached
                reached |= nxt
            for other in reached:
                if other > eid:
                    pairs.add((eid, other))
        return frozenset(pairs)

    def all_pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset(itertools.combinations(range(len(self.keys)), 2))


@dataclass(frozen=True, eq=False)
class DecodingGraph:
    topology: GraphTopology
    probabilities: np.ndarray
    weights: np.ndarray
    corr_truth: Mapping[tuple[int, int], float] = field(default_factory=dict)
    _paths: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        for arr in (self.probabilities, self.weights):
            arr.setflags(write=False)

    # convenience views ------------------------------------------------------

    @property
    def num_detectors(self) -> int:
        return self.topology.num_detectors

    @property
    def num_observables(self) -> int:
        return self.topology.num_observables

    @property
    def num_edges(self) -> int:
        return len(self.topology.keys)

    @property
    def num_types(self) -> int:
        return self.topology.num_types

    @property
    def boundary_node(self) -> int:
        return self.topology.boundary_node

    def edge(self, eid: int) -> Edge:
        a, b = self.topology.keys[eid]
        return Edge(
            id=eid,
            u=a,
            v=b,
            probability=float(self.probabilities[eid]),
            weight=float(self.weights[eid]),
            type_id=self.topology.type_ids[eid],
            observables=self.topology.observables[eid],
        )

    @property
    def edges(self) -> list[Edge]:
        return [self.edge(i) for i in range(self.num_edges)]

    def edge_id(self, detectors: Sequence[int]) -> int:
        return self._key_index[edge_key(tuple(detectors))]

    @cached_property
    def _key_index(self) -> dict[EdgeKey, int]:
        return {k: i for i, k in enumerate(self.topology.keys)}

    def related_edges(self, eid: int) -> tuple[int, ...]:
        return self.topology.partners[eid]

    def candidate_pairs(self, max_hops: int = 2) -> frozenset[tuple[int, int]]:
        return self.topology.candidate_pairs(max_hops)

    def truth_edges(self, fired: Iterable[int]) -> frozenset[int]:
        """Edge set implied by a set of fired mechanisms, XOR-reduced."""
        out: set[int] = set()
        for gid in fired:
            out.symmetric_difference_update(self.topology.mechanism_edges[gid])
        return frozenset(out)

    # re-weighting -----------------------------------------------------------

    def with_weights(self, weights: np.ndarray) -> "DecodingGraph":
        w = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
        if w.shape != (self.num_edges,):
            raise ValueError(f"expected {self.num_edges} weights, got shape {w.shape}")
        probs = 1.0 / (1.0 + np.exp(w))
        return DecodingGraph(self.topology, probs, w, self.corr_truth)

    def with_probabilities(self, probs: np.ndarray) -> "DecodingGraph":
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (self.num_edges,):
            raise ValueError(f"expected {self.num_edges} probabilities, got shape {p.shape}")
        clamped = np.clip(p, np.finfo(np.float64).tiny, 0.5)
        return DecodingGraph(self.topology, p.copy(), weights_from_probs(clamped), self.corr_truth)


def _anchor(key: EdgeKey, coords: Mapping[int, tuple[float, ...]]) -> tuple[float, ...]:
    a, b = key
    if b == BOUNDARY:
        return tuple(coords[a])
    return tuple((x + y) / 2.0 for x, y in zip(coords[a], coords[b]))


def _derive_type_ids(
    keys: Sequence[EdgeKey],
    corr_pairs: Iterable[tuple[int, int]],
    coords: Mapping[int, tuple[float, ...]],
) -> tuple[list[int], Optional[tuple[tuple[float, ...], ...]]]:
    """Translation-invariant edge types from detector coordinates.

    The signature of an edge is its endpoint displacement together with the
    relative offsets of its correlated partners, so spatial translates share
    a type. Without coordinates, edges are typed by boundary-ness and partner
    count only.
    """
    partner_sets: list[set[int]] = [set() for _ in keys]
    for i, j in corr_pairs:
        partner_sets[i].add(j)
        partner_sets[j].add(i)

    have_coords = all(k[0] in coords and (k[1] == BOUNDARY or k[1] in coords) for k in keys)
    anchors = tuple(_anchor(k, coords) for k in keys) if have_coords and keys else None

    def displacement(key: EdgeKey) -> tuple:
        a, b = key
        if b == BOUNDARY:
            return ("B",)
        ca, cb = coords[a], coords[b]
        delta = tuple(round(y - x, 6) for x, y in zip(ca, cb))
        # orientation-free
        return min(delta, tuple(-x for x in delta))

    signatures = []
    for eid, key in enumerate(keys):
        if anchors is None:
            signatures.append((key[1] == BOUNDARY, len(partner_sets[eid])))
            continue
        here = anchors[eid]
        rel = sorted(
            (tuple(round(x - y, 6) for x, y in zip(anchors[j], here)), displacement(keys[j]))
            for j in partner_sets[eid]
        )
        signatures.append((displacement(key), tuple(rel)))

    table: dict = {}
    type_ids = [table.setdefault(sig, len(table)) for sig in signatures]
    return type_ids, anchors


def build_decoding_graph(model: DetectorErrorModel) -> DecodingGraph:
    key_index: dict[EdgeKey, int] = {}
    keys: list[EdgeKey] = []
    observables: list[int] = []
    edge_p: list[float] = []
    pair_p: dict[tuple[int, int], float] = {}
    mechanism_edges: list[tuple[int, ...]] = []

    for c, channel in enumerate(model.channels):
        chan_edge: dict[int, float] = defaultdict(float)
        chan_pair: dict[tuple[int, int], float] = defaultdict(float)
        for mech in channel.mechanisms:
            ids = []
            for comp in mech.components:
                if len(comp.detectors) > 2:
                    raise DecompositionRequiredError(
                        f"channel {c}: component {comp.detectors} flips more than two detectors; "
                        "decompose it with '^'"
                    )
                key = edge_key(comp.detectors)
                eid = key_index.get(key)
                if eid is None:
                    eid = key_index[key] = len(keys)
                    keys.append(key)
                    observables.append(comp.observables)
                    edge_p.append(0.0)
                elif observables[eid] != comp.observables:
                    logger.warning(
                        "parallel mechanisms on edge %s disagree on observables; keeping the first", key
                    )
                chan_edge[eid] += mech.probability
                ids.append(eid)
            mechanism_edges.append(tuple(ids))
            for a, b in itertools.combinations(sorted(set(ids)), 2):
                chan_pair[(a, b)] += mech.probability
        # exclusive arms add, independent channels XOR
        for eid, q in chan_edge.items():
            edge_p[eid] = xor_probability(edge_p[eid], q)
        for pair, q in chan_pair.items():
            pair_p[pair] = xor_probability(pair_p.get(pair, 0.0), q)

    probs = np.array(edge_p, dtype=np.float64)
    if np.any(probs > 0.5):
        logger.warning("%d edges have probability above 0.5; their weights are clamped to 0", int(np.sum(probs > 0.5)))
    weights = weights_from_probs(np.clip(probs, np.finfo(np.float64).tiny, 0.5)) if len(probs) else probs

    corr_pairs = tuple(sorted(pair_p))
    meta = model.metadata
    derived, anchors = _derive_type_ids(keys, corr_pairs, meta.coords)
    if meta.edge_types:
        offset = max(meta.edge_types.values()) + 1
        remap: dict[int, int] = {}
        type_ids = []
        for key, t in zip(keys, derived):
            if key in meta.edge_types:
                type_ids.append(meta.edge_types[key])
            else:
                type_ids.append(remap.setdefault(t, offset + len(remap)))
    else:
        type_ids = derived

    topology = GraphTopology(
        num_detectors=model.num_detectors,
        num_observables=model.num_observables,
        keys=tuple(keys),
        observables=tuple(observables),
        type_ids=tuple(type_ids),
        corr_pairs=corr_pairs,
        mechanism_edges=tuple(mechanism_edges),
        anchors=anchors,
    )
    return DecodingGraph(topology, probs, weights, pair_p)
