"""NN correlation re-weighter trained through MWPM with SPSA gradients.

Per-edge features are a one-hot edge type followed by ``(matched-in-M0,
co-occurrence probability)`` for every structurally correlated partner in
canonical spatial order, zero-padded to the largest partner count. A small
tanh MLP maps each feature row to a weight delta in ``[-3, 3]``.

Training pushes the perturbed weights through the decoder: the loss gradient
with respect to the edge weights comes from a symmetric zeroth-order
estimator, and the chain rule through the MLP gives parameter gradients for
Adam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from dgrbench.config import TrainConfig
from dgrbench.dem import DecodingGraph, DetectorErrorModel, PairProbs
from dgrbench.errors import InsufficientDataError, SchemaMismatchError
from dgrbench.matcher import Matching, decode
from dgrbench.sampler import sample_shot

logger = logging.getLogger(__name__)

OUTPUT_SCALE = 3.0
PARAMS_VERSION = 1
LOSS_WINDOW = 50


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSchema:
    num_types: int
    k_max: int

    @property
    def dim(self) -> int:
        return self.num_types + 2 * self.k_max

    @classmethod
    def from_graph(cls, graph: DecodingGraph) -> "FeatureSchema":
        return cls(graph.num_types, graph.topology.max_related)


class FeatureExtractor:
    """Feature rows for every edge of one graph under fixed co-occurrence estimates."""

    def __init__(self, graph: DecodingGraph, pair_probs: PairProbs) -> None:
        self.graph = graph
        self.schema = FeatureSchema.from_graph(graph)
        n_edges, k_max = graph.num_edges, self.schema.k_max
        self.partner_index = np.full((n_edges, k_max), -1, dtype=np.int64)
        self.partner_prob = np.zeros((n_edges, k_max))
        for eid in range(n_edges):
            for slot, other in enumerate(graph.related_edges(eid)):
                self.partner_index[eid, slot] = other
                key = (eid, other) if eid < other else (other, eid)
                self.partner_prob[eid, slot] = pair_probs.get(key, 0.0)
        self.valid = self.partner_index >= 0
        self.base = np.zeros((n_edges, self.schema.dim))
        self.base[np.arange(n_edges), np.asarray(graph.topology.type_ids)] = 1.0
        self.base[:, self.schema.num_types + 1 :: 2] = self.partner_prob

    def matrix(self, m0_edges: Iterable[int]) -> np.ndarray:
        in_m0 = np.zeros(self.graph.num_edges + 1, dtype=bool)
        edges = list(m0_edges)
        if edges:
            in_m0[edges] = True
        # index -1 lands on the padding slot, which stays False
        flags = in_m0[self.partner_index] & self.valid
        x = self.base.copy()
        x[:, self.schema.num_types :: 2] = flags
        return x

    def features(self, eid: int, m0_edges: Iterable[int]) -> np.ndarray:
        return self.matrix(m0_edges)[eid]


def extract_features(graph: DecodingGraph, edge: int, m0: Matching, pair_probs: PairProbs) -> np.ndarray:
    return FeatureExtractor(graph, pair_probs).features(edge, m0.edges)


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    schema: FeatureSchema
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    loss_curve: list[float] = field(default_factory=list)
    optimizer_state: dict = field(default_factory=dict)

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    @property
    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in self.NAMES]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def initialize(cls, schema: FeatureSchema, hidden: int, rng: np.random.Generator) -> "MlpParams":
        def layer(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

        W1, b1 = layer(schema.dim, hidden)
        W2, b2 = layer(hidden, hidden)
        W3, b3 = layer(hidden, 1)
        return cls(schema, W1, b1, W2, b2, W3, b3)

    @classmethod
    def zeros(cls, schema: FeatureSchema, hidden: int = 64) -> "MlpParams":
        return cls(
            schema,
            np.zeros((schema.dim, hidden)),
            np.zeros(hidden),
            np.zeros((hidden, hidden)),
            np.zeros(hidden),
            np.zeros((hidden, 1)),
            np.zeros(1),
        )

    def copy(self) -> "MlpParams":
        return MlpParams(self.schema, *(a.copy() for a in self.arrays), list(self.loss_curve))


@dataclass
class _ForwardCache:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    out: np.ndarray


def _forward(params: MlpParams, x: np.ndarray) -> _ForwardCache:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.W1.shape[0]:
        raise SchemaMismatchError(f"feature dimension {x.shape[1]} does not match model input {params.W1.shape[0]}")
    h1 = np.tanh(x @ params.W1 + params.b1)
    h2 = np.tanh(h1 @ params.W2 + params.b2)
    out = OUTPUT_SCALE * np.tanh(h2 @ params.W3 + params.b3)[:, 0]
    return _ForwardCache(x, h1, h2, out)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Weight deltas for one feature row (returns shape ``(1,)``) or a batch of rows."""
    return _forward(params, x).out


def mlp_backward(params: MlpParams, cache: _ForwardCache, upstream: np.ndarray) -> list[np.ndarray]:
    """Gradients of ``sum(upstream * out)`` with respect to every parameter array."""
    tanh_z = cache.out / OUTPUT_SCALE
    dz = np.asarray(upstream, dtype=np.float64).reshape(-1) * OUTPUT_SCALE * (1.0 - tanh_z**2)
    dz = dz[:, None]
    dW3 = cache.h2.T @ dz
    db3 = dz.sum(axis=0)
    da2 = (dz @ params.W3.T) * (1.0 - cache.h2**2)
    dW2 = cache.h1.T @ da2
    db2 = da2.sum(axis=0)
    da1 = (da2 @ params.W2.T) * (1.0 - cache.h1**2)
    dW1 = cache.x.T @ da1
    db1 = da1.sum(axis=0)
    return [dW1, db1, dW2, db2, dW3, db3]


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(
        self,
        params: MlpParams,
        lr: float = 1e-3,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in params.arrays]
        self.v = [np.zeros_like(a) for a in params.arrays]

    def step(self, params: MlpParams, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        for k, (theta, g) in enumerate(zip(params.arrays, grads)):
            g = g + self.weight_decay * theta
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


# ---------------------------------------------------------------------------
# Loss and zeroth-order gradient
# ---------------------------------------------------------------------------


def matching_loss(predicted: Union[Matching, Iterable[int]], truth: Iterable[int]) -> float:
    """Symmetric-difference size normalised by ``|truth| + 1``."""
    pred = set(predicted.edges if isinstance(predicted, Matching) else predicted)
    true = set(truth)
    return len(pred ^ true) / (len(true) + 1)


def spsa_gradient(
    loss_fn: Callable[[np.ndarray], float],
    w: np.ndarray,
    samples: int,
    sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    if samples < 1 or sigma <= 0:
        raise ValueError("SPSA needs samples >= 1 and sigma > 0")
    w = np.asarray(w, dtype=np.float64)
    grad = np.zeros_like(w)
    for _ in range(samples):
        delta = rng.normal(0.0, sigma, size=w.shape)
        grad += (loss_fn(w + delta) - loss_fn(w - delta)) * delta
    return grad / (2.0 * samples * sigma * sigma)


# ---------------------------------------------------------------------------
# Dataset and training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSample:
    detectors: tuple[int, ...]
    m0_edges: frozenset[int]
    truth_edges: frozenset[int]


@dataclass
class TrainingSet:
    samples: list[TrainingSample]
    pair_probs: PairProbs

    def __len__(self) -> int:
        return len(self.samples)


def build_dataset(
    model: DetectorErrorModel,
    graph: DecodingGraph,
    pair_probs: PairProbs,
    size: int,
    seed: int,
    min_detectors: int = 1,
    max_draws: Optional[int] = None,
) -> TrainingSet:
    """Decode shots of ``model`` on ``graph`` and keep ``(syndrome, M0, truth)`` triples."""
    samples: list[TrainingSample] = []
    limit = max_draws if max_draws is not None else 1000 * size
    index = 0
    while len(samples) < size and index < limit:
        shot = sample_shot(model, index, seed)
        index += 1
        if len(shot.detectors) < min_detectors:
            continue
        m0 = decode(graph, shot.detectors)
        samples.append(TrainingSample(shot.detectors, m0.edges, graph.truth_edges(shot.fired)))
    if len(samples) < size:
        logger.warning("collected %d of %d training samples after %d shots", len(samples), size, index)
    return TrainingSet(samples, pair_probs)


def _sample_loss(graph: DecodingGraph, sample: TrainingSample) -> Callable[[np.ndarray], float]:
    def loss_fn(w: np.ndarray) -> float:
        return matching_loss(decode(graph.with_weights(w), sample.detectors), sample.truth_edges)

    return loss_fn


def moving_average(values: Sequence[float], window: int = LOSS_WINDOW) -> list[float]:
    out = []
    acc = 0.0
    for k, v in enumerate(values):
        acc += v
        if k >= window:
            acc -= values[k - window]
        out.append(acc / min(k + 1, window))
    return out


def train(dataset: TrainingSet, graph: DecodingGraph, config: TrainConfig, seed: int) -> MlpParams:
    if len(dataset) == 0:
        raise InsufficientDataError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    extractor = FeatureExtractor(graph, dataset.pair_probs)
    params = MlpParams.initialize(extractor.schema, config.hidden, rng)
    adam = Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    n = len(dataset)
    batches = math.ceil(n / config.batch_size)

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b in range(batches):
            batch = [dataset.samples[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            grads = [np.zeros_like(a) for a in params.arrays]
            losses = []
            for sample in batch:
                cache = _forward(params, extractor.matrix(sample.m0_edges))
                w_tilde = graph.weights + cache.out
                loss_fn = _sample_loss(graph, sample)
                losses.append(loss_fn(w_tilde))
                grad_w = spsa_gradient(loss_fn, w_tilde, config.spsa_samples, config.spsa_sigma, rng)
                for acc, g in zip(grads, mlp_backward(params, cache, grad_w)):
                    acc += g
            adam.step(params, [g / len(batch) for g in grads])
            params.loss_curve.append(float(np.mean(losses)))
        logger.info(
            "epoch %d/%d loss %.4f", epoch + 1, config.epochs, moving_average(params.loss_curve)[-1]
        )

    params.optimizer_state = adam.state_dict()
    return params


def nn_corr_reweight(
    graph: DecodingGraph,
    m0: Matching,
    pair_probs: PairProbs,
    params: MlpParams,
    extractor: Optional[FeatureExtractor] = None,
) -> DecodingGraph:
    extractor = extractor or FeatureExtractor(graph, pair_probs)
    if extractor.schema != params.schema:
        raise SchemaMismatchError(f"model trained for {params.schema}, graph needs {extractor.schema}")
    delta = mlp_forward(params, extractor.matrix(m0.edges))
    return graph.with_weights(graph.weights + delta)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_params(params: MlpParams, path: Union[str, Path]) -> None:
    schema = np.array(
        [PARAMS_VERSION, params.schema.num_types, params.schema.k_max, params.schema.dim, params.hidden],
        dtype=np.int64,
    )
    with open(path, "wb") as handle:
        np.savez(
            handle,
            schema=schema,
            loss_curve=np.asarray(params.loss_curve, dtype=np.float64),
            **{name: getattr(params, name) for name in MlpParams.NAMES},
        )


def load_params(path: Union[str, Path]) -> MlpParams:
    with np.load(path) as data:
        version, num_types, k_max, dim, hidden = (int(v) for v in data["schema"])
        if version != PARAMS_VERSION:
            raise SchemaMismatchError(f"unsupported params version {version}")
        schema = FeatureSchema(num_types, k_max)
        if schema.dim != dim or data["W1"].shape != (dim, hidden):
            raise SchemaMismatchError("params file header disagrees with its matrices")
        arrays = [np.array(data[name]) for name in MlpParams.NAMES]
        return MlpParams(schema, *arrays, loss_curve=[float(x) for x in data["loss_curve"]])
