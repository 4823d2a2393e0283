"""Monte Carlo shot sampling with counter-based randomness.

Shot ``s`` under seed ``k`` draws its uniforms from a Philox stream keyed by
``k`` whose counter starts at ``s``; channel ``c`` always consumes the
``c``-th uniform. A shot is therefore a pure function of
``(seed, shot_index, channel_index)`` and batches can be split across workers
in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from dgrbench.dem import DetectorErrorModel
from dgrbench.errors import ConfigError

_KEY_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class Shot:
    index: int
    detectors: tuple[int, ...]
    observables: int
    fired: tuple[int, ...] = ()

    def detector_mask(self) -> int:
        mask = 0
        for d in self.detectors:
            mask |= 1 << d
        return mask


@dataclass(frozen=True, eq=False)
class _SamplingTables:
    cumulative: np.ndarray  # (channels, max_arms), padded with +inf
    arms: np.ndarray  # (channels,)
    offsets: np.ndarray  # global index of each channel's first mechanism
    mechanism_detectors: tuple[tuple[int, ...], ...]
    mechanism_observables: tuple[int, ...]


_TABLE_CACHE: dict[int, tuple[DetectorErrorModel, _SamplingTables]] = {}


def _tables(model: DetectorErrorModel) -> _SamplingTables:
    cached = _TABLE_CACHE.get(id(model))
    if cached is not None and cached[0] is model:
        return cached[1]
    tables = _build_tables(model)
    if len(_TABLE_CACHE) >= 32:
        _TABLE_CACHE.clear()
    _TABLE_CACHE[id(model)] = (model, tables)
    return tables


def _build_tables(model: DetectorErrorModel) -> _SamplingTables:
    n_channels = len(model.channels)
    max_arms = max((len(ch.mechanisms) for ch in model.channels), default=1)
    cumulative = np.full((n_channels, max_arms), np.inf)
    arms = np.zeros(n_channels, dtype=np.int64)
    offsets = np.zeros(n_channels, dtype=np.int64)
    dets: list[tuple[int, ...]] = []
    obs: list[int] = []
    gid = 0
    for c, channel in enumerate(model.channels):
        offsets[c] = gid
        arms[c] = len(channel.mechanisms)
        cumulative[c, : len(channel.mechanisms)] = np.cumsum([m.probability for m in channel.mechanisms])
        for mech in channel.mechanisms:
            flipped: set[int] = set()
            mask = 0
            for comp in mech.components:
                flipped.symmetric_difference_update(comp.detectors)
                mask ^= comp.observables
            dets.append(tuple(sorted(flipped)))
            obs.append(mask)
            gid += 1
    return _SamplingTables(cumulative, arms, offsets, tuple(dets), tuple(obs))


def _uniforms(seed: int, shot_index: int, n: int) -> np.ndarray:
    bitgen = np.random.Philox(key=seed & _KEY_MASK, counter=[0, shot_index & _KEY_MASK, 0, 0])
    return np.random.Generator(bitgen).random(n)


def sample_shot(model: DetectorErrorModel, shot_index: int, seed: int) -> Shot:
    tables = _tables(model)
    u = _uniforms(seed, shot_index, len(model.channels))
    # arm index = number of cumulative thresholds at or below u; == arms means nothing fired
    arm = (u[:, None] >= tables.cumulative).sum(axis=1)
    hit = np.nonzero(arm < tables.arms)[0]
    fired = tuple(int(tables.offsets[c] + arm[c]) for c in hit)

    parity: dict[int, int] = {}
    observables = 0
    for gid in fired:
        for d in tables.mechanism_detectors[gid]:
            parity[d] = parity.get(d, 0) ^ 1
        observables ^= tables.mechanism_observables[gid]
    detectors = tuple(sorted(d for d, bit in parity.items() if bit))
    return Shot(shot_index, detectors, observables, fired)


def sample_batch(model: DetectorErrorModel, shots: int, seed: int, start: int = 0) -> Iterator[Shot]:
    """Stream shots ``start .. start + shots - 1``."""
    if shots < 1:
        raise ConfigError(f"shot count must be >= 1, got {shots}")
    return (sample_shot(model, index, seed) for index in range(start, start + shots))


def empirical_firing_rates(model: DetectorErrorModel, shots: int, seed: int) -> np.ndarray:
    counts = np.zeros(model.num_mechanisms, dtype=np.int64)
    for shot in sample_batch(model, shots, seed):
        for gid in shot.fired:
            counts[gid] += 1
    return counts / shots
