"""Rotated surface code, phenomenological noise, memory-Z experiment.

Data qubits sit at ``(row i, col j)`` for ``i, j`` in ``[0, d)``. Checks sit on
plaquette corners ``(a, b)`` in ``[0, d]^2`` and touch the (up to four) data
qubits ``(a-1|a, b-1|b)``; a check is X-type iff ``a + b`` is odd. Weight-two
X checks live on the top and bottom edges, weight-two Z checks on the left
and right edges. X errors flip Z checks, so the Z-check graph ends on the top
and bottom boundaries and logical Z is supported on data row 0.

The layout is transposed against the usual picture in which the logical-Z
support is a column: here it is row 0, and undetectable X chains run down a
full column and cross every data row. The row-structured worst-case mismatch
depends on this orientation; with L0 moved to a column it barely separates the
mismatched decoder from the oracle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from dgrbench.dem import (
    Component,
    DetectorErrorModel,
    ExclusiveChannel,
    Mechanism,
    ModelMetadata,
)
from dgrbench.errors import ConfigError, UnsupportedModelError

logger = logging.getLogger(__name__)

MAX_PROBABILITY = 0.5
CHANNEL_CEILING = 0.999


@dataclass(frozen=True)
class SurfaceCodeSpec:
    distance: int
    p: float
    rounds: Optional[int] = None
    p_meas: Optional[float] = None
    y_bias: float = 1.0

    def __post_init__(self) -> None:
        if self.distance < 3 or self.distance % 2 == 0:
            raise ConfigError(f"distance must be an odd integer >= 3, got {self.distance}")
        if self.rounds is not None and self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        for name, value in (("p", self.p), ("p_meas", self.measurement_rate)):
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.y_bias <= 0:
            raise ConfigError(f"y_bias must be positive, got {self.y_bias}")

    @property
    def num_rounds(self) -> int:
        return self.distance if self.rounds is None else self.rounds

    @property
    def measurement_rate(self) -> float:
        return self.p if self.p_meas is None else self.p_meas

    def arm_probabilities(self) -> tuple[float, float, float]:
        """``(pX, pY, pZ)`` of one data-qubit depolarizing channel."""
        scale = self.p / (2.0 + self.y_bias)
        return scale, self.y_bias * scale, scale


@dataclass(frozen=True)
class MismatchSpec:
    kind: Literal["random", "worst_case"]
    strength: float
    seed: int = 0
    data_only: bool = False

    def __post_init__(self) -> None:
        if self.strength <= 1.0:
            raise ConfigError(f"mismatch strength must exceed 1, got {self.strength}")


@dataclass
class _Layout:
    distance: int
    x_checks: list[tuple[int, int]] = field(default_factory=list)
    z_checks: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def build(cls, d: int) -> "_Layout":
        layout = cls(d)
        for a in range(d + 1):
            for b in range(d + 1):
                is_x = (a + b) % 2 == 1
                bulk = 0 < a < d and 0 < b < d
                top_bottom = (a in (0, d)) and 0 < b < d
                left_right = (b in (0, d)) and 0 < a < d
                if bulk or (top_bottom and is_x):
                    (layout.x_checks if is_x else layout.z_checks).append((a, b))
                elif left_right and not is_x:
                    layout.z_checks.append((a, b))
        return layout

    @property
    def checks(self) -> list[tuple[int, int]]:
        return self.z_checks + self.x_checks

    def neighbours(self, i: int, j: int, basis: str) -> list[int]:
        """Indices (into :attr:`checks`) of ``basis`` checks touching data qubit (i, j)."""
        pool = self.z_checks if basis == "Z" else self.x_checks
        base = 0 if basis == "Z" else len(self.z_checks)
        corners = {(i, j), (i, j + 1), (i + 1, j), (i + 1, j + 1)}
        return [base + k for k, corner in enumerate(pool) if corner in corners]


def generate_surface_pheno(spec: SurfaceCodeSpec) -> DetectorErrorModel:
    d, rounds = spec.distance, spec.num_rounds
    layout = _Layout.build(d)
    checks = layout.checks
    n_checks = len(checks)
    p_x, p_y, p_z = spec.arm_probabilities()

    def det(layer: int, check: int) -> int:
        return layer * n_checks + check

    channels: list[ExclusiveChannel] = []
    rows: dict[int, int] = {}
    for t in range(rounds):
        for i in range(d):
            for j in range(d):
                # X errors flip Z checks; a column chain meets logical Z once, on row 0
                z_dets = tuple(det(t, k) for k in layout.neighbours(i, j, "Z"))
                x_dets = tuple(det(t, k) for k in layout.neighbours(i, j, "X"))
                obs = 1 if i == 0 else 0
                x_comp = Component(z_dets, obs)
                z_comp = Component(x_dets, 0)
                rows[len(channels)] = i
                channels.append(
                    ExclusiveChannel(
                        (
                            Mechanism(p_x, (x_comp,)),
                            Mechanism(p_y, (x_comp, z_comp)),
                            Mechanism(p_z, (z_comp,)),
                        )
                    )
                )
        # the readout layer ``rounds`` is noiseless
        for k in range(n_checks):
            channels.append(
                ExclusiveChannel((Mechanism(spec.measurement_rate, (Component((det(t, k), det(t + 1, k))),)),))
            )

    coords = {}
    for layer in range(rounds + 1):
        for k, (a, b) in enumerate(checks):
            coords[det(layer, k)] = (b - 0.5, a - 0.5, float(layer))

    return DetectorErrorModel(
        num_detectors=n_checks * (rounds + 1),
        num_observables=1,
        channels=tuple(channels),
        metadata=ModelMetadata(coords=coords, channel_rows=rows),
    )


def _rescale_channel(channel: ExclusiveChannel, factors: list[float]) -> ExclusiveChannel:
    probs = [min(m.probability * f, MAX_PROBABILITY) for m, f in zip(channel.mechanisms, factors)]
    total = sum(probs)
    if total > CHANNEL_CEILING:
        logger.warning("channel total %.4f exceeds 1 after mismatch; rescaling arms", total)
        probs = [q * CHANNEL_CEILING / total for q in probs]
    return ExclusiveChannel(tuple(m.with_probability(q) for m, q in zip(channel.mechanisms, probs)))


def _replace_channels(model: DetectorErrorModel, channels: list[ExclusiveChannel]) -> DetectorErrorModel:
    return DetectorErrorModel(model.num_detectors, model.num_observables, tuple(channels), model.metadata)


def apply_random_mismatch(
    model: DetectorErrorModel, strength: float, seed: int, data_only: bool = False
) -> DetectorErrorModel:
    """Multiply every mechanism probability by a log-uniform factor in ``[1/N, N]``."""
    if strength <= 1.0:
        raise ConfigError(f"mismatch strength must exceed 1, got {strength}")
    rng = np.random.default_rng(seed)
    log_n = math.log(strength)
    rows = model.metadata.channel_rows
    channels = []
    for c, channel in enumerate(model.channels):
        # draw for every channel so the stream does not depend on data_only
        u = rng.uniform(-1.0, 1.0, size=len(channel.mechanisms))
        if data_only and c not in rows:
            channels.append(channel)
            continue
        channels.append(_rescale_channel(channel, [math.exp(x * log_n) for x in u]))
    return _replace_channels(model, channels)


def apply_worstcase_mismatch(model: DetectorErrorModel, strength: float) -> DetectorErrorModel:
    """Scale data channels on the first ``(d-1)/2`` rows up by N and the rest down by N."""
    rows = model.metadata.channel_rows
    if not rows:
        raise UnsupportedModelError("worst-case mismatch needs data-qubit row metadata (qrow lines)")
    if strength < 1.0:
        raise ConfigError(f"mismatch strength must be at least 1, got {strength}")
    distance = max(rows.values()) + 1
    hot_rows = (distance - 1) // 2
    channels = []
    for c, channel in enumerate(model.channels):
        if c not in rows:
            channels.append(channel)
            continue
        factor = strength if rows[c] < hot_rows else 1.0 / strength
        channels.append(_rescale_channel(channel, [factor] * len(channel.mechanisms)))
    return _replace_channels(model, channels)


def apply_mismatch(model: DetectorErrorModel, mismatch: MismatchSpec) -> DetectorErrorModel:
    if mismatch.kind == "random":
        return apply_random_mismatch(model, mismatch.strength, mismatch.seed, mismatch.data_only)
    return apply_worstcase_mismatch(model, mismatch.strength)
