"""End-to-end experiment runner: model setup, tracing, re-weighting, LER estimation, reports."""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence, Union

from pydantic import BaseModel

from dgrbench.config import (
    ExperimentConfig,
    ReweightPolicy,
    TrainConfig,
    config_hash,
)
from dgrbench.dem import DecodingGraph, DetectorErrorModel, build_decoding_graph, load_dem
from dgrbench.errors import BracketError, ConfigError
from dgrbench.matcher import Matching, decode, predict_observables
from dgrbench.nnrw import MlpParams, build_dataset, load_params, moving_average, train
from dgrbench.reweight import Reweighter, alignment_reweight, calibrate_trigger
from dgrbench.sample_loader import chunked, write_csv
from dgrbench.sampler import sample_batch
from dgrbench.surfgen import apply_mismatch, generate_surface_pheno
from dgrbench.tracer import TraceStore, export_counts, export_heatmap

logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054
BLOCK_SHOTS = 10_000

PathLike = Union[str, Path]


def wilson_interval(errors: int, shots: int, z: float = Z_95) -> tuple[float, float]:
    if shots < 1:
        raise ValueError("Wilson interval needs at least one shot")
    phat = errors / shots
    denom = 1.0 + z * z / shots
    centre = (phat + z * z / (2 * shots)) / denom
    half = z * math.sqrt(phat * (1 - phat) / shots + z * z / (4 * shots * shots)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# Arms
# ---------------------------------------------------------------------------


class Predictor(Protocol):
    name: str

    def predict(self, detectors: Sequence[int]) -> tuple[int, bool]: ...


@dataclass(eq=False)
class Arm:
    name: str
    graph: DecodingGraph
    reweighter: Optional[Reweighter] = None
    trace_trials: int = 0

    def decode(self, detectors: Sequence[int]) -> tuple[Matching, bool]:
        if self.reweighter is not None:
            return self.reweighter.decode(detectors)
        return decode(self.graph, detectors), False

    def predict(self, detectors: Sequence[int]) -> tuple[int, bool]:
        matching, triggered = self.decode(detectors)
        return predict_observables(self.graph, matching), triggered


@dataclass
class ArmCounts:
    shots: int = 0
    errors: int = 0
    triggered: int = 0

    def add(self, other: "ArmCounts") -> None:
        self.shots += other.shots
        self.errors += other.errors
        self.triggered += other.triggered


def _evaluate_block(
    model: DetectorErrorModel, arms: Sequence[Predictor], seed: int, lo: int, hi: int
) -> list[ArmCounts]:
    counts = [ArmCounts() for _ in arms]
    for shot in sample_batch(model, hi - lo, seed, start=lo):
        for arm, c in zip(arms, counts):
            predicted, triggered = arm.predict(shot.detectors)
            c.shots += 1
            c.errors += predicted != shot.observables
            c.triggered += triggered
    return counts


def evaluate_arms(
    model: DetectorErrorModel, arms: Sequence[Predictor], shots: int, seed: int, jobs: int = 1
) -> list[ArmCounts]:
    """Decode one shared shot stream with every arm; counts are reduced in block order."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    blocks = list(chunked(0, shots, BLOCK_SHOTS))
    totals = [ArmCounts() for _ in arms]
    if jobs <= 1 or len(blocks) == 1:
        results: Iterable[list[ArmCounts]] = (_evaluate_block(model, arms, seed, lo, hi) for lo, hi in blocks)
        for block in results:
            for t, c in zip(totals, block):
                t.add(c)
        return totals
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_evaluate_block, model, arms, seed, lo, hi) for lo, hi in blocks]
        for future in futures:
            for t, c in zip(totals, future.result()):
                t.add(c)
    return totals


def estimate_ler(
    model: DetectorErrorModel, arm: Predictor, shots: int, seed: int, jobs: int = 1
) -> tuple[float, tuple[float, float]]:
    counts = evaluate_arms(model, [arm], shots, seed, jobs)[0]
    return counts.errors / counts.shots, wilson_interval(counts.errors, counts.shots)


# ---------------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------------


def _trace_block(
    model: DetectorErrorModel, graph: DecodingGraph, seed: int, lo: int, hi: int, full_pairs: bool, max_hops: int
) -> TraceStore:
    store = TraceStore(graph, full_pairs=full_pairs, max_hops=max_hops)
    for shot in sample_batch(model, hi - lo, seed, start=lo):
        store.record(decode(graph, shot.detectors))
    return store


def trace(
    model: DetectorErrorModel,
    graph: DecodingGraph,
    shots: int,
    seed: int,
    policy: Optional[ReweightPolicy] = None,
    jobs: int = 1,
) -> TraceStore:
    """Decode ``shots`` shots of ``model`` on ``graph`` and count the matched edges.

    With an alignment window only the trailing ``window`` shots are traced,
    which is what a sliding look-back store holds at the end of the stream.
    """
    policy = policy or ReweightPolicy()
    window = policy.alignment.window
    start = max(0, shots - window) if window else 0
    corr = policy.correlation
    blocks = list(chunked(start, shots, BLOCK_SHOTS))
    args = (corr.full_pairs, corr.max_hops)
    if jobs <= 1 or len(blocks) <= 1:
        stores = [_trace_block(model, graph, seed, lo, hi, *args) for lo, hi in blocks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_trace_block, model, graph, seed, lo, hi, *args) for lo, hi in blocks]
            stores = [f.result() for f in futures]
    merged = stores[0]
    for other in stores[1:]:
        merged = merged.merge(other)
    if merged.trials < policy.alignment.min_trials:
        logger.warning("traced %d trials, fewer than min_trials=%d", merged.trials, policy.alignment.min_trials)
    logger.info("traced %d trials, %d pairs tracked", merged.trials, len(merged.pair_counts))
    return merged


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class ArmRow(BaseModel):
    arm: str
    shots: int
    errors: int
    ler: float
    ci_low: float
    ci_high: float
    trigger_rate: float = 0.0
    trace_trials: int = 0


class MetricsReport(BaseModel):
    name: str
    seed: int
    config_hash: str
    rows: list[ArmRow]
    trigger_threshold: Optional[int] = None
    axis: Optional[str] = None
    axis_value: Optional[float] = None

    def row(self, arm: str) -> ArmRow:
        for r in self.rows:
            if r.arm == arm:
                return r
        raise KeyError(arm)

    def ler(self, arm: str) -> float:
        return self.row(arm).ler


METRICS_HEADER = ["arm", "shots", "errors", "ler", "ci_low", "ci_high", "trigger_rate", "trace_trials"]


def _row_values(row: ArmRow) -> list:
    return [row.arm, row.shots, row.errors, row.ler, row.ci_low, row.ci_high, row.trigger_rate, row.trace_trials]


def write_report(report: MetricsReport, out_dir: PathLike) -> None:
    out = Path(out_dir)
    write_csv(out / "metrics.csv", METRICS_HEADER, (_row_values(r) for r in report.rows))
    (out / "report.json").write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")


def write_loss_curve(params: MlpParams, path: PathLike) -> None:
    smooth = moving_average(params.loss_curve)
    write_csv(path, ["step", "loss", "moving_average"], ((i, l, s) for i, (l, s) in enumerate(zip(params.loss_curve, smooth))))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def build_models(config: ExperimentConfig) -> tuple[DetectorErrorModel, DetectorErrorModel]:
    """``(true model, model the decoder believes)``."""
    if config.code.dem_path:
        true_model = load_dem(config.code.dem_path)
    else:
        true_model = generate_surface_pheno(config.code.spec())
    mismatch = config.mismatch
    if mismatch is None or mismatch.is_identity:
        return true_model, true_model
    return true_model, apply_mismatch(true_model, mismatch.spec(derive_seed(config.seed, "mismatch")))


def train_for_experiment(
    config: ExperimentConfig,
    true_model: DetectorErrorModel,
    graph: DecodingGraph,
    store: TraceStore,
) -> MlpParams:
    train_config = config.train or TrainConfig()
    if train_config.params_path:
        logger.info("loading NN parameters from %s", train_config.params_path)
        return load_params(train_config.params_path)
    dataset = build_dataset(
        true_model, graph, store.estimate_pair_probs(), train_config.dataset_size, derive_seed(config.seed, "dataset")
    )
    logger.info("training NN re-weighter on %d samples", len(dataset))
    return train(dataset, graph, train_config, derive_seed(config.seed, "train"))


def trace_and_align(
    config: ExperimentConfig,
    true_model: DetectorErrorModel,
    oracle_graph: DecodingGraph,
    mismatched_graph: DecodingGraph,
    jobs: Optional[int] = None,
) -> tuple[TraceStore, DecodingGraph]:
    """Trace the configured decoder and return the store with the alignment re-weighted graph."""
    trace_graph = oracle_graph if config.shots.trace_with_oracle_weights else mismatched_graph
    store = trace(
        true_model,
        trace_graph,
        config.shots.trace,
        derive_seed(config.seed, "trace"),
        config.reweight,
        jobs or config.jobs,
    )
    return store, alignment_reweight(mismatched_graph, store.estimate_edge_probs())


def run_experiment(
    config: ExperimentConfig,
    arms: Optional[Sequence[str]] = None,
    jobs: Optional[int] = None,
    out_dir: Optional[PathLike] = None,
) -> MetricsReport:
    arms = list(arms or config.arms)
    jobs = jobs or config.jobs
    true_model, believed_model = build_models(config)
    oracle_graph = build_decoding_graph(true_model)
    mismatched_graph = oracle_graph if believed_model is true_model else build_decoding_graph(believed_model)

    built: list[Arm] = []
    store: Optional[TraceStore] = None
    params: Optional[MlpParams] = None
    tau: Optional[int] = None
    if "oracle" in arms:
        built.append(Arm("oracle", oracle_graph))
    if "mismatched" in arms:
        built.append(Arm("mismatched", mismatched_graph))

    if any(a.startswith("aligned") for a in arms):
        store, aligned_graph = trace_and_align(config, true_model, oracle_graph, mismatched_graph, jobs)
        edge_probs = store.estimate_edge_probs()
        if "aligned" in arms:
            built.append(Arm("aligned", aligned_graph, trace_trials=store.trials))

        corr_arms = [a for a in arms if a in ("aligned+heuristic", "aligned+nn")]
        if corr_arms:
            corr = config.reweight.correlation
            tau = corr.trigger
            if tau is None:
                tau, _ = calibrate_trigger(
                    true_model, corr.calibration_shots, derive_seed(config.seed, "calibrate"), corr.trigger_target
                )
            pair_probs = store.estimate_pair_probs()
            floor = corr.pair_floor if corr.pair_floor is not None else store.pair_floor
            for name in corr_arms:
                mode = "heuristic" if name == "aligned+heuristic" else "nn"
                policy = config.reweight.model_copy(
                    update={"correlation": corr.model_copy(update={"mode": mode, "trigger": tau, "pair_floor": floor})}
                )
                if mode == "nn" and params is None:
                    params = train_for_experiment(config, true_model, aligned_graph, store)
                reweighter = Reweighter(aligned_graph, policy, edge_probs, pair_probs, params if mode == "nn" else None)
                built.append(Arm(name, aligned_graph, reweighter, trace_trials=store.trials))

    built.sort(key=lambda a: arms.index(a.name))
    logger.info("evaluating %s on %d shots", [a.name for a in built], config.shots.eval)
    counts = evaluate_arms(true_model, built, config.shots.eval, derive_seed(config.seed, "eval"), jobs)

    rows = []
    for arm, c in zip(built, counts):
        low, high = wilson_interval(c.errors, c.shots)
        rows.append(
            ArmRow(
                arm=arm.name,
                shots=c.shots,
                errors=c.errors,
                ler=c.errors / c.shots,
                ci_low=low,
                ci_high=high,
                trigger_rate=c.triggered / c.shots,
                trace_trials=arm.trace_trials,
            )
        )
    report = MetricsReport(
        name=config.name, seed=config.seed, config_hash=config_hash(config), rows=rows, trigger_threshold=tau
    )

    target = out_dir or config.output.out_dir
    if target:
        write_report(report, target)
        if store is not None and config.output.heatmap:
            export_heatmap(store, oracle_graph, Path(target) / "heatmap.csv")
        if store is not None and config.output.trace_counts:
            export_counts(store, Path(target) / "edge_counts.csv", Path(target) / "pair_counts.csv")
        if params is not None and params.loss_curve:
            write_loss_curve(params, Path(target) / "loss_curve.csv")
    return report


def sweep(
    config: ExperimentConfig,
    axis: str,
    values: Sequence[Union[int, float]],
    arms: Optional[Sequence[str]] = None,
    jobs: Optional[int] = None,
    out_path: Optional[PathLike] = None,
) -> list[MetricsReport]:
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    reports = []
    for value in values:
        report = run_experiment(config.with_axis(axis, value), arms=arms, jobs=jobs)
        reports.append(report.model_copy(update={"axis": axis, "axis_value": float(value)}))
        logger.info("sweep %s=%s done", axis, value)
    if out_path:
        write_csv(
            out_path,
            [axis] + METRICS_HEADER,
            ([r.axis_value] + _row_values(row) for r in reports for row in r.rows),
        )
    return reports


def find_crossing(p_values: Sequence[float], ler_small: Sequence[float], ler_large: Sequence[float]) -> float:
    """Physical rate where ``LER(d_small) / LER(d_large)`` crosses 1, interpolated in log-log space.

    Grid points where either LER is zero carry no ratio and are skipped.
    """
    points = sorted(
        (float(p), math.log(s / l))
        for p, s, l in zip(p_values, ler_small, ler_large)
        if p > 0 and s > 0 and l > 0
    )
    if len(points) < 2:
        raise BracketError("need at least two grid points with nonzero LER at both distances")
    for (p0, r0), (p1, r1) in zip(points, points[1:]):
        if r0 == 0.0:
            return p0
        if r0 * r1 < 0.0 or r1 == 0.0:
            x0, x1 = math.log(p0), math.log(p1)
            return math.exp(x0 + (x1 - x0) * r0 / (r0 - r1))
    raise BracketError(f"no threshold crossing between p={points[0][0]} and p={points[-1][0]}")


def estimate_threshold(
    config: ExperimentConfig,
    distances: Sequence[int],
    p_values: Sequence[float],
    arms: Optional[Sequence[str]] = None,
    jobs: Optional[int] = None,
    out_path: Optional[PathLike] = None,
) -> dict[str, float]:
    """Crossing estimate per arm between the smallest and largest distance."""
    if len(set(distances)) < 2:
        raise ConfigError("threshold estimation needs at least two distances")
    if len(p_values) < 3:
        raise ConfigError("threshold estimation needs at least three p values")
    d_small, d_large = min(distances), max(distances)
    arms = list(arms or config.arms)
    table: dict[tuple[int, float], MetricsReport] = {}
    for d in sorted(set(distances)):
        for p in p_values:
            point = config.with_axis("d", d).with_axis("p", p)
            point = point.model_copy(update={"code": point.code.model_copy(update={"rounds": None})})
            table[(d, p)] = run_experiment(point, arms=arms, jobs=jobs)
            logger.info("threshold grid d=%d p=%g done", d, p)

    if out_path:
        write_csv(
            out_path,
            ["d", "p"] + METRICS_HEADER,
            ([d, p] + _row_values(row) for (d, p), r in sorted(table.items()) for row in r.rows),
        )

    crossings = {}
    for arm in arms:
        small = [table[(d_small, p)].ler(arm) for p in p_values]
        large = [table[(d_large, p)].ler(arm) for p in p_values]
        crossings[arm] = find_crossing(p_values, small, large)
        logger.info("arm %s crossing at p=%.5f", arm, crossings[arm])
    return crossings

