from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dgrbench.config import ARMS, SWEEP_AXES, ExperimentConfig, TrainConfig, load_config
from dgrbench.dem import build_decoding_graph, save_dem
from dgrbench.errors import ConfigError, DgrError
from dgrbench.harness import (
    build_models,
    derive_seed,
    estimate_threshold,
    run_experiment,
    sweep,
    trace_and_align,
    write_loss_curve,
)
from dgrbench.matcher import decode, predict_observables
from dgrbench.nnrw import build_dataset, save_params, train
from dgrbench.reweight import calibrate_trigger
from dgrbench.sample_loader import iter_shot_dump, write_csv, write_shot_dump
from dgrbench.sampler import sample_batch
from dgrbench.settings import settings

logger = logging.getLogger("dgrbench")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    update = {}
    if getattr(args, "seed", None) is not None:
        update["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        update["jobs"] = args.jobs
    return config.model_copy(update=update) if update else config


def _out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    return Path(args.out or config.output.out_dir or settings.out_dir)


def _arms(text: Optional[str]) -> Optional[list[str]]:
    if not text:
        return None
    arms = [a.strip() for a in text.split(",") if a.strip()]
    unknown = [a for a in arms if a not in ARMS]
    if unknown:
        raise ConfigError(f"unknown arms {unknown}; choose from {list(ARMS)}")
    return arms


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma separated list of numbers, got {text!r}") from None


def cmd_gen(args: argparse.Namespace) -> None:
    config = _load(args)
    true_model, believed_model = build_models(config)
    model = believed_model if args.mismatched else true_model
    save_dem(model, args.output)
    logger.info("wrote %d detectors, %d mechanisms to %s", model.num_detectors, model.num_mechanisms, args.output)


def cmd_sample(args: argparse.Namespace) -> None:
    config = _load(args)
    true_model, _ = build_models(config)
    count = write_shot_dump(args.output, sample_batch(true_model, args.shots, config.seed))
    logger.info("wrote %d shots to %s", count, args.output)


def cmd_decode(args: argparse.Namespace) -> None:
    config = _load(args)
    true_model, believed_model = build_models(config)
    graph = build_decoding_graph(believed_model if args.mismatched else true_model)
    rows = []
    errors = 0
    for shot in iter_shot_dump(args.shots):
        matching = decode(graph, shot.detectors)
        predicted = predict_observables(graph, matching)
        errors += predicted != shot.observables
        rows.append(
            (shot.index, " ".join(str(e) for e in sorted(matching.edges)), f"{predicted:x}", f"{shot.observables:x}")
        )
    write_csv(args.output, ["shot", "edges", "predicted", "actual"], rows)
    logger.info("decoded %d shots, %d logical errors", len(rows), errors)


def cmd_bench(args: argparse.Namespace) -> None:
    config = _load(args)
    out = _out_dir(args, config)
    report = run_experiment(config, arms=_arms(args.arms), out_dir=out)
    for row in report.rows:
        print(
            f"{row.arm:<20} LER {row.ler:.3e} [{row.ci_low:.3e}, {row.ci_high:.3e}] "
            f"errors {row.errors}/{row.shots} trigger {row.trigger_rate:.3f}"
        )
    print(f"Report written to {out}")


def cmd_sweep(args: argparse.Namespace) -> None:
    config = _load(args)
    values = _floats(args.values)
    if args.axis in ("d", "T_trace"):
        values = [int(v) for v in values]
    out = _out_dir(args, config) / f"sweep_{args.axis}.csv"
    sweep(config, args.axis, values, arms=_arms(args.arms), out_path=out)
    print(f"Sweep written to {out}")


def cmd_threshold(args: argparse.Namespace) -> None:
    config = _load(args)
    out = _out_dir(args, config) / "threshold_grid.csv"
    distances = [int(d) for d in _floats(args.distances)]
    crossings = estimate_threshold(config, distances, _floats(args.p_values), arms=_arms(args.arms), out_path=out)
    for arm, p in crossings.items():
        print(f"{arm:<20} threshold ~ {p:.5f}")


def cmd_train_nn(args: argparse.Namespace) -> None:
    config = _load(args)
    train_config = config.train or TrainConfig()
    true_model, believed_model = build_models(config)
    oracle_graph = build_decoding_graph(true_model)
    mismatched_graph = oracle_graph if believed_model is true_model else build_decoding_graph(believed_model)
    store, graph = trace_and_align(config, true_model, oracle_graph, mismatched_graph)
    dataset = build_dataset(
        true_model,
        graph,
        store.estimate_pair_probs(),
        train_config.dataset_size,
        derive_seed(config.seed, "dataset"),
    )
    params = train(dataset, graph, train_config, derive_seed(config.seed, "train"))
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    params_path = Path(args.output) if args.output else out / "nn_params.npz"
    save_params(params, params_path)
    write_loss_curve(params, out / "loss_curve.csv")
    print(f"Parameters written to {params_path}")


def cmd_calibrate(args: argparse.Namespace) -> None:
    config = _load(args)
    true_model, _ = build_models(config)
    corr = config.reweight.correlation
    shots = args.shots or corr.calibration_shots
    tau, rate = calibrate_trigger(true_model, shots, derive_seed(config.seed, "calibrate"), corr.trigger_target)
    print(f"trigger threshold {tau} (rate {rate:.3f} over {shots} shots)")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=settings.default_config_path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Decoding-graph re-weighting workbench")
    parser.add_argument("--log-level", type=str, default=settings.log_level)
    sub = parser.add_subparsers(dest="command")

    gen = sub.add_parser("gen", help="Write the configured detector error model")
    _common(gen)
    gen.add_argument("--output", type=str, default="model.dem")
    gen.add_argument("--mismatched", action="store_true", help="Write the model the decoder believes")

    sample = sub.add_parser("sample", help="Write a shot dump sampled from the true model")
    _common(sample)
    sample.add_argument("--shots", type=int, default=1000)
    sample.add_argument("--output", type=str, default="shots.txt")

    dec = sub.add_parser("decode", help="Decode a shot dump and write predictions")
    _common(dec)
    dec.add_argument("--shots", type=str, required=True)
    dec.add_argument("--output", type=str, default="predictions.csv")
    dec.add_argument("--mismatched", action="store_true")

    bench = sub.add_parser("bench", help="Run one experiment over the configured arms")
    _common(bench)
    bench.add_argument("--arms", type=str, default=None)

    sw = sub.add_parser("sweep", help="Run an experiment per value of one axis")
    _common(sw)
    sw.add_argument("--axis", choices=SWEEP_AXES, required=True)
    sw.add_argument("--values", type=str, required=True)
    sw.add_argument("--arms", type=str, default=None)

    thr = sub.add_parser("threshold", help="Estimate the threshold crossing per arm")
    _common(thr)
    thr.add_argument("--distances", type=str, default="3,5")
    thr.add_argument("--p-values", type=str, default="0.02,0.03,0.04")
    thr.add_argument("--arms", type=str, default=None)

    tr = sub.add_parser("train-nn", help="Train the NN re-weighter and save its parameters")
    _common(tr)
    tr.add_argument("--output", type=str, default=None)

    cal = sub.add_parser("calibrate", help="Calibrate the correlation trigger threshold")
    _common(cal)
    cal.add_argument("--shots", type=int, default=None)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    handlers = {
        "gen": cmd_gen,
        "sample": cmd_sample,
        "decode": cmd_decode,
        "bench": cmd_bench,
        "sweep": cmd_sweep,
        "threshold": cmd_threshold,
        "train-nn": cmd_train_nn,
        "calibrate": cmd_calibrate,
    }
    handler = handlers.get(args.command)
    if handler is None:
        parser.print_help()
        return EXIT_OK
    try:
        handler(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DgrError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
