"""Command-line front end for the experiment harness.

Subcommands: sweep, robustness, convergence, runtime (studies), plus
train / detect / gen-channel utilities.  Experiment subcommands require
--seed; results land in --out, the MMWLINK_OUT_DIR environment variable,
or the working directory, and the output CSV path is printed on success.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from mmwlink import harness, sbrnn
from mmwlink.channel import (
    ChannelConfig,
    render_taps,
    sample_clusters,
    save_channel,
    save_cluster_set,
)
from mmwlink.errors import ConfigurationError
from mmwlink.modem import load_dataset


def _parse_grid(text: str) -> tuple:
    """Parse 'start:step:stop' (inclusive) or a comma list of dB values."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(
                "grid must be start:step:stop or v1,v2,...")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be > 0")
        n = int(round((stop - start) / step))
        return tuple(start + k * step for k in range(n + 1))
    return tuple(float(v) for v in text.split(","))


def _parse_range(text: str) -> tuple:
    lo, hi = (float(v) for v in text.split(":"))
    return lo, hi


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("MMWLINK_OUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, required=True,
                   help="master seed (mandatory for experiments)")
    p.add_argument("--nr", type=int, default=4, help="receive antennas")
    p.add_argument("--memory", type=int, default=64, help="channel taps")
    p.add_argument("--snr", type=_parse_grid, default=None,
                   metavar="START:STEP:STOP", help="SNR grid in dB")
    p.add_argument("--modulation", default="bpsk", choices=("bpsk", "qpsk"))
    p.add_argument("--channels", type=int, default=None,
                   help="independent channel realizations")
    p.add_argument("--symbols", type=int, default=None,
                   help="evaluated symbols per realization")
    p.add_argument("--block-length", type=int, default=200)
    p.add_argument("--training-blocks", type=int, default=4000)
    p.add_argument("--beam-width", type=int, default=300)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--hidden", type=int, default=20)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--out", default=None, help="output directory")


def _experiment_config(args, kind: str) -> harness.ExperimentConfig:
    kwargs = dict(
        kind=kind, master_seed=args.seed, num_antennas=args.nr,
        memory=args.memory, modulation=args.modulation,
        block_length=args.block_length, training_blocks=args.training_blocks,
        beam_width=args.beam_width, window=args.window, hidden=args.hidden,
        epochs=args.epochs,
    )
    if args.snr is not None:
        kwargs["snr_grid_db"] = args.snr
    if args.channels is not None:
        kwargs["num_channels"] = args.channels
    if args.symbols is not None:
        kwargs["symbols_per_channel"] = args.symbols
    if getattr(args, "train_mode", None):
        kwargs["train_snr_mode"] = args.train_mode
    if getattr(args, "train_range", None):
        kwargs["train_snr_range_db"] = args.train_range
    if getattr(args, "train_snr", None) is not None:
        kwargs["train_snr_db"] = args.train_snr
    if getattr(args, "level", None) is not None:
        kwargs["distortion_level"] = args.level
    if getattr(args, "threshold", None) is not None:
        kwargs["accuracy_threshold"] = args.threshold
    if getattr(args, "eval_every", None) is not None:
        kwargs["eval_every_samples"] = args.eval_every
    if getattr(args, "max_samples", None) is not None:
        kwargs["max_train_samples"] = args.max_samples
    if getattr(args, "blocks", None) is not None:
        kwargs["runtime_blocks"] = args.blocks
    return harness.ExperimentConfig(**kwargs)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mmwlink",
        description="mmWave SIMO link simulation and detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="SER vs SNR comparison study")
    _add_experiment_args(p_sweep)
    p_sweep.add_argument("--train-mode", choices=("fixed", "uniform"),
                         default="fixed")
    p_sweep.add_argument("--train-range", type=_parse_range, default=None,
                         metavar="LO:HI", help="training SNR range (uniform)")

    p_rob = sub.add_parser("robustness", help="CSI-perturbation study")
    _add_experiment_args(p_rob)
    p_rob.add_argument("--level", type=float, default=0.025,
                       help="mean relative amplitude distortion")
    p_rob.add_argument("--train-snr", type=float, default=0.0)

    p_conv = sub.add_parser("convergence", help="warm-start transfer study")
    _add_experiment_args(p_conv)
    p_conv.add_argument("--train-snr", type=float, default=0.0)
    p_conv.add_argument("--threshold", type=float, default=0.9)
    p_conv.add_argument("--eval-every", type=int, default=50)
    p_conv.add_argument("--max-samples", type=int, default=8000)

    p_rt = sub.add_parser("runtime", help="per-block detection timing")
    _add_experiment_args(p_rt)
    p_rt.add_argument("--blocks", type=int, default=50)

    p_train = sub.add_parser("train", help="train a detector on a dataset file")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--epochs", type=int, default=25)
    p_train.add_argument("--window", type=int, default=30)
    p_train.add_argument("--hidden", type=int, default=20)
    p_train.add_argument("--out", required=True, help="checkpoint path")

    p_detect = sub.add_parser("detect", help="detect a dataset with a checkpoint")
    p_detect.add_argument("--model", required=True)
    p_detect.add_argument("--input", required=True, help="dataset file")

    p_gen = sub.add_parser("gen-channel", help="generate a channel realization")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--nr", type=int, default=4)
    p_gen.add_argument("--memory", type=int, default=64)
    p_gen.add_argument("--out", required=True, help="output path stem")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "sweep":
        config = _experiment_config(args, "sweep")
        records = harness.run_ser_sweep(config)
        path = _out_dir(args) / f"sweep_seed{args.seed}.csv"
        harness.write_csv(records, "ser", path)
        print(path)
        return 0

    if args.command == "robustness":
        config = _experiment_config(args, "robustness")
        records = harness.run_csi_robustness(config)
        path = _out_dir(args) / f"robustness_seed{args.seed}.csv"
        harness.write_csv(records, "ser", path)
        print(path)
        return 0

    if args.command == "convergence":
        config = _experiment_config(args, "convergence")
        records = harness.run_convergence_study(config)
        path = _out_dir(args) / f"convergence_seed{args.seed}.csv"
        harness.write_csv(records, "convergence", path)
        print(path)
        return 0

    if args.command == "runtime":
        config = _experiment_config(args, "runtime")
        records = harness.run_runtime_benchmark(config)
        path = _out_dir(args) / f"runtime_seed{args.seed}.csv"
        harness.write_csv(records, "runtime", path)
        print(path)
        return 0

    if args.command == "train":
        dataset = load_dataset(args.dataset)
        model = sbrnn.SbrnnModel.init(
            dataset.num_antennas, dataset.modulation, window=args.window,
            hidden=args.hidden, rng=np.random.default_rng(args.seed))
        result = sbrnn.train(model, dataset, sbrnn.TrainConfig(
            epochs=args.epochs, seed=args.seed))
        sbrnn.save_checkpoint(result.model, args.out)
        history_path = str(args.out) + ".history.csv"
        sbrnn.history_to_csv(result.history, history_path)
        print(args.out)
        return 0

    if args.command == "detect":
        model = sbrnn.load_checkpoint(args.model)
        dataset = load_dataset(args.input)
        errors = 0
        symbols = 0
        for block, rx in dataset.pairs:
            decided = sbrnn.hard_decide(sbrnn.detect(model, rx))
            errors += int(np.sum(decided.indices != block.indices))
            symbols += len(block)
        print(f"ser={errors / symbols:.10g} errors={errors} symbols={symbols}")
        return 0

    if args.command == "gen-channel":
        cfg = ChannelConfig(num_antennas=args.nr, max_memory=args.memory)
        rng = np.random.default_rng(args.seed)
        clusters = sample_clusters(cfg, rng)
        channel = render_taps(clusters, cfg, seed=args.seed)
        stem = Path(args.out)
        stem.parent.mkdir(parents=True, exist_ok=True)
        save_channel(channel, stem.with_suffix(".mwch"))
        save_cluster_set(clusters, stem.with_suffix(".clusters.json"))
        print(stem.with_suffix(".mwch"))
        return 0

    raise ConfigurationError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
