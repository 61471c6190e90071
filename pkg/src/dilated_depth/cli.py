"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 I/O or data-format error,
3 numeric failure (non-finite training values, gradient-check breach).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import data_io, gradcheck
from .config import ExperimentConfig
from .depth_head import DepthMap
from .errors import ConfigError, DigestError, FormatError, TrainingError
from .inference import evaluate, predict_depth
from .network import analyze, build_network, pre_upsampling_receptive_field
from .training import augment_dataset, generate_dataset, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("dilated_depth")


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def dataset_digest(images: np.ndarray, depth: DepthMap) -> str:
    h = hashlib.sha256()
    for array in (np.ascontiguousarray(images, np.float64), depth.to_sentinel()):
        h.update(str(array.shape).encode())
        h.update(array.tobytes())
    return h.hexdigest()


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path).with_env()


def training_data(config: ExperimentConfig, base: Path):
    if config.synthetic:
        data = generate_dataset(config.scenes, config.scene_spec("train"))
    else:
        records = [r for r in data_io.load_manifest(base / config.dataset) if r.split == "train"]
        if not records:
            raise ConfigError(f"manifest {config.dataset} has no train records")
        data = data_io.load_pairs(records)
    if config.augment:
        data = augment_dataset(data, seed=config.seed)
    return data


def load_model(checkpoint):
    state, text = data_io.load_checkpoint(checkpoint)
    config = ExperimentConfig.from_text(text, str(Path(checkpoint) / data_io.CONFIG_FILE))
    net = build_network(config.network_config(), config.seed, config.precision)
    net.load_state_dict(state)
    return net, config


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config_path = Path(args.config)
    config = load_config(config_path)
    output = Path(args.output or config.output or config_path.with_suffix(".ckpt"))
    data = training_data(config, config_path.parent)
    output.mkdir(parents=True, exist_ok=True)
    text = config.to_text()
    with open(output / "history.log", "w") as history:
        try:
            net, records = train(data, config.train_config(), history)
        except TrainingError as exc:
            data_io.save_checkpoint(output / "last_good", exc.state, text)
            raise CommandError(EXIT_NUMERIC, f"{exc} at step {exc.iteration}; last good state in {output / 'last_good'}")
    data_io.save_checkpoint(output, net.state_dict(), text)
    (output / "dataset.digest").write_text(dataset_digest(*data) + "\n")
    print(f"trained {len(records)} steps, final loss {records[-1].loss:.6f}" if records else "trained 0 steps")
    print(f"checkpoint: {output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, config = load_model(args.checkpoint)
    records = data_io.load_manifest(args.manifest)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    if not records:
        raise FormatError(f"manifest {args.manifest} has no {args.split} records")
    images, gt = data_io.load_pairs(records)
    report, cm = evaluate(net, images.astype(net.dtype), gt, config.bin_spec, args.inference)
    sys.stdout.write(report.to_record())
    target = Path(args.confusion) if args.confusion else Path(args.checkpoint) / f"confusion_{args.inference}.rdt"
    data_io.save_tensor(cm.astype(np.float64), target)
    return EXIT_OK


def cmd_infer(args) -> int:
    net, config = load_model(args.checkpoint)
    image = data_io.load_image(args.image).astype(net.dtype)
    depth = predict_depth(net, image, config.bin_spec, args.inference)
    data_io.save_tensor(depth.to_sentinel(), args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    """Write the synthetic train/test scenes of a config as RDT1 files plus a manifest."""
    config = load_config(args.config)
    out = Path(args.directory)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for split, count in (("train", config.scenes), ("test", config.test_scenes)):
        if count < 1:
            continue
        images, depth = generate_dataset(count, config.scene_spec(split))
        for i in range(count):
            image_path = out / f"{split}_{i:04d}_image.rdt"
            depth_path = out / f"{split}_{i:04d}_depth.rdt"
            data_io.save_tensor(images[i], image_path)
            data_io.save_tensor(depth.values[i], depth_path)
            records.append(data_io.ManifestRecord(image_path, depth_path, split))
    data_io.write_manifest(out / "manifest.csv", records)
    print(out / "manifest.csv")
    return EXIT_OK


def cmd_bins_analyze(args) -> int:
    counts = [int(b) for b in args.bins.split(",")] if args.bins else None
    if counts is not None and len(counts) != len(args.checkpoints):
        raise ConfigError(f"{len(args.checkpoints)} checkpoints but {len(counts)} bin counts")
    rows = []
    digests = set()
    for k, ckpt in enumerate(args.checkpoints):
        net, config = load_model(ckpt)
        if counts is not None and config.bins != counts[k]:
            raise ConfigError(f"{ckpt} was trained with {config.bins} bins, expected {counts[k]}")
        digest_file = Path(ckpt) / "dataset.digest"
        if not digest_file.exists():
            raise data_io.MissingFileError(f"checkpoint lacks dataset digest: {digest_file}")
        digests.add(digest_file.read_text().strip())
        if len(digests) > 1:
            raise DigestError(f"{ckpt} was trained on a different dataset than {args.checkpoints[0]}")
        if args.manifest:
            records = [r for r in data_io.load_manifest(args.manifest) if args.split in ("all", r.split)]
            images, gt = data_io.load_pairs(records)
        else:
            if not config.synthetic:
                raise ConfigError(f"{ckpt}: non-synthetic dataset; pass --manifest")
            images, gt = generate_dataset(config.scenes, config.scene_spec(args.split if args.split != "all" else "train"))
        report, _ = evaluate(net, images.astype(net.dtype), gt, config.bin_spec, args.inference)
        rows.append((config.bins, report.pixel_acc, report.rel))
    print(f"{'bins':>6} {'pixel_acc':>10} {'rel':>8}")
    for m, acc, rel in rows:
        print(f"{m:>6} {acc:>10.4f} {rel:>8.4f}")
    return EXIT_OK


def cmd_rf(args) -> int:
    config = load_config(args.config)
    net_config = config.network_config()
    infos = analyze(net_config)
    print(f"{'layer':<14} {'kind':<15} {'rf':>5} {'stride':>7} {'channels':>8} {'params':>9}  dilated")
    for info in infos:
        flag = f"l={info.dilation}" if info.dilation > 1 else ""
        print(
            f"{info.name:<14} {info.kind:<15} {info.receptive_field:>5} {str(info.jump):>7} "
            f"{info.out_channels:>8} {info.parameters:>9}  {flag}"
        )
    print(f"total parameters: {sum(i.parameters for i in infos)}")
    print(f"pre-upsampling receptive field: {pre_upsampling_receptive_field(net_config)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        detail = "; ".join(
            f"layer {r.layer} at {r.where}, relative error {r.worst:.3e} >= {r.tolerance:g}" for r in failed
        )
        raise CommandError(EXIT_NUMERIC, f"gradient check failed: {detail}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dilated-depth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a config file")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="checkpoint directory (default: config 'output' or <config>.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--inference", choices=("soft", "hard"), default="soft")
    p.add_argument("--split", choices=("train", "test", "all"), default="all")
    p.add_argument("--confusion", help="confusion-matrix output (default: <checkpoint>/confusion_<rule>.rdt)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict a depth map for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--inference", choices=("soft", "hard"), default="soft")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bins-analyze", help="pixel accuracy and rel per bin count")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--bins", help="comma-separated bin counts, one per checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "test", "all"), default="train")
    p.add_argument("--inference", choices=("soft", "hard"), default="soft")
    p.set_defaults(func=cmd_bins_analyze)

    p = sub.add_parser("rf", help="per-layer receptive field and parameter count")
    p.add_argument("config")
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write synthetic scenes and a manifest")
    p.add_argument("config")
    p.add_argument("directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

