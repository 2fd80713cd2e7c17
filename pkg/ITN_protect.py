#!/usr/bin/env python3
"""
ITN Protect - learnable visual protection for image classification
Trains a transformation network with a co-trained classifier, attacks it with an inverse
network, evaluates accuracy/PSNR, and serves the classifier to clients that protect locally.
"""

import argparse
import copy
import csv
import platform
import shutil
import sys
import traceback
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import torch
import yaml

from attack import estimate, generate_pairs, reconstruction_mse, train_inverse, verify_pairs, write_pair_manifest
from base import BaseNetwork, TopologyConfig
from checkpoint import CheckpointManifest, checkpoint_digest, load_checkpoint, manifest_path, save_checkpoint
from colors import error, header, info, metric, path as path_color, stage, success, warning
from config import ExperimentConfig, list_profiles, load_config
from data_utils import DatasetSplit, ImageSet, load_dataset
from debug_utils import debug_print, is_debug, set_debug, set_progress, status_print
from errors import ConfigurationError, DomainError, FileError, ITNError
from evaluation import EvalReport, evaluate_attack, evaluate_protection, export_grid
from image_io import load_image, save_float_tiff
from Networks import (
    Classifier,
    IdentityTransform,
    build_classifier,
    build_feature_extractor,
    build_inverse_net,
    build_transform_net,
    forward_transform,
)
from server import ClassifierClient, client_protect_and_submit, serve_classifier
from training import select_best_checkpoint, train_joint
from utils import derive_seed, sha256_file

RECORDED_DISTRIBUTIONS = ("torch", "torchvision", "numpy", "Pillow", "PyYAML", "Flask", "requests", "tqdm")


@dataclass
class TrainOutcome:
    transform_path: Path
    classifier_path: Path
    best_epoch: int
    val_total: float
    val_accuracy: float


@contextmanager
def pipeline_stage(name: str) -> Iterator[None]:
    """Tag ITN errors raised inside the block with the stage that failed"""
    try:
        yield
    except ITNError as e:
        if not hasattr(e, "stage_name"):
            e.stage_name = name
        raise


def library_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for dist in RECORDED_DISTRIBUTIONS:
        try:
            versions[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            versions[dist] = "not installed"
    return versions


def write_run_manifest(out_dir: Path, command: str, cfg: ExperimentConfig,
                       checkpoints: Optional[Dict[str, Path]] = None, extra: Optional[Dict] = None) -> Path:
    """run_manifest.yaml: what ran, with which config, seeds, data and checkpoints"""
    checkpoints = {role: p for role, p in (checkpoints or {}).items() if p is not None}
    manifest = {
        "command": command,
        "config_digest": cfg.digest(),
        "dataset": cfg.dataset,
        "seeds": {
            "train": cfg.train.seed,
            "init": cfg.train.init_seed,
            "attack": cfg.attack.seed,
            "attack_init": cfg.attack.init_seed,
            "split": cfg.data.split_seed,
        },
        "checkpoints": {role: {"path": str(p), "sha256": sha256_file(p)} for role, p in checkpoints.items()},
        "libraries": library_versions(),
        **(extra or {}),
    }
    path = out_dir / "run_manifest.yaml"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(manifest, handle, sort_keys=False)
        cfg.save(out_dir / "config.yaml")
    except OSError as e:
        raise FileError(f"cannot write run manifest: {e}", [path]) from e
    return path


def load_split(cfg: ExperimentConfig) -> DatasetSplit:
    return load_dataset(cfg.dataset, cfg.data.root, split_seed=cfg.data.split_seed,
                        download=cfg.data.download, limits=cfg.data.limits())


def identity_transform(cfg: ExperimentConfig) -> IdentityTransform:
    return IdentityTransform(TopologyConfig(in_channels=cfg.transform_net.in_channels))


def load_network(path: Path, expected: type, role: str, device: str) -> Tuple[BaseNetwork, CheckpointManifest]:
    net, manifest = load_checkpoint(path)
    if not isinstance(net, expected):
        raise ConfigurationError(f"{path} holds a {net.arch_id}, expected a {role}", key="checkpoint")
    return net.to(device), manifest


def load_transform(path: Optional[Path], cfg: ExperimentConfig) -> BaseNetwork:
    """h from a checkpoint; without one, the identity (plain images)"""
    if path is None:
        return identity_transform(cfg)
    net, _ = load_checkpoint(path)
    if isinstance(net, Classifier):
        raise ConfigurationError(f"{path} holds a classifier, expected a transform network", key="checkpoint")
    return net.to(cfg.device)


def check_classes(psi: Classifier, data: DatasetSplit) -> None:
    if psi.num_classes != data.c:
        raise ConfigurationError(f"classifier predicts {psi.num_classes} classes, {data.name} has {data.c}",
                                 key="classifier.num_classes")


def cmd_train(cfg: ExperimentConfig, out_dir: Path, plain: bool = False,
              classifier_checkpoint: Optional[Path] = None) -> TrainOutcome:
    """train_joint, then copy the lowest-validation-loss epoch to best_{transform,classifier}.pt"""
    cfg = copy.deepcopy(cfg)
    if plain:
        cfg.train.plain = True
    if cfg.train.plain and cfg.train.alpha != 0:
        status_print(f"{warning('Note:')} plain training ignores alpha={cfg.train.alpha}")
        cfg.train.alpha = 0.0
    cfg.train.validate()

    with pipeline_stage("Data"):
        data = load_split(cfg)

    with pipeline_stage("Model"):
        if cfg.train.plain:
            h = identity_transform(cfg)
        else:
            h = build_transform_net(cfg.transform_net, init_seed=derive_seed(cfg.train.init_seed, "transform"))
        if classifier_checkpoint is not None:
            psi, _ = load_network(classifier_checkpoint, Classifier, "classifier", cfg.device)
        elif not cfg.train.joint:
            raise ConfigurationError("a frozen classifier must be loaded with --classifier", key="train.joint")
        else:
            psi = build_classifier(cfg.classifier, init_seed=derive_seed(cfg.train.init_seed, "classifier"))
        h, psi = h.to(cfg.device), psi.to(cfg.device)
        check_classes(psi, data)
        phi = build_feature_extractor(cfg.features.source, cfg.features.layer, h, psi)

    with pipeline_stage("Training"):
        checkpoints, records = train_joint(cfg.train, data, h, psi, phi, out_dir, policy=cfg.data.policy(),
                                           num_workers=cfg.data.num_workers)
        best = select_best_checkpoint(records, checkpoints)

    record = records[best.epoch - 1]
    outcome = TrainOutcome(out_dir / "best_transform.pt", out_dir / "best_classifier.pt", best.epoch,
                           record.val_total, record.val_accuracy)
    with pipeline_stage("Checkpoint"):
        for source, target in ((best.transform_path, outcome.transform_path),
                               (best.classifier_path, outcome.classifier_path)):
            _copy_checkpoint(source, target)
        if cfg.train.prune_checkpoints:
            for ref in checkpoints:
                if ref is not best:
                    for p in (ref.transform_path, ref.classifier_path):
                        p.unlink(missing_ok=True)
                        manifest_path(p).unlink(missing_ok=True)
        write_run_manifest(out_dir, "train", cfg,
                           {"transform": outcome.transform_path, "classifier": outcome.classifier_path},
                           {"best_epoch": best.epoch, "val_total": record.val_total,
                            "val_accuracy": record.val_accuracy, "plain": cfg.train.plain})

    status_print(f"{success('Best epoch')} {best.epoch}: val loss {metric(f'{record.val_total:.4f}')}, "
                 f"accuracy {metric(f'{record.val_accuracy:.2f}%')} -> {path_color(str(out_dir))}")
    return outcome


def _copy_checkpoint(source: Path, target: Path) -> None:
    try:
        shutil.copyfile(source, target)
        shutil.copyfile(manifest_path(source), manifest_path(target))
    except OSError as e:
        raise FileError(f"cannot copy checkpoint: {e}", [source, target]) from e


def _read_inputs(inputs: Sequence[Path], channels: int) -> List[torch.Tensor]:
    images, offenders = [], []
    for p in inputs:
        try:
            images.append(load_image(p, channels))
        except FileError:
            offenders.append(p)
    if offenders:
        raise FileError(f"{len(offenders)} unreadable input image(s)", offenders)
    return images


def _stack(images: Sequence[torch.Tensor]) -> torch.Tensor:
    shapes = {tuple(img.shape) for img in images}
    if len(shapes) != 1:
        raise DomainError(f"input images must share one size, got {sorted(shapes)}")
    return torch.stack(list(images))


def _row_label(path: Path, manifest: CheckpointManifest) -> str:
    return f"alpha={manifest.alpha:g}" if manifest.alpha is not None else path.stem


def cmd_protect(cfg: ExperimentConfig, checkpoints: Sequence[Path], inputs: Sequence[Path],
                out_dir: Path) -> List[Path]:
    """Protect every input with each transform checkpoint; float TIFF per input plus one comparison grid"""
    if not checkpoints:
        raise ConfigurationError("protect needs at least one transform --checkpoint", key="checkpoint")
    with pipeline_stage("Model"):
        transforms = []
        for p in checkpoints:
            net, manifest = load_checkpoint(p)
            if isinstance(net, Classifier):
                raise ConfigurationError(f"{p} holds a classifier, expected a transform network", key="checkpoint")
            transforms.append((p, net.to(cfg.device), manifest))
    channels = transforms[0][1].in_channels

    with pipeline_stage("Input"):
        if inputs:
            names = [Path(p).stem for p in inputs]
            plain = _stack(_read_inputs(inputs, channels))
        else:
            test = load_split(cfg).test.head(cfg.eval.grid_images)
            names = [f"test_{int(i):05d}" for i in test.indices]
            plain = test.images()

    written: List[Path] = []
    rows = [("plain", list(plain))]
    with pipeline_stage("Protect"):
        for p, net, manifest in transforms:
            protected = forward_transform(net, plain)
            folder = out_dir / "protected" if len(transforms) == 1 else out_dir / "protected" / p.stem
            for name, image in zip(names, protected):
                written.append(save_float_tiff(image, folder / f"{name}.tiff", {"transform": p.name}))
            rows.append((_row_label(p, manifest), list(protected)))
        grid = export_grid(rows, out_dir / "protect_grid.tiff")
        write_run_manifest(out_dir, "protect", cfg, {f"transform_{i}": p for i, p in enumerate(checkpoints)},
                           {"inputs": [str(p) for p in inputs], "outputs": len(written), "grid": str(grid)})

    status_print(f"{success('Protected')} {len(plain)} image(s) with {len(transforms)} transform(s) "
                 f"-> {path_color(str(out_dir))}")
    return written


def cmd_attack(cfg: ExperimentConfig, checkpoint: Optional[Path], out_dir: Path,
               identity: bool = False) -> EvalReport:
    """generate_pairs -> train_inverse -> evaluate_attack, plus a plain/protected/estimated grid"""
    if checkpoint is None and not identity:
        raise ConfigurationError("attack needs a transform --checkpoint (or --identity for the positive control)",
                                 key="checkpoint")
    if identity:
        checkpoint = None
    with pipeline_stage("Model"):
        h = identity_transform(cfg) if identity else load_transform(checkpoint, cfg)
    with pipeline_stage("Data"):
        data = load_split(cfg)
        source: ImageSet = getattr(data, cfg.attack.pair_source).head(cfg.attack.max_pairs)
        held_out = data.test.head(cfg.attack.held_out)

    with pipeline_stage("Pairs"):
        pairs = generate_pairs(h, source, batch_size=cfg.eval.batch_size)
        if not verify_pairs(h, pairs, batch_size=cfg.eval.batch_size):
            raise DomainError("transform is not deterministic: recomputing h(x) changed the protected images")
        write_pair_manifest(pairs, out_dir / "pairs.manifest.yaml", checkpoint, cfg.attack.pair_source)

    with pipeline_stage("Inverse training"):
        g = build_inverse_net(cfg.inverse_net, init_seed=derive_seed(cfg.attack.init_seed, "inverse")).to(cfg.device)
        g, history = train_inverse(pairs, g, cfg.attack)
        inverse_path = save_checkpoint(
            g,
            CheckpointManifest(epoch=len(history), alpha=None, seeds={"attack": cfg.attack.seed},
                               dataset=cfg.dataset, role="inverse",
                               extra={"transform_sha256": checkpoint_digest(checkpoint) if checkpoint else "identity",
                                      "final_train_mse": history[-1].train_mse if history else None}),
            out_dir / "inverse.pt",
        )

    with pipeline_stage("Attack evaluation"):
        report = evaluate_attack(g, h, held_out, peak=cfg.eval.peak, batch_size=cfg.eval.batch_size,
                                 config_digest=cfg.digest())
        shown = held_out.head(cfg.eval.grid_images).images()
        protected = forward_transform(h, shown)
        rows = [("plain", list(shown)), ("protected", list(protected)),
                ("estimated", list(estimate(g, protected)))]
        grid = export_grid(rows, out_dir / "attack_grid.tiff")
        report.grid_paths.append(str(grid))
        report.extra.update({"pairs": len(pairs), "held_out": len(held_out), "identity_transform": identity,
                             "pair_mse": reconstruction_mse(g, pairs, batch_size=cfg.eval.batch_size)})
        report_path = report.save(out_dir, "attack_report")
        write_run_manifest(out_dir, "attack", cfg, {"transform": checkpoint, "inverse": inverse_path},
                           {"report": str(report_path)})

    _print_report(report)
    return report


def cmd_eval(cfg: ExperimentConfig, checkpoint: Optional[Path], classifier: Path, out_dir: Path) -> EvalReport:
    """Accuracy on protected test images, protected-vs-plain PSNR and a plain/protected grid"""
    with pipeline_stage("Model"):
        h = load_transform(checkpoint, cfg)
        psi, _ = load_network(classifier, Classifier, "classifier", cfg.device)
    with pipeline_stage("Data"):
        data = load_split(cfg)
        check_classes(psi, data)
    with pipeline_stage("Evaluation"):
        report = evaluate_protection(h, psi, data.test, peak=cfg.eval.peak, batch_size=cfg.eval.batch_size,
                                     config_digest=cfg.digest())
        shown = data.test.head(cfg.eval.grid_images).images()
        grid = export_grid([("plain", list(shown)), ("protected", list(forward_transform(h, shown)))],
                           out_dir / "eval_grid.tiff")
        report.grid_paths.append(str(grid))
        report.extra.update({"transform": str(checkpoint) if checkpoint else "identity", "images": len(data.test)})
        report_path = report.save(out_dir, "eval_report")
        write_run_manifest(out_dir, "eval", cfg, {"transform": checkpoint, "classifier": classifier},
                           {"report": str(report_path)})
    _print_report(report)
    return report


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path, with_plain: bool = False) -> List[Dict]:
    """One protected model per alpha in cfg.alpha_sweep (plus the plain row); accuracy table"""
    settings: List[Tuple[str, float, bool]] = [("plain", 0.0, True)] if with_plain else []
    settings += [(f"alpha={alpha:g}", float(alpha), False) for alpha in cfg.alpha_sweep]
    if not settings:
        raise ConfigurationError("nothing to sweep", key="alpha_sweep")

    rows = []
    for name, alpha, plain in settings:
        run_cfg = copy.deepcopy(cfg)
        run_cfg.train.alpha = alpha
        run_dir = out_dir / ("plain" if plain else f"alpha_{alpha:g}")
        status_print(header(f"\n=== {name} ==="))
        outcome = cmd_train(run_cfg, run_dir, plain=plain)
        report = cmd_eval(run_cfg, None if plain else outcome.transform_path, outcome.classifier_path, run_dir)
        rows.append({"setting": name, "alpha": alpha, "accuracy_percent": report.accuracy_percent,
                     "mean_psnr": report.mean_psnr, "best_epoch": outcome.best_epoch})

    with pipeline_stage("Sweep table"):
        _write_table(rows, out_dir)
        write_run_manifest(out_dir, "sweep", cfg, extra={"rows": rows})
    return rows


def _write_table(rows: List[Dict], out_dir: Path) -> None:
    columns = ["setting", "alpha", "accuracy_percent", "mean_psnr", "best_epoch"]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "accuracy_table.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
        lines = ["| Setting | Accuracy (%) | Mean PSNR (dB) | Best epoch |", "| --- | --- | --- | --- |"]
        for row in rows:
            psnr_text = f"{row['mean_psnr']:.2f}" if row["mean_psnr"] is not None else "inf"
            lines.append(f"| {row['setting']} | {row['accuracy_percent']:.2f} | {psnr_text} | {row['best_epoch']} |")
        (out_dir / "accuracy_table.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise FileError(f"cannot write accuracy table: {e}", [out_dir]) from e
    print("\n".join(lines))


def cmd_submit(cfg: ExperimentConfig, checkpoint: Path, server_url: str, inputs: Sequence[Path],
               count: int, out_dir: Path) -> List:
    """Protect locally, submit only protected images, print one line per response"""
    with pipeline_stage("Model"):
        h = load_transform(checkpoint, cfg)
    with pipeline_stage("Input"):
        if inputs:
            images = _stack(_read_inputs(inputs, h.in_channels))
            names = [str(p) for p in inputs]
        else:
            test = load_split(cfg).test.head(count)
            images, names = test.images(), [f"test_{int(i):05d}" for i in test.indices]
    with pipeline_stage("Submit"):
        client = ClassifierClient(server_url, retries=cfg.serve.retries, timeout=cfg.serve.timeout,
                                  retry_delay=cfg.serve.retry_delay)
        responses = client_protect_and_submit(h, images, client)
        results = [{"input": name, "label": r.label, "probabilities": r.probabilities, "model_digest": r.model_digest}
                   for name, r in zip(names, responses)]
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "responses.yaml", "w", encoding="utf-8") as handle:
            yaml.safe_dump(results, handle, sort_keys=False)
        write_run_manifest(out_dir, "submit", cfg, {"transform": checkpoint}, {"server": server_url})
    for row in results:
        print(f"{row['input']}\tlabel={row['label']}\tp={max(row['probabilities']):.4f}")
    return responses


def _print_report(report: EvalReport) -> None:
    print(header(f"\n{report.kind.capitalize()} report"))
    if report.accuracy_percent is not None:
        print(f"  accuracy:   {metric(f'{report.accuracy_percent:.2f}%')}")
    print(f"  images:     {len(report.psnr_values)}")
    if report.box is not None:
        box = report.box
        print(f"  PSNR (dB):  median {metric(f'{box.median:.2f}')}  box [{box.q1:.2f}, {box.q3:.2f}]  "
              f"whiskers [{box.whisker_low:.2f}, {box.whisker_high:.2f}]")
        if box.excluded:
            print(f"  {warning(f'{box.excluded} perfect reconstruction(s) (infinite PSNR) left out of the box')}")
    for grid in report.grid_paths:
        print(f"  grid:       {path_color(grid)}")


def print_profiles() -> None:
    print("\n" + "═" * 80)
    print("Available Config Profiles")
    print("═" * 80 + "\n")
    print(f"{'Profile':<20} {'Description':<58}")
    print("-" * 80)
    profiles = list_profiles()
    for name, _, description in profiles:
        print(f"{name:<20} {description:<58}")
    print("\n" + "═" * 80)
    print(f"Total: {len(profiles)} profiles (use with --config NAME)")
    print("═" * 80 + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="""
╔═══════════════════════════════════════════════════════════════════════╗
║  ITN Protect - Learnable Visual Protection for Image Classification   ║
╚═══════════════════════════════════════════════════════════════════════╝

Trains a transformation network h together with a classifier psi so that
protected images h(x) carry no recognizable content but still classify well:
  • train    jointly train h and psi (or psi alone with --plain)
  • protect  write protected images and a comparison grid
  • attack   run the inverse-network attack against a transform
  • eval     accuracy and PSNR on the protected test set
  • serve    serve psi over HTTP
  • submit   protect locally and classify on a server
  • sweep    train and evaluate one model per alpha
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  List the shipped config profiles:
    %(prog)s --list-profiles

  Train (seconds-scale smoke run, then the desk-scale CIFAR-10 run):
    %(prog)s --config toy train
    %(prog)s --config desk_cifar10 --out runs/desk train
    %(prog)s --config full_cifar10 --set train.alpha=0.01 train

  Plain-image baseline (psi trained on unprotected images):
    %(prog)s --config desk_cifar10 --out runs/plain train --plain

  Protect images (several checkpoints give one grid row per alpha):
    %(prog)s --out runs/protect protect -c runs/desk/best_transform.pt photo1.png photo2.png
    %(prog)s --config desk_cifar10 protect -c a0/best_transform.pt -c a005/best_transform.pt

  Attack a trained transform, or the identity as a positive control:
    %(prog)s --config desk_cifar10 --out runs/attack attack -c runs/desk/best_transform.pt
    %(prog)s --config desk_cifar10 --out runs/control attack --identity

  Evaluate:
    %(prog)s --config desk_cifar10 eval -c runs/desk/best_transform.pt --classifier runs/desk/best_classifier.pt

  Serve the classifier and submit protected images:
    %(prog)s serve --classifier runs/desk/best_classifier.pt --port 8080
    %(prog)s --config desk_cifar10 submit -c runs/desk/best_transform.pt --server http://127.0.0.1:8080 --count 10

  Accuracy table over the configured alpha values:
    %(prog)s --config desk_cifar10 --out runs/sweep sweep --with-plain

Exit codes:
  0 success, 1 invalid value or unexpected error, 2 configuration error, 3 file error,
  4 checkpoint (serialization) error, 5 training diverged, 6 transport/protocol error,
  130 interrupted

Notes:
  - Precedence is: flags (--seed, --out) > --set overrides > config file > defaults
  - --set values are parsed as YAML scalars (e.g. --set train.lr_milestones=[2,4])
  - CIFAR archives are read from data.root; pass --set data.download=true to fetch them
  - Use --debug for verbose tracing and full tracebacks
        """,
    )
    parser.add_argument("--config", dest="config", default=None, metavar="FILE",
                        help="Experiment YAML file or shipped profile name (see --list-profiles)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key, e.g. train.alpha=0.01 (can be used multiple times)")
    parser.add_argument("--seed", dest="seed", type=int, default=None, metavar="N",
                        help="Training and attack seed (overrides train.seed and attack.seed)")
    parser.add_argument("--out", dest="out", default=None, metavar="DIR",
                        help="Output directory (overrides output_dir)")
    parser.add_argument("--debug", dest="debug", action="store_true",
                        help="Show debug output and full tracebacks (default: off)")
    parser.add_argument("--no-progress", dest="no_progress", action="store_true",
                        help="Disable progress bars")
    parser.add_argument("--list-profiles", dest="list_profiles", action="store_true",
                        help="Show the shipped config profiles and exit")

    verbs = parser.add_subparsers(dest="command", metavar="COMMAND")

    train = verbs.add_parser("train", help="Jointly train the transform network and classifier")
    train.add_argument("--plain", action="store_true", help="Train the classifier on plain images (identity transform)")
    train.add_argument("--classifier", type=Path, default=None, metavar="FILE",
                       help="Start from (or, with train.joint=false, freeze) this classifier checkpoint")

    protect = verbs.add_parser("protect", help="Write protected images and a comparison grid")
    protect.add_argument("-c", "--checkpoint", dest="checkpoints", type=Path, action="append", default=[],
                         metavar="FILE", help="Transform checkpoint (repeat for one grid row per checkpoint)")
    protect.add_argument("inputs", nargs="*", type=Path, metavar="IMAGE",
                         help="Input images (default: the first eval.grid_images test images)")

    attack = verbs.add_parser("attack", help="Train an inverse network against a transform and score it")
    attack.add_argument("-c", "--checkpoint", type=Path, default=None, metavar="FILE", help="Transform checkpoint")
    attack.add_argument("--identity", action="store_true", help="Attack the identity transform (positive control)")

    evaluate = verbs.add_parser("eval", help="Accuracy and PSNR on the protected test set")
    evaluate.add_argument("-c", "--checkpoint", type=Path, default=None, metavar="FILE",
                          help="Transform checkpoint (omit for the plain-image row)")
    evaluate.add_argument("--classifier", type=Path, required=True, metavar="FILE", help="Classifier checkpoint")

    serve = verbs.add_parser("serve", help="Serve the classifier over HTTP")
    serve.add_argument("--classifier", "-c", "--checkpoint", dest="classifier", type=Path, required=True,
                       metavar="FILE", help="Classifier checkpoint")
    serve.add_argument("--host", default=None, help="Bind address (default: serve.host)")
    serve.add_argument("--port", type=int, default=None, help="Port (default: serve.port)")

    submit = verbs.add_parser("submit", help="Protect locally and classify on a server")
    submit.add_argument("-c", "--checkpoint", type=Path, required=True, metavar="FILE", help="Transform checkpoint")
    submit.add_argument("--server", default=None, metavar="URL", help="Server URL (default: from serve.host/port)")
    submit.add_argument("--count", type=int, default=10, metavar="N", help="Test images to submit when no IMAGE given")
    submit.add_argument("inputs", nargs="*", type=Path, metavar="IMAGE", help="Input images")

    sweep = verbs.add_parser("sweep", help="Train and evaluate one model per alpha in alpha_sweep")
    sweep.add_argument("--with-plain", action="store_true", help="Add the plain-image baseline row")

    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"attack.seed={args.seed}"]
    cfg = load_config(args.config, overrides)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    return cfg


def run(args: argparse.Namespace) -> None:
    cfg = resolve_config(args)
    set_progress(cfg.progress and not args.no_progress)
    out_dir = Path(cfg.output_dir)
    debug_print(f"config digest {cfg.digest()}, output {out_dir}", info)

    if args.command == "train":
        cmd_train(cfg, out_dir, plain=args.plain, classifier_checkpoint=args.classifier)
    elif args.command == "protect":
        cmd_protect(cfg, args.checkpoints, args.inputs, out_dir)
    elif args.command == "attack":
        cmd_attack(cfg, args.checkpoint, out_dir, identity=args.identity)
    elif args.command == "eval":
        cmd_eval(cfg, args.checkpoint, args.classifier, out_dir)
    elif args.command == "serve":
        with pipeline_stage("Serve"):
            serve_classifier(args.classifier, args.host or cfg.serve.host, args.port or cfg.serve.port,
                             cfg.serve.max_payload_bytes)
    elif args.command == "submit":
        server_url = args.server or f"http://{cfg.serve.host}:{cfg.serve.port}"
        cmd_submit(cfg, args.checkpoint, server_url, args.inputs, args.count, out_dir)
    elif args.command == "sweep":
        cmd_sweep(cfg, out_dir, with_plain=args.with_plain)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    set_debug(args.debug)

    if args.list_profiles:
        print_profiles()
        return 0
    if not args.command:
        parser.error("a command is required (train, protect, attack, eval, serve, submit, sweep)")

    try:
        run(args)
    except ITNError as e:
        where = getattr(e, "stage_name", None) or args.command.capitalize()
        print(f"{error(f'{where} failed:')} {e}", file=sys.stderr)
        if is_debug():
            traceback.print_exc()
        return e.exit_code
    except KeyboardInterrupt:
        print(f"\n\n{error('Interrupted by user.')}", file=sys.stderr)
        return 130
    except Exception as e:
        print(f"{error('Fatal error:')} {type(e).__name__}: {e}", file=sys.stderr)
        if is_debug():
            traceback.print_exc()
        else:
            print(f"{stage('Hint:')} rerun with --debug for the full traceback", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
