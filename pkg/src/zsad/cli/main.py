from __future__ import annotations

import argparse
import datetime as dt
import sys
import time
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from zsad.adapters.datasets import (
    ManifestDataset,
    Preprocessor,
    convert_flat,
    convert_mvtec,
    generate_synthetic_dataset,
    load_manifest,
    save_manifest,
)
from zsad.adapters.datasets.synthetic import MANIFEST_FILE
from zsad.adapters.encoders import build_encoder
from zsad.config import settings
from zsad.config.run_config import RunConfig, apply_overrides, load_run_config
from zsad.core.dto import DatasetManifest, ManifestEntry, Sample
from zsad.core.constants import EXIT_OK
from zsad.core.errors import NumericError, ZsadError
from zsad.core.models import ImageScore, InferenceResult, LossMode
from zsad.io.checkpoint import load_checkpoint, save_checkpoint
from zsad.io.output_writer import (
    write_config_snapshot,
    write_heatmap,
    write_report_json,
    write_report_table,
    write_scores_jsonl,
    write_train_log,
)
from zsad.services.evaluation_service import EvaluationService, check_protocol
from zsad.services.prompt_service import init_learnable_prompts
from zsad.services.training_service import TrainingService


# -------------------------
# Arguments
# -------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="Run config (YAML)")
    p.add_argument("--backbone", default=None, help="Backbone preset (mock, clip-vit-l14, clip-vit-b16, ...)")
    p.add_argument("--weights", default=None, help="Local backbone weights file")
    p.add_argument("--seed", type=int, default=None, help="Random seed")
    p.add_argument("--num-workers", type=int, default=None, help="Data loader workers")
    p.add_argument("--out", default=settings.ZSAD_OUTPUT_DIR, help="Output folder")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True, help="Prompt checkpoint from `train`")
    p.add_argument("--strategy", choices=["S1", "S2", "S3", "S4", "S5"], default=None, help="Image scoring strategy")
    p.add_argument("--sigma", type=float, default=None, help="Gaussian smoothing sigma")
    p.add_argument("--lexicon", choices=["generic", "medical"], default=None, help="State lexicon for fixed prompts")
    p.add_argument("--prompting", choices=["decoupled", "fixed", "learned"], default=None, help="Prompt routing")
    p.add_argument("--override-same-domain", action="store_true", help="Allow evaluating on the training manifest")


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zsad", description="Zero-shot anomaly detection with decoupled prompts")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-dataset", help="Write a synthetic dataset with exact masks")
    s.add_argument("--out", required=True, help="Dataset folder")
    s.add_argument("--n-normal", type=int, default=40)
    s.add_argument("--n-anomalous", type=int, default=40)
    s.add_argument("--size", type=int, default=128, help="Image side in pixels")
    s.add_argument("--seed", type=int, default=111)
    s.add_argument("--name", default="synthetic", help="Manifest name")
    s.add_argument("--category", default="synthetic")

    c = sub.add_parser("convert-dataset", help="Build a manifest from a dataset tree")
    c.add_argument("--layout", choices=["mvtec", "flat"], required=True)
    c.add_argument("--root", required=True, help="Dataset root folder")
    c.add_argument("--name", required=True, help="Manifest name")
    c.add_argument("--domain", choices=["industrial", "medical"], default="industrial")
    c.add_argument("--category", default=None, help="Category name (flat layout)")
    c.add_argument("--annotation-level", choices=["image_only", "pixel_only", "both"], default="both", help="flat layout only")
    c.add_argument("--include-train-good", action="store_true", help="Also list train/good (mvtec layout)")
    c.add_argument("--out", required=True, help="Manifest path to write")

    t = sub.add_parser("train", help="Learn the localization prompts")
    t.add_argument("--manifest", required=True)
    _add_run_flags(t)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--loss-mode", choices=["local", "global", "both"], default=None)
    t.add_argument("--n-tokens", type=int, default=None, help="Learnable tokens per prompt (E)")

    e = sub.add_parser("evaluate", help="Evaluate a checkpoint on a manifest")
    e.add_argument("--manifest", required=True)
    _add_run_flags(e)
    _add_eval_flags(e)
    e.add_argument("--fpr-limit", type=float, default=None, help="AUPRO integration limit")
    e.add_argument("--heatmaps", action="store_true", help="Also export per-sample heatmaps")

    i = sub.add_parser("infer", help="Score images and write anomaly maps")
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--image", help="Single image file")
    i.add_argument("--category", default="object", help="Class name for a single --image")
    _add_run_flags(i)
    _add_eval_flags(i)
    i.add_argument("--heatmaps", action="store_true", help="Also write heatmaps")

    h = sub.add_parser("export-heatmaps", help="Write heatmaps for every sample of a manifest")
    h.add_argument("--manifest", required=True)
    _add_run_flags(h)
    _add_eval_flags(h)
    h.add_argument("--no-overlay", action="store_true", help="Plain colormap, no image underlay")
    return p


# -------------------------
# Progress
# -------------------------

def _make_progress_reporter(command: str):
    start_time = time.time()
    last_print = 0.0
    is_tty = sys.stdout.isatty()

    def _ts() -> str:
        return dt.datetime.now().strftime("%H:%M:%S")

    def _print_line(message: str) -> None:
        if is_tty:
            sys.stdout.write("\r" + message.ljust(88))
            sys.stdout.flush()
        else:
            print(message)

    def _clear_line() -> None:
        if is_tty:
            sys.stdout.write("\r" + (" " * 88) + "\r")
            sys.stdout.flush()

    def progress(event: str, data: dict) -> None:
        nonlocal last_print
        now = time.time()
        if event == "start":
            if command == "train":
                print(
                    f"[{_ts()}] Training • {data['samples']} samples • {data['epochs']} epoch(s) • "
                    f"batch {data['batch_size']} • {data['loss_mode']} loss"
                )
            else:
                print(
                    f"[{_ts()}] Evaluating {data['manifest']} • {data['categories']} categories • "
                    f"{data['samples']} samples • {data['strategy']} • {data['prompting']}"
                )
            return
        if event == "step":
            if not is_tty and data["step"] % 10 != 0:
                return
            if is_tty and now - last_print < 0.2:
                return
            _print_line(f"Epoch {data['epoch']} • step {data['step']} • loss {data['total']:.4f}")
            last_print = now
            return
        if event == "epoch_done":
            _clear_line()
            print(f"[{_ts()}] Epoch {data['epoch']} done • {data['steps']} step(s) • mean loss {data['mean_total']:.4f}")
            return
        if event == "sample":
            if not is_tty and data["processed"] % 100 != 0:
                return
            if is_tty and now - last_print < 0.2:
                return
            _print_line(f"{data['category']} • processed {data['processed']}")
            last_print = now
            return
        if event == "category_done":
            _clear_line()
            missing = data.get("missing_masks") or []
            extra = f" • {len(missing)} sample(s) without mask" if missing else ""
            print(f"[{_ts()}] {data['category']}: {data['samples']} sample(s){extra}")
            return
        if event == "done":
            _clear_line()
            elapsed = time.time() - start_time
            print(f"[{_ts()}] Done in {elapsed:.1f}s")
            return
        if event == "error":
            _clear_line()
            print(f"[{_ts()}] Error: {data.get('message', 'Unknown error')}", file=sys.stderr)

    return progress


# -------------------------
# Commands
# -------------------------

def _resolve(args: argparse.Namespace) -> RunConfig:
    return apply_overrides(load_run_config(args.config, args.backbone), args)


def _overlay_base(sample: Sample, pre: Preprocessor) -> np.ndarray:
    mean = torch.tensor(pre.mean).view(3, 1, 1)
    std = torch.tensor(pre.std).view(3, 1, 1)
    rgb = (sample.image.cpu() * std + mean).clamp(0.0, 1.0)
    return np.round(rgb.permute(1, 2, 0).numpy() * 255.0).astype(np.uint8)


def cmd_synth(args: argparse.Namespace) -> int:
    manifest = generate_synthetic_dataset(
        args.out,
        n_normal=args.n_normal,
        n_anomalous=args.n_anomalous,
        image_size=args.size,
        seed=args.seed,
        name=args.name,
        category=args.category,
    )
    print(f"Wrote: {Path(args.out) / MANIFEST_FILE} ({len(manifest.samples)} samples)")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    if args.layout == "mvtec":
        manifest = convert_mvtec(args.root, args.name, args.domain, include_train_good=args.include_train_good)
    else:
        manifest = convert_flat(args.root, args.name, args.domain, args.category, args.annotation_level)
    path = save_manifest(manifest, args.out)
    load_manifest(path)
    print(f"Wrote: {path} ({len(manifest.categories)} categories, {len(manifest.samples)} samples)")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, progress) -> int:
    cfg = _resolve(args)
    torch.manual_seed(cfg.train.seed)
    encoder = build_encoder(cfg.backbone)
    manifest = load_manifest(args.manifest)
    pre = Preprocessor.from_backbone(encoder.config)
    dataset = ManifestDataset(manifest, pre, hide_labels=cfg.train.loss_mode is LossMode.LOCAL)

    state = init_learnable_prompts(cfg.train.n_tokens, encoder.config.text_token_dim, cfg.train.seed)
    try:
        trained, log = TrainingService(encoder).train(dataset, state, cfg.train, on_progress=progress)
    except NumericError as exc:
        print(f"Wrote: {write_train_log(exc.log, args.out)}")
        raise

    meta = {
        "train_manifest": manifest.name,
        "backbone": encoder.config.name,
        "preprocess_fingerprint": pre.fingerprint(),
        "loss_mode": cfg.train.loss_mode.value,
    }
    print("Writing outputs...")
    paths = [
        save_checkpoint(trained, Path(args.out) / settings.CHECKPOINT_FILE, meta),
        write_train_log(log, args.out),
        write_config_snapshot(cfg.resolved_dict(), args.out),
    ]
    for p in paths:
        print(f"Wrote: {p}")
    return EXIT_OK


def _prepare_eval(args: argparse.Namespace, manifest: DatasetManifest):
    cfg = _resolve(args)
    encoder = build_encoder(cfg.backbone)
    pre = Preprocessor.from_backbone(encoder.config)
    ckpt = load_checkpoint(args.checkpoint, expected_token_dim=encoder.config.text_token_dim)
    service = EvaluationService(encoder)
    G_f = service.detection_prototypes(manifest, cfg.eval, cfg.prompts)
    return cfg, service, pre, ckpt, G_f


def cmd_evaluate(args: argparse.Namespace, progress) -> int:
    manifest = load_manifest(args.manifest)
    cfg, service, pre, ckpt, G_f = _prepare_eval(args, manifest)
    heatmap_dir = Path(args.out) / "heatmaps"

    def sink(sample: Sample, result: InferenceResult) -> None:
        write_heatmap(result.anomaly_map, heatmap_dir, sample.id, overlay=_overlay_base(sample, pre))

    report = service.evaluate(
        manifest, pre, G_f, ckpt, cfg.eval, on_progress=progress, sink=sink if args.heatmaps else None
    )
    print("Writing outputs...")
    for p in (
        write_report_json(report, args.out),
        write_report_table(report, args.out),
        write_config_snapshot(cfg.resolved_dict(), args.out),
    ):
        print(f"Wrote: {p}")
    return EXIT_OK


def _single_image_manifest(image: str, category: str) -> DatasetManifest:
    path = Path(image).resolve()
    entry = ManifestEntry(id=path.stem, category=category, image_path=path, label=0)
    return DatasetManifest(
        name=f"image:{path.name}",
        domain_tag="industrial",
        annotation_level="image_only",
        categories=(category,),
        samples=(entry,),
        root=path.parent,
    )


def cmd_infer(args: argparse.Namespace, progress) -> int:
    manifest = load_manifest(args.manifest) if args.manifest else _single_image_manifest(args.image, args.category)
    cfg, service, pre, ckpt, G_f = _prepare_eval(args, manifest)
    check_protocol(manifest, ckpt, pre, cfg.eval.override_same_domain)
    G_l = service.localization_prototypes(ckpt.state)

    scores: List[Tuple[str, ImageScore]] = []
    for sample, result in service.iter_results(manifest, pre, G_f, G_l, cfg.eval):
        scores.append((sample.id, result.score))
        if args.heatmaps:
            write_heatmap(result.anomaly_map, Path(args.out) / "heatmaps", sample.id, overlay=_overlay_base(sample, pre))
        print(f"{sample.id}: {result.score.value:.4f}")
    print(f"Wrote: {write_scores_jsonl(scores, args.out)}")
    return EXIT_OK


def cmd_export_heatmaps(args: argparse.Namespace, progress) -> int:
    manifest = load_manifest(args.manifest)
    cfg, service, pre, ckpt, G_f = _prepare_eval(args, manifest)
    check_protocol(manifest, ckpt, pre, cfg.eval.override_same_domain)
    G_l = service.localization_prototypes(ckpt.state)
    out_dir = Path(args.out) / "heatmaps"

    count = 0
    for sample, result in service.iter_results(manifest, pre, G_f, G_l, cfg.eval):
        overlay = None if args.no_overlay else _overlay_base(sample, pre)
        write_heatmap(result.anomaly_map, out_dir, sample.id, overlay=overlay)
        count += 1
    print(f"Wrote: {count} heatmap(s) to {out_dir}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    progress = _make_progress_reporter(args.command)
    try:
        if args.command == "synth-dataset":
            return cmd_synth(args)
        if args.command == "convert-dataset":
            return cmd_convert(args)
        if args.command == "train":
            return cmd_train(args, progress)
        if args.command == "evaluate":
            return cmd_evaluate(args, progress)
        if args.command == "infer":
            return cmd_infer(args, progress)
        return cmd_export_heatmaps(args, progress)
    except ZsadError as exc:
        progress("error", {"message": f"{exc.__class__.__name__}: {exc}"})
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
