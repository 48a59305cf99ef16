"""Command-line entry point: ``clap-uad {synth,attend,train,eval}``.

Exit codes: 0 success, 1 I/O failure, 2 usage, 3 backend, 4 data contract,
5 evaluation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import attention as att
from .config import ConfigError, PipelineConfig, load_config
from .dataset import DataContractError, LayoutError, generate_synthetic, load_image, scan_manifest
from .evaluation import EvaluationError, evaluate, render_text, write_reports
from .masking import save_mask, threshold_mask
from .pipeline import score_pipeline
from .reconstruction import build_model, load_checkpoint, save_checkpoint, train
from .viz import heatmap_overlay, mask_overlay, save_rgb

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_BACKEND, EXIT_DATA, EXIT_EVAL = 0, 1, 2, 3, 4, 5

log = logging.getLogger("clap_uad")


class UsageError(Exception):
    pass


def _set_determinism() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def _config(args, **overrides) -> PipelineConfig:
    flat = {k: v for k, v in overrides.items() if v is not None}
    if args.seed is not None:
        flat["seed"] = args.seed
    if args.out is not None:
        flat["out"] = args.out
    nested: dict = {}
    for k, v in flat.items():
        node = nested
        *head, last = k.split(".")
        for h in head:
            node = node.setdefault(h, {})
        node[last] = v
    cfg = load_config(args.config, nested)
    if not cfg.out:
        raise UsageError("an output directory is required (--out or config 'out')")
    return cfg


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    cfg = _config(args)
    try:
        m = generate_synthetic(args.n_normal, args.n_abnormal, args.side, cfg.seed,
                               cfg.out, n_test_normal=args.n_test_normal)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    m.save(Path(cfg.out) / "manifest.json")
    print(f"{m.dataset_name}: " + ", ".join(f"{k}={v}" for k, v in m.counts.items()))
    return EXIT_OK


def cmd_attend(args) -> int:
    cfg = _config(args, **{"prompts": args.prompts, "backend.name": args.backend,
                           "backend.model": args.model})
    strategy = args.strategy
    prompt_set = att.load_prompt_set(cfg.prompts)
    backend = att.make_backend(cfg.backend.name, cfg.backend.model, cfg.backend.beta)
    image = load_image(args.image, args.side if args.side else cfg.image_side)
    out = _out(cfg)
    stem = Path(args.image).stem
    mode = cfg.backend.prompt_mode

    pos = att.compute_saliency(backend, image, prompt_set.positive, mode)
    maps = {"positive": pos}
    if strategy == "clap":
        neg = att.compute_saliency(backend, image, prompt_set.negative, mode)
        maps["negative"] = neg
        maps["clap"] = att.contrastive_combine(pos, neg)
    for kind, amap in maps.items():
        save_rgb(out / f"{stem}_{kind}.png", heatmap_overlay(image, amap.values))
    # threshold the stored (16-bit) map so the written mask matches a re-read
    final = "clap" if strategy == "clap" else "positive"
    stored = att.save_attention(out / f"{stem}_{final}_map.png", maps[final])
    mask = threshold_mask(stored)
    save_mask(out / f"{stem}_mask.png", mask)
    save_rgb(out / f"{stem}_mask_overlay.png", mask_overlay(image, mask.bits))
    print(f"{stem}: {strategy} mask fraction {mask.selected_fraction:.4f}")
    return EXIT_OK


def _data_root(cfg: PipelineConfig, args) -> str:
    root = args.data or cfg.data
    if not root:
        raise UsageError("a dataset root is required (--data or config 'data')")
    return root


def cmd_train(args) -> int:
    cfg = _config(args, **{
        "data": args.data, "train.epochs": args.epochs,
        "train.samples_per_epoch": args.samples_per_epoch,
        "train.batch_size": args.batch_size, "train.learning_rate": args.lr,
        "unet.depth": args.depth, "unet.base_channels": args.base_channels,
        "image_side": args.side,
    })
    manifest = scan_manifest(_data_root(cfg, args))
    out = _out(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.zip"
    if args.resume and ckpt.exists():
        model = load_checkpoint(ckpt)
    else:
        model = build_model(cfg.unet, cfg.seed)
    train(model, manifest, cfg.train_config, cfg.mosaic, cfg.gms,
          progress=lambda e, l: print(f"epoch {e}: loss {l:.6f}"))
    save_checkpoint(model, ckpt)
    (out / "training_log.json").write_text(json.dumps(model.training_log, indent=2))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args, **{"data": args.data, "strategies": args.strategies,
                           "prompts": args.prompts, "backend.name": args.backend,
                           "backend.model": args.model, "image_side": args.side})
    manifest = scan_manifest(_data_root(cfg, args))
    out = _out(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.zip"
    model = load_checkpoint(ckpt)
    prompt_set = att.load_prompt_set(cfg.prompts)
    backend = att.make_backend(cfg.backend.name, cfg.backend.model, cfg.backend.beta)
    pcfgs = cfg.pipeline_cfgs
    digest = cfg.digest()

    reports = []
    for strategy in cfg.strategies:
        maps_dir = out / "maps" / strategy

        def scorer(img, strat, i, _dir=maps_dir):
            res = score_pipeline(backend, model, img, prompt_set, pcfgs, strat,
                                 mask_seed=np.random.SeedSequence([cfg.seed, i]))
            if args.save_maps:
                save_rgb(_dir / f"{i:05d}.png", heatmap_overlay(img, res.error_map.values, vmax=1.0))
            return res

        report, records = evaluate(manifest, scorer, strategy, cfg.image_side, digest)
        reports.append(report)
        rec_dir = out / "records"
        rec_dir.mkdir(exist_ok=True)
        (rec_dir / f"{strategy}.json").write_text(
            json.dumps([asdict(r) for r in records], indent=2))
    write_reports(reports, out)
    print(render_text(reports), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--config", default=default, help="YAML or JSON config file")
        g.add_argument("--seed", type=int, default=default)
        g.add_argument("--out", default=default, help="output directory")
        g.add_argument("-v", "--verbose", action="store_true", default=default)
        return g

    # flags may come before or after the subcommand
    common = global_flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="clap-uad", parents=[global_flags(None)],
                                description="Contrastive language prompting for medical UAD")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--n-normal", type=int, default=20)
    s.add_argument("--n-abnormal", type=int, default=10)
    s.add_argument("--n-test-normal", type=int)
    s.add_argument("--side", type=int, default=64)
    s.set_defaults(func=cmd_synth)

    def backend_flags(q):
        q.add_argument("--prompts", help="prompt file or bundled set name")
        q.add_argument("--backend", choices=["mock", "vlm"])
        q.add_argument("--model", help="VLM checkpoint name or path")
        q.add_argument("--side", type=int, help="resize images to this square side")

    a = sub.add_parser("attend", parents=[common], help="write attention maps for one image")
    a.add_argument("--image", required=True)
    a.add_argument("--strategy", choices=["clap", "plp"], default="clap")
    backend_flags(a)
    a.set_defaults(func=cmd_attend)

    t = sub.add_parser("train", parents=[common], help="train the inpainting U-Net")
    t.add_argument("--data")
    t.add_argument("--checkpoint")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--epochs", type=int)
    t.add_argument("--samples-per-epoch", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--depth", type=int)
    t.add_argument("--base-channels", type=int)
    t.add_argument("--side", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score the test split and report AUROC")
    e.add_argument("--data")
    e.add_argument("--checkpoint")
    e.add_argument("--strategies", help="comma-separated subset of clap,plp,none")
    e.add_argument("--save-maps", action="store_true")
    backend_flags(e)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_determinism()
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except att.BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataContractError, LayoutError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EvaluationError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
