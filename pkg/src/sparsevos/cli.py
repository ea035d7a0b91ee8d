"""Command line entry point.

Subcommands cover the whole workflow: generate data, draw a labeled
split, train either phase or baseline, build and refine the pseudo-label
bank, evaluate, compare runs, and project encoder features.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bank import bank_quality, build_bank, load_bank, save_bank
from .checkpoint import load_checkpoint, resolve_checkpoint, save_checkpoint
from .config import ConfigError, config_to_text, load_config
from .metrics import evaluate_dataset, write_eval_csv
from .model import Segmenter, dataset_predictor
from .pca import pca_vis, write_pca_csv
from .report import write_report
from .synth import (
    dataset_stats,
    load_dataset,
    load_id_list,
    load_split,
    make_dataset,
    make_two_shot_split,
    save_dataset,
    save_id_list,
    save_split,
)
from .train import CHECKPOINT_PHASE, TrainingError, run_training, write_train_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _out(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(cfg):
    root = Path(cfg.data_dir)
    if not root.is_dir():
        raise ConfigError(f"data directory not found: {root}")
    clips = load_dataset(root / "videos")
    by_id = {c.id: c for c in clips}
    train_ids = load_id_list(root / "train_ids.txt")
    val_ids = load_id_list(root / "val_ids.txt")
    missing = [i for i in train_ids + val_ids if i not in by_id]
    if missing:
        raise ValueError(f"id lists reference missing clips: {missing[:5]}")
    return [by_id[i] for i in train_ids], [by_id[i] for i in val_ids]


def _split_path(cfg):
    return Path(cfg.split_file) if cfg.split_file else Path(cfg.data_dir) / "twoshot.txt"


def _eval_clips(cfg):
    train_clips, val_clips = _load_data(cfg)
    return val_clips if cfg.eval_split == "val" else train_clips


def _save_train_outputs(cfg, mode, result):
    out = _out(cfg)
    save_checkpoint(out / "model.tsvl", result.params, result.iterations, CHECKPOINT_PHASE[mode])
    if result.teacher is not None:
        save_checkpoint(out / "teacher.tsvl", result.teacher, result.iterations, CHECKPOINT_PHASE[mode])
    write_train_log(out / "log.csv", result.log_rows)
    (out / "config.txt").write_text(config_to_text(cfg))
    return out


def cmd_gen_data(cfg, args):
    out = _out(cfg)
    ds = make_dataset(cfg.n_videos, cfg.data_seed, cfg.dataset_template())
    save_dataset(ds.clips, out / "videos")
    save_id_list(ds.train_ids, out / "train_ids.txt")
    save_id_list(ds.val_ids, out / "val_ids.txt")
    train_clips = [ds.by_id[i] for i in ds.train_ids]
    split = make_two_shot_split(train_clips, cfg.split_seed, cfg.n_shots)
    save_split(split, out / "twoshot.txt")
    stats = dataset_stats(ds.clips)
    print(
        f"wrote {stats['num_videos']} videos ({len(ds.train_ids)} train, "
        f"{len(ds.val_ids)} val) to {out}, {cfg.n_shots}-shot split over train"
    )


def cmd_split(cfg, args):
    train_clips, _ = _load_data(cfg)
    split = make_two_shot_split(train_clips, cfg.split_seed, cfg.n_shots)
    out = _out(cfg)
    path = out / "split.txt"
    save_split(split, path)
    print(f"wrote {path} ({len(split)} videos, seed {cfg.split_seed})")


def _run_train(cfg, mode, bank=None, init_params=None):
    train_clips, _ = _load_data(cfg)
    split = load_split(_split_path(cfg))
    result = run_training(cfg, mode, train_clips, split, bank=bank, init_params=init_params)
    out = _save_train_outputs(cfg, mode, result)
    return out, result


def cmd_train_phase1(cfg, args):
    out, result = _run_train(cfg, "phase1")
    final = result.log_rows[-1]
    print(
        f"phase1 done: {cfg.iterations} iterations, final loss_s {final[1]:.4f} "
        f"loss_u {final[2]:.4f}, {result.sampler.relaxed_draws} relaxed draws -> {out}"
    )


def cmd_build_bank(cfg, args):
    if not cfg.checkpoint:
        raise ConfigError("build-bank needs checkpoint (file or phase-1 run directory)")
    train_clips, _ = _load_data(cfg)
    split = load_split(_split_path(cfg))
    prefer = "teacher" if cfg.bank_source == "teacher" else "model"
    params, _, _ = load_checkpoint(resolve_checkpoint(cfg.checkpoint, prefer=prefer))
    model = Segmenter(cfg.model_config())
    bank = build_bank(model, params, train_clips, split, mode=cfg.bank_mode)
    _, quality = bank_quality(bank, train_clips)
    out = _out(cfg)
    save_bank(bank, out / "bank.plbk")
    print(
        f"bank ({cfg.bank_mode}) over {len(bank.videos)} videos, "
        f"{bank.stats['fallback_frames']} fallback frames, quality {quality:.4f} -> {out}"
    )


def cmd_train_phase2(cfg, args):
    if not cfg.bank_file:
        raise ConfigError("train-phase2 needs bank_file (from build-bank)")
    bank = load_bank(cfg.bank_file)
    init = None
    if cfg.phase2_init == "phase1":
        if not cfg.checkpoint:
            raise ConfigError(
                "phase2 warm start needs checkpoint; set phase2_init = scratch to skip"
            )
        # the teacher both labels the bank and generalizes better than the
        # raw student, so it is the warm start when the checkpoint has one
        init, _, _ = load_checkpoint(resolve_checkpoint(cfg.checkpoint, prefer="teacher"))
    out, result = _run_train(cfg, "phase2", bank=bank, init_params=init)
    save_bank(result.bank, out / "bank.plbk")
    train_clips, _ = _load_data(cfg)
    _, quality = bank_quality(result.bank, train_clips)
    print(
        f"phase2 done: {result.iterations} iterations, {result.bank_changes} bank pixels "
        f"updated, final bank quality {quality:.4f} -> {out}"
    )


def cmd_train_baseline(cfg, args):
    out, result = _run_train(cfg, "baseline_2shot")
    print(f"baseline done: {cfg.iterations} iterations -> {out}")


def cmd_train_oracle(cfg, args):
    out, result = _run_train(cfg, "full_oracle")
    print(f"oracle done: {cfg.iterations} iterations -> {out}")


def cmd_eval(cfg, args):
    if not cfg.checkpoint:
        raise ConfigError("eval needs checkpoint")
    params, _, phase = load_checkpoint(resolve_checkpoint(cfg.checkpoint))
    clips = _eval_clips(cfg)
    model = Segmenter(cfg.model_config())
    result = evaluate_dataset(dataset_predictor(model, params), clips)
    out = _out(cfg)
    write_eval_csv(result, out / "eval.csv")
    line = (
        f"{phase} on {cfg.eval_split}: J {result.mean_j:.4f} F {result.mean_f:.4f} "
        f"G {result.g:.4f} over {len(clips)} videos"
    )
    (out / "summary.txt").write_text(line + "\n")
    print(line)


def cmd_report(cfg, args):
    entries = []
    for item in args.runs:
        if "=" not in item:
            raise ConfigError(f"expected name=eval.csv, got {item!r}")
        name, path = item.split("=", 1)
        entries.append((name, path))
    md_path, csv_path = write_report(cfg.out_dir, entries)
    print(f"wrote {md_path} and {csv_path}")


def cmd_pca_vis(cfg, args):
    if not cfg.checkpoint:
        raise ConfigError("pca-vis needs checkpoint")
    params, _, _ = load_checkpoint(resolve_checkpoint(cfg.checkpoint))
    clips = _eval_clips(cfg)
    model = Segmenter(cfg.model_config())
    rows = pca_vis(model, params, clips, cfg.pca_frames, seed=cfg.seed)
    out = _out(cfg)
    write_pca_csv(out / "pca.csv", rows)
    fg = sum(1 for _, _, tag in rows if tag == "fg")
    print(f"wrote {out / 'pca.csv'}: {len(rows)} points, {fg} fg")


_COMMANDS = [
    ("gen-data", cmd_gen_data, "generate a synthetic dataset with id lists and a labeled split"),
    ("split", cmd_split, "draw a fresh labeled split for an existing dataset"),
    ("train-phase1", cmd_train_phase1, "train with labeled references and a mean teacher"),
    ("build-bank", cmd_build_bank, "propagate labels into a pseudo-label bank"),
    ("train-phase2", cmd_train_phase2, "retrain against the bank with dynamic updates"),
    ("train-baseline", cmd_train_baseline, "train on the labeled frames alone"),
    ("train-oracle", cmd_train_oracle, "train with full ground-truth supervision"),
    ("eval", cmd_eval, "score a checkpoint and write per-frame metrics"),
    ("report", cmd_report, "compare eval CSVs in one table"),
    ("pca-vis", cmd_pca_vis, "project key features onto two principal directions"),
]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sparsevos",
        description="two-shot video object segmentation lab",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, fn, help_text in _COMMANDS:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="dataset directory")
        p.add_argument("--split-file", dest="split_file", help="labeled split file")
        p.add_argument("--bank", help="pseudo-label bank file")
        p.add_argument("--checkpoint", help="checkpoint file or run directory")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override any config key (repeatable)",
        )
        if name == "report":
            p.add_argument("runs", nargs="+", metavar="NAME=EVAL_CSV",
                           help="labeled eval CSVs to compare")
        p.set_defaults(fn=fn)
    return parser


def _config_from_args(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for attr, key in [
        ("seed", "seed"), ("out", "out_dir"), ("data", "data_dir"),
        ("split_file", "split_file"), ("bank", "bank_file"), ("checkpoint", "checkpoint"),
    ]:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        args.fn(cfg, args)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        for key, value in exc.diagnostics.items():
            print(f"  {key}: {value}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
