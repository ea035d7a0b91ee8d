"""End-to-end acceptance runs at the default configuration.

Everything here trains at the shipped defaults, so this module is slow
(tens of minutes, single core). Each criterion prints one PASS/FAIL line
with its measured numbers before asserting, so a red run still reports
every measurement. Training arms are shared across criteria via module
fixtures.

Run just this file with `pytest tests/test_acceptance.py -v -s`.
"""

import copy
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import sparsevos.autodiff as ad
from sparsevos.autodiff import (
    Tensor,
    gradient_check,
    primitive_gradient_check,
    softmax_log_sum_check,
)
from sparsevos.bank import bank_quality, build_bank, load_bank, save_bank
from sparsevos.checkpoint import load_checkpoint, save_checkpoint
from sparsevos.config import RunConfig
from sparsevos.losses import supervised_loss, unsupervised_loss
from sparsevos.metrics import contour_f, evaluate_dataset, region_j
from sparsevos.model import ModelConfig, Segmenter, dataset_predictor
from sparsevos.synth import make_dataset, make_two_shot_split
from sparsevos.train import run_training

from test_bank import random_bank
from test_checkpoint import random_params
from test_losses import one_hot_map
from test_metrics import brute_force_f, brute_force_j

SEEDS = (0, 1, 2)
POINT = 0.01  # one G point
ORACLE_FLOOR = 0.70  # fixed once from bring-up oracle runs; regression bound


def report(name, ok, detail):
    print(f"\n{name} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def default_data():
    cfg = RunConfig()
    ds = make_dataset(cfg.n_videos, cfg.data_seed, cfg.dataset_template())
    train = [ds.by_id[i] for i in ds.train_ids]
    val = [ds.by_id[i] for i in ds.val_ids]
    split = make_two_shot_split(train, cfg.split_seed, cfg.n_shots)
    return train, val, split


@pytest.fixture(scope="module")
def ladder(default_data):
    """Every training arm of the ablation ladder, all three seeds."""
    train, val, split = default_data
    model = Segmenter(RunConfig().model_config())

    def geval(params):
        return evaluate_dataset(dataset_predictor(model, params), val).g

    arms = {}
    for seed in SEEDS:
        cfg = RunConfig(seed=seed)
        t0 = time.time()
        naive = run_training(cfg, "baseline_2shot", train, split)
        arms[("naive", seed)] = geval(naive.params)

        p1 = run_training(cfg, "phase1", train, split)
        arms[("phase1", seed)] = geval(p1.teacher)

        bank_bi = build_bank(model, p1.teacher, train, split, mode="bidirectional")
        _, q_before = bank_quality(bank_bi, train)

        p2 = run_training(cfg, "phase2", train, split,
                          bank=copy.deepcopy(bank_bi), init_params=p1.teacher)
        arms[("phase2", seed)] = geval(p2.params)
        _, q_after = bank_quality(p2.bank, train)
        arms[("bankq", seed)] = (q_before, q_after)

        oracle = run_training(cfg, "full_oracle", train, split)
        arms[("oracle", seed)] = geval(oracle.params)
        arms[("ladder_minutes", seed)] = (time.time() - t0) / 60.0

        # extra arms for A2 and A4, outside the A1 ladder budget
        bank_uni = build_bank(model, p1.teacher, train, split, mode="unidirectional")
        p2u = run_training(cfg, "phase2", train, split,
                           bank=copy.deepcopy(bank_uni), init_params=p1.teacher)
        arms[("phase2_uni", seed)] = geval(p2u.params)

        frozen_cfg = RunConfig(seed=seed, update_bank=False)
        p2f = run_training(frozen_cfg, "phase2", train, split,
                           bank=copy.deepcopy(bank_bi), init_params=p1.teacher)
        arms[("phase2_frozen", seed)] = geval(p2f.params)
    return arms


def arm_mean(arms, name):
    return float(np.mean([arms[(name, s)] for s in SEEDS]))


def test_a1_ablation_ladder(ladder):
    lift = (arm_mean(ladder, "phase2") - arm_mean(ladder, "naive")) / POINT
    gap = (arm_mean(ladder, "oracle") - arm_mean(ladder, "phase2")) / POINT
    chain_ok = all(
        ladder[("naive", s)] < ladder[("phase1", s)] < ladder[("phase2", s)]
        for s in SEEDS
    )
    chains = "  ".join(
        f"seed{s} {ladder[('naive', s)]:.4f}<{ladder[('phase1', s)]:.4f}"
        f"<{ladder[('phase2', s)]:.4f}" for s in SEEDS
    )
    minutes = max(ladder[("ladder_minutes", s)] for s in SEEDS)
    ok = lift >= 2.0 and gap <= 1.5 and chain_ok and minutes <= 30.0
    report(
        "A1 ablation ladder", ok,
        f"phase2-naive {lift:+.2f} pts (need >= +2.0), oracle-phase2 {gap:+.2f} pts "
        f"(need <= 1.5), per-seed chain [{chains}] "
        f"{'holds' if chain_ok else 'broken'}, slowest ladder {minutes:.1f} min "
        f"(budget 30)",
    )


def test_a2_bidirectional_beats_unidirectional(ladder):
    delta = (arm_mean(ladder, "phase2") - arm_mean(ladder, "phase2_uni")) / POINT
    report(
        "A2 bidirectional bank", delta >= 0.0,
        f"phase2(bidir) - phase2(unidir) = {delta:+.2f} pts over {len(SEEDS)} seeds "
        f"(need >= 0)",
    )


def test_a3_gradient_oracle():
    worst_op, worst = None, 0.0
    for op in ad.PRIMITIVE_OPS:
        for seed in range(20):
            err = primitive_gradient_check(op, seed=seed)
            if err > worst:
                worst_op, worst = f"{op}/seed{seed}", err
    for seed in range(20):
        err = softmax_log_sum_check(seed=seed)
        if err > worst:
            worst_op, worst = f"softmax_log_sum/seed{seed}", err

    # full triplet loss on a small model, float64 end to end
    model = Segmenter(ModelConfig(key_channels=3, value_channels=3, hidden_channels=4))
    for seed in range(20):
        params = model.init_params(seed=seed, dtype=np.float64)
        rng = np.random.default_rng(100 + seed)
        f1, f2, f3 = (Tensor(rng.random((3, 8, 8))) for _ in range(3))
        m1 = np.zeros((8, 8), dtype=np.uint8)
        m1[2:6, 2:6] = 1
        m2 = np.roll(m1, 1, axis=1)
        m3 = np.roll(m1, 2, axis=1)
        tensors = [t for _, t in params.items()]

        def loss_fn(*_):
            p2, p3 = model.forward_triplet(params, f1, f2, f3, m1, num_objects=1)
            return ad.add(
                supervised_loss([p2], [m2.astype(np.int64)]),
                supervised_loss([p3], [m3.astype(np.int64)]),
            )

        err = gradient_check(loss_fn, tensors, step=1e-5)
        if err > worst:
            worst_op, worst = f"triplet_loss/seed{seed}", err
    report(
        "A3 gradient oracle", worst <= 1e-4,
        f"max relative error {worst:.3e} at {worst_op} "
        f"({len(ad.PRIMITIVE_OPS)} primitives + softmax composite + triplet loss, "
        f"20 seeds each)",
    )


def test_a4_bank_update(ladder):
    delta = (arm_mean(ladder, "phase2") - arm_mean(ladder, "phase2_frozen")) / POINT
    quality = [ladder[("bankq", s)] for s in SEEDS]
    non_decreasing = all(after >= before for before, after in quality)
    qtext = "  ".join(f"seed{s} {b:.4f}->{a:.4f}" for s, (b, a) in zip(SEEDS, quality))
    ok = delta >= 0.0 and non_decreasing
    report(
        "A4 bank update", ok,
        f"phase2(dynamic) - phase2(frozen) = {delta:+.2f} pts (need >= 0); "
        f"bank quality construction->end [{qtext}] "
        f"{'non-decreasing' if non_decreasing else 'decreased'}",
    )


def test_a5_oracle_floor(ladder):
    mean_g = arm_mean(ladder, "oracle")
    report(
        "A5 oracle floor", mean_g >= ORACLE_FLOOR,
        f"full-supervision oracle mean G {mean_g:.4f} over {len(SEEDS)} seeds "
        f"(regression bound {ORACLE_FLOOR:.2f}, fixed at bring-up)",
    )


def test_a6_metric_oracles():
    rng = np.random.default_rng(2024)
    j_bad = 0
    for _ in range(1000):
        a = rng.integers(0, 2, size=(16, 16)).astype(np.uint8)
        b = rng.integers(0, 2, size=(16, 16)).astype(np.uint8)
        if region_j(a, b, 1) != brute_force_j(a, b, 1):
            j_bad += 1
    f_bad = 0
    worst_f = 0.0
    for _ in range(200):
        a = (rng.random((16, 16)) > 0.6).astype(np.uint8)
        b = (rng.random((16, 16)) > 0.6).astype(np.uint8)
        got = contour_f(a, b, 1, tolerance_radius=1)
        want = brute_force_f(a, b, 1, radius=1)
        diff = abs(got - want)
        worst_f = max(worst_f, diff)
        if diff > 1e-12:
            f_bad += 1
    ok = j_bad == 0 and f_bad == 0
    report(
        "A6 metric oracles", ok,
        f"region_j exact on {1000 - j_bad}/1000 pairs; contour_f vs "
        f"exhaustive-distance reference max |diff| {worst_f:.2e} on 200 pairs",
    )


def test_a7_loss_oracles():
    checks = []

    # supervised: perfect prediction, uniform two-class, direct 2x2 oracle
    y = np.array([[0, 1], [1, 0]])
    checks.append(abs(float(supervised_loss([one_hot_map(y, 2)], [y]).data)))

    y = np.zeros((3, 3), dtype=np.int64)
    p = Tensor(np.full((2, 3, 3), 0.5))
    checks.append(abs(float(supervised_loss([p], [y]).data) - np.log(2.0)))

    probs = np.array([[0.9, 0.8], [0.7, 0.6]])
    p = Tensor(np.stack([probs, 1.0 - probs]))
    y = np.zeros((2, 2), dtype=np.int64)
    direct = float(np.mean(-np.log([0.9, 0.8, 0.7, 0.6])))
    checks.append(abs(float(supervised_loss([p], [y]).data) - direct))

    # unsupervised: closed gate, matching one-hots, single-pixel oracle
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(3, 4, 4))
    soft = Tensor(np.exp(logits) / np.exp(logits).sum(axis=0, keepdims=True))
    loss, frac = unsupervised_loss([soft], [soft], tau1=1.0 + 1e-9)
    checks.append(abs(float(loss.data)))
    checks.append(abs(frac))

    y = np.array([[1, 0], [2, 1]])
    hot = one_hot_map(y, 3)
    loss, frac = unsupervised_loss([hot], [hot], tau1=0.9)
    checks.append(abs(float(loss.data)))
    checks.append(abs(frac - 1.0))

    labeler = Tensor(np.array([0.95, 0.05]).reshape(2, 1, 1))
    student = Tensor(np.array([0.6, 0.4]).reshape(2, 1, 1))
    loss, frac = unsupervised_loss([student], [labeler], tau1=0.9)
    checks.append(abs(float(loss.data) - (-np.log(0.6))))
    checks.append(abs(frac - 1.0))

    worst = max(checks)

    mono_bad = 0
    for _ in range(100):
        logits = rng.normal(size=(2, 3, 4, 4))
        ps = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        student = Tensor(ps[0])
        labeler = Tensor(ps[1])
        prev = None
        for tau1 in np.linspace(0.0, 1.0, 11):
            value = float(unsupervised_loss([student], [labeler], tau1=float(tau1))[0].data)
            if prev is not None and value > prev + 1e-12:
                mono_bad += 1
            prev = value
    ok = worst <= 1e-6 and mono_bad == 0
    report(
        "A7 loss oracles", ok,
        f"max |loss - direct scalar| {worst:.2e} over 6 pinned examples "
        f"(need <= 1e-6); tau1-monotonicity violations {mono_bad}/100",
    )


TINY = [
    "--set", "n_videos=6", "--set", "frame_height=16", "--set", "frame_width=16",
    "--set", "frames_per_video=8", "--set", "iterations=30", "--set",
    "phase2_iterations=20", "--set", "k_start=2", "--set", "k_end=4",
    "--set", "key_channels=4", "--set", "value_channels=4", "--set",
    "hidden_channels=6",
]


def _cli(args):
    proc = subprocess.run(
        [sys.executable, "-m", "sparsevos.cli"] + args + TINY,
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, f"{args}: {proc.stderr}"


def _run_chain(root):
    data = str(root / "data")
    _cli(["gen-data", "--out", data])
    _cli(["split", "--data", data, "--out", str(root / "sp")])
    _cli(["train-phase1", "--data", data, "--out", str(root / "p1"), "--seed", "3"])
    _cli(["build-bank", "--data", data, "--checkpoint", str(root / "p1"),
          "--out", str(root / "bank"), "--seed", "3"])
    _cli(["train-phase2", "--data", data, "--checkpoint", str(root / "p1"),
          "--bank", str(root / "bank" / "bank.plbk"),
          "--out", str(root / "p2"), "--seed", "3"])
    _cli(["train-baseline", "--data", data, "--out", str(root / "nv"), "--seed", "3"])
    _cli(["train-oracle", "--data", data, "--out", str(root / "orc"), "--seed", "3"])
    _cli(["eval", "--data", data, "--checkpoint", str(root / "p2"),
          "--out", str(root / "ev"), "--seed", "3"])
    _cli(["report", f"p2={root / 'ev' / 'eval.csv'}", "--out", str(root / "rep")])
    _cli(["pca-vis", "--data", data, "--checkpoint", str(root / "p2"),
          "--out", str(root / "pca"), "--seed", "3"])


def test_a8_determinism_and_persistence(tmp_path):
    # run every CLI mode, snapshot the outputs, then rerun at the same
    # paths so even echoed path strings must match bitwise
    root = tmp_path / "run"
    root.mkdir()
    _run_chain(root)
    snapshot = tmp_path / "snapshot"
    shutil.copytree(root, snapshot)
    shutil.rmtree(root)
    root.mkdir()
    _run_chain(root)
    compared = 0
    mismatched = []
    for first in sorted(snapshot.rglob("*")):
        if not first.is_file():
            continue
        second = root / first.relative_to(snapshot)
        compared += 1
        if not second.is_file() or first.read_bytes() != second.read_bytes():
            mismatched.append(str(first.relative_to(snapshot)))

    rng = np.random.default_rng(5)
    rt_bad = 0
    for i in range(100):
        params = random_params(rng)
        path = tmp_path / "ck.tsvl"
        save_checkpoint(path, params, iteration=i, phase="phase1")
        loaded, _, _ = load_checkpoint(path)
        for name in params.names():
            if not np.array_equal(
                np.asarray(params[name].data, dtype=np.float32), loaded[name].data
            ):
                rt_bad += 1
                break
    for i in range(100):
        bank = random_bank(rng)
        path = tmp_path / "bk.plbk"
        save_bank(bank, path)
        loaded = load_bank(path)
        for vid, frames in bank.videos.items():
            got = loaded.videos[vid]
            for f1, f2 in zip(frames, got):
                if not np.array_equal(f1.labels, f2.labels) or \
                        f1.provenance != f2.provenance or f1.source != f2.source:
                    rt_bad += 1
                    break
    ok = not mismatched and rt_bad == 0
    report(
        "A8 determinism and persistence", ok,
        f"{compared} output files bitwise identical across seeded reruns of all "
        f"10 CLI modes" + (f" except {mismatched}" if mismatched else "")
        + f"; {200 - rt_bad}/200 random checkpoint+bank round-trips lossless",
    )


def test_a9_split_robustness(default_data):
    train, val, _ = default_data
    model = Segmenter(RunConfig().model_config())
    gs = []
    for split_seed in (11, 101, 102, 103, 104):
        cfg = RunConfig(seed=0, split_seed=split_seed)
        split = make_two_shot_split(train, split_seed, cfg.n_shots)
        p1 = run_training(cfg, "phase1", train, split)
        bank = build_bank(model, p1.teacher, train, split, mode="bidirectional")
        p2 = run_training(cfg, "phase2", train, split, bank=bank,
                          init_params=p1.teacher)
        gs.append(evaluate_dataset(dataset_predictor(model, p2.params), val).g)
    std = float(np.std(gs, ddof=1)) / POINT
    detail = " ".join(f"{g:.4f}" for g in gs)
    report(
        "A9 split robustness", std <= 1.0,
        f"phase2 G over 5 two-shot splits [{detail}], sample std {std:.2f} pts "
        f"(need <= 1.0)",
    )
