"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible even
under capture) before asserting.  Criteria 3 and 5-9 share one demo corpus
and one three-seed ablation, built lazily by module fixtures; the whole
module takes roughly an hour on one CPU core.
"""
import time

import numpy as np
import pytest

from intentgrasp import cli, nn, pipeline
from intentgrasp.config import load_config
from intentgrasp.rl import BINS
from intentgrasp.sim import SceneRanges, new_state, sample_scene
from intentgrasp.sim.scripted import grid_motions, one_step_grasps, pivot_motions, run_motions
from intentgrasp.trajseg import SegConfig, optimal_segmentation

from .gradcheck import fd_gradient, linear_probe_loss, max_relative_error, random_net, relu_margin
from .test_nn import LAYER_KINDS
from .test_trajseg import brute_force, random_poses

SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(capsys):
    def say(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return say


# ---------------------------------------------------------------------------
# 1-4: oracles


def test_criterion_1_segmentation_matches_brute_force(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        l = int(rng.integers(1, 9))
        n = int(rng.integers(1, min(4, l) + 1))
        poses = random_poses(rng, l)
        cfg = SegConfig(n=n, lam=1.0, mu=5.0)
        expected, _ = brute_force(poses, cfg)
        worst = max(worst, abs(optimal_segmentation(poses, cfg).total - expected))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-9 and elapsed < 10, f"max |dE| {worst:.2e}, {elapsed:.1f} s")


def test_criterion_2_gradients_match_finite_differences(verdict):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    while checked < 100:
        net, params, inputs = random_net(rng, LAYER_KINDS[checked % len(LAYER_KINDS)])
        out, tape = nn.forward(net, params, inputs, tape=True)
        if relu_margin(tape, params) < 1e-3:
            continue
        outs = out if isinstance(out, tuple) else (out,)
        probes = tuple(rng.normal(size=o.shape) for o in outs)
        _, g_out = linear_probe_loss(out, probes)
        analytic = nn.backward(net, params, tape, g_out if len(g_out) > 1 else g_out[0])
        worst = max(worst, max_relative_error(analytic, fd_gradient(net, params, inputs, probes)))
        checked += 1
    elapsed = time.perf_counter() - start
    verdict(2, worst <= 1e-4 and elapsed < 60, f"{checked} nets, max rel err {worst:.2e}, {elapsed:.1f} s")


def test_criterion_4_reachability_gap(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    table = grid_motions(BINS["x"], BINS["z"], BINS["beta"])
    one_step, pivots, scenes = 0, 0, 0
    for _ in range(30):
        s = new_state(sample_scene("card", rng, SceneRanges()))
        one_step += len(one_step_grasps(s, table))
        end = run_motions(s, pivot_motions(s, clearance=0.005))
        pivots += int(end.success and end.t == 3)
        scenes += 1
    elapsed = time.perf_counter() - start
    ok = one_step == 0 and pivots == scenes and elapsed < 5
    verdict(4, ok, f"{scenes} cards x {len(table)} one-step grasps: {one_step} succeed; "
                   f"3-step pivot {pivots}/{scenes}; {elapsed:.2f} s")


# ---------------------------------------------------------------------------
# shared corpus and ablation


@pytest.fixture(scope="module")
def acceptance_cfg(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    return load_config(None, {
        "estimator.epochs": 30,
        "policy.workers": 1,
        "paths.demo_dir": str(root / "demos"),
        "paths.checkpoint_dir": str(root / "checkpoints"),
        "paths.metrics_dir": str(root / "metrics"),
    })


@pytest.fixture(scope="module")
def corpus(acceptance_cfg):
    rep = pipeline.gen_demos(acceptance_cfg)
    pipeline.segment_file(acceptance_cfg)
    return rep


@pytest.fixture(scope="module")
def ablation(acceptance_cfg, corpus):
    return pipeline.run_ablation(acceptance_cfg, SEEDS)


def test_criterion_3_estimator_accuracy(verdict, acceptance_cfg, corpus):
    start = time.perf_counter()
    rep = pipeline.train_estimator_stage(acceptance_cfg)
    elapsed = time.perf_counter() - start
    acc = rep["val_accuracy"]
    verdict(3, corpus["demos"] == 3000 and acc >= 0.95 and elapsed < 600,
            f"{corpus['demos']} demos, held-out accuracy {acc:.4f}, {elapsed:.0f} s")


def test_criterion_5_intent_reward_ablation(verdict, ablation):
    intent, plain = ablation.median("intent", "card"), ablation.median("no-intent", "card")
    cost = sum(r["train_seconds"] for r in ablation.rows if r["arm"] in ("intent", "no-intent"))
    ok = intent >= 0.80 and plain <= 0.40 and intent - plain >= 0.30 and cost <= 7200
    verdict(5, ok, f"card success median intent {intent:.3f} vs no-intent {plain:.3f}, "
                   f"training {cost / 60:.0f} min")


def test_criterion_6_exploration_parity_on_blocks(verdict, ablation):
    intent, plain = ablation.median("intent", "block"), ablation.median("no-intent", "block")
    verdict(6, intent >= 0.90 and plain >= 0.90, f"block success median intent {intent:.3f}, no-intent {plain:.3f}")


def test_criterion_7_bc_distribution_shift(verdict, ablation):
    bc, intent = ablation.median("bc-all", "block_shifted"), ablation.median("intent", "block_shifted")
    verdict(7, intent - bc >= 0.20, f"shifted-position success median BC {bc:.3f} vs intent {intent:.3f}")


def test_criterion_8_imperfect_demo_robustness(verdict, ablation):
    m = {arm: ablation.median(arm, "overall") for arm in pipeline.ARMS}
    intent_drop = m["intent-perfect"] - m["intent"]
    bc_drop = m["bc-perfect"] - m["bc-all"]
    ok = abs(m["intent"] - m["intent-perfect"]) <= 0.10 and bc_drop >= intent_drop
    verdict(8, ok, f"intent all {m['intent']:.3f} / perfect {m['intent-perfect']:.3f}; "
                   f"BC all {m['bc-all']:.3f} / perfect {m['bc-perfect']:.3f}")


def test_criterion_9_reward_bounds(verdict, ablation):
    stats = ablation.reward_stats
    lo_i, hi_i = min(s["r_intr_min"] for s in stats), max(s["r_intr_max"] for s in stats)
    lo_t, hi_t = min(s["r_total_min"] for s in stats), max(s["r_total_max"] for s in stats)
    longest = max(s["max_length"] for s in stats)
    steps = sum(s["steps"] for s in stats)
    ok = 0 <= lo_i and hi_i <= 1 and 0 <= lo_t and hi_t <= 11 and longest <= 3 and steps > 0
    verdict(9, ok, f"{steps} steps: r' in [{lo_i:.3f}, {hi_i:.3f}], r_total in [{lo_t:.3f}, {hi_t:.3f}], "
                   f"max length {longest}")


# ---------------------------------------------------------------------------
# 10: determinism through the command line


def test_criterion_10_reruns_are_byte_identical(verdict, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    small = ["--seed", "3", "--set", "demos.per_type=30", "--set", "estimator.epochs=3",
             "--set", "policy.episodes=512", "--set", "policy.workers=1", "--set", "policy.eval_every=256",
             "--set", "policy.eval_episodes=20"]
    names = ["runs/demos/demos-s3.jsonl", "runs/metrics/gen-demos-s3.csv", "runs/demos/labeled-s3.jsonl",
             "runs/checkpoints/estimator-s3.npz", "runs/metrics/train-estimator-s3.csv",
             "runs/checkpoints/policy-intent-s3.npz", "runs/metrics/train-policy-s3-intent.csv",
             "runs/metrics/train-policy-s3-intent-diagnostics.csv"]
    snapshots, codes = [], []
    for _ in range(2):
        for cmd in ("gen-demos", "segment", "train-estimator", "train-policy"):
            codes.append(cli.run([*small, cmd]))
        capsys.readouterr()
        snapshots.append({n: (tmp_path / n).read_bytes() for n in names})
        for n in names:
            (tmp_path / n).unlink()
    same = [n for n in names if snapshots[0][n] == snapshots[1][n]]
    ok = set(codes) == {0} and len(same) == len(names)
    verdict(10, ok, f"{len(same)}/{len(names)} artifacts byte-identical across reruns")
