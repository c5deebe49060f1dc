"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``. Every criterion prints a
single ``[criterion N] PASS|FAIL ...`` line to the terminal and asserts at
its stated tolerance. The learning and ablation criteria train real models
and take tens of minutes on one CPU core.
"""

import dataclasses
import io
import math
import time

import numpy as np
import pytest

from attnvo.app import encode_frame_stream, read_poses, serve, StreamFrameMessage, StreamingInference
from attnvo.app.harness import (
    LEARNING_DATA,
    LEARNING_SEQUENCES,
    Summary,
    ablation_run,
    evaluate,
    median_epochs,
    predict,
    toy_train_config,
    zero_motion,
)
from attnvo.data.dataset import synthetic_dataset
from attnvo.data.images import AugmentConfig, ChannelStats
from attnvo.data.synth import SynthConfig
from attnvo.geometry import (
    Pose,
    accumulate,
    compose,
    motion_to_pose,
    pose_to_motion,
    relative_motions,
    rotation_angle,
)
from attnvo.metrics import ate, build_report, kitti_errors
from attnvo.nn import EVAL, TRAIN, ModelConfig
from attnvo.training import TrainConfig, save_checkpoint, train
from attnvo.trajectory import WindowConfig, infer_trajectory, prepare_frames

from conftest import random_motion, random_pose, random_rotation, random_walk
from gradcheck import check_model_gradients
from metric_oracles import constant_yaw, definitional_ate, planted_five, straight_line
from stubs import pair_local_model


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return emit


def test_criterion_1_paper_scale_results(capsys):
    with capsys.disabled():
        print("\n[criterion 1] N/A: paper-scale tables need the full-size model and real datasets; covered by criteria 2-9")
    pytest.skip("paper-scale reproduction is out of scope")


def test_criterion_2_pose_algebra(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_rt = 0.0
    for _ in range(10_000):
        m = random_motion(rng)
        back = pose_to_motion(motion_to_pose(m))
        worst_rt = max(worst_rt, np.max(np.abs(back.as_array() - m.as_array())))
        p = random_pose(rng)
        again = motion_to_pose(pose_to_motion(p))
        worst_rt = max(worst_rt, np.max(np.abs(again.matrix - p.matrix)))
    worst_acc = 0.0
    for _ in range(3):
        traj = random_walk(rng, 1001)
        rebuilt = accumulate(traj[0], relative_motions(traj))
        worst_acc = max(worst_acc, np.max(np.abs(rebuilt.matrices() - traj.matrices())))
    worst_conj = 0.0
    for _ in range(1000):
        p, g = random_pose(rng), random_pose(rng)
        conj = compose(compose(g, p), g.inverse())
        worst_conj = max(worst_conj, abs(rotation_angle(conj) - rotation_angle(p)))
    elapsed = time.perf_counter() - t0
    ok = worst_rt < 1e-9 and worst_acc < 1e-6 and worst_conj < 1e-9 and elapsed < 10
    report(
        2,
        ok,
        f"round trip {worst_rt:.1e} (<1e-9), accumulate {worst_acc:.1e} (<1e-6), "
        f"conjugation {worst_conj:.1e} (<1e-9), {elapsed:.1f}s (<10s)",
    )


def test_criterion_3_gradients(report):
    t0 = time.perf_counter()
    cfg = ModelConfig.tiny(dtype="float64")
    errors = {}
    for mode in (TRAIN, EVAL):
        for name, err in check_model_gradients(cfg, mode, step=1e-5).items():
            errors[f"{mode}:{name}"] = err
    worst = max(errors, key=errors.get)
    elapsed = time.perf_counter() - t0
    ok = errors[worst] < 1e-4 and elapsed < 300
    report(3, ok, f"{len(errors)} tensor checks, worst {worst} {errors[worst]:.1e} (<1e-4), {elapsed:.0f}s (<300s)")


def test_criterion_4_metric_oracles(report):
    t0 = time.perf_counter()
    gt, est = straight_line(900), straight_line(900, 1.01)
    a = max(abs(r.trans_pct - 1.0) for r in kitti_errors(est, gt))
    omega = 0.1
    b = max(abs(r.rot_deg_per_100m - 100 * omega) for r in kitti_errors(straight_line(900), constant_yaw(900, omega)))
    planted_est, planted_gt = planted_five()
    got, ref = ate(planted_est, planted_gt), definitional_ate(planted_est, planted_gt)
    c = max(abs(got[0] - ref[0]), abs(got[1] - ref[1]))
    traj = constant_yaw(1200, 0.05)
    rep = build_report(traj, traj)
    values = [v for r in rep.rows for v in (r.trans_pct, r.rot_deg_per_100m)]
    values += [rep.mean_trans_pct, rep.mean_rot_deg_per_100m, rep.ate_trans, rep.ate_rot_deg]
    d = all(v == 0 for v in values) and len(rep.rows) == 8
    elapsed = time.perf_counter() - t0
    ok = a <= 1e-6 and b <= 1e-6 and c <= 1e-9 and d and elapsed < 10
    report(4, ok, f"(a) {a:.1e} (b) {b:.1e} (c) {c:.1e} (d) all-zero={d}, {elapsed:.1f}s (<10s)")


# -- learning ------------------------------------------------------------------


@pytest.fixture(scope="module")
def learning_data():
    return synthetic_dataset(LEARNING_SEQUENCES, LEARNING_DATA)


@pytest.fixture(scope="module")
def learned(learning_data):
    t0 = time.perf_counter()
    result = train(toy_train_config(), learning_data)
    return result, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_learning(report, learned, learning_data):
    result, elapsed = learned
    losses = [r.val_loss for r in result.history]
    ratio = min(losses) / losses[0]
    ates = []
    for seq in learning_data["test"]:
        ates.append((ate(predict(result.best, seq), seq.trajectory)[0], ate(zero_motion(seq), seq.trajectory)[0]))
    beats = all(model < zero for model, zero in ates)
    ok = ratio <= 0.5 and len(losses) <= 50 and beats and elapsed < 1800
    pairs = ", ".join(f"{m:.2f} vs {z:.2f}" for m, z in ates)
    report(
        5,
        ok,
        f"val {losses[0]:.3f} -> {min(losses):.3f} (ratio {ratio:.2f} <= 0.5) in {len(losses)} epochs; "
        f"test ATE model vs zero-motion [{pairs}] m; {elapsed / 60:.1f} min (<30)",
    )


@pytest.mark.slow
def test_criterion_6_attention_ablation(report, learning_data):
    cfg = toy_train_config(max_epochs=15, early_stop_patience=15)
    runs = [ablation_run(cfg, learning_data, seed) for seed in (0, 1, 2)]
    att, abl = median_epochs(runs)
    detail = "; ".join(
        f"seed {r.seed}: threshold {r.threshold:.3f}, ablated epoch {r.ablated_epoch:g}, attention epoch {r.attention_epoch:g}"
        for r in runs
    )
    report(6, att <= abl, f"median epochs attention {att:g} <= ablated {abl:g} ({detail})")


def test_criterion_7_sliding_windows(report):
    t0 = time.perf_counter()
    raw = np.random.default_rng(7).integers(0, 256, (157, 24, 48, 3), dtype=np.uint8)
    frames = [StreamFrameMessage.from_image(0, im).image() for im in raw]
    stats, size = ChannelStats([0.5] * 3, [0.25] * 3), (12, 24)
    images = prepare_frames(frames, stats, size)
    trajs = {
        name: infer_trajectory(pair_local_model, None, images, cfg).matrices()
        for name, cfg in (("30/15", WindowConfig(30, 15)), ("10/5", WindowConfig(10, 5)), ("full", WindowConfig(157, 0)))
    }
    identical = all(np.array_equal(trajs["full"], m) for m in trajs.values())
    worst = 0.0
    for cfg in (WindowConfig(30, 15), WindowConfig(10, 5)):
        out = io.BytesIO()
        engine = StreamingInference(pair_local_model, None, cfg, stats, size)
        serve(io.BytesIO(encode_frame_stream(raw)), out, engine, pipelined=True)
        streamed = np.stack([m.pose.matrix for m in read_poses(io.BytesIO(out.getvalue()))])
        worst = max(worst, np.max(np.abs(streamed - trajs["full"])) if len(streamed) == 157 else math.inf)
    elapsed = time.perf_counter() - t0
    ok = identical and worst <= 1e-6 and elapsed < 60
    report(7, ok, f"offline configs identical={identical}, serve max deviation {worst:.1e} (<=1e-6), {elapsed:.1f}s (<60s)")


def test_criterion_8_determinism(report, tmp_path):
    ds = synthetic_dataset(5, SynthConfig(n_points=300, trajectory_length=20, image_size=(16, 32)))
    cfg = TrainConfig(batch_size=4, max_epochs=3, learning_rate=0.01, seed=11, model=ModelConfig.tiny(dtype="float32"))
    runs = []
    for k in range(2):
        r = train(cfg, ds)
        save_checkpoint(r.best, tmp_path / f"best{k}.ckpt")
        save_checkpoint(r.last, tmp_path / f"last{k}.ckpt")
        runs.append([(h.epoch, h.train_loss, h.val_loss) for h in r.history])
    same_hist = runs[0] == runs[1]
    same_ckpt = all((tmp_path / f"{n}0.ckpt").read_bytes() == (tmp_path / f"{n}1.ckpt").read_bytes() for n in ("best", "last"))
    report(8, same_hist and same_ckpt, f"histories identical={same_hist}, checkpoints byte-identical={same_ckpt}")


@pytest.mark.slow
def test_criterion_9_corruption(report, learned, learning_data):
    ckpt = learned[0].best
    seqs = learning_data["test"]
    clean = Summary.of(evaluate(ckpt, seqs))
    corrupted = Summary.of(
        [r for seed in (0, 1, 2) for r in evaluate(ckpt, seqs, corruption=AugmentConfig(apply_probability=1.0), seed=100 * seed)]
    )
    report(
        9,
        corrupted.dominates(clean),
        f"clean {dataclasses.astuple(clean)} vs corrupted {dataclasses.astuple(corrupted)} "
        "(trans %, rot deg/100m, ATE m, ATE deg); corrupted >= clean",
    )
