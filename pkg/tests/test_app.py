import io
import socket
import struct
import subprocess
import sys
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from attnvo.app import (
    FRAME_MAGIC,
    POSE_MAGIC,
    PoseMessage,
    ProtocolError,
    StreamFrameMessage,
    StreamingInference,
    encode_frame_stream,
    read_frames,
    read_poses,
    replay,
    serve,
    serve_tcp,
)
from attnvo.app.cli import main, read_stats_file, write_stats_file
from attnvo.data.dataset import load_sequence, write_dataset, synthetic_dataset
from attnvo.data.images import ChannelStats
from attnvo.data.poses import load_pose_file, save_pose_file
from attnvo.data.synth import SynthConfig
from attnvo.geometry import Pose
from attnvo.metrics import MetricsReport, build_report
from attnvo.nn import ModelConfig
from attnvo.training import TrainConfig, save_checkpoint, train
from attnvo.trajectory import AssemblyError, WindowConfig, infer_trajectory, prepare_frames, sliding_windows
from attnvo import config as kv

from conftest import random_pose, random_walk
from stubs import pair_local_model, zero_model

STATS = ChannelStats([0.4, 0.5, 0.6], [0.2, 0.25, 0.3])
SIZE = (8, 16)


def recording(n, seed=0, shape=(10, 20)):
    return np.random.default_rng(seed).integers(0, 256, (n, *shape, 3), dtype=np.uint8)


def offline(images, cfg, initial=None):
    as_float = [StreamFrameMessage.from_image(0, im).image() for im in images]
    return infer_trajectory(pair_local_model, None, prepare_frames(as_float, STATS, SIZE), cfg, initial)


def engine(cfg, model=pair_local_model, **kw):
    return StreamingInference(model, None, cfg, STATS, SIZE, **kw)


# -- protocol ------------------------------------------------------------------


def test_frame_message_round_trip():
    img = recording(1)[0]
    msg = StreamFrameMessage.from_image(7, img)
    (back,) = read_frames(io.BytesIO(FRAME_MAGIC + msg.encode()))
    assert back == msg
    np.testing.assert_array_equal(np.rint(back.image(np.float64) * 255), img)


def test_frame_byte_layout():
    msg = StreamFrameMessage(3, 2, 1, bytes(range(6)))
    raw = msg.encode()
    assert raw[:4] == struct.pack("<I", 8 + 4 + 4 + 6)
    assert struct.unpack_from("<QII", raw, 4) == (3, 2, 1)
    assert raw[20:] == bytes(range(6))


@given(st.integers(0, 2**64 - 1), st.floats(0, 1e6), st.integers(0, 2**32 - 1))
def test_pose_message_round_trip(index, latency, seed):
    pose = random_pose(np.random.default_rng(seed), 10.0)
    raw = POSE_MAGIC + PoseMessage(index, pose, latency).encode()
    (back,) = read_poses(io.BytesIO(raw))
    assert back.index == index and back.latency_ms == latency
    np.testing.assert_array_equal(back.pose.matrix, pose.matrix)
    assert len(raw) == 8 + 4 + 112


def test_protocol_errors():
    good = encode_frame_stream(recording(2))
    with pytest.raises(ProtocolError, match="header"):
        list(read_frames(io.BytesIO(b"NOTMAGIC" + good[8:])))
    with pytest.raises(ProtocolError, match="truncated"):
        list(read_frames(io.BytesIO(good[:-5])))
    with pytest.raises(ProtocolError, match="truncated"):
        list(read_frames(io.BytesIO(good[:10])))
    with pytest.raises(ProtocolError, match="payload"):
        list(read_frames(io.BytesIO(FRAME_MAGIC + struct.pack("<IQII", 17, 0, 2, 2) + b"x")))
    with pytest.raises(ProtocolError, match="zero-sized"):
        list(read_frames(io.BytesIO(FRAME_MAGIC + struct.pack("<IQII", 16, 0, 0, 2))))
    bad = np.eye(4)
    bad[0, 0] = 2.0
    body = struct.pack("<Q12dd", 0, *bad[:3].reshape(-1), 0.0)
    with pytest.raises(ProtocolError, match="rotation"):
        list(read_poses(io.BytesIO(POSE_MAGIC + struct.pack("<I", len(body)) + body)))
    assert list(read_frames(io.BytesIO(b""))) == []
    assert list(read_frames(io.BytesIO(FRAME_MAGIC))) == []


# -- streaming -----------------------------------------------------------------


@pytest.mark.parametrize("cfg", [WindowConfig(30, 15), WindowConfig(10, 5), WindowConfig(5, 4), WindowConfig(2, 1)])
def test_serve_matches_offline(cfg):
    imgs = recording(47, seed=1)
    ref = offline(imgs, cfg)
    out = io.BytesIO()
    serve(io.BytesIO(encode_frame_stream(imgs, first_index=100)), out, engine(cfg))
    poses = list(read_poses(io.BytesIO(out.getvalue())))
    assert [p.index for p in poses] == list(range(100, 147))
    got = np.stack([p.pose.matrix for p in poses])
    assert np.max(np.abs(got - ref.matrices())) < 1e-6


def test_pipelined_mode_matches_single_threaded():
    imgs = recording(33, seed=2)
    outs = []
    for pipelined in (False, True):
        buf = io.BytesIO()
        serve(io.BytesIO(encode_frame_stream(imgs)), buf, engine(WindowConfig(8, 3)), pipelined=pipelined)
        outs.append([(p.index, p.pose.matrix.tobytes()) for p in read_poses(io.BytesIO(buf.getvalue()))])
    assert outs[0] == outs[1]


def test_emission_cadence_follows_stride():
    cfg = WindowConfig(6, 2)
    eng = engine(cfg, model=zero_model)
    sizes = []
    for k, img in enumerate(recording(20)):
        out = eng.push(k, img / 255.0)
        if out:
            sizes.append(len(out))
    tail = eng.finish()
    assert sizes == [6, 4, 4, 4]
    assert len(tail) == 2
    assert sum(sizes) + len(tail) == 20
    assert len(sliding_windows(20, cfg)) == len(sizes) + 1


def test_empty_and_single_frame_sources():
    out = io.BytesIO()
    stats = serve(io.BytesIO(b""), out, engine(WindowConfig()))
    assert out.getvalue() == POSE_MAGIC and stats.poses == 0
    out = io.BytesIO()
    diag = io.StringIO()
    serve(io.BytesIO(encode_frame_stream(recording(1))), out, engine(WindowConfig()), diag)
    assert out.getvalue() == POSE_MAGIC and "single frame" in diag.getvalue()


def test_out_of_order_and_duplicate_frames():
    eng = engine(WindowConfig(4, 1))
    img = recording(1)[0] / 255.0
    eng.push(5, img)
    with pytest.raises(ProtocolError, match="duplicate"):
        eng.push(5, img)
    with pytest.raises(ProtocolError, match="out-of-order"):
        eng.push(7, img)
    raw = b"".join([FRAME_MAGIC] + [StreamFrameMessage.from_image(i, recording(1)[0]).encode() for i in (0, 2)])
    with pytest.raises(ProtocolError):
        serve(io.BytesIO(raw), io.BytesIO(), engine(WindowConfig()))


def test_zero_overlap_gap_is_reported():
    eng = engine(WindowConfig(3, 0), model=zero_model)
    with pytest.raises(AssemblyError, match="gap at frame 2"):
        for k, img in enumerate(recording(6)):
            eng.push(k, img / 255.0)


def test_diagnostics_do_not_change_poses():
    imgs = recording(25, seed=4)
    outs = []
    for diag in (None, io.StringIO()):
        buf = io.BytesIO()
        serve(io.BytesIO(encode_frame_stream(imgs)), buf, engine(WindowConfig(10, 5)), diag, report_every=5)
        outs.append([p.pose.matrix.tobytes() for p in read_poses(io.BytesIO(buf.getvalue()))])
        if diag is not None:
            lines = diag.getvalue().splitlines()
            assert len(lines) == 6 and all("fps=" in l and "mean_latency_ms=" in l for l in lines)
    assert outs[0] == outs[1]


def test_latency_uses_receipt_time():
    ticks = iter(np.arange(0.0, 100.0, 0.5))
    eng = engine(WindowConfig(3, 1), model=zero_model, clock=lambda: next(ticks))
    out = replay(recording(3), eng)
    assert [m.latency_ms for m in out] == [1500.0, 1000.0, 500.0]


def test_initial_pose_is_honoured(rng):
    start = random_pose(rng)
    imgs = recording(12, seed=5)
    out = replay(imgs, engine(WindowConfig(5, 2), initial=start))
    ref = offline(imgs, WindowConfig(5, 2), start)
    assert np.max(np.abs(np.stack([m.pose.matrix for m in out]) - ref.matrices())) < 1e-6


def test_serve_over_tcp():
    imgs = recording(20, seed=6)
    cfg = WindowConfig(6, 3)
    port = []
    ready = threading.Event()

    def run():
        serve_tcp("127.0.0.1", 0, engine(cfg), None, ready=lambda p: (port.append(p), ready.set()))

    t = threading.Thread(target=run)
    t.start()
    assert ready.wait(10)
    with socket.create_connection(("127.0.0.1", port[0])) as s:
        s.sendall(encode_frame_stream(imgs))
        s.shutdown(socket.SHUT_WR)
        data = b""
        while chunk := s.recv(65536):
            data += chunk
    t.join(10)
    poses = list(read_poses(io.BytesIO(data)))
    ref = offline(imgs, cfg)
    assert np.max(np.abs(np.stack([p.pose.matrix for p in poses]) - ref.matrices())) < 1e-6


# -- CLI -----------------------------------------------------------------------

TINY_SYNTH = SynthConfig(n_points=300, trajectory_length=40, image_size=(16, 32), seed=0)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    write_dataset(data, synthetic_dataset(4, TINY_SYNTH))
    cfg_file = root / "train.txt"
    cfg = TrainConfig(batch_size=4, max_epochs=1, learning_rate=0.01, model=ModelConfig.tiny(dtype="float32"))
    cfg_file.write_text(kv.dumps(cfg))
    code = main(["train", "--config", str(cfg_file), "--data", str(data), "--out", str(root / "run"), "--seed", "3"])
    assert code == 0
    return root


def test_cli_eval_zero_report(tmp_path, rng, capsys):
    path = tmp_path / "a.txt"
    save_pose_file(random_walk(rng, 150), path)
    csv_path = tmp_path / "r.csv"
    assert main(["eval", "--est", str(path), "--gt", str(path), "--csv", str(csv_path)]) == 0
    rep = MetricsReport.from_csv(csv_path.read_text())
    assert rep.rows and all(r.trans_pct == 0 and r.rot_deg_per_100m == 0 for r in rep.rows)
    assert rep.ate_trans == 0 and rep.ate_rot_deg == 0
    assert "Mean" in capsys.readouterr().out


def test_cli_train_writes_artifacts(trained):
    run = trained / "run"
    assert {p.name for p in run.iterdir()} == {"best.ckpt", "last.ckpt", "history.csv", "config.txt"}
    assert "seed = 3" in (run / "config.txt").read_text()


def test_cli_infer_then_eval_matches_in_process(trained, tmp_path):
    from attnvo.training import load_checkpoint

    seq_dir = trained / "data" / "test" / "synth_0003"
    est_path = tmp_path / "est.txt"
    ckpt_path = trained / "run" / "best.ckpt"
    args = ["infer", "--checkpoint", str(ckpt_path), "--seq", str(seq_dir), "--out", str(est_path)]
    assert main(args + ["--window", "10", "--overlap", "5"]) == 0
    csv_path = tmp_path / "r.csv"
    gt_path = seq_dir / "poses.txt"
    assert main(["eval", "--est", str(est_path), "--gt", str(gt_path), "--csv", str(csv_path), "--id", "s", "--lengths", "5", "10"]) == 0

    ckpt = load_checkpoint(ckpt_path)
    seq = load_sequence(seq_dir)
    imgs = prepare_frames(seq.frames, ckpt.stats, ckpt.config.model.image_size)
    est = infer_trajectory(None, ckpt.params, imgs, WindowConfig(10, 5))
    ref = build_report(est, load_pose_file(gt_path), [5.0, 10.0], trajectory_id="s")
    assert MetricsReport.from_csv(csv_path.read_text()) == ref


def test_cli_serve_subprocess(trained):
    seq = load_sequence(trained / "data" / "test" / "synth_0003")
    imgs = [f.image for f in seq.frames[:12]]
    ckpt = trained / "run" / "best.ckpt"
    proc = subprocess.run(
        [sys.executable, "-m", "attnvo.app.cli", "serve", "--checkpoint", str(ckpt), "--window", "5", "--overlap", "2"],
        input=encode_frame_stream(imgs),
        capture_output=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr.decode()
    poses = list(read_poses(io.BytesIO(proc.stdout)))
    assert [p.index for p in poses] == list(range(12))
    assert b"fps=" in proc.stderr


def test_cli_prepare_and_stats_file(tmp_path, capsys):
    root = tmp_path / "d"
    assert main(["prepare", "synth", str(root), "--count", "3", "--set", "trajectory_length=6", "--set", "n_points=50", "--set", "image_size=8,16"]) == 0
    assert main(["prepare", "stats", str(root)]) == 0
    stats = read_stats_file(root / "stats.txt")
    assert np.all(stats.std > 0)
    write_stats_file(stats, tmp_path / "s.txt")
    back = read_stats_file(tmp_path / "s.txt")
    np.testing.assert_array_equal(back.mean, stats.mean)
    seq_dir = root / "train" / "synth_0000"
    (seq_dir / "manifest.txt").unlink()
    assert main(["prepare", "manifest", str(seq_dir)]) == 0
    assert len(load_sequence(seq_dir).frames) == 6


def test_cli_errors(tmp_path, capsys):
    code = main(["infer", "--checkpoint", str(tmp_path / "missing.ckpt"), "--seq", str(tmp_path), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 1 and len(err.strip().splitlines()) == 1 and "missing.ckpt" in err
    with pytest.raises(SystemExit) as e:
        main(["eval", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    assert main(["train", "--out", str(tmp_path / "r"), "--set", "nonsense=1"]) == 1
    assert "nonsense" in capsys.readouterr().err
