"""Real-time streaming inference over the frame/pose wire protocol.

Frames arrive one at a time. Whenever the newest frame completes a window,
that window is run in eval mode and every frame it newly covers gets a pose.
The windowing and overlap rule are those of :mod:`attnvo.trajectory`, so a
replayed recording yields the same poses as offline inference.
"""

from __future__ import annotations

import logging
import queue
import socket
import sys
import threading
import time
from dataclasses import dataclass
from typing import BinaryIO, Callable, TextIO

import numpy as np

from attnvo.app.protocol import POSE_MAGIC, PoseMessage, ProtocolError, StreamFrameMessage, read_frames
from attnvo.data.images import ChannelStats
from attnvo.geometry import MotionVector, Pose, compose, motion_to_pose
from attnvo.training.checkpoint import load_checkpoint
from attnvo.trajectory import AssemblyError, Model, WindowConfig, network_model, prepare_image

log = logging.getLogger(__name__)


@dataclass
class Throughput:
    """Frame rate and latency accounting. Never touches the poses themselves."""

    clock: Callable[[], float] = time.perf_counter
    frames: int = 0
    poses: int = 0
    latency_sum_ms: float = 0.0
    started: float | None = None

    def frame(self) -> None:
        if self.started is None:
            self.started = self.clock()
        self.frames += 1

    def pose(self, latency_ms: float) -> None:
        self.poses += 1
        self.latency_sum_ms += latency_ms

    @property
    def fps(self) -> float:
        if self.started is None:
            return 0.0
        dt = self.clock() - self.started
        return self.poses / dt if dt > 0 else 0.0

    @property
    def mean_latency_ms(self) -> float:
        return self.latency_sum_ms / self.poses if self.poses else float("nan")

    def line(self) -> str:
        return f"frames={self.frames} poses={self.poses} fps={self.fps:.2f} mean_latency_ms={self.mean_latency_ms:.2f}"


class StreamingInference:
    """Incremental window scheduler. Feed frames with :meth:`push`, then call :meth:`finish`."""

    def __init__(
        self,
        model: Model | None,
        params,
        window: WindowConfig,
        stats: ChannelStats,
        image_size: tuple[int, int],
        initial: Pose | None = None,
        clock: Callable[[], float] = time.perf_counter,
    ):
        self.model = network_model if model is None else model
        self.params = params
        self.window = window
        self.stats = stats
        self.image_size = tuple(image_size)
        self.clock = clock
        self.pose = initial or Pose.identity()
        self.first_index: int | None = None
        self.count = 0  # frames received
        self.next_start = 0  # local position where the next window begins
        self.covered = 0  # pairs [0, covered) already have motions
        self.emitted = 0
        self._buf: list[np.ndarray] = []
        self._buf_start = 0
        self._received: dict[int, float] = {}

    def push(self, index: int, image: np.ndarray, received: float | None = None) -> list[PoseMessage]:
        """Add one HxWx3 frame in [0, 1]; returns the poses it released (possibly none)."""
        if self.first_index is None:
            self.first_index = index
        expected = self.first_index + self.count
        if index != expected:
            kind = "duplicate" if index < expected else "out-of-order"
            raise ProtocolError(f"{kind} frame index {index}, expected {expected}")
        self._received[self.count] = self.clock() if received is None else received
        self._buf.append(prepare_image(image, self.stats, self.image_size))
        self.count += 1
        pos = self.count - 1
        if pos == self.next_start + self.window.size - 1:
            return self._run(self.next_start, pos)
        return []

    def finish(self) -> list[PoseMessage]:
        """Flush the truncated final window at end of stream."""
        if self.count < 2 or self.covered == self.count - 1:
            return []
        return self._run(self.next_start, self.count - 1)

    def _run(self, s: int, e: int) -> list[PoseMessage]:
        lo = max(self.covered, s)
        if lo != self.covered or s >= e:
            raise AssemblyError(f"coverage gap at frame {self.covered}")
        imgs = np.stack(self._buf[s - self._buf_start : e - self._buf_start + 1])
        pred = np.asarray(self.model(imgs[None], self.params)).reshape(e - s, 6)
        out = []
        if self.emitted == 0:
            out.append(self._emit(0, self.pose))
        for k in range(lo - s, e - s):
            self.pose = compose(self.pose, motion_to_pose(MotionVector.from_array(pred[k])))
            out.append(self._emit(s + k + 1, self.pose))
        now = self.clock()  # one emission instant per window
        for m, pos in zip(out, range(e + 1 - len(out), e + 1)):
            m.latency_ms = float((now - self._received.pop(pos)) * 1000.0)
        self.covered = e
        self.next_start = s + self.window.stride
        drop = self.next_start - self._buf_start
        if drop > 0:
            del self._buf[:drop]
            self._buf_start = self.next_start
        return out

    def _emit(self, pos: int, pose: Pose) -> PoseMessage:
        self.emitted += 1
        return PoseMessage(self.first_index + pos, pose)


def engine_from_checkpoint(
    path,
    window: WindowConfig,
    stats: ChannelStats | None = None,
    model: Model | None = None,
) -> StreamingInference:
    ckpt = load_checkpoint(path)
    return StreamingInference(
        model, ckpt.params, window, stats or ckpt.stats, ckpt.config.model.image_size
    )


_END = object()


def _reader(source: BinaryIO, q: queue.Queue, clock) -> None:
    try:
        for msg in read_frames(source):
            q.put((msg, clock()))
        q.put(_END)
    except BaseException as e:  # handed to the consumer thread
        q.put(e)


def _frames(source: BinaryIO, pipelined: bool, clock):
    """(message, receipt time) pairs, optionally decoded on a background thread."""
    if not pipelined:
        for msg in read_frames(source):
            yield msg, clock()
        return
    q: queue.Queue = queue.Queue(maxsize=64)
    t = threading.Thread(target=_reader, args=(source, q, clock), daemon=True)
    t.start()
    while True:
        item = q.get()
        if item is _END:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    t.join()


def serve(
    source: BinaryIO,
    sink: BinaryIO,
    engine: StreamingInference,
    diagnostics: TextIO | None = None,
    report_every: int = 100,
    pipelined: bool = False,
) -> Throughput:
    """Run until ``source`` ends. Poses go to ``sink``; throughput lines go to ``diagnostics``."""
    stats = Throughput(engine.clock)
    sink.write(POSE_MAGIC)

    def emit(msgs: list[PoseMessage]) -> None:
        for m in msgs:
            sink.write(m.encode())
            stats.pose(m.latency_ms)
        if msgs:
            sink.flush()

    for msg, t in _frames(source, pipelined, engine.clock):
        stats.frame()
        emit(engine.push(msg.index, msg.image(), t))
        if diagnostics is not None and report_every and stats.frames % report_every == 0:
            print(stats.line(), file=diagnostics, flush=True)
    emit(engine.finish())
    sink.flush()
    if diagnostics is not None:
        if engine.count == 1:
            print("single frame received; no pose emitted", file=diagnostics)
        print(stats.line(), file=diagnostics, flush=True)
    return stats


def serve_tcp(
    host: str,
    port: int,
    engine: StreamingInference,
    diagnostics: TextIO | None = sys.stderr,
    pipelined: bool = True,
    ready: Callable[[int], None] | None = None,
) -> Throughput:
    """Accept one connection; frames come in and poses go back on the same socket."""
    with socket.create_server((host, port)) as srv:
        if ready is not None:
            ready(srv.getsockname()[1])
        conn, addr = srv.accept()
        log.info("connection from %s", addr)
        with conn, conn.makefile("rb") as rf, conn.makefile("wb") as wf:
            return serve(rf, wf, engine, diagnostics, pipelined=pipelined)


def replay(images, engine: StreamingInference) -> list[PoseMessage]:
    """Push recorded frames through ``engine`` in memory (8-bit quantised like the wire)."""
    out = []
    for k, img in enumerate(images):
        msg = StreamFrameMessage.from_image(k, img)
        out += engine.push(msg.index, msg.image())
    return out + engine.finish()
