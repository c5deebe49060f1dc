"""Length-delimited binary framing for the streaming service.

All integers and reals are little-endian.

Frame stream (client -> server)::

    header   8 bytes  b"AVOFRM01"
    record*  u32 body_len, then body:
                 u64 frame index
                 u32 width
                 u32 height
                 width*height*3 bytes, RGB, row-major

Pose stream (server -> client)::

    header   8 bytes  b"AVOPOS01"
    record*  u32 body_len (= 112), then body:
                 u64 frame index
                 12 x f64 row-major 3x4 camera-to-world pose
                 f64 latency in milliseconds (frame receipt -> emission)

A stream ends cleanly at a record boundary; any other end of input is an error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from attnvo.geometry import Pose

FRAME_MAGIC = b"AVOFRM01"
POSE_MAGIC = b"AVOPOS01"
MAX_BODY = 1 << 30

_LEN = struct.Struct("<I")
_FRAME_HEAD = struct.Struct("<QII")
_POSE = struct.Struct("<Q12dd")


class ProtocolError(ValueError):
    pass


@dataclass
class StreamFrameMessage:
    index: int
    width: int
    height: int
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != 3 * self.width * self.height:
            raise ProtocolError(
                f"frame {self.index}: payload has {len(self.payload)} bytes, "
                f"expected {3 * self.width * self.height} for {self.width}x{self.height}"
            )

    @classmethod
    def from_image(cls, index: int, image: np.ndarray) -> "StreamFrameMessage":
        """HxWx3 uint8 array, or floats in [0, 1] (rounded to 8 bits)."""
        img = np.asarray(image)
        if img.dtype != np.uint8:
            img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        h, w = img.shape[:2]
        return cls(index, w, h, np.ascontiguousarray(img).tobytes())

    def image(self, dtype=np.float32) -> np.ndarray:
        """Pixels scaled to [0, 1] as an HxWx3 array."""
        arr = np.frombuffer(self.payload, dtype=np.uint8).reshape(self.height, self.width, 3)
        return (arr.astype(np.float64) / 255.0).astype(dtype)

    def encode(self) -> bytes:
        body = _FRAME_HEAD.pack(self.index, self.width, self.height) + self.payload
        return _LEN.pack(len(body)) + body


@dataclass
class PoseMessage:
    index: int
    pose: Pose
    latency_ms: float = 0.0

    def encode(self) -> bytes:
        vals = self.pose.matrix[:3, :4].reshape(-1)
        body = _POSE.pack(self.index, *vals, self.latency_ms)
        return _LEN.pack(len(body)) + body


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes | None:
    """Read ``n`` bytes; None on EOF before the first byte, error on EOF mid-way."""
    chunks, got = [], 0
    while got < n:
        b = stream.read(n - got)
        if not b:
            if got == 0:
                return None
            raise ProtocolError(f"truncated {what}: got {got} of {n} bytes")
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)


def _read_body(stream: BinaryIO) -> bytes | None:
    head = _read_exact(stream, _LEN.size, "length prefix")
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_BODY:
        raise ProtocolError(f"record length {n} exceeds limit {MAX_BODY}")
    body = _read_exact(stream, n, "record") if n else b""
    if body is None:
        raise ProtocolError(f"truncated record: expected {n} bytes, got none")
    return body


def read_header(stream: BinaryIO, magic: bytes) -> bool:
    """False on an empty stream; error on a wrong or partial header."""
    got = _read_exact(stream, len(magic), "header")
    if got is None:
        return False
    if got != magic:
        raise ProtocolError(f"bad stream header {got!r}, expected {magic!r}")
    return True


def decode_frame(body: bytes) -> StreamFrameMessage:
    if len(body) < _FRAME_HEAD.size:
        raise ProtocolError(f"frame record too short ({len(body)} bytes)")
    index, w, h = _FRAME_HEAD.unpack_from(body)
    if w == 0 or h == 0:
        raise ProtocolError(f"frame {index}: zero-sized image {w}x{h}")
    return StreamFrameMessage(index, w, h, body[_FRAME_HEAD.size :])


def decode_pose(body: bytes) -> PoseMessage:
    if len(body) != _POSE.size:
        raise ProtocolError(f"pose record has {len(body)} bytes, expected {_POSE.size}")
    vals = _POSE.unpack(body)
    M = np.eye(4)
    M[:3, :4] = np.array(vals[1:13]).reshape(3, 4)
    try:
        pose = Pose(M)
    except ValueError as e:
        raise ProtocolError(f"pose {vals[0]}: {e}") from None
    if not pose.is_valid(1e-6):
        raise ProtocolError(f"pose {vals[0]}: rotation block is not a proper rotation")
    return PoseMessage(vals[0], pose, vals[13])


def read_frames(stream: BinaryIO) -> Iterator[StreamFrameMessage]:
    if not read_header(stream, FRAME_MAGIC):
        return
    while (body := _read_body(stream)) is not None:
        yield decode_frame(body)


def read_poses(stream: BinaryIO) -> Iterator[PoseMessage]:
    if not read_header(stream, POSE_MAGIC):
        return
    while (body := _read_body(stream)) is not None:
        yield decode_pose(body)


def encode_frame_stream(images, first_index: int = 0) -> bytes:
    """Whole frame stream (header plus records) for a sequence of HxWx3 images."""
    parts = [FRAME_MAGIC]
    parts += [StreamFrameMessage.from_image(first_index + k, img).encode() for k, img in enumerate(images)]
    return b"".join(parts)
