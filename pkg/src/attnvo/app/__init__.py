from attnvo.app.protocol import (
    FRAME_MAGIC,
    POSE_MAGIC,
    PoseMessage,
    ProtocolError,
    StreamFrameMessage,
    encode_frame_stream,
    read_frames,
    read_poses,
)
from attnvo.app.serve import StreamingInference, Throughput, engine_from_checkpoint, replay, serve, serve_tcp
