from attnvo.data.dataset import (
    Sequence,
    load_dataset,
    load_sequence,
    synthetic_dataset,
    write_dataset,
    write_sequence,
)
from attnvo.data.images import (
    AugmentConfig,
    ChannelStats,
    Frame,
    augment,
    corrupt_frames,
    compute_channel_stats,
    normalize_resize,
)
from attnvo.data.poses import load_pose_file, midair_to_camera_frame, save_pose_file
from attnvo.data.segments import Segment, segment_trajectory
from attnvo.data.synth import SynthConfig, synth_generate
