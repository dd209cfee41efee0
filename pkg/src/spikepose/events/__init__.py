from .io import EventFormatError, dumps, loads, read_events, write_events
from .synth import synthesize_events
from .toy import RenderError, ToyConfig, generate_toy_sequence, pose_sequence, render_chain
from .types import EVENT_DTYPE, EventError, EventStream, FrameSequence, VoxelGridSequence
from .voxel import voxelize

__all__ = [
    "EVENT_DTYPE",
    "EventError",
    "EventFormatError",
    "EventStream",
    "FrameSequence",
    "RenderError",
    "ToyConfig",
    "VoxelGridSequence",
    "dumps",
    "generate_toy_sequence",
    "loads",
    "pose_sequence",
    "read_events",
    "render_chain",
    "synthesize_events",
    "voxelize",
    "write_events",
]
