"""Align two RGB-D streams in time and space, build reprojected ground-truth
depth, and score depth denoisers against it."""

from .errors import (AlignmentInfeasibleError, BehindCameraError, DepthSyncError, DivergenceError,
                     InvalidInputError, LoadError)
from .geometry import CameraIntrinsics, RigidTransform, apply_transform, project, reproject_depth, unproject
from .groundtruth import AlignmentResult, build_paired_dataset
from .sequence_io import Frame, PairedDataset, Sequence, load_paired_dataset, load_sequence
from .temporal import FrameMapping, find_time_shift, match_frames

__version__ = "0.1.0"
