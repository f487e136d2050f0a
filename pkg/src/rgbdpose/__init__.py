"""RGBD human pose estimation pipeline.

Dual-channel (color + depth) mixture-of-parts detection with tree dynamic
programming, skeleton-coupled Kalman tracking across frames, and limb
inverse kinematics that completes the reduced 10-joint detection into the
full 14-joint pose.
"""

__version__ = "0.1.0"

from .skeleton import FULL14, REDUCED10, SkeletonDef, skeleton_by_kind
from .types import AnnotationSet, BBox, FrameAnnotation, Joint, Joint3d, Pose, Pose3d, RgbdFrame

__all__ = [
    "FULL14",
    "REDUCED10",
    "SkeletonDef",
    "skeleton_by_kind",
    "AnnotationSet",
    "BBox",
    "FrameAnnotation",
    "Joint",
    "Joint3d",
    "Pose",
    "Pose3d",
    "RgbdFrame",
    "__version__",
]
