"""vr2robot: VR-captured human manipulation recordings to robot-format training data.

Pipeline stages: chain calibration (VR -> camera), hand-keypoint retargeting
to robot joint values, temporal slowdown and relative action chunking,
unified z-score normalization, weighted human-robot cotraining utilities,
plus kinematic replay checking and rubric score aggregation.
"""

__version__ = "0.1.0"

from .geometry import FrameTag, Pose, Rot6D  # noqa: F401
from .kinematics import HandModel, JointState, default_hand_model  # noqa: F401
