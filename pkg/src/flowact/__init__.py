"""Robot actions from dense correspondences: rigid motion from optical flow
and depth, subgoal planning, discrete navigation, and the diffusion sampler
plumbing around them."""

from .errors import FlowActError
from .geometry import CameraIntrinsics, Pose

__all__ = ["CameraIntrinsics", "FlowActError", "Pose"]
__version__ = "0.1.0"
