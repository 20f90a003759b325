"""Streaming video stabilization toolkit.

Three-stage pipeline (coarse rigid alignment, fine smoothed-flow warping,
margin inpainting) with a self-supervised training scheme and an
evaluation-metric suite, built for desk-scale verification on synthetic
shaky videos with known camera trajectories.
"""

from .geometry import (
    RigidParams,
    apply_rigid,
    fit_homography,
    fit_rigid,
    invert_params,
    params_to_matrix,
    warp_with_flow,
)
from .flow import (
    BaselineFlowEstimator,
    FlowField,
    estimate_flow_baseline,
    flow_correspondences,
    make_estimator,
    register_estimator,
    resize_frame,
)

__version__ = "0.1.0"
