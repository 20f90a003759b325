"""Coarse stage: estimate a rigid transform per neighbor pair from flow,
moving-average the parameters over the window, and globally adjust the
center frame.

The estimator network reads a flow field (normalized by the reference
resolution) and emits three scalars: rotation in radians and translations
as fractions of the reference width/height. A zero-initialized output head
makes the untrained network the identity transform, so the stage degrades
to a pass-through before training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import InvalidInputError
from .flow import FlowField
from .geometry import RigidParams, apply_rigid

__all__ = [
    "CoarseNet",
    "CoarseConfig",
    "coarse_forward",
    "average_params",
    "coarse_stabilize_frame",
]

THETA_SCALE = math.pi / 4  # tanh output covers +-45 deg
TRANS_SCALE = 0.25  # tanh output covers +-0.25 * reference dimension


@dataclass
class CoarseConfig:
    """Window and augmentation settings for the coarse stage."""

    half_window: int = 15  # N: neighbors per side
    flow_resolution: tuple[int, int] = (64, 64)
    theta_max_deg: float = 30.0
    t_max_px: float = 50.0

    def __post_init__(self) -> None:
        if self.half_window < 1:
            raise InvalidInputError("half_window must be >= 1")
        if self.theta_max_deg <= 0 or self.t_max_px <= 0:
            raise InvalidInputError("augmentation bounds must be positive")


class CoarseNet(nn.Module):
    """Strided conv encoder over a 2-channel flow grid, FC head to 3 params."""

    def __init__(self, input_resolution: tuple[int, int] = (64, 64)):
        super().__init__()
        self.input_resolution = tuple(input_resolution)
        self.encoder = nn.Sequential(
            nn.Conv2d(2, 16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(64, 128, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Sequential(
            nn.Linear(128, 64),
            nn.ReLU(inplace=True),
            nn.Linear(64, 3),
        )
        last = self.head[-1]
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)

    def forward(self, flow: torch.Tensor) -> torch.Tensor:
        """(B, 2, gh, gw) normalized flow -> (B, 3): theta_rad, tx_frac, ty_frac."""
        z = self.encoder(flow).mean(dim=(2, 3))
        raw = self.head(z)
        theta = torch.tanh(raw[:, 0]) * THETA_SCALE
        t = torch.tanh(raw[:, 1:]) * TRANS_SCALE
        return torch.cat([theta[:, None], t], dim=1)

    @property
    def arch(self) -> dict:
        return {"kind": "coarse", "input_resolution": list(self.input_resolution)}


def flow_to_tensor(flow: FlowField) -> torch.Tensor:
    """Normalize flow vectors by the reference size; (1, 2, gh, gw) tensor."""
    rw, rh = flow.ref_size
    v = flow.vectors.astype(np.float32)
    norm = np.stack([v[:, :, 0] / rw, v[:, :, 1] / rh], axis=0)
    return torch.from_numpy(norm)[None]


def coarse_forward(flow: FlowField, net: CoarseNet) -> RigidParams:
    """Run the network on one flow field; translations in reference pixels."""
    gw, gh = flow.grid_size
    if (gw, gh) != net.input_resolution:
        raise InvalidInputError(
            f"flow grid {gw}x{gh} does not match network input {net.input_resolution}"
        )
    rw, rh = flow.ref_size
    with torch.no_grad():
        out = net(flow_to_tensor(flow))[0]
    return RigidParams(float(out[0]), float(out[1]) * rw, float(out[2]) * rh)


def average_params(params: list[RigidParams]) -> RigidParams:
    """Component-wise arithmetic mean. Angles are averaged without wrap
    handling, valid because the pipeline keeps |theta| far below pi.

    Uses exactly-rounded summation, so the result is independent of the
    list order and the mean of identical values is exact.
    """
    if not params:
        raise InvalidInputError("cannot average an empty parameter list")
    n = len(params)
    return RigidParams(
        math.fsum(p.theta for p in params) / n,
        math.fsum(p.tx for p in params) / n,
        math.fsum(p.ty for p in params) / n,
    )


def coarse_stabilize_frame(
    window: list[np.ndarray],
    center_index: int,
    net: CoarseNet,
    estimator,
    cfg: CoarseConfig | None = None,
) -> tuple[np.ndarray, RigidParams, np.ndarray]:
    """Adjust the window's center frame toward the window-average pose.

    For each neighbor j the flow ``estimate(I_j, I_center)`` feeds the
    network, giving the transform that aligns the center onto that
    neighbor; the per-neighbor transforms are averaged and applied.
    A single-frame window passes through unchanged.
    """
    if not 0 <= center_index < len(window):
        raise InvalidInputError("center index outside the window")
    center = window[center_index]
    if len(window) == 1:
        h, w = center.shape[:2]
        return center.copy(), RigidParams.identity(), np.ones((h, w), dtype=np.float32)
    params = []
    for j, neighbor in enumerate(window):
        if j == center_index:
            continue
        flow = estimator.estimate(neighbor, center)
        params.append(coarse_forward(flow, net))
    p_bar = average_params(params)
    adjusted, mask = apply_rigid(center, p_bar)
    return adjusted, p_bar, mask
