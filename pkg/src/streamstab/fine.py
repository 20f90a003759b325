"""Fine stage: spatially smoothed flow, its moving average, and the warp.

The smoothing network is a small U-shaped net whose output is produced on
a grid 4x coarser per side than its input and bilinearly upsampled, so the
result cannot contain high-frequency structure regardless of weights. A
zero-initialized head makes the untrained network emit exactly zero flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInputError
from .flow import FlowField
from .geometry import warp_with_flow

__all__ = [
    "FineNet",
    "FineConfig",
    "fine_forward",
    "average_flows",
    "fine_stabilize_frame",
]


@dataclass
class FineConfig:
    half_window: int = 15  # M: neighbors per side
    flow_resolution: tuple[int, int] = (64, 64)

    def __post_init__(self) -> None:
        if self.half_window < 1:
            raise InvalidInputError("half_window must be >= 1")


class FineNet(nn.Module):
    """Average-pooled encoder, 4x-coarse flow head, bilinear upsample.

    Input and output are (B, 2, gh, gw) flows in normalized units; the
    internal grid is (gh/4, gw/4).
    """

    STRIDE = 4

    def __init__(self, input_resolution: tuple[int, int] = (64, 64)):
        super().__init__()
        gw, gh = input_resolution
        if gw % self.STRIDE or gh % self.STRIDE:
            raise InvalidInputError("fine input resolution must be divisible by 4")
        self.input_resolution = (gw, gh)
        self.enc1 = nn.Sequential(nn.Conv2d(2, 16, 3, padding=1), nn.ReLU(inplace=True))
        self.enc2 = nn.Sequential(nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(inplace=True))
        self.pool = nn.AvgPool2d(2)
        self.bottleneck = nn.Sequential(nn.Conv2d(32, 32, 3, padding=1), nn.ReLU(inplace=True))
        self.decode = nn.Sequential(
            nn.Conv2d(32, 32, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 16, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(16, 2, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, flow: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.enc1(flow))
        x = self.pool(self.enc2(x))
        x = self.bottleneck(x)
        x = self.decode(x)
        coarse = self.head(x)
        return F.interpolate(coarse, scale_factor=self.STRIDE, mode="bilinear", align_corners=False)

    @property
    def arch(self) -> dict:
        return {"kind": "fine", "input_resolution": list(self.input_resolution)}


def fine_forward(flow: FlowField, net: FineNet) -> FlowField:
    """Smooth one flow field; grid and reference resolution are preserved."""
    gw, gh = flow.grid_size
    if (gw, gh) != net.input_resolution:
        raise InvalidInputError(
            f"flow grid {gw}x{gh} does not match network input {net.input_resolution}"
        )
    rw, rh = flow.ref_size
    v = flow.vectors.astype(np.float32)
    norm = np.stack([v[:, :, 0] / rw, v[:, :, 1] / rh], axis=0)
    with torch.no_grad():
        out = net(torch.from_numpy(norm)[None])[0].numpy()
    vec = np.stack([out[0] * rw, out[1] * rh], axis=2).astype(np.float32)
    return FlowField(vec, flow.ref_size)


def average_flows(flows: list[FlowField]) -> FlowField:
    """Element-wise mean of vectors; grids and references must match."""
    if not flows:
        raise InvalidInputError("cannot average an empty flow list")
    first = flows[0]
    for f in flows[1:]:
        if f.grid_size != first.grid_size or f.ref_size != first.ref_size:
            raise InvalidInputError("flow grids / reference resolutions differ")
    acc = np.zeros_like(first.vectors, dtype=np.float64)
    for f in flows:
        acc += f.vectors
    return FlowField((acc / len(flows)).astype(np.float32), first.ref_size)


def fine_stabilize_frame(
    center: np.ndarray,
    window: list[np.ndarray],
    center_index: int,
    net: FineNet,
    estimator,
    cfg: FineConfig | None = None,
    coarse_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, FlowField, np.ndarray]:
    """Warp a coarse-stabilized frame by the averaged smoothed flow.

    ``window`` holds coarse-stage outputs around ``center`` (which must be
    ``window[center_index]``). Per neighbor the smoothed flow of
    ``estimate(center, neighbor)`` is computed; their mean is the
    stabilizing warp. A single-frame window passes through with zero warp.
    """
    if not 0 <= center_index < len(window):
        raise InvalidInputError("center index outside the window")
    h, w = center.shape[:2]
    if len(window) == 1:
        warp = FlowField.zero((64, 64) if cfg is None else cfg.flow_resolution, (w, h))
        mask = np.ones((h, w), dtype=np.float32)
        if coarse_mask is not None:
            mask = np.minimum(mask, coarse_mask)
        return center.copy(), warp, mask
    smoothed = []
    for j, neighbor in enumerate(window):
        if j == center_index:
            continue
        flow = estimator.estimate(center, neighbor)
        smoothed.append(fine_forward(flow, net))
    warp = average_flows(smoothed)
    out, mask = warp_with_flow(center, warp)
    if coarse_mask is not None:
        mask = np.minimum(mask, coarse_mask)
    return out, warp, mask
