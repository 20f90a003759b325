"""Margin stage: gated-convolution inpainting of blank stabilization
margins from motion-compensated neighbor frames, plus mask computation
and the final compositing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import InvalidInputError
from .flow import FlowField
from .geometry import RigidParams, params_to_matrix, warp_affine, warp_with_flow

__all__ = [
    "GatedConv2d",
    "MarginNet",
    "MarginInputs",
    "compute_margin_mask",
    "align_neighbors",
    "margin_forward",
    "composite_output",
]

MIN_RESOLUTION = 64
NEIGHBOR_COUNT = 4  # fixed five-frame scheme: center plus i-2, i-1, i+1, i+2


class GatedConv2d(nn.Module):
    """Feature conv modulated by a sigmoid gate conv (spatial attention)."""

    def __init__(self, cin, cout, dilation=1, activation="leaky"):
        super().__init__()
        self.feature = nn.Conv2d(cin, cout, 3, padding=dilation, dilation=dilation)
        self.gate = nn.Conv2d(cin, cout, 3, padding=dilation, dilation=dilation)
        if activation == "leaky":
            self.act = nn.LeakyReLU(0.2, inplace=True)
        elif activation == "sigmoid":
            self.act = nn.Sigmoid()
        else:
            raise InvalidInputError(f"unknown activation {activation!r}")

    def forward(self, x):
        return self.act(self.feature(x)) * torch.sigmoid(self.gate(x))

    def gate_values(self, x):
        return torch.sigmoid(self.gate(x))


class MarginNet(nn.Module):
    """Six gated conv layers, dilations 1/2/4/2/1/1, no downsampling.

    Fully convolutional over inputs of at least 64x64. Input is the packed
    16-channel tensor of :class:`MarginInputs`; output is a 3-channel frame
    through a sigmoid, so predictions always lie in [0, 1].
    """

    CHANNELS = (32, 64, 64, 64, 32, 3)
    DILATIONS = (1, 2, 4, 2, 1, 1)
    IN_CHANNELS = 16  # 5 frames x 3 + validity mask

    def __init__(self):
        super().__init__()
        layers = []
        cin = self.IN_CHANNELS
        for i, (cout, dil) in enumerate(zip(self.CHANNELS, self.DILATIONS)):
            act = "sigmoid" if i == len(self.CHANNELS) - 1 else "leaky"
            layers.append(GatedConv2d(cin, cout, dilation=dil, activation=act))
            cin = cout
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    @property
    def arch(self) -> dict:
        return {"kind": "margin", "channels": list(self.CHANNELS), "dilations": list(self.DILATIONS)}


@dataclass
class MarginInputs:
    """Center frame, four aligned neighbors, and the validity mask (1 = valid)."""

    center: np.ndarray
    neighbors: list[np.ndarray]
    mask: np.ndarray

    def __post_init__(self) -> None:
        if len(self.neighbors) != NEIGHBOR_COUNT:
            raise InvalidInputError(f"exactly {NEIGHBOR_COUNT} neighbors required")
        shape = self.center.shape
        for nb in self.neighbors:
            if nb.shape != shape:
                raise InvalidInputError("neighbor resolution differs from center")
        if self.mask.shape != shape[:2]:
            raise InvalidInputError("mask resolution differs from center")

    def packed(self) -> torch.Tensor:
        """(1, 16, H, W): center, neighbors in temporal order, then mask."""
        planes = [np.moveaxis(self.center, 2, 0)]
        for nb in self.neighbors:
            planes.append(np.moveaxis(nb, 2, 0))
        planes.append(self.mask[None].astype(np.float32))
        return torch.from_numpy(np.concatenate(planes, axis=0).astype(np.float32))[None]


def compute_margin_mask(
    p_bar: RigidParams, warp: FlowField, frame_size: tuple[int, int]
) -> np.ndarray:
    """Binary validity mask of the two-stage warp (1 = valid content).

    Element-wise minimum of the rigid stage's coverage and the flow
    stage's coverage, binarized at 0.5.
    """
    w, h = frame_size
    blank = np.zeros((h, w), dtype=np.float32)
    _, rigid_mask = warp_affine(blank, params_to_matrix(p_bar, frame_size))
    _, flow_mask = warp_with_flow(blank, warp)
    combined = np.minimum(rigid_mask, flow_mask)
    return (combined >= 0.5).astype(np.float32)


def align_neighbors(
    center: np.ndarray, raw_neighbors: list[np.ndarray], flows: list[FlowField]
) -> list[np.ndarray]:
    """Backward-warp each raw neighbor toward the stabilized center.

    ``flows[k]`` is the smoothed flow for (neighbor_k -> center): warping
    neighbor_k by it reproduces the center's content where both overlap.
    """
    if len(raw_neighbors) != NEIGHBOR_COUNT or len(flows) != NEIGHBOR_COUNT:
        raise InvalidInputError(f"exactly {NEIGHBOR_COUNT} neighbors and flows required")
    aligned = []
    for nb, flow in zip(raw_neighbors, flows):
        if nb.shape != center.shape:
            raise InvalidInputError("neighbor resolution differs from center")
        warped, _ = warp_with_flow(nb, flow)
        aligned.append(warped)
    return aligned


def margin_forward(inputs: MarginInputs, net: MarginNet) -> np.ndarray:
    """Full-frame inpainting prediction; compositing restricts it later."""
    h, w = inputs.center.shape[:2]
    if h < MIN_RESOLUTION or w < MIN_RESOLUTION:
        raise InvalidInputError(f"margin network requires at least {MIN_RESOLUTION}px per side")
    with torch.no_grad():
        out = net(inputs.packed())[0].numpy()
    return np.clip(np.moveaxis(out, 0, 2), 0.0, 1.0).astype(np.float32)


def composite_output(stabilized: np.ndarray, inpainted: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Blend: valid pixels keep the stabilized frame, margins take the
    network prediction. ``mask`` is the validity mask (1 = keep)."""
    if stabilized.shape != inpainted.shape or mask.shape != stabilized.shape[:2]:
        raise InvalidInputError("compositing inputs must share one resolution")
    m = mask[..., None].astype(np.float32)
    out = m * stabilized + (1.0 - m) * inpainted
    exact = mask >= 1.0
    out[exact] = stabilized[exact]
    return out.astype(np.float32)
