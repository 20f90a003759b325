"""Rigid transforms, backward warping, validity masks, and transform fitting.

Frames are ``(H, W, 3)`` float32 arrays with channel values in [0, 1].
Masks are ``(H, W)`` float32 arrays in [0, 1]; 1 means the pixel was fully
covered by source content. All warps are backward maps: every output pixel
samples the source at an inverse-mapped location with bilinear weights,
and out-of-range samples contribute 0 to both image and mask.

Rigid transforms are 3-DoF (rotation + translation). Rotation is about the
frame center ``((W-1)/2, (H-1)/2)``; translation is in pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, InvalidInputError

__all__ = [
    "RigidParams",
    "params_to_matrix",
    "invert_params",
    "compose_params",
    "apply_rigid",
    "warp_affine",
    "warp_with_flow",
    "fit_rigid",
    "fit_homography",
    "frame_center",
    "validate_frame",
]


@dataclass(frozen=True)
class RigidParams:
    """Rotation angle (radians) plus translation (pixels)."""

    theta: float
    tx: float
    ty: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.tx, self.ty], dtype=np.float64)

    @staticmethod
    def identity() -> "RigidParams":
        return RigidParams(0.0, 0.0, 0.0)


def _check_params(p: RigidParams) -> None:
    vals = (p.theta, p.tx, p.ty)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidInputError(f"rigid parameters must be finite, got {vals}")
    if abs(p.theta) >= math.pi / 2:
        raise InvalidInputError(f"|theta| must be < pi/2, got {p.theta}")


def validate_frame(frame: np.ndarray) -> None:
    """Raise InvalidInputError unless ``frame`` is a valid (H, W, 3) image."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InvalidInputError(f"frame must be (H, W, 3), got shape {frame.shape}")
    h, w = frame.shape[:2]
    if h < 8 or w < 8:
        raise InvalidInputError(f"frame must be at least 8x8, got {w}x{h}")
    if not np.isfinite(frame).all():
        raise InvalidInputError("frame contains non-finite values")
    if frame.min() < -1e-6 or frame.max() > 1 + 1e-6:
        raise InvalidInputError("frame channels must lie in [0, 1]")


def frame_center(frame_size: tuple[int, int]) -> tuple[float, float]:
    """Center of a ``(W, H)`` frame in pixel coordinates."""
    w, h = frame_size
    return (w - 1) / 2.0, (h - 1) / 2.0


def params_to_matrix(p: RigidParams, frame_size: tuple[int, int]) -> np.ndarray:
    """3x3 homogeneous matrix for ``p`` with rotation about the frame center.

    Returns ``Translate(c) @ [R(theta) t; 0 1] @ Translate(-c)`` where ``c``
    is the frame center of ``frame_size = (W, H)``.
    """
    _check_params(p)
    cx, cy = frame_center(frame_size)
    c, s = math.cos(p.theta), math.sin(p.theta)
    # Conjugation by the center translation, written out directly.
    m = np.array(
        [
            [c, -s, p.tx + cx - c * cx + s * cy],
            [s, c, p.ty + cy - s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ],
        dtype=np.float64,
    )
    return m


def invert_params(p: RigidParams) -> RigidParams:
    """Parameters of the inverse transform (same center convention)."""
    _check_params(p)
    c, s = math.cos(p.theta), math.sin(p.theta)
    # Inverse rotation applied to the negated translation.
    tx = -(c * p.tx + s * p.ty)
    ty = -(-s * p.tx + c * p.ty)
    return RigidParams(-p.theta, tx, ty)


def compose_params(first: RigidParams, second: RigidParams) -> RigidParams:
    """Parameters of applying ``first`` then ``second`` (center-relative)."""
    _check_params(first)
    _check_params(second)
    c, s = math.cos(second.theta), math.sin(second.theta)
    tx = c * first.tx - s * first.ty + second.tx
    ty = s * first.tx + c * first.ty + second.ty
    return RigidParams(first.theta + second.theta, tx, ty)


def matrix_to_params(m: np.ndarray, frame_size: tuple[int, int]) -> RigidParams:
    """Inverse of :func:`params_to_matrix` for exactly-rigid matrices."""
    theta = math.atan2(m[1, 0], m[0, 0])
    cx, cy = frame_center(frame_size)
    c, s = math.cos(theta), math.sin(theta)
    tx = m[0, 2] - (cx - c * cx + s * cy)
    ty = m[1, 2] - (cy - s * cx - c * cy)
    return RigidParams(theta, tx, ty)


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``image`` at float coordinates; zero outside, fractional mask.

    ``image`` is (H, W) or (H, W, C). Returns (samples, coverage) where
    coverage is the bilinear-interpolated indicator of in-bounds source.
    """
    h, w = image.shape[:2]
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0).astype(np.float32)
    fy = (ys - y0).astype(np.float32)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1

    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy

    def tap(xi, yi, wgt):
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xc = np.clip(xi, 0, w - 1)
        yc = np.clip(yi, 0, h - 1)
        vals = image[yc, xc]
        eff = (wgt * inside).astype(np.float32)
        if image.ndim == 3:
            return vals * eff[..., None], eff
        return vals * eff, eff

    out = None
    cov = None
    for xi, yi, wgt in ((x0, y0, w00), (x1, y0, w10), (x0, y1, w01), (x1, y1, w11)):
        v, e = tap(xi, yi, wgt)
        out = v if out is None else out + v
        cov = e if cov is None else cov + e
    return out.astype(np.float32), cov.astype(np.float32)


def warp_affine(frame: np.ndarray, matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward-warp ``frame`` by a 3x3 affine matrix (bottom row 0,0,1).

    Output pixel ``x`` is a bilinear sample of ``frame`` at ``matrix^-1 x``.
    Returns the warped frame and its coverage mask.
    """
    if not np.isfinite(matrix).all():
        raise InvalidInputError("transform matrix contains non-finite entries")
    h, w = frame.shape[:2]
    inv = np.linalg.inv(matrix)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return _bilinear_sample(frame, sx, sy)


def apply_rigid(frame: np.ndarray, p: RigidParams) -> tuple[np.ndarray, np.ndarray]:
    """Transform ``frame`` by rigid parameters ``p`` (backward warp).

    Identity parameters return the frame bitwise-unchanged with an all-ones
    mask; other parameters bilinear-sample with zero fill outside.
    """
    _check_params(p)
    if p.theta == 0.0 and p.tx == 0.0 and p.ty == 0.0:
        h, w = frame.shape[:2]
        return frame.copy(), np.ones((h, w), dtype=np.float32)
    h, w = frame.shape[:2]
    m = params_to_matrix(p, (w, h))
    return warp_affine(frame, m)


def warp_with_flow(frame: np.ndarray, flow) -> tuple[np.ndarray, np.ndarray]:
    """Backward-warp ``frame`` by a flow field: ``out(x) = frame(x + flow(x))``.

    The flow grid is bilinearly upsampled to the frame resolution and its
    displacement magnitudes are rescaled by ``frame_size / flow.ref_size``.
    The flow's reference aspect ratio must match the frame's within 1%.
    """
    h, w = frame.shape[:2]
    ref_w, ref_h = flow.ref_size
    if abs((ref_w / ref_h) - (w / h)) > 0.01 * (w / h):
        raise InvalidInputError(
            f"flow reference aspect {ref_w}x{ref_h} does not match frame {w}x{h}"
        )
    gh, gw = flow.vectors.shape[:2]
    if gw > w or gh > h:
        raise InvalidInputError("flow grid resolution exceeds frame resolution")

    scale_x = w / ref_w
    scale_y = h / ref_h
    du = _upsample_bilinear(flow.vectors[:, :, 0], (h, w)) * np.float32(scale_x)
    dv = _upsample_bilinear(flow.vectors[:, :, 1], (h, w)) * np.float32(scale_y)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return _bilinear_sample(frame, xs + du, ys + dv)


def _upsample_bilinear(grid: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a 2-D grid with half-pixel (center-aligned) sampling."""
    gh, gw = grid.shape
    oh, ow = out_hw
    if (gh, gw) == (oh, ow):
        return grid.astype(np.float32)
    xs = (np.arange(ow, dtype=np.float64) + 0.5) * (gw / ow) - 0.5
    ys = (np.arange(oh, dtype=np.float64) + 0.5) * (gh / oh) - 0.5
    xs = np.clip(xs, 0, gw - 1)
    ys = np.clip(ys, 0, gh - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, gw - 1)
    y1 = np.minimum(y0 + 1, gh - 1)
    fx = (xs - x0).astype(np.float32)
    fy = (ys - y0).astype(np.float32)
    g = grid.astype(np.float32)
    top = g[y0[:, None], x0[None, :]] * (1 - fx)[None, :] + g[y0[:, None], x1[None, :]] * fx[None, :]
    bot = g[y1[:, None], x0[None, :]] * (1 - fx)[None, :] + g[y1[:, None], x1[None, :]] * fx[None, :]
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def fit_rigid(
    src_points: np.ndarray,
    dst_points: np.ndarray,
    center: tuple[float, float],
) -> RigidParams:
    """Least-squares rigid fit (Procrustes without scale) mapping src to dst.

    ``center`` is the rotation origin, normally the frame center, so the
    result is interchangeable with :func:`params_to_matrix` parameters.
    """
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_points, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise InvalidInputError("src and dst point counts differ")
    if src.shape[0] < 2:
        raise DegenerateFitError("need at least 2 point pairs for a rigid fit")
    s_mean = src.mean(axis=0)
    d_mean = dst.mean(axis=0)
    s_c = src - s_mean
    d_c = dst - d_mean
    if float(np.abs(s_c).max(initial=0.0)) < 1e-12:
        raise DegenerateFitError("source points are all coincident")
    # 2x2 Procrustes: closed form from the cross-covariance.
    cov = d_c.T @ s_c
    a = cov[0, 0] + cov[1, 1]
    b = cov[1, 0] - cov[0, 1]
    theta = math.atan2(b, a)
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = center
    # t = d_mean - c0 - R (s_mean - c0)
    rx = c * (s_mean[0] - cx) - s * (s_mean[1] - cy)
    ry = s * (s_mean[0] - cx) + c * (s_mean[1] - cy)
    tx = d_mean[0] - cx - rx
    ty = d_mean[1] - cy - ry
    return RigidParams(theta, float(tx), float(ty))


def fit_homography(src_points: np.ndarray, dst_points: np.ndarray) -> np.ndarray:
    """Normalized-DLT least-squares homography with ``H[2,2] = 1``."""
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_points, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise InvalidInputError("src and dst point counts differ")
    n = src.shape[0]
    if n < 4:
        raise DegenerateFitError("need at least 4 point pairs for a homography")

    def normalize(pts):
        mean = pts.mean(axis=0)
        d = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
        if d < 1e-12:
            raise DegenerateFitError("points are all coincident")
        s = math.sqrt(2.0) / d
        t = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1]])
        pn = (pts - mean) * s
        return pn, t

    sn, ts = normalize(src)
    dn, td = normalize(dst)

    a = np.zeros((2 * n, 9), dtype=np.float64)
    a[0::2, 0] = sn[:, 0]
    a[0::2, 1] = sn[:, 1]
    a[0::2, 2] = 1.0
    a[0::2, 6] = -dn[:, 0] * sn[:, 0]
    a[0::2, 7] = -dn[:, 0] * sn[:, 1]
    a[0::2, 8] = -dn[:, 0]
    a[1::2, 3] = sn[:, 0]
    a[1::2, 4] = sn[:, 1]
    a[1::2, 5] = 1.0
    a[1::2, 6] = -dn[:, 1] * sn[:, 0]
    a[1::2, 7] = -dn[:, 1] * sn[:, 1]
    a[1::2, 8] = -dn[:, 1]

    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-10 * max(sv[0], 1.0):
        raise DegenerateFitError("point configuration is degenerate for a homography")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateFitError("homography has a vanishing scale entry")
    return h / h[2, 2]
