"""Optical-flow estimation behind a pluggable interface.

All flow in this package is computed on small resized frames (64x64 by
default). A :class:`FlowField` keeps its grid of ``(du, dv)`` vectors in
pixels of a *reference* resolution, normally the resolution of the frames
the flow was estimated between, so downstream warps can rescale correctly.

Convention: ``estimate(a, b)`` returns ``f`` with ``b(x) ~= a(x + f(x))``,
i.e. the field that backward-warps ``a`` onto ``b``'s grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InvalidInputError

__all__ = [
    "FlowField",
    "FlowEstimator",
    "BaselineFlowEstimator",
    "resize_frame",
    "estimate_flow_baseline",
    "flow_correspondences",
    "flow_from_transform",
    "make_estimator",
    "register_estimator",
]

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class FlowField:
    """Displacement grid: ``vectors[y, x] = (du, dv)`` in reference pixels.

    ``weights`` optionally carries per-vector confidence in [0, 1] (1 =
    reliable); consumers that fit transforms can exclude low-weight vectors.
    """

    vectors: np.ndarray  # (gh, gw, 2) float32
    ref_size: tuple[int, int]  # (ref_w, ref_h)
    weights: np.ndarray | None = None  # (gh, gw) float32 in [0, 1]

    def __post_init__(self) -> None:
        v = self.vectors
        if v.ndim != 3 or v.shape[2] != 2:
            raise InvalidInputError(f"flow vectors must be (h, w, 2), got {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidInputError("flow vectors contain non-finite values")
        gh, gw = v.shape[:2]
        rw, rh = self.ref_size
        if gw > rw or gh > rh:
            raise InvalidInputError("flow grid must not exceed its reference resolution")
        if abs(gw / gh - rw / rh) > 0.01 * (rw / rh):
            raise InvalidInputError("flow grid aspect ratio differs from reference by >1%")
        if self.weights is not None and self.weights.shape != (gh, gw):
            raise InvalidInputError("flow weights shape must match the vector grid")

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.vectors.shape[1], self.vectors.shape[0]

    @staticmethod
    def zero(grid_size: tuple[int, int], ref_size: tuple[int, int]) -> "FlowField":
        gw, gh = grid_size
        return FlowField(np.zeros((gh, gw, 2), dtype=np.float32), ref_size)


def grid_positions(grid_size: tuple[int, int], ref_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Reference-resolution coordinates of flow-grid sample points.

    Uses half-pixel (area/center aligned) mapping, matching how frames are
    downsampled before estimation.
    """
    gw, gh = grid_size
    rw, rh = ref_size
    xs = (np.arange(gw, dtype=np.float64) + 0.5) * (rw / gw) - 0.5
    ys = (np.arange(gh, dtype=np.float64) + 0.5) * (rh / gh) - 0.5
    return xs, ys


def resize_frame(frame: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize a frame (or 2-D grid): area average down, bilinear up."""
    w, h = size
    if w < 8 or h < 8:
        raise InvalidInputError(f"resize target must be at least 8x8, got {w}x{h}")
    src_h, src_w = frame.shape[:2]
    if (src_w, src_h) == (w, h):
        return frame.astype(np.float32, copy=True)
    mode = Image.BOX if (w <= src_w and h <= src_h) else Image.BILINEAR
    if frame.ndim == 2:
        img = Image.fromarray(frame.astype(np.float32), mode="F")
        return np.asarray(img.resize((w, h), mode), dtype=np.float32)
    chans = [
        np.asarray(
            Image.fromarray(frame[:, :, c].astype(np.float32), mode="F").resize((w, h), mode),
            dtype=np.float32,
        )
        for c in range(frame.shape[2])
    ]
    return np.stack(chans, axis=2)


def to_gray(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return frame.astype(np.float32)
    return frame.astype(np.float32) @ LUMA


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _sample_clamped(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample with coordinates clamped to the image rectangle."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0).astype(np.float64)
    fy = (ys - y0).astype(np.float64)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _global_shift(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Integer global shift (dx, dy) with ``b(x) ~= a(x + d)``, by phase correlation."""
    h, w = a.shape
    win = np.outer(np.hanning(h), np.hanning(w))
    fa = np.fft.rfft2((a - a.mean()) * win)
    fb = np.fft.rfft2((b - b.mean()) * win)
    r = fa * np.conj(fb)
    r /= np.abs(r) + 1e-12
    corr = np.fft.irfft2(r, s=(h, w))
    dy, dx = np.unravel_index(np.argmax(corr), corr.shape)
    if dy > h // 2:
        dy -= h
    if dx > w // 2:
        dx -= w
    return float(dx), float(dy)


def _lk_level(a: np.ndarray, b: np.ndarray, u: np.ndarray, v: np.ndarray, window: int, iters: int):
    """Refine flow (u, v) so that a(x + f) ~= b(x) at one pyramid level.

    Pixels whose structure tensor is ill-conditioned are excluded from the
    update and afterwards filled with the consensus (median) of reliable
    pixels. Pixels whose refinement explains the data worse than the value
    inherited from the coarser level are reverted, which stops divergence in
    aliased or occluded regions.
    """
    h, w = a.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u0, v0 = u, v
    gy, gx = np.gradient(b)
    sxx = ndimage.uniform_filter(gx * gx, window, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, window, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, window, mode="nearest")
    det = sxx * syy - sxy * sxy
    trace = sxx + syy
    # Smallest eigenvalue of the 2x2 structure tensor.
    lam_min = 0.5 * (trace - np.sqrt(np.maximum(trace * trace - 4.0 * det, 0.0)))
    good = lam_min > 1e-4
    det_safe = np.where(det > 1e-12, det, 1.0)
    max_step = 2.0
    for _ in range(iters):
        aw = _sample_clamped(a, xs + u, ys + v)
        it = aw - b
        sxt = ndimage.uniform_filter(gx * it, window, mode="nearest")
        syt = ndimage.uniform_filter(gy * it, window, mode="nearest")
        du = -(syy * sxt - sxy * syt) / det_safe
        dv = -(sxx * syt - sxy * sxt) / det_safe
        du = np.where(good, np.clip(du, -max_step, max_step), 0.0)
        dv = np.where(good, np.clip(dv, -max_step, max_step), 0.0)
        u = u + du
        v = v + dv
    r_new = ndimage.uniform_filter(
        np.abs(_sample_clamped(a, xs + u, ys + v) - b), window, mode="nearest"
    )
    r_old = ndimage.uniform_filter(
        np.abs(_sample_clamped(a, xs + u0, ys + v0) - b), window, mode="nearest"
    )
    worse = r_new > r_old + 1e-6
    u = np.where(worse, u0, u)
    v = np.where(worse, v0, v)
    reliable = good & ~worse
    if good.any() and not good.all():
        u = np.where(good, u, np.median(u[good]))
        v = np.where(good, v, np.median(v[good]))
    return u, v, reliable


def _pyramidal_lk(gray_a: np.ndarray, gray_b: np.ndarray, levels: int, window: int, iters: int) -> np.ndarray:
    smooth = 0.75
    pyr_a = [ndimage.gaussian_filter(gray_a.astype(np.float64), smooth)]
    pyr_b = [ndimage.gaussian_filter(gray_b.astype(np.float64), smooth)]
    for _ in range(levels - 1):
        if min(pyr_a[-1].shape) < 2 * window:
            break
        pyr_a.append(ndimage.gaussian_filter(_downsample2(pyr_a[-1]), smooth))
        pyr_b.append(ndimage.gaussian_filter(_downsample2(pyr_b[-1]), smooth))
    # Phase correlation seeds the dominant global shift; the pyramid then
    # only refines residual (rotational / local) motion within LK's basin.
    dx, dy = _global_shift(pyr_a[0], pyr_b[0])
    down = gray_a.shape[1] / pyr_a[-1].shape[1]
    u = np.full_like(pyr_a[-1], dx / down)
    v = np.full_like(pyr_a[-1], dy / down)
    reliable = np.ones(pyr_a[-1].shape, dtype=bool)
    for a, b in zip(reversed(pyr_a), reversed(pyr_b)):
        if a.shape != u.shape:
            scale_y = a.shape[0] / u.shape[0]
            scale_x = a.shape[1] / u.shape[1]
            u = _resize_grid(u, a.shape) * scale_x
            v = _resize_grid(v, a.shape) * scale_y
        u, v, reliable = _lk_level(a, b, u, v, window, iters)
    vec = np.stack([u, v], axis=2).astype(np.float32)
    return vec, reliable.astype(np.float32)


def _resize_grid(grid: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    oh, ow = out_hw
    ys = (np.arange(oh, dtype=np.float64) + 0.5) * (grid.shape[0] / oh) - 0.5
    xs = (np.arange(ow, dtype=np.float64) + 0.5) * (grid.shape[1] / ow) - 0.5
    return _sample_clamped(grid, xs[None, :].repeat(oh, 0), ys[:, None].repeat(ow, 1))


class FlowEstimator:
    """Interface: ``estimate(a, b) -> FlowField`` on a fixed output grid."""

    name = "abstract"
    grid_size: tuple[int, int] = (64, 64)

    def estimate(self, a: np.ndarray, b: np.ndarray) -> FlowField:
        raise NotImplementedError


@dataclass
class BaselineFlowEstimator(FlowEstimator):
    """Coarse-to-fine dense Lucas-Kanade on a grayscale pyramid.

    Deterministic classical stand-in for a learned flow backend. Frames are
    resized to ``grid_size`` before estimation; output vectors are scaled to
    the input frames' resolution (the flow's reference resolution).
    """

    grid_size: tuple[int, int] = (64, 64)
    levels: int = 3
    window: int = 5
    iters: int = 3
    name: str = "baseline"
    calls: int = field(default=0, compare=False)

    def estimate(self, a: np.ndarray, b: np.ndarray) -> FlowField:
        if a.shape != b.shape:
            raise InvalidInputError(f"frame sizes differ: {a.shape} vs {b.shape}")
        self.calls += 1
        gw, gh = self.grid_size
        ga = resize_frame(to_gray(a), (gw, gh))
        gb = resize_frame(to_gray(b), (gw, gh))
        vec, weights = _pyramidal_lk(ga, gb, self.levels, self.window, self.iters)
        ref_h, ref_w = a.shape[:2]
        vec[:, :, 0] *= np.float32(ref_w / gw)
        vec[:, :, 1] *= np.float32(ref_h / gh)
        return FlowField(vec, (ref_w, ref_h), weights=weights)


def estimate_flow_baseline(a: np.ndarray, b: np.ndarray, levels: int = 3) -> FlowField:
    """Functional wrapper over :class:`BaselineFlowEstimator`."""
    if levels < 1:
        raise InvalidInputError("levels must be >= 1")
    return BaselineFlowEstimator(levels=levels).estimate(a, b)


def flow_correspondences(
    flow: FlowField, stride: int = 1, min_weight: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Emit ``(x, x + flow(x))`` point pairs in reference-resolution coords.

    With ``min_weight`` set and a confidence-carrying flow, pairs whose
    confidence falls below the threshold are dropped.
    """
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    gw, gh = flow.grid_size
    xs, ys = grid_positions((gw, gh), flow.ref_size)
    xi = np.arange(0, gw, stride)
    yi = np.arange(0, gh, stride)
    px, py = np.meshgrid(xs[xi], ys[yi])
    src = np.stack([px.ravel(), py.ravel()], axis=1)
    v = flow.vectors[np.ix_(yi, xi)].reshape(-1, 2).astype(np.float64)
    dst = src + v
    if min_weight is not None and flow.weights is not None:
        keep = flow.weights[np.ix_(yi, xi)].ravel() >= min_weight
        if keep.any():
            src, dst = src[keep], dst[keep]
    return src, dst


def flow_from_transform(matrix: np.ndarray, grid_size: tuple[int, int], ref_size: tuple[int, int]) -> FlowField:
    """Flow field of a transform: ``f(x) = M x - x`` sampled on the grid."""
    gw, gh = grid_size
    xs, ys = grid_positions((gw, gh), ref_size)
    px, py = np.meshgrid(xs, ys)
    mx = matrix[0, 0] * px + matrix[0, 1] * py + matrix[0, 2]
    my = matrix[1, 0] * px + matrix[1, 1] * py + matrix[1, 2]
    vec = np.stack([mx - px, my - py], axis=2).astype(np.float32)
    return FlowField(vec, ref_size)


_REGISTRY: dict[str, type] = {}


def register_estimator(name: str, factory) -> None:
    _REGISTRY[name] = factory


def make_estimator(name: str, **kwargs) -> FlowEstimator:
    """Instantiate a registered estimator (config key ``flow.backend``)."""
    if name not in _REGISTRY:
        raise InvalidInputError(
            f"unknown flow backend {name!r}; registered: {sorted(_REGISTRY)}"
        )
    return _REGISTRY[name](**kwargs)


register_estimator("baseline", BaselineFlowEstimator)
