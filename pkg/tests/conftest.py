import numpy as np
import pytest
from scipy import ndimage


def textured_frame(size: int = 128, seed: int = 0) -> np.ndarray:
    """Band-limited multi-scale random texture, values well inside [0, 1].

    Smooth enough that bilinear warps round-trip within interpolation
    tolerances, textured enough at several scales for gradient-based flow.
    """
    rng = np.random.default_rng(seed)
    octaves = []
    for sigma in (4.0, 8.0, 18.0):
        octave = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma)
        octaves.append(octave / (octave.std() + 1e-12))
    mixes = ((0.35, 0.35, 0.3), (0.2, 0.45, 0.35), (0.3, 0.25, 0.45))
    chans = []
    for weights in mixes:
        img = sum(w * o for w, o in zip(weights, octaves))
        img = (img - img.min()) / (img.max() - img.min() + 1e-9)
        chans.append(0.1 + 0.8 * img)
    return np.stack(chans, axis=2).astype(np.float32)


@pytest.fixture
def frame128():
    return textured_frame(128, seed=7)


@pytest.fixture
def frame64():
    return textured_frame(64, seed=11)
