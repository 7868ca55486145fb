"""8-bit renderings of confidence and depth maps."""

import numpy as np
from matplotlib import colormaps
from PIL import Image


def confidence_to_image(confidence):
    """Linear grayscale, 0 -> black, 1 -> white."""
    c = np.nan_to_num(np.asarray(confidence, dtype=float), nan=0.0)
    return np.round(np.clip(c, 0.0, 1.0) * 255).astype(np.uint8)


def depth_to_image(depth, depth_cap=80.0, cmap="jet_r"):
    """Inverse-depth heat map, near surfaces blue. Pixels without a positive
    depth are black."""
    d = np.asarray(depth, dtype=float)
    valid = np.isfinite(d) & (d > 0)
    inv = np.zeros_like(d)
    inv[valid] = 1.0 / np.minimum(d[valid], depth_cap)
    if valid.any():
        lo, hi = 1.0 / depth_cap, inv[valid].max()
        inv = (inv - lo) / (hi - lo) if hi > lo else np.ones_like(inv)
    rgb = colormaps[cmap](np.clip(inv, 0, 1))[..., :3]
    rgb[~valid] = 0.0
    return np.round(rgb * 255).astype(np.uint8)


def save_image(path, array):
    Image.fromarray(array).save(path)
