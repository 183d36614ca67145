"""Image-event connection (ICE): the guidance representation.

A short event window voxel and the frame anchored at the window's end are
both normalized into [-1, 1] and concatenated channel-wise (voxel bins
first in ascending time, image last). The event window is kept short — one
target span — so moving edges stay sharp while the frame supplies texture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventWindow, VoxelGrid, voxelize

DEFAULT_EPS = 0.1


@dataclass
class IceTensor:
    """(bins+1),H,W guidance stack plus the anchoring image timestamp."""

    values: np.ndarray
    t: float

    @property
    def channels(self):
        return self.values.shape[0]


def normalize_image(image) -> np.ndarray:
    """Map 0..255 intensities into [-1, 1] (2*I/255 - 1)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("normalize_image: values must lie in [0, 255]")
    return 2.0 * arr / 255.0 - 1.0


def normalize_voxel(voxel, eps=DEFAULT_EPS) -> np.ndarray:
    """Scale a voxel grid by 1/(max|V| + eps), keeping |output| < 1.

    eps > 0 keeps the all-zero grid well-defined (it maps to zero); the max
    is taken per grid, so the scale adapts to each sample's event density.
    """
    if eps <= 0:
        raise ValueError("normalize_voxel: eps must be positive")
    vals = voxel.values if isinstance(voxel, VoxelGrid) else np.asarray(voxel, dtype=np.float64)
    return vals / (np.abs(vals).max(initial=0.0) + eps)


def build_ice(window: EventWindow, image, bins=3, eps=DEFAULT_EPS) -> IceTensor:
    """Stack a normalized short-window voxel with the normalized frame.

    The window should span exactly one target interval ending at the
    image's timestamp; channel order is voxel bins in ascending time, then
    the image channel.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.shape != (window.height, window.width):
        raise ValueError(
            f"build_ice: image {img.shape} does not match sensor "
            f"{(window.height, window.width)}")
    voxel = voxelize(window, bins)
    stack = np.concatenate([normalize_voxel(voxel, eps),
                            normalize_image(img)[None]], axis=0)
    return IceTensor(values=stack, t=float(window.t_end))
