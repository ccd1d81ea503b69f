"""Shared fixtures-as-functions for the test suite."""

import numpy as np
from scipy import ndimage


def smooth_texture(rng, size=64, sigma=2.0):
    """Periodic smoothed noise rescaled to [0, 1]."""
    tex = ndimage.gaussian_filter(rng.random((size, size)), sigma, mode="wrap")
    return (tex - tex.min()) / (tex.max() - tex.min())


def shifted_pair(rng, dx=1, dy=0, size=64):
    tex = smooth_texture(rng, size)
    return tex, np.roll(np.roll(tex, dy, axis=0), dx, axis=1)
