"""Shared fixtures-as-functions for the test modules."""
import numpy as np

from prodehaze.haze import HazeRanges, generate_clean_image, sample_haze_params, synthesize_pair


def smooth_image(seed, size=64):
    """At most one cosine cycle per image side, i.e. per 8 latent cells."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    chans = [0.5 + 0.25 * np.cos(2 * np.pi * (r.uniform(-1, 1) * xx + r.uniform(-1, 1) * yy) + r.uniform(0, 6))
             for _ in range(3)]
    return np.stack(chans, axis=2)


def toy_pairs(n, size, seed=0, ranges=None):
    ranges = HazeRanges() if ranges is None else ranges
    clean = [generate_clean_image(size, size, seed * 1000 + i) for i in range(n)]
    hazy = [synthesize_pair(c, sample_haze_params(seed * 1000 + 500 + i, ranges))[0] for i, c in enumerate(clean)]
    return clean, hazy


# Colour-cast probe: the haze veil is strongly warm (red high, blue low), so a
# dehazer that keeps the veil's tint is penalized by CIEDE2000.
PROBE_CONFIG = {
    "a_range": [[0.9, 1.0], [0.75, 0.85], [0.45, 0.6]],
    "n_images": 24,
    "image_size": 32,
    "spr_steps": 2000,
}
