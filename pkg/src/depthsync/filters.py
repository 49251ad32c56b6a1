"""Classical depth denoisers: bilateral, joint bilateral and rolling guidance.

Missing depth (0) carries no weight. Window radius defaults to
ceil(3 * sigma_space). Depth-guided range sigmas are in meters, color-guided
ones in 8-bit luminance units.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .evaluation import evaluate_dataset
from .spatial import luminance


@dataclass(frozen=True)
class FilterParams:
    sigma_space: float
    sigma_range: float
    radius: int | None = None
    iterations: int = 1

    def __post_init__(self):
        if not (self.sigma_space > 0 and self.sigma_range > 0):
            raise InvalidInputError(f"sigmas must be positive: {self}")
        if self.radius is None:
            object.__setattr__(self, "radius", max(1, math.ceil(3 * self.sigma_space)))
        if self.radius < 1:
            raise InvalidInputError(f"radius must be >= 1: {self}")
        if self.iterations < 1:
            raise InvalidInputError(f"iterations must be >= 1: {self}")


def _depth(d):
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2:
        raise InvalidInputError(f"depth must be 2-D, got shape {d.shape}")
    return d


def gaussian_blur(d, sigma_space, radius=None):
    """Normalized Gaussian average of the valid neighbors (fills holes within reach)."""
    d = _depth(d)
    p = FilterParams(sigma_space, 1.0, radius)
    everywhere = np.ones(d.shape, dtype=bool)
    return kernels.joint_bilateral(d, d > 0, np.zeros(d.shape), everywhere, p.sigma_space, math.inf, p.radius)


def bilateral(d, p):
    d = _depth(d)
    valid = d > 0
    return kernels.joint_bilateral(d, valid, d, valid, p.sigma_space, p.sigma_range, p.radius)


def joint_bilateral(d, guide, p):
    """Range weights from the guide's luminance (an RGB image or a gray one)."""
    d = _depth(d)
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim == 3:
        guide = luminance(guide)
    if guide.shape != d.shape:
        raise InvalidInputError(f"guide shape {guide.shape} does not match depth {d.shape}")
    everywhere = np.ones(d.shape, dtype=bool)
    return kernels.joint_bilateral(d, d > 0, guide, everywhere, p.sigma_space, p.sigma_range, p.radius)


def rolling_guidance(d, p, return_all=False):
    """Gaussian blur, then ``iterations - 1`` joint bilateral passes over the
    original input, each guided by the previous result."""
    d = _depth(d)
    valid = d > 0
    out = gaussian_blur(d, p.sigma_space, p.radius)
    steps = [out]
    for _ in range(p.iterations - 1):
        out = kernels.joint_bilateral(d, valid, out, out > 0, p.sigma_space, p.sigma_range, p.radius)
        steps.append(out)
    return steps if return_all else out


FILTERS = ("bf", "jbf", "rgf")


class FilterDenoiser:
    """Applies one of the filters to an LQ frame."""

    def __init__(self, kind, params):
        if kind not in FILTERS:
            raise InvalidInputError(f"unknown filter {kind!r}; choose from {FILTERS}")
        self.kind = kind
        self.params = params

    def __call__(self, frame):
        if self.kind == "bf":
            return bilateral(frame.depth, self.params)
        if self.kind == "jbf":
            return joint_bilateral(frame.depth, frame.color, self.params)
        return rolling_guidance(frame.depth, self.params)

    def __repr__(self):
        return f"FilterDenoiser({self.kind!r}, {self.params})"


def expand_grid(sigma_space, sigma_range, radius=(None,), iterations=(1,)):
    return [FilterParams(s, r, rad, it) for s, r, rad, it in
            itertools.product(sigma_space, sigma_range, radius, iterations)]


def tune_params(kind, paired, grid, use_seg=True):
    """Exhaustive search for the grid point with the lowest mean masked MSE.

    Returns ``(best_params, table)`` where ``table`` lists ``(params, mse)``
    for every grid point in input order. Ties go to smaller sigmas.
    """
    grid = list(grid)
    if not grid:
        raise InvalidInputError("empty parameter grid")
    if len(paired.records) == 0:
        raise InvalidInputError("empty dataset")
    table = []
    for p in grid:
        den = FilterDenoiser(kind, p)
        preds = [den(r.lq_frame) for r in paired.records]
        _, summary = evaluate_dataset(preds, paired, use_seg)
        table.append((p, summary["mean_mse_mm2"]))
    best = min(table, key=lambda e: (e[1], e[0].sigma_space, e[0].sigma_range, e[0].radius, e[0].iterations))
    return best[0], table

