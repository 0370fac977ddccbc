"""
Bird's-eye-view rasterizer

Every vehicle is a separable 2D Gaussian with sigma = half its box extent;
overlapping vehicles merge by taking the pixelwise maximum, so the grid
never exceeds 1.
"""

import logging
import math
from typing import List, Set

import numpy as np
from joblib import Parallel, delayed

from bevpredict.models import BevGrid, Frame, GridSpec, SampleStack, SceneSequence, VehicleState
from bevpredict.utils.errors import InvalidArgumentError, SampleRangeError

logger = logging.getLogger(__name__)

# Support is cut at this many sigmas; the dropped tail is below exp(-8)
TRUNCATE_SIGMAS = 4.0


def gaussian_at(v: VehicleState, x: float, y: float) -> float:
    """Occupancy probability contributed by `v` at world point (x, y)"""

    sx = math.sqrt(2.0) * (v.w / 2.0)
    sy = math.sqrt(2.0) * (v.h / 2.0)
    return math.exp(-((x - v.cx) / sx) ** 2 - ((y - v.cy) / sy) ** 2)


def _index_span(center: float, reach: float, origin: float, res: float, n: int):
    lo = max(0, int(math.ceil((center - reach - origin) / res)))
    hi = min(n - 1, int(math.floor((center + reach - origin) / res)))
    return lo, hi


def splat(values: np.ndarray, v: VehicleState, spec: GridSpec) -> None:
    """Max-merge one vehicle into `values` in place"""

    sigma_x = v.w / 2.0
    sigma_y = v.h / 2.0
    c0, c1 = _index_span(v.cx, TRUNCATE_SIGMAS * sigma_x, spec.origin_x, spec.x_m_per_px, spec.width_px)
    r0, r1 = _index_span(v.cy, TRUNCATE_SIGMAS * sigma_y, spec.origin_y, spec.y_m_per_px, spec.height_px)
    if c0 > c1 or r0 > r1:
        return

    xs = spec.origin_x + np.arange(c0, c1 + 1) * spec.x_m_per_px
    ys = spec.origin_y + np.arange(r0, r1 + 1) * spec.y_m_per_px
    gx = np.exp(-((xs - v.cx) / (math.sqrt(2.0) * sigma_x)) ** 2)
    gy = np.exp(-((ys - v.cy) / (math.sqrt(2.0) * sigma_y)) ** 2)
    patch = np.outer(gy, gx)

    window = values[r0:r1 + 1, c0:c1 + 1]
    np.maximum(window, patch, out=window)


def render_frame(frame: Frame, spec: GridSpec) -> BevGrid:
    """Rasterize every vehicle of a frame into one occupancy grid"""

    values = np.zeros(spec.shape, dtype=np.float64)
    for v in frame.vehicles:
        splat(values, v, spec)
    return BevGrid(spec, values)


def render_sequence(seq: SceneSequence, spec: GridSpec, n_jobs: int = 1) -> List[BevGrid]:
    """Render all frames, in order"""

    if n_jobs == 1 or len(seq.frames) < 2:
        return [render_frame(frame, spec) for frame in seq.frames]

    logger.debug(f"Rendering {len(seq.frames)} frames with n_jobs={n_jobs}")
    return Parallel(n_jobs=n_jobs)(delayed(render_frame)(frame, spec) for frame in seq.frames)


def valid_sample_indices(seq: SceneSequence, d: int) -> range:
    """Every t with d frames of history (t included) and d future frames"""
    return range(d - 1, max(d - 1, len(seq.frames) - d))


def unexpected_vehicle_ids(seq: SceneSequence, t: int, horizon: int) -> Set[int]:
    """Ids present `horizon` frames after t that were absent at t"""

    future = seq.frames[t + horizon].ids()
    return future - seq.frames[t].ids()


def _check_history(t: int, d: int) -> None:
    if d < 1:
        raise InvalidArgumentError(f"stack depth d must be >= 1, got {d}")
    missing_history = (d - 1) - t
    if missing_history > 0:
        raise SampleRangeError(
            f"t={t} needs {d - 1} frames of history, {missing_history} missing"
        )


def history_stack(seq: SceneSequence, t: int, d: int, spec: GridSpec) -> np.ndarray:
    """Frames t-d+1 .. t rendered as a (d, h, w) input stack"""

    _check_history(t, d)
    if t >= len(seq.frames):
        raise SampleRangeError(f"t={t} is past the last frame ({len(seq.frames) - 1})")
    return np.stack([render_frame(seq.frames[i], spec).values for i in range(t - d + 1, t + 1)])


def build_sample(seq: SceneSequence, t: int, d: int, spec: GridSpec) -> SampleStack:
    """
    Build the input/target stacks around time index t

    Inputs are frames t-d+1 .. t as they are. Targets are frames t+1 .. t+d
    keeping only vehicles present in frame t.
    """

    _check_history(t, d)
    n = len(seq.frames)
    missing_future = (t + d) - (n - 1)
    if missing_future > 0:
        raise SampleRangeError(
            f"t={t} needs {d} future frames, sequence of {n} frames is {missing_future} short"
        )

    present = seq.frames[t].ids()
    inputs = history_stack(seq, t, d, spec)
    targets = np.stack([
        render_frame(seq.frames[i].restricted_to(present), spec).values
        for i in range(t + 1, t + d + 1)
    ])

    return SampleStack(spec=spec, inputs=inputs, targets=targets, dt_s=seq.dt_s, t=t)
