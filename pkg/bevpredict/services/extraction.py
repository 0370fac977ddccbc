"""
Multi-vehicle position extraction from occupancy grids

Repeatedly takes the global maximum, refines it to a probability-weighted
centroid over a window around the peak, then zeroes that window so the next
vehicle can be found.
"""

import logging
from typing import List, Tuple, Union

import numpy as np

from bevpredict.models import BevGrid, ExtractConfig, GridSpec, PositionEstimate
from bevpredict.utils.errors import DegenerateWindowError

logger = logging.getLogger(__name__)

Pixel = Tuple[int, int]


def world_to_pixel(x: float, y: float, spec: GridSpec) -> Tuple[float, float]:
    """Real-valued (row, col) sampling world point (x, y)"""
    return (y - spec.origin_y) / spec.y_m_per_px, (x - spec.origin_x) / spec.x_m_per_px


def pixel_to_world(r: float, c: float, spec: GridSpec) -> Tuple[float, float]:
    return spec.origin_x + c * spec.x_m_per_px, spec.origin_y + r * spec.y_m_per_px


def window_pixels(cfg: ExtractConfig, spec: GridSpec) -> Pixel:
    """Half-window (rows, cols) in pixels for the metric window of `cfg`"""
    return int(round(cfg.win_h / spec.y_m_per_px)), int(round(cfg.win_w / spec.x_m_per_px))


def _window_bounds(peak: Pixel, win: Pixel, shape: Tuple[int, int]) -> Tuple[int, int, int, int]:
    r, c = peak
    h, w = shape
    return max(0, r - win[0]), min(h, r + win[0] + 1), max(0, c - win[1]), min(w, c + win[1] + 1)


def _centroid(values: np.ndarray, peak: Pixel, win: Pixel) -> Tuple[float, float]:
    r0, r1, c0, c1 = _window_bounds(peak, win, values.shape)
    # Negative predictions carry no mass
    patch = np.clip(values[r0:r1, c0:c1], 0.0, None)
    mass = float(patch.sum())
    if mass <= 0.0:
        raise DegenerateWindowError(f"no probability mass in the window around pixel {peak}")

    rows = np.arange(r0, r1, dtype=np.float64)
    cols = np.arange(c0, c1, dtype=np.float64)
    r_hat = float(patch.sum(axis=1) @ rows) / mass
    c_hat = float(patch.sum(axis=0) @ cols) / mass
    return r_hat, c_hat


def subpixel_location(grid: BevGrid, peak: Pixel, win: Pixel) -> Tuple[float, float]:
    """
    Probability-mass-weighted centroid around `peak`, in meters

    Args:
        grid: Occupancy grid
        peak: (row, col) of the discrete peak
        win: Half-window (rows, cols) in pixels, clipped at the grid border

    Returns:
        (x, y) world coordinates
    """

    r_hat, c_hat = _centroid(np.asarray(grid.values, dtype=np.float64), peak, win)
    return pixel_to_world(r_hat, c_hat, grid.spec)


def discrete_location(grid: BevGrid, peak: Pixel) -> Tuple[float, float]:
    """World coordinate of the peak pixel itself"""
    return pixel_to_world(peak[0], peak[1], grid.spec)


def extract_positions(grid: BevGrid, cfg: ExtractConfig = ExtractConfig()) -> List[PositionEstimate]:
    """
    Every peak above cfg.p_min, in extraction order (descending peak value)

    Ties between equal maxima go to the smallest row, then the smallest column.
    """

    spec = grid.spec
    work = np.array(grid.values, dtype=np.float64)
    win = window_pixels(cfg, spec)
    width = work.shape[1]
    estimates: List[PositionEstimate] = []

    while True:
        flat = int(np.argmax(work))
        r, c = divmod(flat, width)
        peak_p = float(work[r, c])
        if not peak_p > cfg.p_min:
            break

        r_hat, c_hat = _centroid(work, (r, c), win)
        x, y = pixel_to_world(r_hat, c_hat, spec)
        estimates.append(PositionEstimate(x=x, y=y, peak_p=peak_p, discrete_rc=(r, c)))

        r0, r1, c0, c1 = _window_bounds((r, c), win, work.shape)
        work[r0:r1, c0:c1] = 0.0

    logger.debug(f"Extracted {len(estimates)} position(s) above p_min={cfg.p_min}")
    return estimates


def extract_channels(
    stack: Union[np.ndarray, List[BevGrid]],
    spec: GridSpec,
    cfg: ExtractConfig = ExtractConfig()
) -> List[List[PositionEstimate]]:
    """extract_positions on each channel of a (d, h, w) stack"""

    grids = [g if isinstance(g, BevGrid) else BevGrid(spec, np.array(g, dtype=np.float64)) for g in stack]
    return [extract_positions(g, cfg) for g in grids]
