"""Occupancy-grid construction from optimized poses and LiDAR scans.

Cells store log-odds occupancy clamped to [-10, 10]. Each beam decrements the
cells strictly between the sensor cell and the endpoint cell (exact grid-line
traversal) and increments the endpoint cell. The grid auto-expands by doubling
whenever a beam leaves its current extent; the world position of existing
cells never moves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Pose2D, compose, inverse, transform_points
from .scan_matching import Scan

__all__ = [
    "OccupancyGrid",
    "ray_cells",
    "integrate_scan",
    "build_occupancy_map",
    "export_pgm",
    "render_svg",
]

LOG_ODDS_MIN = -10.0
LOG_ODDS_MAX = 10.0
LOG_ODDS_OCCUPIED = 0.85
LOG_ODDS_FREE = 0.4
DEFAULT_RESOLUTION = 0.05  # m per cell
DEFAULT_OCCUPIED_THRESHOLD = 0.65
DEFAULT_FREE_THRESHOLD = 0.25

PGM_OCCUPIED = 0
PGM_FREE = 254
PGM_UNKNOWN = 205

_INITIAL_EXTENT = 64  # cells per side when a grid first materializes


@dataclass
class OccupancyGrid:
    """Log-odds occupancy grid; ``cells[iy, ix]`` and origin at cell (0,0)'s corner."""

    resolution: float = DEFAULT_RESOLUTION
    origin: Pose2D = field(default_factory=Pose2D)
    width: int = 0
    height: int = 0
    cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells = np.asarray(self.cells, dtype=float)
        if self.cells.shape != (self.height, self.width):
            raise ValueError("cells shape must be (height, width)")

    def world_to_grid(self, points: np.ndarray) -> np.ndarray:
        """World points -> continuous grid-frame coordinates in cell units."""
        return transform_points(inverse(self.origin), points) / self.resolution

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        g = self.world_to_grid(np.array([[x, y]]))[0]
        return int(math.floor(g[0])), int(math.floor(g[1]))

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        local = np.array([[(ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution]])
        w = transform_points(self.origin, local)[0]
        return float(w[0]), float(w[1])

    def probabilities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.cells))


def _grow(grid: OccupancyGrid, min_ix: int, max_ix: int, min_iy: int, max_iy: int) -> None:
    """Expand (by doubling) so [min,max] cell indices fit; world content fixed.

    The needed span is centered in the new allocation, so slack lands on both
    sides and repeated small growths in one direction don't re-double.
    """
    if grid.width == 0:
        span_x = max_ix - min_ix + 1
        span_y = max_iy - min_iy + 1
        size = _INITIAL_EXTENT
        while size < max(span_x, span_y):
            size *= 2
        grid.width = grid.height = size
        grid.cells = np.zeros((size, size))
        off_x = (size - span_x) // 2
        off_y = (size - span_y) // 2
        shift = Pose2D((min_ix - off_x) * grid.resolution, (min_iy - off_y) * grid.resolution, 0.0)
        grid.origin = compose(grid.origin, shift)
        return
    lo_x, hi_x = min(0, min_ix), max(grid.width - 1, max_ix)
    lo_y, hi_y = min(0, min_iy), max(grid.height - 1, max_iy)
    if lo_x == 0 and lo_y == 0 and hi_x < grid.width and hi_y < grid.height:
        return
    span_x = hi_x - lo_x + 1
    span_y = hi_y - lo_y + 1
    new_w, new_h = grid.width, grid.height
    while new_w < span_x:
        new_w *= 2
    while new_h < span_y:
        new_h *= 2
    off_x = -lo_x + (new_w - span_x) // 2
    off_y = -lo_y + (new_h - span_y) // 2
    cells = np.zeros((new_h, new_w))
    cells[off_y : off_y + grid.height, off_x : off_x + grid.width] = grid.cells
    grid.cells = cells
    grid.width, grid.height = new_w, new_h
    shift = Pose2D(-off_x * grid.resolution, -off_y * grid.resolution, 0.0)
    grid.origin = compose(grid.origin, shift)


def ray_cells(start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """All cells a segment passes through, in continuous grid coordinates.

    Exact grid-line traversal: the cell sequence starts at floor(start) and
    steps once per axis crossing, ordered by crossing parameter (x before y on
    exact corner ties). Returns an (M, 2) integer array of (ix, iy).
    """
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    c0 = np.floor(a).astype(np.int64)
    d = b - a

    ts = []
    steps = []
    axis_order = []
    for axis in range(2):
        if d[axis] > 0:
            firsts = math.floor(a[axis]) + 1
            lasts = math.ceil(b[axis]) - 1
            ks = np.arange(firsts, lasts + 1)
            step = 1
        elif d[axis] < 0:
            firsts = math.ceil(a[axis]) - 1
            lasts = math.floor(b[axis]) + 1
            ks = np.arange(firsts, lasts - 1, -1)
            step = -1
        else:
            continue
        t = (ks - a[axis]) / d[axis]
        keep = (t > 0.0) & (t < 1.0)
        ts.append(t[keep])
        steps.append(np.full(keep.sum(), step, dtype=np.int64))
        axis_order.append(np.full(keep.sum(), axis, dtype=np.int64))
    if not ts:
        return c0[None, :]
    t_all = np.concatenate(ts)
    step_all = np.concatenate(steps)
    axis_all = np.concatenate(axis_order)
    # Stable sort keeps x-crossings ahead of y-crossings on exact ties because
    # axis 0 entries are concatenated first.
    order = np.argsort(t_all, kind="stable")
    deltas = np.zeros((order.size + 1, 2), dtype=np.int64)
    deltas[0] = c0
    deltas[np.arange(1, order.size + 1), axis_all[order]] = step_all[order]
    return np.cumsum(deltas, axis=0)


def integrate_scan(grid: OccupancyGrid, pose: Pose2D, scan: Scan) -> OccupancyGrid:
    """Fold one scan taken at ``pose`` into the grid and return it.

    Per beam, the cells strictly between the sensor cell and the endpoint cell
    receive the free-space decrement; the endpoint cell receives the occupied
    increment. Log-odds are clamped after the scan is applied.
    """
    if len(scan) == 0:
        return grid
    world_pts = transform_points(pose, scan.points)
    sensor = np.array([pose.x, pose.y])
    all_pts = np.vstack((world_pts, sensor[None, :]))
    if grid.width == 0:
        # Anchor the first sensor position at a cell center so axis-aligned
        # geometry does not sit exactly on cell boundaries.
        half = grid.resolution / 2.0
        grid.origin = Pose2D(pose.x - 1.0 - half, pose.y - 1.0 - half, 0.0)
    g_all = grid.world_to_grid(all_pts)
    cells_needed = np.floor(g_all).astype(np.int64)
    _grow(
        grid,
        int(cells_needed[:, 0].min()),
        int(cells_needed[:, 0].max()),
        int(cells_needed[:, 1].min()),
        int(cells_needed[:, 1].max()),
    )
    g_pts = grid.world_to_grid(world_pts)
    g_sensor = grid.world_to_grid(sensor[None, :])[0]

    free_x: list[np.ndarray] = []
    free_y: list[np.ndarray] = []
    occ = np.floor(g_pts).astype(np.int64)
    for k in range(g_pts.shape[0]):
        cells = ray_cells(g_sensor, g_pts[k])
        if cells.shape[0] > 1:
            inner = cells[1:]
            not_end = ~((inner[:, 0] == occ[k, 0]) & (inner[:, 1] == occ[k, 1]))
            inner = inner[not_end]
            free_x.append(inner[:, 0])
            free_y.append(inner[:, 1])
    if free_x:
        fx = np.concatenate(free_x)
        fy = np.concatenate(free_y)
        np.subtract.at(grid.cells, (fy, fx), LOG_ODDS_FREE)
    np.add.at(grid.cells, (occ[:, 1], occ[:, 0]), LOG_ODDS_OCCUPIED)
    np.clip(grid.cells, LOG_ODDS_MIN, LOG_ODDS_MAX, out=grid.cells)
    return grid


def build_occupancy_map(
    poses: Sequence[Pose2D],
    scans: Sequence[Scan | None],
    resolution: float = DEFAULT_RESOLUTION,
) -> OccupancyGrid:
    """Integrate index-aligned scans at their poses into a fresh grid."""
    if len(poses) != len(scans):
        raise ValueError(f"poses ({len(poses)}) and scans ({len(scans)}) must be index-aligned")
    grid = OccupancyGrid(resolution=resolution)
    for pose, scan in zip(poses, scans):
        if scan is not None:
            integrate_scan(grid, pose, scan)
    return grid


def export_pgm(
    grid: OccupancyGrid,
    occupied_threshold: float = DEFAULT_OCCUPIED_THRESHOLD,
    free_threshold: float = DEFAULT_FREE_THRESHOLD,
) -> tuple[bytes, dict]:
    """Render the grid as binary PGM (P5) plus sidecar metadata.

    Pixels: occupied -> 0, free -> 254, unknown -> 205. Image row 0 is the
    top of the map (highest y cell row).
    """
    if grid.width == 0 or grid.height == 0:
        raise ValueError("cannot export a zero-size grid")
    if not (0.0 < free_threshold < occupied_threshold < 1.0):
        raise ValueError("need 0 < free_threshold < occupied_threshold < 1")
    p = grid.probabilities()
    img = np.full(p.shape, PGM_UNKNOWN, dtype=np.uint8)
    img[p > occupied_threshold] = PGM_OCCUPIED
    img[p < free_threshold] = PGM_FREE
    img = img[::-1, :]  # row 0 at top
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    metadata = {
        "resolution": grid.resolution,
        "origin": {"x": grid.origin.x, "y": grid.origin.y, "theta": grid.origin.theta},
        "width": grid.width,
        "height": grid.height,
        "occupied_threshold": occupied_threshold,
        "free_threshold": free_threshold,
        "pixel_values": {"occupied": PGM_OCCUPIED, "free": PGM_FREE, "unknown": PGM_UNKNOWN},
    }
    return header + img.tobytes(), metadata


def _svg_bounds(points: np.ndarray, pad: float = 1.0) -> tuple[float, float, float, float]:
    min_x, min_y = points.min(axis=0) - pad
    max_x, max_y = points.max(axis=0) + pad
    return float(min_x), float(min_y), float(max_x), float(max_y)


def render_svg(
    trajectories: Sequence[tuple[str, Sequence[tuple[float, Pose2D]]]],
    grid: OccupancyGrid | None = None,
    occupied_threshold: float = DEFAULT_OCCUPIED_THRESHOLD,
    width_px: int = 800,
) -> str:
    """SVG overlay of trajectories (and optionally the grid's occupied cells)."""
    pts = []
    for _, traj in trajectories:
        for _, pose in traj:
            pts.append((pose.x, pose.y))
    occupied_rects: list[tuple[float, float]] = []
    res = grid.resolution if grid is not None else 0.0
    if grid is not None and grid.width > 0:
        occ_mask = grid.probabilities() > occupied_threshold
        ys, xs = np.nonzero(occ_mask)
        for ix, iy in zip(xs, ys):
            cx, cy = grid.cell_center(int(ix), int(iy))
            occupied_rects.append((cx, cy))
            pts.append((cx, cy))
    if not pts:
        raise ValueError("nothing to render")
    arr = np.array(pts)
    min_x, min_y, max_x, max_y = _svg_bounds(arr)
    span_x = max_x - min_x
    span_y = max_y - min_y
    scale = width_px / span_x
    height_px = max(1, int(round(span_y * scale)))

    def sx(x: float) -> str:
        return f"{(x - min_x) * scale:.2f}"

    def sy(y: float) -> str:
        return f"{(max_y - y) * scale:.2f}"

    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{height_px}" '
        f'viewBox="0 0 {width_px} {height_px}">',
        f'<rect width="{width_px}" height="{height_px}" fill="white"/>',
    ]
    if occupied_rects:
        cell_px = max(res * scale, 1.0)
        rects = "".join(
            f'<rect x="{sx(cx - res / 2)}" y="{sy(cy + res / 2)}" '
            f'width="{cell_px:.2f}" height="{cell_px:.2f}"/>'
            for cx, cy in occupied_rects
        )
        parts.append(f'<g fill="#444444">{rects}</g>')
    for k, (label, traj) in enumerate(trajectories):
        color = colors[k % len(colors)]
        coords = " ".join(f"{sx(p.x)},{sy(p.y)}" for _, p in traj)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5">'
            f"<title>{label}</title></polyline>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def metadata_json(metadata: dict, extra: dict | None = None) -> str:
    """Deterministic JSON for the PGM sidecar."""
    data = dict(metadata)
    if extra:
        data["meta"] = extra
    return json.dumps(data, sort_keys=True, indent=2) + "\n"
