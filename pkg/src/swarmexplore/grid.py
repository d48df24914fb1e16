"""Occupancy grid, ground-truth maps, sensor reveal model and map merging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

FREE = np.uint8(0)
OBSTACLE = np.uint8(1)
UNKNOWN = np.uint8(2)

# 4-connectivity for reachability, 8-connectivity only inside ray traversal
_STRUCT4 = ndimage.generate_binary_structure(2, 1)
_STRUCT8 = np.ones((3, 3), dtype=bool)


class MapFormatError(ValueError):
    """Raised for malformed map files."""


@dataclass
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        # normalize heading to [-pi, pi)
        self.theta = (self.theta + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class OccupancyGrid:
    """Grid map where every cell is exactly one of Free/Obstacle/Unknown."""

    resolution: float
    cells: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise ValueError("grid must be a non-empty 2D array")
        if not np.isin(self.cells, (FREE, OBSTACLE, UNKNOWN)).all():
            raise ValueError("cells must be Free, Obstacle or Unknown")

    @classmethod
    def blank(cls, width: int, height: int, resolution: float, fill=UNKNOWN) -> "OccupancyGrid":
        return cls(resolution, np.full((height, width), fill, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.cells.copy())

    def counts(self) -> tuple[int, int, int]:
        """(free, obstacle, unknown) cell counts; always sums to width*height."""
        free = int(np.count_nonzero(self.cells == FREE))
        obst = int(np.count_nonzero(self.cells == OBSTACLE))
        return free, obst, self.cells.size - free - obst

    def in_bounds(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(x / self.resolution), int(y / self.resolution)

    def center(self, cx: int, cy: int) -> tuple[float, float]:
        return (cx + 0.5) * self.resolution, (cy + 0.5) * self.resolution

    def flat(self, cx: int, cy: int) -> int:
        return cy * self.width + cx

    def unflat(self, idx: int) -> tuple[int, int]:
        return idx % self.width, idx // self.width


class RoiMask:
    """Boolean cell mask marking the area a planner is responsible for."""

    def __init__(self, mask: np.ndarray):
        self.mask = np.ascontiguousarray(mask, dtype=bool)

    @classmethod
    def full(cls, grid: OccupancyGrid) -> "RoiMask":
        return cls(np.ones_like(grid.cells, dtype=bool))

    @classmethod
    def from_flat(cls, grid: OccupancyGrid, cells) -> "RoiMask":
        mask = np.zeros(grid.cells.size, dtype=bool)
        mask[np.asarray(list(cells) if not isinstance(cells, np.ndarray) else cells, dtype=np.int64)] = True
        return cls(mask.reshape(grid.cells.shape))

    def matches(self, grid: OccupancyGrid) -> bool:
        return self.mask.shape == grid.cells.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass
class GroundTruth:
    """Fully known map plus the set of free cells no robot start can reach."""

    grid: OccupancyGrid
    unreachable: frozenset[int] = field(default_factory=frozenset)

    def observable_mask(self) -> np.ndarray:
        """Free cells reachable from the declared starts (the completion target)."""
        mask = self.grid.cells == FREE
        if self.unreachable:
            flat = np.asarray(sorted(self.unreachable), dtype=np.int64)
            mask.flat[flat] = False
        return mask


def _unreachable_from_starts(grid: OccupancyGrid, starts) -> frozenset[int]:
    free = grid.cells == FREE
    labels, _ = ndimage.label(free, structure=_STRUCT4)
    keep = set()
    for cx, cy in starts:
        if not grid.in_bounds(cx, cy) or not free[cy, cx]:
            raise MapFormatError(f"start cell ({cx}, {cy}) is not a free cell")
        keep.add(int(labels[cy, cx]))
    bad = free & ~np.isin(labels, sorted(keep))
    return frozenset(int(i) for i in np.flatnonzero(bad.ravel()))


def load_map(text: str, resolution: float, starts=None) -> GroundTruth:
    """Parse an ASCII map ('.' free, '#' obstacle) into a ground-truth grid.

    ``starts`` are (cx, cy) cells used to decide which free cells count as
    unreachable; when omitted the first free cell in row-major order is used.
    """
    rows = [line for line in text.splitlines() if line != ""]
    if not rows:
        raise MapFormatError("empty map")
    width = len(rows[0])
    cells = np.empty((len(rows), width), dtype=np.uint8)
    for j, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"ragged row {j}: expected {width} chars, got {len(row)}")
        for i, ch in enumerate(row):
            if ch == ".":
                cells[j, i] = FREE
            elif ch == "#":
                cells[j, i] = OBSTACLE
            else:
                raise MapFormatError(f"invalid character {ch!r} at row {j}, col {i}")
    grid = OccupancyGrid(resolution, cells)
    if starts is None:
        free_flat = np.flatnonzero(cells.ravel() == FREE)
        if free_flat.size == 0:
            return GroundTruth(grid, frozenset())
        starts = [grid.unflat(int(free_flat[0]))]
    return GroundTruth(grid, _unreachable_from_starts(grid, starts))


def dump_map(grid: OccupancyGrid) -> str:
    """Inverse of load_map for fully known grids."""
    if (grid.cells == UNKNOWN).any():
        raise MapFormatError("cannot dump a grid with unknown cells")
    lut = {int(FREE): ".", int(OBSTACLE): "#"}
    return "\n".join("".join(lut[int(c)] for c in row) for row in grid.cells) + "\n"


def load_pgm(data: bytes, resolution: float, starts=None) -> GroundTruth:
    """Import a P2/P5 PGM: pixel < 50 -> obstacle, > 205 -> free, else rejected."""
    tokens = []
    pos = 0
    # header tokens, honoring '#' comments
    while len(tokens) < 4:
        if pos >= len(data):
            raise MapFormatError("truncated PGM header")
        line, _, rest = data[pos:].partition(b"\n")
        pos += len(line) + 1
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
        del rest
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P2", b"P5") or w <= 0 or h <= 0 or maxval <= 0:
        raise MapFormatError("not a valid P2/P5 PGM")
    if magic == b"P5":
        raw = data[pos:pos + w * h]
        if len(raw) < w * h:
            raise MapFormatError("truncated PGM pixel data")
        pix = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.int64)
    else:
        vals = data[pos:].split()
        if len(vals) < w * h:
            raise MapFormatError("truncated PGM pixel data")
        pix = np.array([int(v) for v in vals[:w * h]], dtype=np.int64).reshape(h, w)
    scaled = pix * 255 // maxval
    cells = np.full((h, w), UNKNOWN, dtype=np.uint8)
    cells[scaled < 50] = OBSTACLE
    cells[scaled > 205] = FREE
    if (cells == UNKNOWN).any():
        raise MapFormatError("PGM has mid-gray pixels; ground truth must be fully known")
    grid = OccupancyGrid(resolution, cells)
    if starts is None:
        free_flat = np.flatnonzero(cells.ravel() == FREE)
        starts = [grid.unflat(int(free_flat[0]))] if free_flat.size else []
    return GroundTruth(grid, _unreachable_from_starts(grid, starts) if starts else frozenset())


def line_cells(a: tuple[int, int], b: tuple[int, int]) -> np.ndarray:
    """Integer cells on the segment a->b, inclusive, by max-axis stepping.

    Fractional coordinates round half away from the origin side (floor(v+0.5)),
    which keeps the traversal deterministic and resolution-exact.
    """
    ax, ay = a
    bx, by = b
    n = max(abs(bx - ax), abs(by - ay))
    if n == 0:
        return np.array([[ax, ay]], dtype=np.int64)
    k = np.arange(n + 1, dtype=np.float64)
    xs = np.floor(ax + (bx - ax) * k / n + 0.5).astype(np.int64)
    ys = np.floor(ay + (by - ay) * k / n + 0.5).astype(np.int64)
    return np.stack([xs, ys], axis=1)


def segment_clear(grid: OccupancyGrid, a: tuple[int, int], b: tuple[int, int]) -> bool:
    """True when every cell on the stepped segment a->b is Free."""
    pts = line_cells(a, b)
    return bool((grid.cells[pts[:, 1], pts[:, 0]] == FREE).all())


def _visible_targets(truth_cells: np.ndarray, origin: tuple[int, int], targets: np.ndarray) -> np.ndarray:
    """Line-of-sight test from origin cell to each target cell (vectorized).

    A target is visible when no cell strictly between origin and target is an
    obstacle; obstacles on the endpoint are themselves visible.
    """
    if targets.size == 0:
        return np.zeros(0, dtype=bool)
    ox, oy = origin
    dx = targets[:, 0] - ox
    dy = targets[:, 1] - oy
    n = np.maximum(np.abs(dx), np.abs(dy))
    n_safe = np.maximum(n, 1)
    max_n = int(n.max())
    if max_n <= 1:
        return np.ones(len(targets), dtype=bool)  # adjacent: nothing strictly between
    k = np.arange(1, max_n, dtype=np.float64)  # interior steps only
    t = k[None, :] / n_safe[:, None]
    xs = np.floor(ox + dx[:, None] * t + 0.5).astype(np.int64)
    ys = np.floor(oy + dy[:, None] * t + 0.5).astype(np.int64)
    interior = k[None, :] < n[:, None]
    np.clip(xs, 0, truth_cells.shape[1] - 1, out=xs)
    np.clip(ys, 0, truth_cells.shape[0] - 1, out=ys)
    blocked = (truth_cells[ys, xs] == OBSTACLE) & interior
    return ~blocked.any(axis=1)


def reveal_query(known: OccupancyGrid, truth: GroundTruth, pose: Pose, radius: float) -> np.ndarray:
    """Flat indices of unknown cells a sensor at ``pose`` would reveal (pure)."""
    res = known.resolution
    px, py = pose.x, pose.y
    cx, cy = known.cell_of(px, py)
    if not known.in_bounds(cx, cy):
        raise ValueError(f"pose ({px}, {py}) outside grid bounds")
    rc = int(math.ceil(radius / res)) + 1
    x0, x1 = max(0, cx - rc), min(known.width, cx + rc + 1)
    y0, y1 = max(0, cy - rc), min(known.height, cy + rc + 1)
    window = known.cells[y0:y1, x0:x1]
    uy, ux = np.nonzero(window == UNKNOWN)
    if ux.size == 0:
        return np.zeros(0, dtype=np.int64)
    tx = ux + x0
    ty = uy + y0
    cx_m = (tx + 0.5) * res
    cy_m = (ty + 0.5) * res
    within = (cx_m - px) ** 2 + (cy_m - py) ** 2 <= radius * radius
    tx, ty = tx[within], ty[within]
    if tx.size == 0:
        return np.zeros(0, dtype=np.int64)
    vis = _visible_targets(truth.grid.cells, (cx, cy), np.stack([tx, ty], axis=1))
    return (ty[vis] * known.width + tx[vis]).astype(np.int64)


def reveal(known: OccupancyGrid, truth: GroundTruth, pose: Pose, radius: float) -> np.ndarray:
    """Reveal ground truth around ``pose`` into ``known``; returns new flat cells."""
    if known.cells.shape != truth.grid.cells.shape:
        raise ValueError("known/truth dimension mismatch")
    new = reveal_query(known, truth, pose, radius)
    known.cells.flat[new] = truth.grid.cells.flat[new]
    return new


def merge(global_grid: OccupancyGrid, local: OccupancyGrid) -> OccupancyGrid:
    """Cell-wise merge: known beats Unknown, Obstacle beats Free on conflict."""
    if global_grid.cells.shape != local.cells.shape or global_grid.resolution != local.resolution:
        raise ValueError("merge requires identical dimensions and resolution")
    a, b = global_grid.cells, local.cells
    out = np.where(a == UNKNOWN, b, a)
    conflict = (a != UNKNOWN) & (b != UNKNOWN) & (a != b)
    out[conflict] = OBSTACLE
    return OccupancyGrid(global_grid.resolution, out)


def reachable_free(grid: OccupancyGrid, from_cell: tuple[int, int]) -> np.ndarray:
    """Boolean mask of the 4-connected free component containing ``from_cell``."""
    cx, cy = from_cell
    if not grid.in_bounds(cx, cy) or grid.cells[cy, cx] != FREE:
        raise ValueError(f"from cell ({cx}, {cy}) is not free")
    labels, _ = ndimage.label(grid.cells == FREE, structure=_STRUCT4)
    return labels == labels[cy, cx]
