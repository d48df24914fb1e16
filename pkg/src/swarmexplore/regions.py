"""Voronoi-like partition of unexplored space and the weighted region graph."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import UNKNOWN, OccupancyGrid, RoiMask
from .perception import Frontier, Rrg, RrgDistances, Viewpoint


@dataclass
class WorkloadStats:
    """Running totals used to convert area into an expected travel distance."""

    distances: tuple[float, ...]   # per-robot odometer readings, meters
    explored_area: float           # union of explored cells, m^2

    def __post_init__(self):
        self.distances = tuple(float(d) for d in self.distances)
        if any(d < 0 for d in self.distances) or self.explored_area < 0:
            raise ValueError("workload statistics must be non-negative")

    @property
    def robot_count(self) -> int:
        return len(self.distances)

    @property
    def total_distance(self) -> float:
        return float(sum(self.distances))


@dataclass
class Region:
    id: int
    cells: np.ndarray          # flat indices of unknown cells, sorted
    area: float                # m^2
    frontier_id: int
    viewpoint: Viewpoint


@dataclass
class RegionGraph:
    """Weighted graph over unexplored regions; vertex i couples region i,
    its frontier and its entry viewpoint."""

    resolution: float
    vertices: list[Region] = field(default_factory=list)
    frontiers: list[Frontier] = field(default_factory=list)
    vertex_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edges: list[tuple[int, int]] = field(default_factory=list)
    edge_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    def edge_weight_matrix(self) -> np.ndarray:
        n = self.vertex_count
        mat = np.full((n, n), np.inf)
        np.fill_diagonal(mat, 0.0)
        for (i, j), w in zip(self.edges, self.edge_weights):
            mat[i, j] = mat[j, i] = w
        return mat

    def dump(self) -> str:
        lines = []
        for r, w in zip(self.vertices, self.vertex_weights):
            vx, vy = r.viewpoint.position
            lines.append(
                f"v {r.id} area={r.area:.4f} weight={w:.4f} frontier={r.frontier_id} vp={vx:.3f},{vy:.3f}"
            )
        for (i, j), w in zip(self.edges, self.edge_weights):
            lines.append(f"e {i} {j} {w:.4f}")
        return "\n".join(lines) + ("\n" if lines else "")


def _partition_owners(grid: OccupancyGrid, roi: RoiMask, frontiers) -> np.ndarray | None:
    """Owner index per cell (-1 outside the partition), exact nearest-frontier.

    One exact Euclidean distance transform per frontier; argmin over the stack
    resolves ties to the lowest frontier id because equal squared distances
    produce identical doubles.
    """
    unknown = (grid.cells == UNKNOWN) & roi.mask
    if not frontiers or not unknown.any():
        return None
    ys, xs = np.nonzero(unknown)
    fy = np.concatenate([f.cells // grid.width for f in frontiers])
    fx = np.concatenate([f.cells % grid.width for f in frontiers])
    y0 = int(min(ys.min(), fy.min()))
    y1 = int(max(ys.max(), fy.max())) + 1
    x0 = int(min(xs.min(), fx.min()))
    x1 = int(max(xs.max(), fx.max())) + 1
    stack = np.empty((len(frontiers), y1 - y0, x1 - x0))
    feature = np.empty((y1 - y0, x1 - x0), dtype=bool)
    for k, f in enumerate(frontiers):
        feature.fill(True)
        feature[f.cells // grid.width - y0, f.cells % grid.width - x0] = False
        stack[k] = ndimage.distance_transform_edt(feature)
    owner = np.full(grid.cells.shape, -1, dtype=np.int64)
    owner[y0:y1, x0:x1] = np.argmin(stack, axis=0)
    owner[~unknown] = -1
    return owner


def partition_regions(grid: OccupancyGrid, roi: RoiMask, frontiers) -> list[np.ndarray]:
    """Assign every unknown roi cell to its nearest frontier (lowest id on ties).

    Returns per-frontier flat cell arrays, aligned with ``frontiers``; empty
    list when there are no frontiers or no unknown roi cells.
    """
    owner = _partition_owners(grid, roi, frontiers)
    if owner is None:
        return []
    flat_owner = owner.ravel()
    assigned = np.flatnonzero(flat_owner >= 0)
    order = np.argsort(flat_owner[assigned], kind="stable")
    assigned = assigned[order]
    bounds = np.searchsorted(flat_owner[assigned], np.arange(len(frontiers) + 1))
    return [np.sort(assigned[bounds[k]:bounds[k + 1]]) for k in range(len(frontiers))]


def _adjacent_pairs(owner: np.ndarray) -> set[tuple[int, int]]:
    """Pairs of region indices whose cell sets touch (8-connectivity)."""
    pairs: set[tuple[int, int]] = set()
    shifts = [(0, 1), (1, 0), (1, 1), (1, -1)]
    h, w = owner.shape
    for dy, dx in shifts:
        ys = slice(max(0, dy), h + min(0, dy))
        xs = slice(max(0, dx), w + min(0, dx))
        ys2 = slice(max(0, -dy), h + min(0, -dy))
        xs2 = slice(max(0, -dx), w + min(0, -dx))
        a, b = owner[ys, xs], owner[ys2, xs2]
        m = (a >= 0) & (b >= 0) & (a != b)
        if m.any():
            lo = np.minimum(a[m], b[m])
            hi = np.maximum(a[m], b[m])
            pairs.update(zip(lo.tolist(), hi.tolist()))
    return pairs


def regions_adjacent(cells_i: np.ndarray, cells_j: np.ndarray, width: int) -> bool:
    """True when any cell of one region is within the other's 8-neighborhood."""
    if len(cells_i) == 0 or len(cells_j) == 0:
        return False
    ax, ay = cells_i % width, cells_i // width
    bx, by = cells_j % width, cells_j // width
    x0, x1 = int(min(ax.min(), bx.min())), int(max(ax.max(), bx.max()))
    y0, y1 = int(min(ay.min(), by.min())), int(max(ay.max(), by.max()))
    mask = np.zeros((y1 - y0 + 3, x1 - x0 + 3), dtype=bool)
    mask[ay - y0 + 1, ax - x0 + 1] = True
    grown = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
    return bool(grown[by - y0 + 1, bx - x0 + 1].any())


def vertex_weight(stats: WorkloadStats, area: float, sensor_radius: float = 6.0) -> float:
    """Expected travel distance to explore ``area``: historical rate times area.

    Before any area has been explored the rate is unknown; fall back to a
    sensor sweep of width 2r covering area per unit distance.
    """
    if area < 0:
        raise ValueError("area must be non-negative")
    if sensor_radius <= 0:
        raise ValueError("sensor_radius must be positive")
    if stats.explored_area < 1e-9:
        return area / (2.0 * sensor_radius)
    return stats.total_distance / stats.explored_area * area


def edge_weight(vi: Region, vj: Region, rrg_distances: RrgDistances, *, grid_width: int) -> float:
    """Travel cost between two regions' entry points; 0 for direct transit."""
    if regions_adjacent(vi.cells, vj.cells, grid_width):
        return 0.0
    return rrg_distances.dist(vi.viewpoint.rrg_vertex, vj.viewpoint.rrg_vertex)


def build_region_graph(grid: OccupancyGrid, roi: RoiMask, frontiers, viewpoints,
                       rrg: Rrg, stats: WorkloadStats, *,
                       sensor_radius: float = 6.0,
                       dist_table: RrgDistances | None = None) -> RegionGraph:
    """Assemble the weighted graph over regions for the surviving frontiers.

    ``frontiers`` and ``viewpoints`` must be aligned (the sample_viewpoints
    output); frontiers whose partition came up empty are dropped.
    """
    if len(frontiers) != len(viewpoints):
        raise ValueError("frontiers and viewpoints must be aligned")
    g = RegionGraph(resolution=grid.resolution)
    owner = _partition_owners(grid, roi, frontiers)
    if owner is None:
        return g
    cell_lists = partition_regions(grid, roi, frontiers)
    keep = [k for k, cells in enumerate(cell_lists) if len(cells)]
    remap = {k: i for i, k in enumerate(keep)}
    res2 = grid.resolution * grid.resolution
    weights = []
    for k in keep:
        f, vp, cells = frontiers[k], viewpoints[k], cell_lists[k]
        area = len(cells) * res2
        rid = remap[k]
        g.vertices.append(Region(rid, cells, area, f.id, vp))
        g.frontiers.append(f)
        weights.append(vertex_weight(stats, area, sensor_radius))
    g.vertex_weights = np.asarray(weights)
    if dist_table is None:
        dist_table = RrgDistances(rrg)
    adjacency = {(remap[a], remap[b]) for a, b in _adjacent_pairs(owner) if a in remap and b in remap}
    dist_table.ensure([g.vertices[i].viewpoint.rrg_vertex for i in range(g.vertex_count)])
    edges, eweights = [], []
    for i in range(g.vertex_count):
        row = dist_table.row(g.vertices[i].viewpoint.rrg_vertex)
        for j in range(i + 1, g.vertex_count):
            if (i, j) in adjacency:
                w = 0.0
            else:
                w = float(row[g.vertices[j].viewpoint.rrg_vertex])
                if not np.isfinite(w):
                    continue  # unreachable pair: edge omitted
            edges.append((i, j))
            eweights.append(w)
    g.edges = edges
    g.edge_weights = np.asarray(eweights)
    return g
