"""Frontier detection, roadmap (RRG) maintenance and viewpoint sampling."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .grid import FREE, UNKNOWN, OccupancyGrid, RoiMask, _STRUCT4, _STRUCT8, _visible_targets, segment_clear


@dataclass
class Frontier:
    """Cluster of free cells bordering unknown space."""

    id: int
    cells: np.ndarray          # sorted flat indices
    centroid: tuple[float, float]


@dataclass
class Viewpoint:
    frontier_id: int
    position: tuple[float, float]
    fov_score: float
    rrg_vertex: int


@dataclass
class SamplingConfig:
    max_iterations: int = 30
    sampling_radius: float = 6.0
    fov_threshold: float = 0.3
    connect_radius: float = 5.0
    fov_radius: float | None = None  # defaults to sampling_radius

    def effective_fov_radius(self) -> float:
        return self.sampling_radius if self.fov_radius is None else self.fov_radius

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sampling_radius <= 0:
            raise ValueError("sampling_radius must be positive")
        if not 0.0 <= self.fov_threshold <= 1.0:
            raise ValueError("fov_threshold must be in [0, 1]")


class Rrg:
    """Undirected roadmap over traversed free space; vertices are never removed."""

    def __init__(self):
        self.positions: list[tuple[float, float]] = []
        self.adj: list[list[tuple[int, float]]] = []
        self._pos_index: dict[tuple[float, float], int] = {}

    @property
    def vertex_count(self) -> int:
        return len(self.positions)

    def position_array(self) -> np.ndarray:
        if not self.positions:
            return np.zeros((0, 2))
        return np.asarray(self.positions, dtype=np.float64)

    def find_vertex(self, position: tuple[float, float]) -> int | None:
        return self._pos_index.get((float(position[0]), float(position[1])))

    def add_vertex(self, position: tuple[float, float]) -> int:
        key = (float(position[0]), float(position[1]))
        idx = len(self.positions)
        self.positions.append(key)
        self.adj.append([])
        self._pos_index.setdefault(key, idx)
        return idx

    def add_edge(self, i: int, j: int) -> float:
        ax, ay = self.positions[i]
        bx, by = self.positions[j]
        length = float(np.hypot(bx - ax, by - ay))
        self.adj[i].append((j, length))
        self.adj[j].append((i, length))
        return length

    def edges(self):
        """Unique (i, j, length) with i < j."""
        for i, nbrs in enumerate(self.adj):
            for j, w in nbrs:
                if i < j:
                    yield i, j, w

    def to_csr(self) -> csr_matrix:
        # csr_matrix sums duplicates, so collapse parallel edges to the cheapest
        best: dict[tuple[int, int], float] = {}
        for i, j, w in self.edges():
            key = (i, j)
            if key not in best or w < best[key]:
                best[key] = w
        rows, cols, data = [], [], []
        for (i, j), w in best.items():
            rows += [i, j]
            cols += [j, i]
            data += [w, w]
        n = self.vertex_count
        return csr_matrix((data, (rows, cols)), shape=(n, n))

    def dump(self) -> str:
        lines = [f"v {x:.6f} {y:.6f}" for x, y in self.positions]
        lines += [f"e {i} {j} {w:.6f}" for i, j, w in self.edges()]
        return "\n".join(lines) + ("\n" if lines else "")


def detect_frontiers(grid: OccupancyGrid, roi: RoiMask, cluster_diameter: float = 6.0) -> list[Frontier]:
    """Free cells (within roi) that touch unknown space, clustered.

    Connected components (8-way) are split until every cluster's diameter is
    at most ``cluster_diameter`` meters; clusters are ordered by their smallest
    flat cell index.
    """
    if not roi.matches(grid):
        raise ValueError("roi dimensions do not match grid")
    unknown = grid.cells == UNKNOWN
    if not unknown.any():
        return []
    near_unknown = ndimage.binary_dilation(unknown, structure=_STRUCT8)
    frontier_mask = (grid.cells == FREE) & near_unknown & roi.mask
    if not frontier_mask.any():
        return []
    labels, n = ndimage.label(frontier_mask, structure=_STRUCT8)
    final: list[np.ndarray] = []
    comp_cells = ndimage.value_indices(labels, ignore_value=0)
    for comp in range(1, n + 1):
        ys, xs = comp_cells[comp]
        flat = np.sort(ys.astype(np.int64) * grid.width + xs.astype(np.int64))
        final.extend(_split_by_diameter(flat, grid, cluster_diameter))
    final.sort(key=lambda arr: int(arr[0]))
    out = []
    for fid, flat in enumerate(final):
        xs = (flat % grid.width).astype(np.float64)
        ys = (flat // grid.width).astype(np.float64)
        cx = float((xs.mean() + 0.5) * grid.resolution)
        cy = float((ys.mean() + 0.5) * grid.resolution)
        out.append(Frontier(fid, flat, (cx, cy)))
    return out


def _cluster_diameter_pair(flat: np.ndarray, grid: OccupancyGrid):
    """Exact diameter (meters) and the farthest cell pair, lowest indices on ties."""
    xs = (flat % grid.width).astype(np.float32)
    ys = (flat // grid.width).astype(np.float32)
    dx = xs[:, None] - xs[None, :]
    dy = ys[:, None] - ys[None, :]
    d2 = dx * dx + dy * dy
    k = int(np.argmax(d2))
    i, j = divmod(k, len(flat))
    if i > j:
        i, j = j, i
    diam = float(np.sqrt(float(d2[i, j]))) * grid.resolution
    return diam, i, j


def _split_by_diameter(flat: np.ndarray, grid: OccupancyGrid, limit: float) -> list[np.ndarray]:
    """Greedy farthest-point bisection until every piece fits the diameter."""
    if len(flat) == 1:
        return [flat]
    diam, i, j = _cluster_diameter_pair(flat, grid)
    if diam <= limit:
        return [flat]
    xs = (flat % grid.width).astype(np.float64)
    ys = (flat // grid.width).astype(np.float64)
    da = (xs - xs[i]) ** 2 + (ys - ys[i]) ** 2
    db = (xs - xs[j]) ** 2 + (ys - ys[j]) ** 2
    take_a = da <= db  # ties go to the seed with the smaller flat index
    left, right = flat[take_a], flat[~take_a]
    return _split_by_diameter(left, grid, limit) + _split_by_diameter(right, grid, limit)


def fov(point: tuple[float, float], frontier: Frontier, grid: OccupancyGrid, radius: float) -> float:
    """Fraction of the frontier's cells visible from ``point`` within ``radius``."""
    scores = fov_batch(np.asarray([point], dtype=np.float64), frontier, grid, radius)
    return float(scores[0])


def fov_batch(points: np.ndarray, frontier: Frontier, grid: OccupancyGrid, radius: float) -> np.ndarray:
    """Vectorized fov over several candidate points."""
    res = grid.resolution
    flat = frontier.cells
    tx = (flat % grid.width).astype(np.int64)
    ty = (flat // grid.width).astype(np.int64)
    cxm = (tx + 0.5) * res
    cym = (ty + 0.5) * res
    total = len(flat)
    out = np.zeros(len(points))
    for k, (px, py) in enumerate(points):
        ccx, ccy = int(px / res), int(py / res)
        if not grid.in_bounds(ccx, ccy) or grid.cells[ccy, ccx] != FREE:
            raise ValueError(f"fov point ({px}, {py}) is not on a free cell")
        within = (cxm - px) ** 2 + (cym - py) ** 2 <= radius * radius
        if not within.any():
            continue
        targets = np.stack([tx[within], ty[within]], axis=1)
        vis = _visible_targets(grid.cells, (ccx, ccy), targets)
        out[k] = vis.sum() / total
    return out


def rrg_connect(rrg: Rrg, p: tuple[float, float], grid: OccupancyGrid, connect_radius: float) -> int | None:
    """Add ``p`` to the roadmap, wiring collision-free edges to nearby vertices.

    Returns the vertex index, or None when the roadmap is non-empty and no
    collision-free edge within ``connect_radius`` exists. Re-adding an exact
    existing position returns its index.
    """
    px, py = float(p[0]), float(p[1])
    pc = grid.cell_of(px, py)
    if not grid.in_bounds(*pc) or grid.cells[pc[1], pc[0]] != FREE:
        raise ValueError(f"rrg point ({px}, {py}) is not on a free cell")
    existing = rrg.find_vertex((px, py))
    if existing is not None:
        return existing
    if rrg.vertex_count == 0:
        return rrg.add_vertex((px, py))
    pos = rrg.position_array()
    d2 = (pos[:, 0] - px) ** 2 + (pos[:, 1] - py) ** 2
    nearby = np.flatnonzero(d2 <= connect_radius * connect_radius)
    good = []
    for j in nearby:
        qc = grid.cell_of(*rrg.positions[int(j)])
        if segment_clear(grid, pc, qc):
            good.append(int(j))
    if not good:
        return None
    idx = rrg.add_vertex((px, py))
    for j in good:
        rrg.add_edge(idx, j)
    return idx


def sample_viewpoints(frontiers, grid: OccupancyGrid, rrg: Rrg, cfg: SamplingConfig,
                      rng_seed: int):
    """Pick an entry viewpoint for each frontier by rejection sampling.

    Uniform samples in a disk around each frontier centroid are filtered by
    accessibility and field of view; surviving candidates are tried in
    descending fov order and the first one that joins the roadmap becomes the
    frontier's viewpoint. Frontiers with no usable candidate are dropped.
    Bit-deterministic for a fixed seed and inputs.
    """
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    res = grid.resolution
    access = None
    if rrg.vertex_count:
        labels, _ = ndimage.label(grid.cells == FREE, structure=_STRUCT4)
        rx, ry = grid.cell_of(*rrg.positions[0])
        ref = labels[ry, rx]
        access = labels == ref
    fov_radius = cfg.effective_fov_radius()
    viewpoints: list[Viewpoint] = []
    surviving: list[Frontier] = []
    for f in frontiers:
        u = rng.random(cfg.max_iterations)
        v = rng.random(cfg.max_iterations)
        r = cfg.sampling_radius * np.sqrt(u)
        th = 2.0 * np.pi * v
        sx = f.centroid[0] + r * np.cos(th)
        sy = f.centroid[1] + r * np.sin(th)
        cx = np.floor(sx / res).astype(np.int64)
        cy = np.floor(sy / res).astype(np.int64)
        ok = (cx >= 0) & (cx < grid.width) & (cy >= 0) & (cy < grid.height)
        idxs = np.flatnonzero(ok)
        idxs = idxs[grid.cells[cy[idxs], cx[idxs]] == FREE]
        if access is not None and idxs.size:
            idxs = idxs[access[cy[idxs], cx[idxs]]]
        if idxs.size == 0:
            continue
        # snap candidates to cell centers so navigation goals are exact
        pts = np.stack([(cx[idxs] + 0.5) * res, (cy[idxs] + 0.5) * res], axis=1)
        scores = fov_batch(pts, f, grid, fov_radius)
        order = np.argsort(-scores, kind="stable")
        chosen = None
        for k in order:
            if scores[k] <= cfg.fov_threshold:
                break  # sorted descending: the rest fail too
            vert = rrg_connect(rrg, (float(pts[k, 0]), float(pts[k, 1])), grid, cfg.connect_radius)
            if vert is not None:
                chosen = Viewpoint(f.id, (float(pts[k, 0]), float(pts[k, 1])), float(scores[k]), vert)
                break
        if chosen is not None:
            viewpoints.append(chosen)
            surviving.append(f)
    return viewpoints, rrg, surviving


def dijkstra_tree(rrg: Rrg, source: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-source distances and parent pointers over the roadmap."""
    n = rrg.vertex_count
    if not 0 <= source < n:
        raise ValueError(f"unknown vertex {source}")
    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in rrg.adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, parent


def johnson_all_pairs(rrg: Rrg) -> np.ndarray:
    """All-pairs shortest path distances; unreachable pairs are +inf.

    Reweights via Bellman-Ford from a virtual zero-cost source, then runs
    Dijkstra from every vertex on the reweighted graph.
    """
    n = rrg.vertex_count
    dist = np.full((n, n), np.inf)
    if n == 0:
        return dist
    edge_list = [(i, j, w) for i, nbrs in enumerate(rrg.adj) for j, w in nbrs]
    # virtual source: h starts at 0 everywhere, exactly its Bellman-Ford result
    h = np.zeros(n)
    for _ in range(n):
        changed = False
        for u, v, w in edge_list:
            if h[u] + w < h[v]:
                h[v] = h[u] + w
                changed = True
        if not changed:
            break
    else:
        for u, v, w in edge_list:
            if h[u] + w < h[v]:
                raise ValueError("negative cycle in roadmap weights")
    for s in range(n):
        d = np.full(n, np.inf)
        d[s] = 0.0
        heap = [(0.0, s)]
        done = np.zeros(n, dtype=bool)
        while heap:
            du, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for v, w in rrg.adj[u]:
                nd = du + (w + h[u] - h[v])
                if nd < d[v]:
                    d[v] = nd
                    heapq.heappush(heap, (nd, v))
        reach = np.isfinite(d)
        dist[s, reach] = d[reach] - h[s] + h[reach]
    return dist


def shortest_path(rrg: Rrg, u: int, v: int) -> list[tuple[float, float]]:
    """Vertex positions along a shortest roadmap path; [] when unreachable."""
    n = rrg.vertex_count
    if not (0 <= u < n and 0 <= v < n):
        raise ValueError(f"unknown vertex index {u if not 0 <= u < n else v}")
    if u == v:
        return [rrg.positions[u]]
    dist, parent = dijkstra_tree(rrg, u)
    if not np.isfinite(dist[v]):
        return []
    seq = [v]
    while seq[-1] != u:
        seq.append(int(parent[seq[-1]]))
    return [rrg.positions[i] for i in reversed(seq)]


class RrgDistances:
    """Lazy shortest-path distance table over a roadmap snapshot.

    Rows are computed on demand (sparse Dijkstra) so planners only pay for
    the sources they use; a fully materialized table equals johnson_all_pairs.
    """

    def __init__(self, rrg: Rrg):
        self._n = rrg.vertex_count
        self._csr = rrg.to_csr() if self._n else None
        self._rows: dict[int, np.ndarray] = {}

    def ensure(self, sources) -> None:
        missing = sorted({int(s) for s in sources} - self._rows.keys())
        if not missing:
            return
        mat = _csgraph_dijkstra(self._csr, directed=False, indices=missing)
        mat = np.atleast_2d(mat)
        for k, s in enumerate(missing):
            self._rows[s] = mat[k]

    def row(self, source: int) -> np.ndarray:
        self.ensure([source])
        return self._rows[int(source)]

    def dist(self, u: int, v: int) -> float:
        if not (0 <= u < self._n and 0 <= v < self._n):
            raise ValueError("unknown vertex index")
        return float(self.row(u)[v])
