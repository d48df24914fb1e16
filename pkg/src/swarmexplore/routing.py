"""Open vehicle-routing over the region graph: cost matrix, solvers, guide paths."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .perception import Rrg, RrgDistances, shortest_path
from .regions import RegionGraph

# deterministic stand-in for a wall-clock deadline: move evaluations per ms
_EVALS_PER_MS = 2000


class UnreachableRegionError(ValueError):
    def __init__(self, region_ids):
        self.region_ids = sorted(region_ids)
        super().__init__(f"regions unreachable by every robot: {self.region_ids}")


@dataclass
class CostMatrix:
    """(robots + regions)^2 travel costs; robot rows/cols come first."""

    values: np.ndarray
    n_robots: int

    @property
    def n_regions(self) -> int:
        return self.values.shape[0] - self.n_robots

    def region_col(self, k: int) -> int:
        return self.n_robots + k

    def to_csv(self) -> str:
        labels = [f"robot{r}" for r in range(self.n_robots)]
        labels += [f"region{k}" for k in range(self.n_regions)]
        lines = ["from/to," + ",".join(labels)]
        for i, row in enumerate(self.values):
            cells = ",".join("inf" if not np.isfinite(v) else f"{v:.6f}" for v in row)
            lines.append(f"{labels[i]},{cells}")
        return "\n".join(lines) + "\n"


@dataclass
class RoutePlan:
    sequences: list[list[int]]                       # region vertex ids per robot
    guide_paths: list[list[tuple[float, float]]] = field(default_factory=list)
    objective: float = 0.0


def fold_weights(g: RegionGraph) -> np.ndarray:
    """Push half of each vertex weight onto its incident edges (region block).

    Taking the graph (not a matrix) as input guards against double-folding.
    """
    base = g.edge_weight_matrix()
    n = g.vertex_count
    if n == 0:
        return base
    w = g.vertex_weights
    folded = base + 0.5 * (w[:, None] + w[None, :])
    np.fill_diagonal(folded, 0.0)
    return folded


def build_matrix(g: RegionGraph, robots, dist_table: RrgDistances) -> CostMatrix:
    """Cost matrix for the open VRP.

    ``robots`` is a list of roadmap vertex indices (one per robot). Entering a
    region costs the travel distance plus half its interior workload, leaving
    costs nothing, so a route pays each visited region's workload exactly once
    except the last, which is half-paid (no exit).
    """
    nr = len(robots)
    n = g.vertex_count
    size = nr + n
    values = np.zeros((size, size))
    folded = fold_weights(g)
    values[nr:, nr:] = folded
    dist_table.ensure(robots)
    for r, vert in enumerate(robots):
        row = dist_table.row(vert)
        for k in range(n):
            d = float(row[g.vertices[k].viewpoint.rrg_vertex])
            values[r, nr + k] = d + 0.5 * g.vertex_weights[k]
    np.fill_diagonal(values, 0.0)
    return CostMatrix(values, nr)


def route_cost(matrix: CostMatrix, robot: int, seq) -> float:
    """Open-route cost: robot start through the sequence, no return term."""
    if not seq:
        return 0.0
    total = matrix.values[robot, matrix.region_col(seq[0])]
    for a, b in zip(seq, seq[1:]):
        total += matrix.values[matrix.region_col(a), matrix.region_col(b)]
    return float(total)


def _objective(costs, objective):
    if objective == "total":
        return (sum(costs), max(costs) if costs else 0.0)
    return (max(costs) if costs else 0.0, sum(costs))


def _search_key(costs, objective):
    """Move-acceptance order. For minmax, comparing the sorted cost vector
    lets rebalancing moves below the current maximum count as progress,
    which is what lets local search escape makespan plateaus."""
    if objective == "total":
        return (sum(costs),)
    return tuple(sorted(costs, reverse=True))


def _held_karp(matrix: CostMatrix, robot: int, regions: list[int]):
    """dp[mask][last] = best cost of robot -> visit mask, ending at regions[last]."""
    D = matrix.values
    nr = matrix.n_robots
    m = len(regions)
    size = 1 << m
    dp = [[np.inf] * m for _ in range(size)]
    parent = [[-1] * m for _ in range(size)]
    for k in range(m):
        dp[1 << k][k] = D[robot, nr + regions[k]]
    for mask in range(1, size):
        row = dp[mask]
        for k in range(m):
            bit = 1 << k
            if not mask & bit or mask == bit:
                continue
            prev = mask ^ bit
            prow = dp[prev]
            best, arg = np.inf, -1
            col = nr + regions[k]
            for j in range(m):
                if prev & (1 << j):
                    c = prow[j] + D[nr + regions[j], col]
                    if c < best:
                        best, arg = c, j
            row[k] = best
            parent[mask][k] = arg
    return dp, parent


def _held_karp_route(matrix, robot, regions):
    """Optimal open route (cost, order) visiting all of ``regions``."""
    if not regions:
        return 0.0, []
    dp, parent = _held_karp(matrix, robot, regions)
    full = (1 << len(regions)) - 1
    best, end = np.inf, -1
    for k in range(len(regions)):
        if dp[full][k] < best:
            best, end = dp[full][k], k
    if not np.isfinite(best):
        return np.inf, []
    order = []
    mask, k = full, end
    while k != -1:
        order.append(regions[k])
        nk = parent[mask][k]
        mask ^= 1 << k
        k = nk
    order.reverse()
    return float(best), order


def _exact_vrp(matrix: CostMatrix, n_robots: int, objective: str) -> RoutePlan:
    """Enumerate region-to-robot assignments; optimal orders via subset DP."""
    n = matrix.n_regions
    if n == 0:
        return RoutePlan([[] for _ in range(n_robots)], [], 0.0)
    tables = [_held_karp(matrix, r, list(range(n))) for r in range(n_robots)]
    full_cost = []
    for r in range(n_robots):
        dp = tables[r][0]
        costs = np.array([min(dp[mask]) if mask else 0.0 for mask in range(1 << n)])
        costs[0] = 0.0
        full_cost.append(costs)
    best_key, best_assign = None, None
    for assign in itertools.product(range(n_robots), repeat=n):
        masks = [0] * n_robots
        for k, r in enumerate(assign):
            masks[r] |= 1 << k
        costs = [full_cost[r][masks[r]] for r in range(n_robots)]
        if not all(np.isfinite(c) for c in costs):
            continue
        key = _objective(costs, objective) + (assign,)
        if best_key is None or key < best_key:
            best_key, best_assign = key, assign
    if best_assign is None:
        raise UnreachableRegionError(range(n))
    sequences = []
    for r in range(n_robots):
        regions = [k for k in range(n) if best_assign[k] == r]
        _, order = _reconstruct_order(matrix, tables[r], regions)
        sequences.append(order)
    costs = [route_cost(matrix, r, s) for r, s in enumerate(sequences)]
    return RoutePlan(sequences, [], _objective(costs, objective)[0])


def _reconstruct_order(matrix, table, regions):
    if not regions:
        return 0.0, []
    dp, parent = table
    mask = 0
    for k in regions:
        mask |= 1 << k
    best, end = np.inf, -1
    for k in regions:
        if dp[mask][k] < best:
            best, end = dp[mask][k], k
    order = []
    m, k = mask, end
    while k != -1:
        order.append(k)
        nk = parent[m][k]
        m ^= 1 << k
        k = nk
    order.reverse()
    return float(best), order


class _Budget:
    def __init__(self, budget_ms):
        self.left = max(1, int(budget_ms * _EVALS_PER_MS))

    def spend(self, amount=1) -> bool:
        self.left -= amount
        return self.left > 0


def _greedy_seed(matrix: CostMatrix, n_robots: int, objective: str,
                 forced: tuple[int, int] | None = None) -> list[list[int]]:
    n = matrix.n_regions
    routes: list[list[int]] = [[] for _ in range(n_robots)]
    unassigned = set(range(n))
    if forced is not None:
        k, r = forced
        routes[r].append(k)
        unassigned.discard(k)
    # seed: each robot grabs its nearest reachable region
    for r in range(n_robots):
        if not unassigned or routes[r]:
            continue
        cand = [(matrix.values[r, matrix.region_col(k)], k) for k in sorted(unassigned)]
        d, k = min(cand)
        if np.isfinite(d):
            routes[r].append(k)
            unassigned.discard(k)
    costs = [route_cost(matrix, r, routes[r]) for r in range(n_robots)]
    while unassigned:
        best = None
        for k in sorted(unassigned):
            for r in range(n_robots):
                for pos in range(len(routes[r]) + 1):
                    trial = routes[r][:pos] + [k] + routes[r][pos:]
                    c = route_cost(matrix, r, trial)
                    if not np.isfinite(c):
                        continue
                    new_costs = costs.copy()
                    new_costs[r] = c
                    key = _objective(new_costs, objective) + (k, r, pos)
                    if best is None or key < best[0]:
                        best = (key, k, r, pos, c)
        if best is None:
            raise UnreachableRegionError(
                k for k in unassigned
                if not any(np.isfinite(matrix.values[r, matrix.region_col(k)]) for r in range(n_robots))
            )
        _, k, r, pos, c = best
        routes[r].insert(pos, k)
        costs[r] = c
        unassigned.discard(k)
    return routes


def _round_robin_seed(matrix: CostMatrix, n_robots: int) -> list[list[int]]:
    """Robots take turns appending their nearest unassigned region."""
    n = matrix.n_regions
    routes: list[list[int]] = [[] for _ in range(n_robots)]
    unassigned = set(range(n))
    while unassigned:
        progress = False
        for r in range(n_robots):
            if not unassigned:
                break
            tail = matrix.region_col(routes[r][-1]) if routes[r] else r
            cand = [(matrix.values[tail, matrix.region_col(k)], k) for k in sorted(unassigned)]
            d, k = min(cand)
            if np.isfinite(d):
                routes[r].append(k)
                unassigned.discard(k)
                progress = True
        if not progress:
            # leftovers reachable by someone but not from current tails
            for k in sorted(unassigned):
                placed = False
                for r in range(n_robots):
                    if np.isfinite(matrix.values[r, matrix.region_col(k)]):
                        routes[r].append(k)
                        placed = True
                        break
                if not placed:
                    raise UnreachableRegionError([k])
            unassigned.clear()
    return routes


def _improve(matrix: CostMatrix, routes: list[list[int]], objective: str, budget: _Budget):
    """Best-improvement local search: 2-opt, relocate, swap; deterministic."""
    n_robots = len(routes)
    costs = [route_cost(matrix, r, routes[r]) for r in range(n_robots)]
    while True:
        cur = _search_key(costs, objective)
        best = None
        # intra-route 2-opt (segment reversal on the open path)
        for r in range(n_robots):
            seq = routes[r]
            for i in range(len(seq) - 1):
                for j in range(i + 1, len(seq)):
                    if not budget.spend():
                        return routes, costs
                    trial = seq[:i] + seq[i:j + 1][::-1] + seq[j + 1:]
                    c = route_cost(matrix, r, trial)
                    new_costs = costs.copy()
                    new_costs[r] = c
                    key = _search_key(new_costs, objective)
                    if key < cur and (best is None or key < best[0]):
                        best = (key, "2opt", r, trial, c)
        # relocate (within a route or across routes)
        for ra in range(n_robots):
            for i in range(len(routes[ra])):
                k = routes[ra][i]
                removed = routes[ra][:i] + routes[ra][i + 1:]
                c_removed = route_cost(matrix, ra, removed)
                for rb in range(n_robots):
                    for pos in range(len(routes[rb]) + (0 if rb == ra else 1)):
                        if rb == ra and pos == i:
                            continue
                        if not budget.spend():
                            return routes, costs
                        if rb == ra:
                            trial = removed[:pos] + [k] + removed[pos:]
                            new_costs = costs.copy()
                            new_costs[ra] = route_cost(matrix, ra, trial)
                            if not np.isfinite(new_costs[ra]):
                                continue
                        else:
                            trial = routes[rb][:pos] + [k] + routes[rb][pos:]
                            c = route_cost(matrix, rb, trial)
                            if not np.isfinite(c):
                                continue
                            new_costs = costs.copy()
                            new_costs[ra] = c_removed
                            new_costs[rb] = c
                        key = _search_key(new_costs, objective)
                        if key < cur and (best is None or key < best[0]):
                            best = (key, "relocate", ra, i, rb, pos)
        # inter-route tail exchange (2-opt*)
        for ra in range(n_robots):
            for rb in range(ra + 1, n_robots):
                for i in range(len(routes[ra]) + 1):
                    for j in range(len(routes[rb]) + 1):
                        if not budget.spend():
                            return routes, costs
                        ta = routes[ra][:i] + routes[rb][j:]
                        tb = routes[rb][:j] + routes[ra][i:]
                        ca = route_cost(matrix, ra, ta)
                        cb = route_cost(matrix, rb, tb)
                        if not (np.isfinite(ca) and np.isfinite(cb)):
                            continue
                        new_costs = costs.copy()
                        new_costs[ra] = ca
                        new_costs[rb] = cb
                        key = _search_key(new_costs, objective)
                        if key < cur and (best is None or key < best[0]):
                            best = (key, "tail", ra, i, rb, j)
        # inter-route swap
        for ra in range(n_robots):
            for rb in range(ra + 1, n_robots):
                for i in range(len(routes[ra])):
                    for j in range(len(routes[rb])):
                        if not budget.spend():
                            return routes, costs
                        ta = routes[ra].copy()
                        tb = routes[rb].copy()
                        ta[i], tb[j] = tb[j], ta[i]
                        ca = route_cost(matrix, ra, ta)
                        cb = route_cost(matrix, rb, tb)
                        if not (np.isfinite(ca) and np.isfinite(cb)):
                            continue
                        new_costs = costs.copy()
                        new_costs[ra] = ca
                        new_costs[rb] = cb
                        key = _search_key(new_costs, objective)
                        if key < cur and (best is None or key < best[0]):
                            best = (key, "swap", ra, i, rb, j)
        if best is None:
            # moves converged: re-order each short route exactly (subset DP);
            # assignment moves above fix who goes where, this fixes the order
            polished = False
            for r in range(n_robots):
                if not 2 <= len(routes[r]) <= 12:
                    continue
                if not budget.spend(1 << len(routes[r])):
                    return routes, costs
                c, order = _held_karp_route(matrix, r, sorted(routes[r]))
                if order and c < costs[r] - 1e-12:
                    routes[r] = order
                    costs[r] = c
                    polished = True
            if polished:
                continue
            return routes, costs
        move = best[1]
        if move == "2opt":
            _, _, r, trial, c = best
            routes[r] = trial
            costs[r] = c
        elif move == "relocate":
            _, _, ra, i, rb, pos = best
            k = routes[ra].pop(i)
            routes[rb].insert(pos, k)
            costs[ra] = route_cost(matrix, ra, routes[ra])
            costs[rb] = route_cost(matrix, rb, routes[rb])
        elif move == "tail":
            _, _, ra, i, rb, j = best
            ta = routes[ra][:i] + routes[rb][j:]
            tb = routes[rb][:j] + routes[ra][i:]
            routes[ra], routes[rb] = ta, tb
            costs[ra] = route_cost(matrix, ra, ta)
            costs[rb] = route_cost(matrix, rb, tb)
        else:
            _, _, ra, i, rb, j = best
            routes[ra][i], routes[rb][j] = routes[rb][j], routes[ra][i]
            costs[ra] = route_cost(matrix, ra, routes[ra])
            costs[rb] = route_cost(matrix, rb, routes[rb])


def _check_reachability(matrix: CostMatrix, n_robots: int):
    bad = []
    for k in range(matrix.n_regions):
        if not any(np.isfinite(matrix.values[r, matrix.region_col(k)]) for r in range(n_robots)):
            bad.append(k)
    if bad:
        raise UnreachableRegionError(bad)


def solve_vrp(matrix: CostMatrix, n_robots: int, mode: str = "auto",
              objective: str = "minmax", budget_ms: float = 100.0) -> RoutePlan:
    """Partition all regions into open per-robot routes.

    Exact mode enumerates assignments with optimal per-subset orders (meant
    for <= 9 regions); heuristic mode runs greedy insertion plus local search
    under a deterministic work budget. Default objective minimizes the
    maximum route cost, with total cost then lexicographic order on ties.
    """
    if n_robots < 1:
        raise ValueError("need at least one robot")
    if objective not in ("minmax", "total"):
        raise ValueError(f"unknown objective {objective!r}")
    _check_reachability(matrix, n_robots)
    if mode == "auto":
        mode = "exact" if matrix.n_regions <= 9 else "heuristic"
    if mode == "exact":
        return _exact_vrp(matrix, n_robots, objective)
    if mode != "heuristic":
        raise ValueError(f"unknown mode {mode!r}")
    budget = _Budget(budget_ms)
    n = matrix.n_regions
    seeds = [_greedy_seed(matrix, n_robots, objective),
             _round_robin_seed(matrix, n_robots)]
    if n * n_robots <= 32 and n_robots > 1:
        # small instances: multistart over every forced first assignment
        for k in range(n):
            for r in range(n_robots):
                if np.isfinite(matrix.values[r, matrix.region_col(k)]):
                    seeds.append(_greedy_seed(matrix, n_robots, objective, forced=(k, r)))
    best = None
    tried = set()
    for seed_routes in seeds:
        sig = tuple(tuple(s) for s in seed_routes)
        if sig in tried:
            continue
        tried.add(sig)
        if best is not None and budget.left <= 0:
            break
        routes, costs = _improve(matrix, seed_routes, objective, budget)
        key = _objective(costs, objective) + (routes,)
        if best is None or key < best[0]:
            best = (key, routes, costs)
    # iterated restarts: eject a region from the most loaded route into the
    # least loaded one, then descend again (deterministic kicks)
    for round_ in range(6 * n_robots):
        if budget.left <= 0:
            break
        routes = [list(s) for s in best[1]]
        costs = list(best[2])
        src = max(range(n_robots), key=lambda r: (costs[r], -r))
        if not routes[src]:
            break
        dst = min((r for r in range(n_robots) if r != src),
                  key=lambda r: (costs[r], r), default=None)
        if dst is None:
            break
        k = routes[src].pop(round_ % len(routes[src]))
        routes[dst].append(k)
        routes, costs = _improve(matrix, routes, objective, budget)
        key = _objective(costs, objective) + (routes,)
        if key < best[0]:
            best = (key, routes, costs)
    routes, costs = best[1], best[2]
    return RoutePlan(routes, [], _objective(costs, objective)[0])


def solve_tsp(matrix: CostMatrix, exact_limit: int = 15, budget_ms: float = 100.0) -> list[int]:
    """Open-path visiting order for a single robot through all regions."""
    if matrix.n_robots != 1:
        raise ValueError("solve_tsp expects a single-robot matrix")
    n = matrix.n_regions
    if n == 0:
        return []
    _check_reachability(matrix, 1)
    if n <= exact_limit:
        _, order = _held_karp_route(matrix, 0, list(range(n)))
        if order:
            return order
    plan = solve_vrp(matrix, 1, mode="heuristic", budget_ms=budget_ms)
    return plan.sequences[0]


def guide_path(sequence, g: RegionGraph, rrg: Rrg, robot_vertex: int) -> list[tuple[float, float]]:
    """Roadmap path from the robot's vertex to the first region's viewpoint."""
    if not sequence:
        raise ValueError("guide path needs a non-empty sequence")
    target = g.vertices[sequence[0]].viewpoint.rrg_vertex
    path = shortest_path(rrg, robot_vertex, target)
    if not path:
        raise ValueError(f"robot vertex {robot_vertex} cannot reach viewpoint vertex {target}")
    return path
