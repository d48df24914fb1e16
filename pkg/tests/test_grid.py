import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmexplore.grid import (
    FREE,
    OBSTACLE,
    UNKNOWN,
    GroundTruth,
    MapFormatError,
    OccupancyGrid,
    Pose,
    RoiMask,
    dump_map,
    line_cells,
    load_map,
    load_pgm,
    merge,
    reachable_free,
    reveal,
    segment_clear,
)


def grid_from_rows(rows, resolution=1.0):
    lut = {".": FREE, "#": OBSTACLE, "?": UNKNOWN}
    cells = np.array([[lut[ch] for ch in row] for row in rows], dtype=np.uint8)
    return OccupancyGrid(resolution, cells)


def flood_fill_oracle(cells, start):
    """Independent 4-connected flood fill over free cells."""
    h, w = cells.shape
    seen = set()
    stack = [start]
    while stack:
        cx, cy = stack.pop()
        if (cx, cy) in seen or not (0 <= cx < w and 0 <= cy < h):
            continue
        if cells[cy, cx] != FREE:
            continue
        seen.add((cx, cy))
        stack.extend([(cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)])
    return seen


def los_oracle(truth_cells, origin, target):
    """Scalar re-derivation of the stepping rule: obstacle strictly between blocks."""
    ox, oy = origin
    tx, ty = target
    n = max(abs(tx - ox), abs(ty - oy))
    for k in range(1, n):
        x = math.floor(ox + (tx - ox) * k / n + 0.5)
        y = math.floor(oy + (ty - oy) * k / n + 0.5)
        if truth_cells[y, x] == OBSTACLE:
            return False
    return True


def reveal_oracle(known, truth, pose, radius):
    """Per-cell reveal decision, independent of the vectorized implementation."""
    res = known.resolution
    origin = known.cell_of(pose.x, pose.y)
    out = set()
    for cy in range(known.height):
        for cx in range(known.width):
            if known.cells[cy, cx] != UNKNOWN:
                continue
            mx, my = (cx + 0.5) * res, (cy + 0.5) * res
            if (mx - pose.x) ** 2 + (my - pose.y) ** 2 > radius * radius:
                continue
            if los_oracle(truth.grid.cells, origin, (cx, cy)):
                out.add(known.flat(cx, cy))
    return out


class TestLoadMap:
    def test_all_free(self):
        gt = load_map("...\n...\n...\n", 1.0)
        assert gt.grid.counts() == (9, 0, 0)
        assert gt.unreachable == frozenset()

    def test_obstacle_row(self):
        gt = load_map("#.#\n", 1.0)
        assert gt.grid.cells[0, 0] == OBSTACLE
        assert gt.grid.cells[0, 1] == FREE
        assert gt.grid.cells[0, 2] == OBSTACLE

    def test_enclosed_cell_unreachable(self):
        text = ".....\n.###.\n.#.#.\n.###.\n.....\n"
        gt = load_map(text, 1.0, starts=[(0, 0)])
        reachable = flood_fill_oracle(gt.grid.cells, (0, 0))
        expected = {
            gt.grid.flat(cx, cy)
            for cy in range(5)
            for cx in range(5)
            if gt.grid.cells[cy, cx] == FREE and (cx, cy) not in reachable
        }
        assert gt.unreachable == expected
        assert gt.grid.flat(2, 2) in gt.unreachable

    def test_ragged_rows_rejected(self):
        with pytest.raises(MapFormatError):
            load_map("...\n..\n", 1.0)

    def test_empty_rejected(self):
        with pytest.raises(MapFormatError):
            load_map("", 1.0)

    def test_bad_char_rejected(self):
        with pytest.raises(MapFormatError):
            load_map("..x\n", 1.0)

    def test_dump_roundtrip(self):
        text = "#.#\n...\n##.\n"
        gt = load_map(text, 0.5)
        assert dump_map(gt.grid) == text


class TestPgm:
    def test_p5_import(self):
        header = b"P5\n# comment\n3 2\n255\n"
        pix = bytes([255, 0, 230, 10, 255, 255])
        gt = load_pgm(header + pix, 1.0)
        assert gt.grid.cells[0, 0] == FREE
        assert gt.grid.cells[0, 1] == OBSTACLE
        assert gt.grid.cells[0, 2] == FREE
        assert gt.grid.cells[1, 0] == OBSTACLE

    def test_p2_import(self):
        data = b"P2\n2 2\n255\n255 0\n0 255\n"
        gt = load_pgm(data, 1.0)
        assert gt.grid.counts() == (2, 2, 0)

    def test_midgray_rejected(self):
        data = b"P2\n2 1\n255\n255 128\n"
        with pytest.raises(MapFormatError):
            load_pgm(data, 1.0)


class TestReveal:
    def test_open_space_full_disk(self):
        rows = ["." * 20] * 20
        truth = GroundTruth(grid_from_rows(rows, 0.1))
        known = OccupancyGrid.blank(20, 20, 0.1)
        pose = Pose(1.05, 1.05)
        new = reveal(known, truth, pose, 0.6)
        expected = reveal_oracle(OccupancyGrid.blank(20, 20, 0.1), truth, pose, 0.6)
        assert set(int(i) for i in new) == expected
        # no occlusion: every cell whose center is in the disk is revealed
        for idx in expected:
            cx, cy = known.unflat(idx)
            mx, my = known.center(cx, cy)
            assert (mx - pose.x) ** 2 + (my - pose.y) ** 2 <= 0.36 + 1e-12

    def test_single_blocker_shadows_far_cell(self):
        rows = ["..........", ".....#....", ".........."]
        truth = GroundTruth(grid_from_rows(rows, 1.0))
        known = OccupancyGrid.blank(10, 3, 1.0)
        new = set(int(i) for i in reveal(known, truth, Pose(0.5, 1.5), 20.0))
        assert known.flat(5, 1) in new      # the obstacle itself is revealed
        assert known.flat(7, 1) not in new  # strictly behind it on the same ray
        assert known.cells[1, 7] == UNKNOWN

    def test_cross_pattern_matches_oracle(self):
        rows = [
            "...........",
            ".....#.....",
            "....###....",
            ".....#.....",
            "...........",
            "...........",
        ]
        truth = GroundTruth(grid_from_rows(rows, 1.0))
        known = OccupancyGrid.blank(11, 6, 1.0)
        pose = Pose(1.5, 4.5)
        expected = reveal_oracle(known.copy(), truth, pose, 8.0)
        got = set(int(i) for i in reveal(known, truth, pose, 8.0))
        assert got == expected

    def test_idempotent_for_fixed_pose(self):
        rows = ["....", "..#.", "...."]
        truth = GroundTruth(grid_from_rows(rows, 1.0))
        known = OccupancyGrid.blank(4, 3, 1.0)
        pose = Pose(0.5, 0.5)
        first = reveal(known, truth, pose, 10.0)
        assert len(first) > 0
        assert len(reveal(known, truth, pose, 10.0)) == 0

    def test_pose_outside_bounds(self):
        truth = GroundTruth(grid_from_rows(["..", ".."], 1.0))
        known = OccupancyGrid.blank(2, 2, 1.0)
        with pytest.raises(ValueError):
            reveal(known, truth, Pose(5.0, 0.5), 2.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_random_maps_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        cells = np.where(rng.random((9, 12)) < 0.25, OBSTACLE, FREE).astype(np.uint8)
        cells[4, 6] = FREE
        truth = GroundTruth(OccupancyGrid(1.0, cells))
        known = OccupancyGrid.blank(12, 9, 1.0)
        pose = Pose(6.5, 4.5)
        expected = reveal_oracle(known.copy(), truth, pose, 5.0)
        got = set(int(i) for i in reveal(known, truth, pose, 5.0))
        assert got == expected

    def test_partition_invariant_preserved(self):
        rows = ["....", ".##.", "...."]
        truth = GroundTruth(grid_from_rows(rows, 1.0))
        known = OccupancyGrid.blank(4, 3, 1.0)
        reveal(known, truth, Pose(0.5, 0.5), 2.0)
        assert sum(known.counts()) == 12


class TestMerge:
    def test_identity_with_unknown(self):
        m = grid_from_rows(["..#", "?.?"])
        blank = OccupancyGrid.blank(3, 2, 1.0)
        assert np.array_equal(merge(m, blank).cells, m.cells)
        assert np.array_equal(merge(blank, m).cells, m.cells)

    def test_conflict_obstacle_wins(self):
        a = grid_from_rows(["."])
        b = grid_from_rows(["#"])
        assert merge(a, b).cells[0, 0] == OBSTACLE
        assert merge(b, a).cells[0, 0] == OBSTACLE

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            merge(OccupancyGrid.blank(2, 2, 1.0), OccupancyGrid.blank(3, 2, 1.0))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_commutative_up_to_conflicts(self, seed):
        rng = np.random.default_rng(seed)
        a = OccupancyGrid(1.0, rng.integers(0, 3, (5, 5)).astype(np.uint8))
        b = OccupancyGrid(1.0, rng.integers(0, 3, (5, 5)).astype(np.uint8))
        ab, ba = merge(a, b), merge(b, a)
        assert np.array_equal(ab.cells, ba.cells)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_associative_on_conflict_free(self, seed):
        rng = np.random.default_rng(seed)
        base = rng.integers(0, 2, (4, 4)).astype(np.uint8)  # a known truth
        views = []
        for _ in range(3):
            mask = rng.random((4, 4)) < 0.5
            v = np.where(mask, base, UNKNOWN).astype(np.uint8)
            views.append(OccupancyGrid(1.0, v))
        a, b, c = views
        left = merge(merge(a, b), c)
        right = merge(a, merge(b, c))
        assert np.array_equal(left.cells, right.cells)

    def test_monotonic_knowledge(self):
        rows = ["....", ".##.", "...."]
        truth = GroundTruth(grid_from_rows(rows, 1.0))
        known = OccupancyGrid.blank(4, 3, 1.0)
        for pose in [Pose(0.5, 0.5), Pose(3.5, 2.5), Pose(2.5, 0.5)]:
            before = known.cells.copy()
            reveal(known, truth, pose, 1.7)
            went_unknown = (before != UNKNOWN) & (known.cells == UNKNOWN)
            assert not went_unknown.any()


class TestReachableFree:
    def test_single_free_cell(self):
        g = grid_from_rows(["###", "#.#", "###"])
        mask = reachable_free(g, (1, 1))
        assert mask.sum() == 1 and mask[1, 1]

    def test_open_grid(self):
        g = grid_from_rows(["....."] * 5)
        assert reachable_free(g, (2, 2)).sum() == 25

    def test_wall_split(self):
        g = grid_from_rows(["..#..", "..#..", "..#.."])
        mask = reachable_free(g, (0, 0))
        expected = flood_fill_oracle(g.cells, (0, 0))
        got = {(cx, cy) for cy, cx in zip(*np.nonzero(mask))}
        assert got == expected

    def test_not_free_rejected(self):
        g = grid_from_rows(["#."])
        with pytest.raises(ValueError):
            reachable_free(g, (0, 0))


class TestLineCells:
    def test_degenerate(self):
        assert line_cells((3, 4), (3, 4)).tolist() == [[3, 4]]

    def test_axis_aligned(self):
        pts = line_cells((0, 0), (4, 0))
        assert pts.tolist() == [[0, 0], [1, 0], [2, 0], [3, 0], [4, 0]]

    def test_endpoint_inclusive_and_connected(self):
        pts = line_cells((0, 0), (5, 3))
        assert pts[0].tolist() == [0, 0] and pts[-1].tolist() == [5, 3]
        steps = np.abs(np.diff(pts, axis=0)).max(axis=1)
        assert (steps <= 1).all()

    def test_segment_clear(self):
        g = grid_from_rows(["....", ".#..", "...."])
        assert segment_clear(g, (0, 0), (3, 0))
        assert not segment_clear(g, (0, 1), (3, 1))


class TestRoiMask:
    def test_full(self):
        g = OccupancyGrid.blank(4, 3, 1.0)
        roi = RoiMask.full(g)
        assert roi.matches(g) and roi.count() == 12

    def test_from_flat(self):
        g = OccupancyGrid.blank(4, 3, 1.0)
        roi = RoiMask.from_flat(g, [0, 5, 11])
        assert roi.count() == 3 and roi.mask[1, 1]


class TestPose:
    def test_theta_normalized(self):
        assert Pose(0, 0, math.pi).theta == pytest.approx(-math.pi)
        assert Pose(0, 0, 3 * math.pi / 2).theta == pytest.approx(-math.pi / 2)
        assert Pose(0, 0, -math.pi).theta == pytest.approx(-math.pi)
