import heapq
import math

import numpy as np
import pytest

from vibratree.appearance import (
    ContourMap,
    augment_junctions,
    build_connectivity,
    compute_closure,
    load_keypoints,
    load_pgm,
    save_keypoints,
    save_pgm,
)
from vibratree.data import contour_path, keypoints_path
from vibratree.errors import InputError, NoContourPixels

FIXTURES = ["straight_line", "x_crossing", "t_junction", "parallel_lines", "ring"]

# adjacency frozen from the reference sweep below, cross-checked by hand:
# line/T/parallel cases are direct region-adjacency arguments, the X-crossing
# connects the center to all arms plus same-side arm pairs
EXPECTED_EDGES = {
    "straight_line": {(0, 1), (1, 2)},
    "x_crossing": {(0, 1), (0, 2), (0, 3), (0, 4), (1, 3), (1, 4), (2, 3), (2, 4)},
    "t_junction": {(0, 1), (0, 2), (0, 3), (1, 3), (2, 3)},
    "parallel_lines": {(0, 1), (0, 2), (1, 2)},
    "ring": {(0, 1), (0, 2), (1, 2)},
}
EXPECTED_AUGMENTED = {
    "straight_line": set(),
    "x_crossing": {(1, 2), (3, 4)},
    "t_junction": set(),
    "parallel_lines": set(),
    "ring": set(),
}


def reference_sweep(bitmap, points, members_per_point):
    """Independent single-threaded simulation of the closure expansion."""
    h, w = len(bitmap), len(bitmap[0])
    owner, best = {}, {}
    heap = []
    for pid, members in enumerate(members_per_point):
        px, py = points[pid]
        for (x, y) in members:
            key = (0, max(abs(x - px), abs(y - py)), pid)
            if best.get((x, y), (1 << 60,)) > key:
                best[(x, y)] = key
                heapq.heappush(heap, (0, key[1], y, x, pid))
    edges = set()
    while heap:
        c, d, y, x, pid = heapq.heappop(heap)
        if (x, y) in owner:
            continue
        owner[(x, y)] = pid
        px, py = points[pid]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h):
                    continue
                if (nx, ny) in owner:
                    if owner[(nx, ny)] != pid:
                        edges.add(tuple(sorted((pid, owner[(nx, ny)]))))
                    continue
                stepc = 0 if (bitmap[y][x] and bitmap[ny][nx]) else 1
                key = (c + stepc, max(abs(nx - px), abs(ny - py)), pid)
                if best.get((nx, ny), (1 << 60,)) > key:
                    best[(nx, ny)] = key
                    heapq.heappush(heap, (c + stepc, key[1], ny, nx, pid))
    return edges


def brute_force_closure_radius(bitmap, point, max_gap=math.radians(30.0)):
    """Oracle: recompute the gap condition from scratch for each radius."""
    h, w = bitmap.shape
    x0, y0 = point
    contour = [(x, y) for y in range(h) for x in range(w) if bitmap[y, x]]
    r_max = int(math.ceil(math.hypot(w, h)))
    best = None
    for r in range(1, r_max + 1):
        angles = sorted(
            math.atan2(y - y0, x - x0)
            for x, y in contour
            if 0 < math.hypot(x - x0, y - y0) <= r
        )
        if not angles:
            gap = 2 * math.pi
        else:
            gap = max(
                [b - a for a, b in zip(angles, angles[1:])]
                + [angles[0] + 2 * math.pi - angles[-1]]
            )
        if best is None or gap < best[1]:
            best = (r, gap)
        if gap <= max_gap:
            return r, gap, False
    return best[0], best[1], True


class TestClosure:
    def test_ring_radius_five(self):
        # filled annulus of outer radius 5: dense enough to close at r=5 and
        # too sparse at r=4 (verified by the brute-force oracle below)
        bitmap = np.zeros((32, 32), bool)
        yy, xx = np.mgrid[0:32, 0:32]
        r = np.hypot(xx - 16.0, yy - 16.0)
        bitmap[(r >= 3.5) & (r <= 5.0)] = True
        closure = compute_closure(ContourMap(bitmap), (16, 16))
        oracle_r, _, oracle_flag = brute_force_closure_radius(bitmap, (16, 16))
        assert (oracle_r, oracle_flag) == (5, False)
        assert closure.radius == 5
        assert not closure.not_closed

    def test_line_point_matches_brute_force(self):
        bitmap = np.zeros((64, 64), bool)
        bitmap[32, 6:58] = True
        cmap = ContourMap(bitmap)
        for pt in [(10, 32), (32, 32)]:
            closure = compute_closure(cmap, pt)
            r, gap, not_closed = brute_force_closure_radius(bitmap, pt)
            assert closure.radius == r
            assert closure.not_closed == not_closed
            assert closure.max_gap == pytest.approx(gap)

    def test_random_maps_match_brute_force(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            bitmap = rng.random((24, 24)) < 0.15
            bitmap[12, 12] = True  # guarantee a contour pixel near the probe
            cmap = ContourMap(bitmap)
            pt = (int(rng.integers(8, 16)), int(rng.integers(8, 16)))
            closure = compute_closure(cmap, pt)
            r, gap, not_closed = brute_force_closure_radius(bitmap, pt)
            assert (closure.radius, closure.not_closed) == (r, not_closed)

    def test_members_within_radius(self):
        bitmap = np.zeros((64, 64), bool)
        yy, xx = np.mgrid[0:64, 0:64]
        bitmap[(np.hypot(xx - 32.0, yy - 32.0) >= 19.5)
               & (np.hypot(xx - 32.0, yy - 32.0) < 20.5)] = True
        closure = compute_closure(ContourMap(bitmap), (32, 32))
        d = np.hypot(closure.members[:, 0] - 32, closure.members[:, 1] - 32)
        assert np.all(d <= closure.radius)

    def test_empty_map(self):
        with pytest.raises(NoContourPixels):
            compute_closure(ContourMap(np.zeros((16, 16), bool)), (8, 8))

    def test_point_outside(self):
        with pytest.raises(InputError):
            compute_closure(ContourMap(np.ones((16, 16), bool)), (99, 2))


class TestConnectivity:
    @pytest.mark.parametrize("name", FIXTURES)
    def test_bundled_fixture_adjacency(self, name):
        cmap = load_pgm(contour_path(name))
        points = load_keypoints(keypoints_path(name))
        graph = build_connectivity(cmap, points)
        assert set(graph.edges()) == EXPECTED_EDGES[name]

    @pytest.mark.parametrize("name", FIXTURES)
    def test_matches_reference_sweep(self, name):
        cmap = load_pgm(contour_path(name))
        points = load_keypoints(keypoints_path(name))
        closures = [compute_closure(cmap, p) for p in points]
        graph = build_connectivity(cmap, points, closures)
        ref = reference_sweep(
            cmap.bitmap.tolist(),
            [tuple(p) for p in points],
            [[tuple(m) for m in c.members] for c in closures],
        )
        assert set(graph.edges()) == ref

    def test_two_points_on_one_segment_cost_zero(self):
        bitmap = np.zeros((64, 64), bool)
        bitmap[32, 6:58] = True
        cmap = ContourMap(bitmap)
        graph = build_connectivity(cmap, np.array([(10, 32), (54, 32)]))
        assert set(graph.edges()) == {(0, 1)}

    def test_parallel_lines_two_points(self):
        bitmap = np.zeros((32, 32), bool)
        bitmap[10, 2:30] = True
        bitmap[20, 2:30] = True
        cmap = ContourMap(bitmap)
        graph = build_connectivity(cmap, np.array([(16, 10), (16, 20)]))
        assert set(graph.edges()) == {(0, 1)}

    def test_three_collinear_middle_separates(self):
        cmap = load_pgm(contour_path("straight_line"))
        points = load_keypoints(keypoints_path("straight_line"))
        graph = build_connectivity(cmap, points)
        assert not graph.adjacency[0, 2]

    @pytest.mark.parametrize("name", FIXTURES)
    def test_order_invariance(self, name):
        cmap = load_pgm(contour_path(name))
        points = load_keypoints(keypoints_path(name))
        base = build_connectivity(cmap, points).adjacency
        rng = np.random.default_rng(1)
        perm = rng.permutation(points.shape[0])
        shuffled = build_connectivity(cmap, points[perm]).adjacency
        assert np.array_equal(shuffled[np.ix_(np.argsort(perm), np.argsort(perm))],
                              base)

    @pytest.mark.parametrize("name", FIXTURES)
    def test_symmetric_zero_diagonal(self, name):
        cmap = load_pgm(contour_path(name))
        points = load_keypoints(keypoints_path(name))
        g = build_connectivity(cmap, points)
        assert np.array_equal(g.adjacency, g.adjacency.T)
        assert not g.adjacency.diagonal().any()

    def test_connected_component_coverage(self):
        # all keypoints on one contour component: the graph restricted to it
        # must be connected
        cmap = load_pgm(contour_path("ring"))
        points = load_keypoints(keypoints_path("ring"))
        g = build_connectivity(cmap, points)
        reach = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.nonzero(g.adjacency[i])[0]:
                if j not in reach:
                    reach.add(int(j))
                    frontier.append(int(j))
        assert reach == set(range(points.shape[0]))


class TestAugment:
    @pytest.mark.parametrize("name", FIXTURES)
    def test_bundled_fixture_augmentation(self, name):
        cmap = load_pgm(contour_path(name))
        points = load_keypoints(keypoints_path(name))
        g = build_connectivity(cmap, points)
        ga = augment_junctions(g, points)
        assert set(ga.edges()) - set(g.edges()) == EXPECTED_AUGMENTED[name]

    def test_x_junction_hand_case(self):
        # center 0 with 4 neighbors on the axes; opposite pairs bridge
        adj = np.zeros((5, 5), bool)
        for i in range(1, 5):
            adj[0, i] = adj[i, 0] = True
        points = np.array([(0, 0), (10, 0), (0, 10), (-10, 0), (0, -10)])
        ga = augment_junctions(ConnectivityGraph(adj), points)
        added = set(ga.edges()) - {(0, 1), (0, 2), (0, 3), (0, 4)}
        assert added == {(1, 3), (2, 4)}

    def test_t_junction_unchanged(self):
        adj = np.zeros((4, 4), bool)
        for i in range(1, 4):
            adj[0, i] = adj[i, 0] = True
        points = np.array([(0, 0), (10, 0), (-10, 0), (0, 10)])
        ga = augment_junctions(ConnectivityGraph(adj), points)
        assert set(ga.edges()) == {(0, 1), (0, 2), (0, 3)}

    def test_narrow_cone_unchanged(self):
        adj = np.zeros((5, 5), bool)
        for i in range(1, 5):
            adj[0, i] = adj[i, 0] = True
        points = np.array([(0, 0), (10, 0), (10, 3), (10, -3), (9, 5)])
        ga = augment_junctions(ConnectivityGraph(adj), points)
        assert set(ga.edges()) == {(0, 1), (0, 2), (0, 3), (0, 4)}

    @pytest.mark.parametrize("name", FIXTURES)
    def test_idempotent_on_fixtures(self, name):
        cmap = load_pgm(contour_path(name))
        points = load_keypoints(keypoints_path(name))
        ga = augment_junctions(build_connectivity(cmap, points), points)
        gaa = augment_junctions(ga, points)
        assert np.array_equal(ga.adjacency, gaa.adjacency)


from vibratree.appearance import ConnectivityGraph  # noqa: E402


class TestIO:
    def test_pgm_round_trip_p2(self, tmp_path):
        rng = np.random.default_rng(2)
        cmap = ContourMap(rng.random((20, 30)) < 0.3)
        path = tmp_path / "map.pgm"
        save_pgm(cmap, path)
        back = load_pgm(path)
        assert np.array_equal(back.bitmap, cmap.bitmap)

    def test_pgm_p5(self, tmp_path):
        data = bytes([0, 255, 0, 255, 255, 0])
        path = tmp_path / "bin.pgm"
        path.write_bytes(b"P5\n# comment\n3 2\n255\n" + data)
        cmap = load_pgm(path)
        assert cmap.width == 3 and cmap.height == 2
        assert np.array_equal(
            cmap.bitmap, np.array([[False, True, False], [True, True, False]])
        )

    def test_keypoints_round_trip(self, tmp_path):
        pts = np.array([(3, 4), (10, 2), (7, 7)])
        path = tmp_path / "kp.csv"
        save_keypoints(pts, path)
        assert np.array_equal(load_keypoints(path), pts)

    def test_graph_json_round_trip(self):
        adj = np.zeros((4, 4), bool)
        adj[0, 2] = adj[2, 0] = True
        g = ConnectivityGraph(adj)
        g2 = ConnectivityGraph.from_dict(g.to_dict())
        assert np.array_equal(g.adjacency, g2.adjacency)
