"""Over-complete keypoint connectivity from a binary contour map.

Pipeline: per-keypoint closures (minimal radius satisfying the 30-degree
angular gap condition), simultaneous shortest-path expansion of all closures
over the pixel grid, and junction augmentation for 2D crossings.

Pixel coordinates are (x, y) with x the column and y the row; the bitmap is
indexed [y, x].
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, NoContourPixels, ParseError

MAX_ANGULAR_GAP = math.radians(30.0)
JUNCTION_MIN_DEGREE = 4
JUNCTION_MIN_ANGLE = math.radians(135.0)


@dataclass
class ContourMap:
    bitmap: np.ndarray  # (height, width) bool, True = contour pixel

    def __post_init__(self):
        b = np.asarray(self.bitmap)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise InputError("contour bitmap must be 2D and non-empty")
        self.bitmap = b.astype(bool)

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


@dataclass
class Closure:
    point: tuple[int, int]          # keypoint (x, y)
    radius: int
    members: np.ndarray             # (m, 2) contour pixels as (x, y)
    not_closed: bool = False        # no radius satisfied the gap condition
    max_gap: float = 0.0            # largest angular gap at the chosen radius


@dataclass
class ConnectivityGraph:
    adjacency: np.ndarray  # (k, k) bool, symmetric, zero diagonal

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InputError("adjacency must be square")
        if not np.array_equal(a, a.T) or a.diagonal().any():
            raise InputError("adjacency must be symmetric with zero diagonal")
        self.adjacency = a

    @property
    def n_points(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def degree(self, i: int) -> int:
        return int(self.adjacency[i].sum())

    def to_dict(self) -> dict:
        return {"n_points": self.n_points,
                "edges": [[int(a), int(b)] for a, b in self.edges()]}

    @classmethod
    def from_dict(cls, data: dict) -> "ConnectivityGraph":
        n = int(data["n_points"])
        adj = np.zeros((n, n), dtype=bool)
        for a, b in data["edges"]:
            adj[a, b] = adj[b, a] = True
        return cls(adj)


def _max_cyclic_gap(angles: np.ndarray) -> float:
    """Largest gap between consecutive ray angles, wrapping the full circle."""
    if angles.size == 0:
        return 2 * math.pi
    a = np.sort(angles)
    gaps = np.diff(a)
    wrap = a[0] + 2 * math.pi - a[-1]
    return float(max(gaps.max(initial=0.0), wrap))


def compute_closure(cmap: ContourMap, point: Sequence[int]) -> Closure:
    """Smallest integer radius whose in-range contour rays leave no gap > 30 deg.

    If no radius up to the map diagonal closes the point, the radius with the
    smallest maximal gap is returned with ``not_closed`` set.
    """
    x0, y0 = int(point[0]), int(point[1])
    if not (0 <= x0 < cmap.width and 0 <= y0 < cmap.height):
        raise InputError(f"keypoint ({x0}, {y0}) outside the map")
    ys, xs = np.nonzero(cmap.bitmap)
    dx = xs.astype(float) - x0
    dy = ys.astype(float) - y0
    dist = np.hypot(dx, dy)
    nonzero = dist > 0
    angles = np.arctan2(dy[nonzero], dx[nonzero])
    dist_nz = dist[nonzero]
    r_max = int(math.ceil(cmap.diagonal))
    if not np.any(dist <= r_max):
        raise NoContourPixels(f"no contour pixels within {r_max} px of ({x0}, {y0})")

    best_r, best_gap = 1, 2 * math.pi
    for r in range(1, r_max + 1):
        gap = _max_cyclic_gap(angles[dist_nz <= r])
        if gap < best_gap:
            best_r, best_gap = r, gap
        if gap <= MAX_ANGULAR_GAP:
            members = np.column_stack([xs[dist <= r], ys[dist <= r]])
            return Closure(point=(x0, y0), radius=r, members=members,
                           not_closed=False, max_gap=gap)
    members = np.column_stack([xs[dist <= best_r], ys[dist <= best_r]])
    return Closure(point=(x0, y0), radius=best_r, members=members,
                   not_closed=True, max_gap=best_gap)


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def build_connectivity(cmap: ContourMap, points: np.ndarray,
                       closures: Sequence[Closure] | None = None) -> ConnectivityGraph:
    """Expand all closures simultaneously; connect owners of adjacent regions.

    Cost between 8-adjacent pixels is 0 when both lie on the contour, else 1.
    The priority key is (cost, Chebyshev distance to the owner's keypoint),
    with ties broken by (row, column, owner id) so the sweep is deterministic
    regardless of input order.
    """
    points = np.asarray(points, dtype=int)
    k = points.shape[0]
    if closures is None:
        closures = [compute_closure(cmap, p) for p in points]
    h, w = cmap.height, cmap.width
    bitmap = cmap.bitmap
    owner = np.full((h, w), -1, dtype=np.int64)
    # per-pixel best (cost, chebyshev, owner): pushes are pruned only when
    # lexicographically worse, so the documented tie-break decides every pixel
    big = np.iinfo(np.int64).max
    best_c = np.full((h, w), big, dtype=np.int64)
    best_d = np.full((h, w), big, dtype=np.int64)
    best_o = np.full((h, w), big, dtype=np.int64)
    adj = np.zeros((k, k), dtype=bool)
    heap: list[tuple[int, int, int, int, int]] = []
    for pid, closure in enumerate(closures):
        px, py = points[pid]
        for x, y in closure.members:
            x, y = int(x), int(y)
            cheb = max(abs(x - px), abs(y - py))
            if (0, cheb, pid) < (best_c[y, x], best_d[y, x], best_o[y, x]):
                best_c[y, x], best_d[y, x], best_o[y, x] = 0, cheb, pid
                heap.append((0, cheb, y, x, pid))
    heapq.heapify(heap)
    while heap:
        c, d, y, x, pid = heapq.heappop(heap)
        if owner[y, x] >= 0:
            continue
        owner[y, x] = pid
        px, py = points[pid]
        for dy, dx in _NEIGHBORS:
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w):
                continue
            other = owner[ny, nx]
            if other >= 0:
                if other != pid:
                    adj[pid, other] = adj[other, pid] = True
                continue
            step_cost = 0 if (bitmap[y, x] and bitmap[ny, nx]) else 1
            nc = c + step_cost
            cheb = max(abs(nx - px), abs(ny - py))
            if (nc, cheb, pid) < (best_c[ny, nx], best_d[ny, nx], best_o[ny, nx]):
                best_c[ny, nx], best_d[ny, nx], best_o[ny, nx] = nc, cheb, pid
                heapq.heappush(heap, (nc, cheb, ny, nx, pid))
    return ConnectivityGraph(adj)


def augment_junctions(graph: ConnectivityGraph, points: np.ndarray) -> ConnectivityGraph:
    """Bridge across junction keypoints that may be 2D crossings.

    For every keypoint with 4 or more neighbors, each pair of neighbors whose
    rays from the junction subtend at least 135 degrees gains a direct edge.
    Original edges are kept.
    """
    points = np.asarray(points, dtype=float)
    adj = graph.adjacency.copy()
    cos_threshold = math.cos(JUNCTION_MIN_ANGLE)
    for j in range(graph.n_points):
        neighbors = np.nonzero(graph.adjacency[j])[0]
        if neighbors.size < JUNCTION_MIN_DEGREE:
            continue
        rays = points[neighbors] - points[j]
        norms = np.linalg.norm(rays, axis=1)
        for a in range(neighbors.size):
            for b in range(a + 1, neighbors.size):
                if norms[a] == 0 or norms[b] == 0:
                    continue
                cos_ab = float(rays[a] @ rays[b] / (norms[a] * norms[b]))
                if cos_ab <= cos_threshold + 1e-12:
                    na, nb = int(neighbors[a]), int(neighbors[b])
                    adj[na, nb] = adj[nb, na] = True
    np.fill_diagonal(adj, False)
    return ConnectivityGraph(adj)


# file formats ----------------------------------------------------------

def load_pgm(path: str | Path) -> ContourMap:
    """Read a P2 (ASCII) or P5 (binary) PGM; nonzero pixels are contour."""
    raw = Path(path).read_bytes()
    try:
        tokens: list[int] = []
        pos = 0
        magic = None
        needed = 4  # magic, width, height, maxval

        def skip_ws(p: int) -> int:
            while p < len(raw):
                if raw[p : p + 1].isspace():
                    p += 1
                elif raw[p : p + 1] == b"#":
                    while p < len(raw) and raw[p] != 0x0A:
                        p += 1
                else:
                    break
            return p

        pos = skip_ws(pos)
        magic = raw[pos : pos + 2].decode("ascii")
        pos += 2
        while len(tokens) < 3:
            pos = skip_ws(pos)
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            tokens.append(int(raw[start:pos]))
        width, height, maxval = tokens
        if magic == "P5":
            pos += 1  # single whitespace after maxval
            count = width * height
            if maxval < 256:
                data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=pos)
            else:
                data = np.frombuffer(raw, dtype=">u2", count=count, offset=pos)
            pixels = data.reshape(height, width)
        elif magic == "P2":
            values = raw[pos:].split()
            pixels = np.array([int(v) for v in values[: width * height]]).reshape(
                height, width
            )
        else:
            raise ValueError(f"unsupported magic {magic!r}")
    except (ValueError, IndexError) as exc:
        raise ParseError(f"cannot parse PGM {path}: {exc}") from exc
    return ContourMap(pixels != 0)


def save_pgm(cmap: ContourMap, path: str | Path) -> None:
    lines = [f"P2", f"{cmap.width} {cmap.height}", "255"]
    for row in cmap.bitmap:
        lines.append(" ".join("255" if v else "0" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_keypoints(path: str | Path) -> np.ndarray:
    """CSV `id,x,y` in pixel coordinates; rows sorted by id."""
    try:
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        parsed = sorted(
            (int(r["id"]), int(round(float(r["x"]))), int(round(float(r["y"]))))
            for r in rows
        )
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"cannot parse keypoints {path}: {exc}") from exc
    if [p[0] for p in parsed] != list(range(len(parsed))):
        raise ParseError(f"{path}: keypoint ids must be dense 0..n-1")
    return np.array([[x, y] for _, x, y in parsed], dtype=int)


def save_keypoints(points: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y"])
        for i, (x, y) in enumerate(points):
            writer.writerow([i, int(x), int(y)])
