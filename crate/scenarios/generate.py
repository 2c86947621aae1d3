#!/usr/bin/env python3
"""Regenerates the bundled scenario files.

optimal_path_length is the 8-connected grid geodesic between start and goal,
shortened by line-of-sight string pulling.
"""
import heapq
import json
import math
from pathlib import Path

RES = 0.2
HERE = Path(__file__).resolve().parent


def blank(cols, rows, fill="."):
    return [[fill] * cols for _ in range(rows)]


def box(grid, x0, y0, x1, y1, ch="#"):
    """Fill the metric box [x0, x1) x [y0, y1); grid row index is iy."""
    for iy in range(int(round(y0 / RES)), int(round(y1 / RES))):
        for ix in range(int(round(x0 / RES)), int(round(x1 / RES))):
            grid[iy][ix] = ch


def border(grid):
    rows, cols = len(grid), len(grid[0])
    for iy in range(rows):
        for ix in range(cols):
            if iy in (0, rows - 1) or ix in (0, cols - 1):
                grid[iy][ix] = "#"


def to_rows(grid):
    # row 0 of the file is the top (max y) of the map
    return ["".join(r) for r in reversed(grid)]


def cell(p):
    return int(math.floor(p[0] / RES)), int(math.floor(p[1] / RES))


def geodesic(layers, spacing, start, goal):
    """Dijkstra over (layer, ix, iy); returns the cell path start -> goal."""
    rows, cols = len(layers[0]), len(layers[0][0])
    free = lambda l, x, y: 0 <= x < cols and 0 <= y < rows and layers[l][y][x] == "."
    s = (start[0],) + cell(start[1:])
    g = (goal[0],) + cell(goal[1:])
    dist = {s: 0.0}
    parent = {}
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == g:
            break
        if d > dist[u]:
            continue
        l, x, y = u
        steps = []
        for dx, dy in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]:
            if not free(l, x + dx, y + dy):
                continue
            if dx and dy and not (free(l, x + dx, y) and free(l, x, y + dy)):
                continue
            steps.append(((l, x + dx, y + dy), RES * math.hypot(dx, dy)))
        for nl in (l - 1, l + 1):
            if 0 <= nl < len(layers) and free(nl, x, y):
                steps.append(((nl, x, y), spacing))
        for v, w in steps:
            if d + w < dist.get(v, math.inf):
                dist[v] = d + w
                parent[v] = u
                heapq.heappush(heap, (d + w, v))
    path = [g]
    while path[-1] != s:
        path.append(parent[path[-1]])
    return path[::-1]


def clear(layer, a, b):
    (x0, y0), (x1, y1) = a, b
    n = int(max(abs(x1 - x0), abs(y1 - y0)) * 4) + 1
    for i in range(n + 1):
        t = i / n
        x = (x0 + 0.5 + t * (x1 - x0))
        y = (y0 + 0.5 + t * (y1 - y0))
        for cx in {math.floor(x - 0.01), math.floor(x + 0.01)}:
            for cy in {math.floor(y - 0.01), math.floor(y + 0.01)}:
                if layer[cy][cx] != ".":
                    return False
    return True


def pulled_length(layers, spacing, path, start, goal):
    """Length of the path after greedy line-of-sight shortcuts, in meters."""
    pts = [start[1:3]] + [((x + 0.5) * RES, (y + 0.5) * RES) for _, x, y in path[1:-1]] + [goal[1:3]]
    total = 0.0
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not (path[j][0] == path[i][0] and all(p[0] == path[i][0] for p in path[i:j + 1])
                                 and clear(layers[path[i][0]], path[i][1:], path[j][1:])):
            j -= 1
        if path[j][0] != path[i][0]:
            total += spacing
        else:
            total += math.dist(pts[i], pts[j])
        i = j
    return round(total, 2)


def write(name, grids, spacing, start, goal, mode, horizon, description, seed=1, jitter=10.0):
    layers = [to_rows(g) for g in grids]
    li = lambda z: int(round((z - 1.0) / spacing))
    path = geodesic(grids, spacing, (li(start[2]),) + start[:2], (li(goal[2]),) + tuple(goal[:2]))
    opt = pulled_length(grids, spacing, path, (li(start[2]),) + start[:2], (li(goal[2]),) + tuple(goal[:2]))
    doc = {
        "name": name,
        "mode": mode,
        "resolution": RES,
        "layer_spacing": spacing,
        "base_height": 1.0,
        "layers": layers,
        "start": {"x": start[0], "y": start[1], "z": start[2], "yaw_deg": start[3]},
        "goal": list(goal),
        "goal_description": description,
        "optimal_path_length": opt,
        "horizon": horizon,
        "seed": seed,
        "start_yaw_jitter_deg": jitter,
    }
    (HERE / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"{name}: optimal {opt} m")


def warehouse():
    g = blank(200, 200)
    border(g)
    # five rack rows along x, 1 m deep, with a cross aisle at x in [18, 21]
    for y in (8, 14, 20, 26, 32):
        box(g, 7, y, 18, y + 1)
        box(g, 21, y, 33, y + 1)
    # pallets in the open loading area
    box(g, 3, 36, 5, 38)
    box(g, 35, 4, 37, 7)
    box(g, 36, 20, 38, 22)
    write("warehouse", [g], 1.5, (3.0, 11.0, 1.0, 0.0), (28.0, 23.5, 1.0), "2.5d", 5,
          "the orange pallet jack in the aisle between the third and fourth rack rows")


def two_level():
    ground = blank(150, 100)
    upper = blank(150, 100, "#")
    border(ground)
    # partition wall with a doorway
    box(ground, 12, 0, 12.6, 8)
    box(ground, 12, 11, 12.6, 20)
    # racking fills the floor under the mezzanine except for the lift bay
    box(ground, 20, 0, 30, 20)
    box(ground, 20, 7, 24, 12, ".")
    # the mezzanine deck, reachable only through the bay
    box(upper, 20.2, 0.2, 29.8, 19.8, ".")
    box(upper, 25, 9, 26, 11)
    write("two_level", [ground, upper], 1.5, (3.0, 10.0, 1.0, 0.0), (27.0, 16.0, 2.5), "3d", 15,
          "the blue toolbox on the mezzanine deck")


if __name__ == "__main__":
    warehouse()
    two_level()
