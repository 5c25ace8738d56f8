"""Planar occupancy grid and swept-tube collision checks.

Two text map formats are supported, both starting with ``key value`` header
lines::

    type grid               type obstacles
    resolution 0.05         resolution 0.05
    origin -1.0 -6.0        origin -1.0 -6.0
    width 340               width 340
    height 240              height 240
    <height rows>           rect xmin ymin xmax ymax
                            circle cx cy r

Grid rows are listed top (largest y) first, ``.`` free and ``#`` occupied.
Obstacle maps are rasterized by marking every cell whose centre lies inside
a shape (boundary included).  A line starting with ``# `` (hash, space) is a
comment in both formats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


# distances within this of theta count as ties (collisions); absorbs cell-centre rounding
TIE_TOL = 1e-9


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x, y):
        return (x >= self.xmin) & (x <= self.xmax) & (y >= self.ymin) & (y <= self.ymax)

    def distance(self, x, y):
        dx = np.maximum(np.maximum(self.xmin - x, x - self.xmax), 0.0)
        dy = np.maximum(np.maximum(self.ymin - y, y - self.ymax), 0.0)
        return np.hypot(dx, dy)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r**2

    def distance(self, x, y):
        return np.maximum(np.hypot(x - self.cx, y - self.cy) - self.r, 0.0)


@dataclass
class OccupancyGrid:
    resolution: float
    origin: tuple[float, float]
    occupancy: np.ndarray  # (height, width) bool; row j covers y = origin_y + (j + 0.5) res
    obstacles: tuple = ()

    def __post_init__(self):
        if not self.resolution > 0:
            raise MapError("resolution must be positive")
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 2:
            raise MapError("occupancy must be 2-D")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        # one ring of occupied cells stands in for everything outside the map
        padded = np.ones((self.height + 2, self.width + 2), dtype=bool)
        padded[1:-1, 1:-1] = self.occupancy
        self._padded = padded
        jj, ii = np.nonzero(padded)
        centres = np.column_stack([
            self.origin[0] + (ii - 0.5) * self.resolution,
            self.origin[1] + (jj - 0.5) * self.resolution,
        ])
        self._tree = cKDTree(centres)

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @classmethod
    def empty(cls, width: int, height: int, resolution: float = 0.05, origin=(0.0, 0.0)):
        return cls(resolution, origin, np.zeros((height, width), dtype=bool))

    @classmethod
    def from_obstacles(cls, obstacles, width: int, height: int, resolution: float = 0.05, origin=(0.0, 0.0)):
        xs = origin[0] + (np.arange(width) + 0.5) * resolution
        ys = origin[1] + (np.arange(height) + 0.5) * resolution
        X, Y = np.meshgrid(xs, ys)
        occ = np.zeros((height, width), dtype=bool)
        for ob in obstacles:
            occ |= ob.contains(X, Y)
        return cls(resolution, origin, occ, tuple(obstacles))

    def cell_of(self, x, y):
        # clip in float first so huge or non-finite coordinates map outside the map
        fi = np.nan_to_num(np.floor((np.asarray(x, float) - self.origin[0]) / self.resolution), nan=-1.0)
        fj = np.nan_to_num(np.floor((np.asarray(y, float) - self.origin[1]) / self.resolution), nan=-1.0)
        i = np.clip(fi, -1, self.width).astype(int)
        j = np.clip(fj, -1, self.height).astype(int)
        return i, j

    def in_bounds(self, x, y):
        i, j = self.cell_of(x, y)
        return (i >= 0) & (i < self.width) & (j >= 0) & (j < self.height)

    def is_occupied_point(self, x: float, y: float) -> bool:
        """Occupancy of the cell containing (x, y); outside the map counts as occupied."""
        i, j = self.cell_of(x, y)
        if not (0 <= i < self.width and 0 <= j < self.height):
            return True
        return bool(self.occupancy[j, i])

    def discs_free(self, xy, theta) -> np.ndarray:
        """Vectorized :func:`is_free_disc` over centres of shape (M, 2).

        ``theta`` is a scalar or one radius per centre.
        """
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        theta = np.broadcast_to(np.asarray(theta, dtype=float), (len(xy),))
        i, j = self.cell_of(xy[:, 0], xy[:, 1])
        # padded indices: out-of-map centres land on (or are clipped to) the occupied ring
        pi = np.clip(i + 1, 0, self.width + 1)
        pj = np.clip(j + 1, 0, self.height + 1)
        # the cell holding the centre must itself be free (theta = 0 is a point test)
        ok = ~self._padded[pj, pi]
        if np.any(ok):
            d, _ = self._tree.query(xy[ok])
            ok[ok] = d > theta[ok] + TIE_TOL
        return ok

    # ---------------------------------------------------------------- files

    def dumps(self) -> str:
        head = [
            "type grid",
            f"resolution {self.resolution!r}",
            f"origin {self.origin[0]!r} {self.origin[1]!r}",
            f"width {self.width}",
            f"height {self.height}",
        ]
        rows = ["".join("#" if c else "." for c in row) for row in self.occupancy[::-1]]
        return "\n".join(head + rows) + "\n"

    def dumps_obstacles(self) -> str:
        if not self.obstacles:
            raise MapError("grid carries no obstacle list")
        head = [
            "type obstacles",
            f"resolution {self.resolution!r}",
            f"origin {self.origin[0]!r} {self.origin[1]!r}",
            f"width {self.width}",
            f"height {self.height}",
        ]
        body = []
        for ob in self.obstacles:
            if isinstance(ob, Rect):
                body.append(f"rect {ob.xmin!r} {ob.ymin!r} {ob.xmax!r} {ob.ymax!r}")
            else:
                body.append(f"circle {ob.cx!r} {ob.cy!r} {ob.r!r}")
        return "\n".join(head + body) + "\n"

    def save(self, path, fmt: str = "grid") -> None:
        Path(path).write_text(self.dumps() if fmt == "grid" else self.dumps_obstacles())


def is_free_disc(grid: OccupancyGrid, center, theta: float) -> bool:
    """True iff every occupied cell centre lies strictly farther than theta.

    The cell containing the centre must also be free, and a centre outside
    the map is never free.
    """
    if theta < 0:
        raise MapError("theta must be nonnegative")
    return bool(grid.discs_free(np.asarray(center, dtype=float)[:2], theta)[0])


def tube_check_times(primitive, resolution: float, check_period: float | None = None) -> np.ndarray:
    """Sample times spaced at most ``resolution / 2`` apart along the arc."""
    period = primitive.sample_period if check_period is None else min(check_period, primitive.sample_period)
    if primitive.linear_speed > 0:
        period = min(period, 0.5 * resolution / primitive.linear_speed)
    n = int(math.ceil(primitive.t_f / period - 1e-9))
    return np.linspace(0.0, primitive.t_f, n + 1)


def tube_is_free(grid: OccupancyGrid, primitive, theta: float, check_period: float | None = None) -> bool:
    """Disc test at densely sampled poses over [0, t_f] of a placed primitive."""
    if theta < 0:
        raise MapError("theta must be nonnegative")
    t = tube_check_times(primitive, grid.resolution, check_period)
    pts = primitive.positions(t)[:, :2]
    return bool(np.all(grid.discs_free(pts, theta)))


def exact_clearance(obstacles, x, y):
    """Continuous distance from points to the nearest obstacle shape."""
    d = np.full(np.shape(x), np.inf)
    for ob in obstacles:
        d = np.minimum(d, ob.distance(x, y))
    return d


# -------------------------------------------------------------------- loading


def _is_comment(line: str) -> bool:
    # grid rows never contain whitespace, so "# ..." cannot be a row
    return line.startswith("#") and len(line.split()) > 1


def _parse(text: str, source: str):
    header = {}
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not _is_comment(ln)]
    k = 0
    while k < len(lines) and lines[k].split()[0] in ("type", "resolution", "origin", "width", "height"):
        header[lines[k].split()[0]] = lines[k].split()[1:]
        k += 1
    body = lines[k:]
    missing = {"resolution", "origin", "width", "height"} - header.keys()
    if missing:
        raise MapError(f"{source}: missing header keys {sorted(missing)}")
    try:
        res = float(header["resolution"][0])
        origin = (float(header["origin"][0]), float(header["origin"][1]))
        width, height = int(header["width"][0]), int(header["height"][0])
    except (IndexError, ValueError) as exc:
        raise MapError(f"{source}: bad header: {exc}") from None
    kind = header.get("type", ["grid"])[0]
    return kind, res, origin, width, height, body


def loads_map(text: str, source: str = "<string>") -> OccupancyGrid:
    kind, res, origin, width, height, body = _parse(text, source)
    if kind == "grid":
        if len(body) != height or any(len(r) != width for r in body):
            raise MapError(f"{source}: expected {height} rows of {width} cells")
        bad = set("".join(body)) - {".", "#"}
        if bad:
            raise MapError(f"{source}: unexpected cell characters {sorted(bad)}")
        occ = np.array([[c == "#" for c in row] for row in body[::-1]], dtype=bool).reshape(height, width)
        return OccupancyGrid(res, origin, occ)
    if kind == "obstacles":
        obs = []
        for ln in body:
            parts = ln.split()
            try:
                vals = [float(v) for v in parts[1:]]
                if parts[0] == "rect" and len(vals) == 4:
                    obs.append(Rect(*vals))
                elif parts[0] == "circle" and len(vals) == 3:
                    obs.append(Circle(*vals))
                else:
                    raise MapError(f"{source}: bad obstacle line {ln!r}")
            except ValueError:
                raise MapError(f"{source}: bad obstacle line {ln!r}") from None
        return OccupancyGrid.from_obstacles(obs, width, height, res, origin)
    raise MapError(f"{source}: unknown map type {kind!r}")


def load_map(path) -> OccupancyGrid:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MapError(f"cannot read map {path}: {exc}") from None
    return loads_map(text, str(path))
