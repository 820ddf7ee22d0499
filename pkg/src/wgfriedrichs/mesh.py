"""Polygonal meshes of 2D domains with full edge/cell adjacency.

Cells are stored as counter-clockwise vertex loops.  Each edge is stored
once; its orientation is the one seen by the lower-indexed incident cell
(the "left" cell), and its unit normal points from the left cell into the
right cell, or outward on the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for malformed mesh input (parse or topology errors)."""


@dataclass(frozen=True)
class Diagnostic:
    invariant: str
    index: int | None
    message: str

    def __str__(self):
        where = "" if self.index is None else f" [{self.index}]"
        return f"{self.invariant}{where}: {self.message}"


@dataclass(frozen=True, eq=False)
class WeakMesh:
    vertices: np.ndarray        # (nv, 2)
    cells: tuple                # tuple of CCW vertex-index tuples
    edge_vertices: np.ndarray   # (ne, 2), ordered as traversed by the left cell
    edge_cells: np.ndarray      # (ne, 2), right cell is -1 on the boundary
    normals: np.ndarray         # (ne, 2)
    lengths: np.ndarray         # (ne,)
    cell_edges: tuple           # per cell, edge indices in CCW order
    centroids: np.ndarray       # (nc, 2)
    areas: np.ndarray           # (nc,)
    diameters: np.ndarray       # (nc,)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_edges(self):
        return len(self.edge_vertices)

    @property
    def h(self):
        return float(np.max(self.diameters))

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def interior_edges(self):
        return np.flatnonzero(self.edge_cells[:, 1] >= 0)

    def edge_sign(self, cell, edge):
        """+1 if the stored normal of ``edge`` is outward for ``cell``, else -1."""
        if self.edge_cells[edge, 0] == cell:
            return 1.0
        if self.edge_cells[edge, 1] == cell:
            return -1.0
        raise ValueError(f"edge {edge} is not on the boundary of cell {cell}")

    def polygon(self, cell):
        return self.vertices[list(self.cells[cell])]

    def same_as(self, other, tol=1e-14):
        """Geometric and topological equality (same numbering)."""
        return (
            self.cells == other.cells
            and self.vertices.shape == other.vertices.shape
            and np.allclose(self.vertices, other.vertices, rtol=0, atol=tol)
            and np.array_equal(self.edge_vertices, other.edge_vertices)
            and np.array_equal(self.edge_cells, other.edge_cells)
        )


def _shoelace(poly):
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross)
    if area == 0.0:
        return 0.0, poly.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return area, np.array([cx, cy])


def _diameter(poly):
    d = poly[:, None, :] - poly[None, :, :]
    return float(np.sqrt(np.max(np.sum(d * d, axis=-1))))


def build_mesh(vertices, cells):
    """Derive edges, adjacency and cell metadata from vertices and cell loops.

    Clockwise loops are reoriented.  An edge shared by more than two cells
    raises :class:`MeshError` ("non-manifold edge").
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    nv = len(vertices)
    loops = []
    for c, loop in enumerate(cells):
        loop = tuple(int(i) for i in loop)
        if len(loop) < 3:
            raise MeshError(f"cell {c} has fewer than 3 vertices")
        if min(loop) < 0 or max(loop) >= nv:
            raise MeshError(f"cell {c} references a vertex outside 0..{nv - 1}")
        if len(set(loop)) != len(loop):
            raise MeshError(f"cell {c} repeats a vertex")
        area, _ = _shoelace(vertices[list(loop)])
        if area < 0.0:
            loop = (loop[0],) + tuple(reversed(loop[1:]))
        loops.append(loop)

    edge_index = {}
    edge_vertices = []
    edge_cells = []
    cell_edges = []
    for c, loop in enumerate(loops):
        ids = []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            key = (a, b) if a < b else (b, a)
            e = edge_index.get(key)
            if e is None:
                e = len(edge_vertices)
                edge_index[key] = e
                edge_vertices.append((a, b))
                edge_cells.append([c, -1])
            else:
                if edge_cells[e][1] != -1:
                    raise MeshError(f"non-manifold edge {key} shared by more than two cells")
                if edge_vertices[e] != (b, a):
                    raise MeshError(
                        f"inconsistent orientation on edge {key} between cells "
                        f"{edge_cells[e][0]} and {c}"
                    )
                edge_cells[e][1] = c
            ids.append(e)
        cell_edges.append(np.array(ids, dtype=int))

    ev = np.array(edge_vertices, dtype=int).reshape(-1, 2)
    tangent = vertices[ev[:, 1]] - vertices[ev[:, 0]]
    lengths = np.hypot(tangent[:, 0], tangent[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]

    nc = len(loops)
    centroids = np.empty((nc, 2))
    areas = np.empty(nc)
    diameters = np.empty(nc)
    for c, loop in enumerate(loops):
        poly = vertices[list(loop)]
        areas[c], centroids[c] = _shoelace(poly)
        diameters[c] = _diameter(poly)

    return WeakMesh(
        vertices=vertices,
        cells=tuple(loops),
        edge_vertices=ev,
        edge_cells=np.array(edge_cells, dtype=int).reshape(-1, 2),
        normals=normals,
        lengths=lengths,
        cell_edges=tuple(cell_edges),
        centroids=centroids,
        areas=areas,
        diameters=diameters,
    )


def fan_triangles(mesh, cell):
    """Triangles (centroid, v_i, v_{i+1}) of the centroid fan, shape (n, 3, 2)."""
    poly = mesh.polygon(cell)
    c = np.broadcast_to(mesh.centroids[cell], poly.shape)
    return np.stack([c, poly, np.roll(poly, -1, axis=0)], axis=1)


def _fan_areas(tris):
    a = tris[:, 1] - tris[:, 0]
    b = tris[:, 2] - tris[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def cell_geometry(mesh, cell):
    """(centroid, area, diameter, fan triangles) of one cell.

    Raises ValueError("fan triangulation invalid") when the polygon is not
    strictly star-shaped about its centroid.
    """
    tris = fan_triangles(mesh, cell)
    fa = _fan_areas(tris)
    if np.any(fa <= 1e-14 * mesh.areas[cell]):
        raise ValueError(f"fan triangulation invalid for cell {cell}")
    return mesh.centroids[cell].copy(), float(mesh.areas[cell]), float(mesh.diameters[cell]), tris


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def _is_simple(poly):
    n = len(poly)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                return False
    return True


def validate(mesh):
    """Return ``None`` if every mesh invariant holds, else the first :class:`Diagnostic`."""
    nc = mesh.n_cells
    scale = max(1.0, float(np.max(np.abs(mesh.vertices), initial=0.0)))
    for c in range(nc):
        poly = mesh.polygon(c)
        area, _ = _shoelace(poly)
        if not area > 1e-14 * scale**2:
            return Diagnostic("positive area", c, f"cell {c} has area {area:.3e}")
        if not _is_simple(poly):
            return Diagnostic("simple polygon", c, f"cell {c} self-intersects")
        if np.any(_fan_areas(fan_triangles(mesh, c)) <= 1e-14 * area):
            return Diagnostic("star-shaped", c, f"fan triangulation invalid for cell {c}")
        if abs(mesh.areas[c] - area) > 1e-12 * area:
            return Diagnostic("cell metadata", c, f"stored area of cell {c} is stale")

    count = np.zeros(mesh.n_edges, dtype=int)
    for c, edges in enumerate(mesh.cell_edges):
        for e in edges:
            if c not in mesh.edge_cells[e]:
                return Diagnostic("adjacency", int(e), f"edge {e} does not list cell {c}")
            count[e] += 1
    for e in range(mesh.n_edges):
        left, right = mesh.edge_cells[e]
        expected = 1 if right < 0 else 2
        if count[e] != expected or left < 0:
            return Diagnostic("non-manifold edge", e, f"edge {e} has {count[e]} incident cells")
        if right >= 0 and not left < right:
            return Diagnostic("edge orientation", e, f"edge {e} left cell must be the lower index")

    nrm = np.hypot(mesh.normals[:, 0], mesh.normals[:, 1])
    bad = np.flatnonzero(~(np.abs(nrm - 1.0) <= 1e-12))
    if len(bad):
        return Diagnostic("unit normal", int(bad[0]), f"edge {bad[0]} normal has norm {nrm[bad[0]]}")
    a, b = mesh.vertices[mesh.edge_vertices[:, 0]], mesh.vertices[mesh.edge_vertices[:, 1]]
    mid = 0.5 * (a + b)
    for e in range(mesh.n_edges):
        if abs(np.dot(b[e] - a[e], mesh.normals[e])) > 1e-12 * mesh.lengths[e]:
            return Diagnostic("unit normal", e, f"edge {e} normal is not perpendicular")
        left = mesh.edge_cells[e, 0]
        if np.dot(mid[e] - mesh.centroids[left], mesh.normals[e]) <= 0.0:
            return Diagnostic("unit normal", e, f"edge {e} normal does not point out of cell {left}")

    for c, edges in enumerate(mesh.cell_edges):
        signs = np.array([mesh.edge_sign(c, e) for e in edges])
        closure = np.sum((signs * mesh.lengths[edges])[:, None] * mesh.normals[edges], axis=0)
        if np.max(np.abs(closure)) > 1e-12 * max(1.0, mesh.diameters[c]):
            return Diagnostic("closure", c, f"boundary of cell {c} does not close")

    bnd = mesh.boundary_edges
    degree = np.bincount(mesh.edge_vertices[bnd].ravel(), minlength=len(mesh.vertices))
    open_at = np.flatnonzero((degree != 0) & (degree != 2))
    if len(open_at):
        return Diagnostic("open boundary", int(open_at[0]),
                          f"boundary vertex {open_at[0]} has {degree[open_at[0]]} boundary edges")
    ev = mesh.edge_vertices[bnd]
    pa, pb = mesh.vertices[ev[:, 0]], mesh.vertices[ev[:, 1]]
    domain_area = 0.5 * np.sum(pa[:, 0] * pb[:, 1] - pb[:, 0] * pa[:, 1])
    total = float(np.sum(mesh.areas))
    if abs(total - domain_area) > 1e-12 * abs(domain_area):
        return Diagnostic("area closure", None, f"cell areas sum to {total}, domain area {domain_area}")

    if abs(mesh.h - float(np.max(mesh.diameters))) > 0.0:
        return Diagnostic("mesh size", None, "h is not the maximum cell diameter")
    return None


def square_grid(level, domain=(0.0, 1.0, 0.0, 1.0)):
    """Uniform grid of 2^(level-1) x 2^(level-1) squares on ``(x0, x1, y0, y1)``."""
    if level < 1:
        raise ValueError("level must be >= 1")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {domain}")
    n = 2 ** (level - 1)
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            v = j * (n + 1) + i
            cells.append((v, v + 1, v + n + 2, v + n + 1))
    return build_mesh(vertices, cells)


# Local coordinates of the polygonal macro pattern on [0, 1]^2.  Boundary
# points sit at CORNER_CUT, 0.5, 1 - CORNER_CUT on every macro edge, which
# keeps neighbouring macros conforming.
CORNER_CUT = 0.3
CENTER_INSET = 0.22
SIDE_SPLIT = (0.4, 0.6)
SIDE_BULGE = 0.18


def _rot(p):
    # quarter turn counter-clockwise about (0.5, 0.5)
    return (1.0 - p[1], p[0])


def _macro_pattern():
    q, c = CORNER_CUT, CENTER_INSET
    corner = [(0.0, 0.0), (q, 0.0), (c, c), (0.0, q)]
    side = [(q, 0.0), (0.5, 0.0), (1.0 - q, 0.0), (1.0 - c, c),
            (SIDE_SPLIT[1], SIDE_BULGE), (SIDE_SPLIT[0], SIDE_BULGE), (c, c)]
    center_quarter = [(c, c), (SIDE_SPLIT[0], SIDE_BULGE), (SIDE_SPLIT[1], SIDE_BULGE)]

    def turned(points, r):
        for _ in range(r):
            points = [_rot(p) for p in points]
        return points

    center = []
    for r in range(4):
        center += turned(center_quarter, r)
    cells = [center]
    for r in range(4):
        cells.append(turned(side, r))
    for r in range(4):
        cells.append(turned(corner, r))
    return cells


POLYGONAL_PATTERN_CELLS = 9


def polygonal_grid(level):
    """Unit-square mesh of 4^(level-1) macro squares, each split into a central
    12-gon, four 7-gons and four corner quadrilaterals."""
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 2 ** (level - 1)
    size = 1.0 / n
    pattern = _macro_pattern()
    vid = {}
    vertices = []
    cells = []
    for j in range(n):
        for i in range(n):
            for loop in pattern:
                ids = []
                for px, py in loop:
                    x, y = (i + px) * size, (j + py) * size
                    key = (round(x * n * 1e6), round(y * n * 1e6))
                    if key not in vid:
                        vid[key] = len(vertices)
                        vertices.append((x, y))
                    ids.append(vid[key])
                cells.append(ids)
    return build_mesh(np.array(vertices), cells)


def load_mesh(path):
    """Read a ``wgmesh 1`` text file and return a validated mesh."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise MeshError(f"{path}: cannot read mesh file: {exc}") from exc
    # keep original line numbers, skip blank lines
    content = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip()]
    it = iter(content)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshError(f"{path}: unexpected end of file while reading {what}") from None

    lineno, tok = take("header")
    if tok != ["wgmesh", "1"]:
        raise MeshError(f"{path}:{lineno}: expected header 'wgmesh 1'")
    lineno, tok = take("sizes")
    try:
        nv, nc = (int(t) for t in tok)
    except ValueError:
        raise MeshError(f"{path}:{lineno}: expected '<nv> <nc>'") from None
    if nv < 3 or nc < 1:
        raise MeshError(f"{path}:{lineno}: need at least 3 vertices and 1 cell")
    vertices = np.empty((nv, 2))
    for v in range(nv):
        lineno, tok = take(f"vertex {v}")
        try:
            if len(tok) != 2:
                raise ValueError
            vertices[v] = [float(t) for t in tok]
        except ValueError:
            raise MeshError(f"{path}:{lineno}: expected 'x y' for vertex {v}") from None
    cells = []
    for c in range(nc):
        lineno, tok = take(f"cell {c}")
        try:
            k = int(tok[0])
            ids = [int(t) for t in tok[1:]]
        except (ValueError, IndexError):
            raise MeshError(f"{path}:{lineno}: malformed cell line") from None
        if len(ids) != k:
            raise MeshError(f"{path}:{lineno}: cell {c} declares {k} vertices, lists {len(ids)}")
        cells.append(ids)
    extra = next(it, None)
    if extra is not None:
        raise MeshError(f"{path}:{extra[0]}: trailing content after {nc} cells")
    try:
        mesh = build_mesh(vertices, cells)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None
    diag = validate(mesh)
    if diag is not None:
        raise MeshError(f"{path}: validation failed: {diag}")
    return mesh


def write_mesh(mesh, path):
    lines = ["wgmesh 1", f"{len(mesh.vertices)} {mesh.n_cells}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [" ".join(str(i) for i in (len(c),) + tuple(c)) for c in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
