"""Conforming triangulations, benchmark mesh generators and vertex diagnostics.

The vertex diagnostics implement the quantities that control the dimension of
the Scott-Vogelius pressure space: the fan of elements around each vertex, the
angles ``t_1 .. t_m`` they subtend and the singularity measure

    xi = sum over consecutive pairs of |sin(t_i + t_{i+1})|

where pairs wrap around for interior vertices and stop at the last angle for
boundary vertices.  A vertex is singular when this sum vanishes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIRICHLET = "D"
NEUMANN = "N"

XI_TOL = 1e-10
ANGLE_TOL = 1e-9

INTERIOR = "interior"
DIRICHLET_BOUNDARY = "dirichlet_boundary"
NEUMANN_BOUNDARY = "neumann_boundary"
DN_JUNCTION = "dn_junction"
DOMAIN_CORNER = "domain_corner"


class MeshError(ValueError):
    """Raised for malformed, degenerate or nonconforming meshes."""


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class Mesh:
    """A conforming triangulation with tagged boundary edges.

    Triangles are stored counter-clockwise.  Local edge ``k`` of a triangle is
    the edge opposite its local vertex ``k``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_tags: dict
    edges: np.ndarray = field(repr=False)
    tri_edges: np.ndarray = field(repr=False)
    edge_elements: list = field(repr=False)
    vertex_elements: list = field(repr=False)

    @classmethod
    def build(cls, vertices, triangles, boundary, *, reorient=True):
        """Validate raw arrays and derive adjacency.

        ``boundary`` is an iterable of ``(i, j, tag)`` with ``tag`` in
        ``{"D", "N"}``.
        """
        V = np.array(vertices, dtype=float).reshape(-1, 2)
        T = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(T) == 0:
            raise MeshError("mesh has no triangles")
        if T.min() < 0 or T.max() >= len(V):
            raise MeshError("triangle references a missing vertex")
        if np.any((T[:, 0] == T[:, 1]) | (T[:, 1] == T[:, 2]) | (T[:, 0] == T[:, 2])):
            raise MeshError("triangle with repeated vertex")

        area2 = _signed_area2(V, T)
        scale = np.max(np.ptp(V, axis=0)) ** 2
        if np.any(np.abs(area2) <= 1e-14 * scale):
            raise MeshError("degenerate triangle (zero area)")
        if np.any(area2 < 0):
            if not reorient:
                raise MeshError("triangle with clockwise orientation")
            T = T.copy()
            neg = area2 < 0
            T[neg] = T[neg][:, [0, 2, 1]]

        edge_index = {}
        edges = []
        tri_edges = np.empty_like(T)
        edge_elements = []
        for t, (a, b, c) in enumerate(T):
            for k, (i, j) in enumerate(((b, c), (c, a), (a, b))):
                key = _edge_key(int(i), int(j))
                e = edge_index.get(key)
                if e is None:
                    e = len(edges)
                    edge_index[key] = e
                    edges.append(key)
                    edge_elements.append([])
                tri_edges[t, k] = e
                edge_elements[e].append(t)
        edges = np.array(edges, dtype=np.int64)

        for e, els in enumerate(edge_elements):
            if len(els) > 2:
                raise MeshError(f"nonconforming: edge {tuple(edges[e])} shared by {len(els)} triangles")

        tags = {}
        for item in boundary:
            i, j, tag = item
            if tag not in (DIRICHLET, NEUMANN):
                raise MeshError(f"unknown boundary tag {tag!r}")
            key = _edge_key(int(i), int(j))
            if key not in edge_index:
                raise MeshError(f"inconsistent boundary tags: {key} is not a mesh edge")
            if len(edge_elements[edge_index[key]]) != 1:
                raise MeshError(f"inconsistent boundary tags: {key} is an interior edge")
            if key in tags and tags[key] != tag:
                raise MeshError(f"inconsistent boundary tags: {key} tagged twice")
            tags[key] = tag

        _check_hanging_vertices(V, edges)

        for e, els in enumerate(edge_elements):
            key = tuple(int(x) for x in edges[e])
            if len(els) == 1 and key not in tags:
                raise MeshError(f"inconsistent boundary tags: boundary edge {key} has no tag")

        vertex_elements = [[] for _ in range(len(V))]
        for t, tri in enumerate(T):
            for v in tri:
                vertex_elements[v].append(t)
        if any(len(els) == 0 for els in vertex_elements):
            raise MeshError("mesh contains an isolated vertex")

        V.setflags(write=False)
        T.setflags(write=False)
        edges.setflags(write=False)
        tri_edges.setflags(write=False)
        return cls(V, T, tags, edges, tri_edges, edge_elements, vertex_elements)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_tag(self, e):
        """Boundary tag of edge ``e`` or ``None`` for interior edges."""
        return self.boundary_tags.get(tuple(int(x) for x in self.edges[e]))

    def coords(self, t):
        return self.vertices[self.triangles[t]]

    def areas(self):
        return 0.5 * _signed_area2(self.vertices, self.triangles)

    def boundary_edge_ids(self, tag=None):
        out = []
        for e, els in enumerate(self.edge_elements):
            if len(els) == 1:
                if tag is None or self.edge_tag(e) == tag:
                    out.append(e)
        return np.array(out, dtype=np.int64)

    @property
    def all_dirichlet(self):
        return all(tag == DIRICHLET for tag in self.boundary_tags.values())

    def with_tags(self, tagger):
        """Copy with boundary edges re-tagged by ``tagger(p0, p1) -> tag``."""
        boundary = []
        for (i, j) in self.boundary_tags:
            boundary.append((i, j, tagger(self.vertices[i], self.vertices[j])))
        return Mesh.build(self.vertices, self.triangles, boundary)

    def moved(self, vertex, new_xy):
        V = np.array(self.vertices)
        V[vertex] = new_xy
        boundary = [(i, j, t) for (i, j), t in self.boundary_tags.items()]
        return Mesh.build(V, self.triangles, boundary)

    def locate(self, points, tol=1e-12):
        """Return (triangle index, barycentric coordinates) for each point.

        Raises ``MeshError`` for points outside the mesh.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        X = self.vertices[self.triangles]
        x0 = X[:, 0]
        J = np.stack([X[:, 1] - x0, X[:, 2] - x0], axis=-1)  # (T, 2, 2) columns
        Jinv = np.linalg.inv(J)
        rel = P[:, None, :] - x0[None]
        ab = np.einsum("tij,ptj->pti", Jinv, rel)
        lam = np.concatenate([1 - ab.sum(-1, keepdims=True), ab], axis=-1)
        score = lam.min(-1)
        tri = np.argmax(score, axis=1)
        best = score[np.arange(len(P)), tri]
        if np.any(best < -tol):
            bad = P[best < -tol][0]
            raise MeshError(f"point {tuple(bad)} lies outside the mesh")
        bary = lam[np.arange(len(P)), tri]
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(-1, keepdims=True)
        return tri, bary


def _signed_area2(V, T):
    a, b, c = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def _check_hanging_vertices(V, edges):
    a = V[edges[:, 0]]
    b = V[edges[:, 1]]
    d = b - a
    L2 = np.einsum("ij,ij->i", d, d)
    for v, x in enumerate(V):
        r = x - a
        s = np.einsum("ij,ij->i", r, d) / L2
        cross = r[:, 0] * d[:, 1] - r[:, 1] * d[:, 0]
        on = (np.abs(cross) <= 1e-12 * L2) & (s > 1e-12) & (s < 1 - 1e-12)
        on &= (edges[:, 0] != v) & (edges[:, 1] != v)
        if np.any(on):
            e = int(np.flatnonzero(on)[0])
            raise MeshError(f"nonconforming: vertex {v} lies inside edge {tuple(edges[e])}")


# --------------------------------------------------------------------------
# file format

def parse_mesh(text):
    """Parse the plain-text mesh format into a :class:`Mesh`."""
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line.split())
    pos = 0

    def section(name):
        nonlocal pos
        if pos >= len(lines) or len(lines[pos]) != 2 or lines[pos][0] != name:
            raise MeshError(f"parse error: expected '{name} <count>' at record {pos}")
        try:
            n = int(lines[pos][1])
        except ValueError:
            raise MeshError(f"parse error: bad count for '{name}'") from None
        rows = lines[pos + 1:pos + 1 + n]
        if len(rows) != n:
            raise MeshError(f"parse error: '{name}' section truncated")
        pos += 1 + n
        return rows

    try:
        verts = [(float(r[0]), float(r[1])) for r in section("vertices")]
        tris = [(int(r[0]), int(r[1]), int(r[2])) for r in section("triangles")]
        bnd = [(int(r[0]), int(r[1]), r[2]) for r in section("boundary")]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"parse error: {exc}") from None
    if pos != len(lines):
        raise MeshError("parse error: trailing records after boundary section")
    return Mesh.build(verts, tris, bnd)


def load_mesh(path):
    return parse_mesh(Path(path).read_text())


def format_mesh(mesh):
    out = [f"vertices {mesh.n_vertices}"]
    out += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    out.append(f"triangles {mesh.n_triangles}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"boundary {len(mesh.boundary_tags)}")
    out += [f"{i} {j} {t}" for (i, j), t in sorted(mesh.boundary_tags.items())]
    return "\n".join(out) + "\n"


def save_mesh(mesh, path):
    Path(path).write_text(format_mesh(mesh))


# --------------------------------------------------------------------------
# generators

def _tag_all(triangles, tag=DIRICHLET):
    count = {}
    for tri in triangles:
        for i, j in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = _edge_key(i, j)
            count[key] = count.get(key, 0) + 1
    return [(i, j, tag) for (i, j), n in count.items() if n == 1]


def gen_crisscross(nx, ny, rect=(0.0, 0.0, 1.0, 1.0), neumann_sides=()):
    """Rectangle cut into ``nx * ny`` cells, each split by both diagonals.

    ``neumann_sides`` is a subset of ``{"left", "right", "bottom", "top"}``;
    all other boundary edges are Dirichlet.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    verts = [(x, y) for y in ys for x in xs]

    def corner(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            c = len(verts)
            verts.append((0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])))
            a, b = corner(i, j), corner(i + 1, j)
            d, e = corner(i, j + 1), corner(i + 1, j + 1)
            tris += [(a, b, c), (b, e, c), (e, d, c), (d, a, c)]
    mesh = Mesh.build(verts, tris, _tag_all(tris))
    if neumann_sides:
        mesh = mesh.with_tags(_side_tagger(rect, neumann_sides))
    return mesh


def gen_square_diagonal(rect=(0.0, 0.0, 1.0, 1.0), neumann_sides=()):
    """Rectangle split by one diagonal into two triangles."""
    x0, y0, x1, y1 = rect
    verts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    tris = [(0, 1, 2), (0, 2, 3)]
    mesh = Mesh.build(verts, tris, _tag_all(tris))
    if neumann_sides:
        mesh = mesh.with_tags(_side_tagger(rect, neumann_sides))
    return mesh


def gen_triangle(vertices=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))):
    tris = [(0, 1, 2)]
    return Mesh.build(vertices, tris, _tag_all(tris))


def _side_tagger(rect, sides):
    x0, y0, x1, y1 = rect
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    tests = {
        "left": lambda p, q: abs(p[0] - x0) < tol and abs(q[0] - x0) < tol,
        "right": lambda p, q: abs(p[0] - x1) < tol and abs(q[0] - x1) < tol,
        "bottom": lambda p, q: abs(p[1] - y0) < tol and abs(q[1] - y0) < tol,
        "top": lambda p, q: abs(p[1] - y1) < tol and abs(q[1] - y1) < tol,
    }
    unknown = set(sides) - set(tests)
    if unknown:
        raise ValueError(f"unknown sides {sorted(unknown)}")

    def tagger(p, q):
        return NEUMANN if any(tests[s](p, q) for s in sides) else DIRICHLET

    return tagger


def gen_wedge(opening_deg=28.5, n_layers=7, ratio=0.55, half_width=1.0):
    """Symmetric wedge below the lid ``[-half_width, half_width] x {0}``.

    The apex sits on the y-axis.  Horizontal levels at distances
    ``H * ratio**j`` from the apex cut the wedge into trapezoidal layers of
    four triangles each, and the last level closes off with two triangles at
    the apex, so the mesh has ``4 * n_layers + 2`` elements graded
    geometrically toward the corner.  Every boundary edge is Dirichlet.
    """
    if not 0 < opening_deg < 180:
        raise ValueError("opening angle must lie in (0, 180) degrees")
    if n_layers < 1 or not 0 < ratio < 1:
        raise ValueError("need n_layers >= 1 and 0 < ratio < 1")
    half = math.radians(opening_deg) / 2
    H = half_width / math.tan(half)
    apex = (0.0, -H)
    verts = []
    levels = []
    for j in range(n_layers + 1):
        r = H * ratio ** j
        y = -H + r
        w = r * math.tan(half)
        base = len(verts)
        verts += [(-w, y), (0.0, y), (w, y)]
        levels.append((base, base + 1, base + 2))
    a = len(verts)
    verts.append(apex)

    tris = []
    for j in range(n_layers):
        L0, M0, R0 = levels[j]
        L1, M1, R1 = levels[j + 1]
        # outer-top to lower-middle diagonals keep two elements at every corner
        tris += [(L0, L1, M1), (L0, M1, M0), (R0, M0, M1), (R0, M1, R1)]
    L, M, R = levels[-1]
    tris += [(L, a, M), (M, a, R)]
    return Mesh.build(verts, tris, _tag_all(tris))


def wedge_apex(mesh):
    """Lowest vertex of a wedge mesh."""
    return mesh.vertices[np.argmin(mesh.vertices[:, 1])]


# --------------------------------------------------------------------------
# vertex classification

@dataclass(frozen=True)
class VertexInfo:
    category: str
    dirichlet: bool
    fan: tuple
    angles: tuple
    xi: float
    singular: bool


@dataclass(frozen=True)
class VertexClassification:
    vertices: tuple

    def __getitem__(self, v):
        return self.vertices[v]

    def __len__(self):
        return len(self.vertices)

    def indices(self, *categories, singular=None, dirichlet=None):
        out = []
        for v, info in enumerate(self.vertices):
            if categories and info.category not in categories:
                continue
            if singular is not None and info.singular != singular:
                continue
            if dirichlet is not None and info.dirichlet != dirichlet:
                continue
            out.append(v)
        return out

    @property
    def singular_interior(self):
        return self.indices(INTERIOR, singular=True)

    @property
    def singular_dirichlet(self):
        """Singular Dirichlet boundary vertices, domain corners included and
        Dirichlet/Neumann junctions excluded."""
        return self.indices(DIRICHLET_BOUNDARY, DOMAIN_CORNER, singular=True, dirichlet=True)


def _angle_at(V, tri, v):
    k = list(tri).index(v)
    p = V[tri[k]]
    q = V[tri[(k + 1) % 3]]
    r = V[tri[(k + 2) % 3]]
    a0 = math.atan2(q[1] - p[1], q[0] - p[0])
    a1 = math.atan2(r[1] - p[1], r[0] - p[0])
    theta = (a1 - a0) % (2 * math.pi)
    return a0, theta


def element_fan(mesh, v):
    """Elements around vertex ``v`` in counter-clockwise order with their angles.

    Elements are sorted by the direction of their centroid.  Boundary fans
    start at the element following the exterior sector.
    """
    V = mesh.vertices
    two_pi = 2 * math.pi
    entries = []
    for t in mesh.vertex_elements[v]:
        start, theta = _angle_at(V, mesh.triangles[t], v)
        cen = V[mesh.triangles[t]].mean(axis=0) - V[v]
        entries.append((math.atan2(cen[1], cen[0]) % two_pi, start % two_pi, theta, t))
    entries.sort()
    m = len(entries)
    total = sum(e[2] for e in entries)
    gaps = []
    for i in range(m):
        _, s0, th0, _ = entries[i]
        _, s1, _, _ = entries[(i + 1) % m]
        g = (s1 - s0 - th0) % two_pi
        if g > two_pi - ANGLE_TOL:
            g = 0.0
        gaps.append(g)
    if m == 1:
        gaps = [two_pi - total]
    if total > two_pi + ANGLE_TOL or abs(sum(gaps) - (two_pi - total)) > ANGLE_TOL:
        raise MeshError(f"fan ordering failure at vertex {v}: angular overlap")
    first = (int(np.argmax(gaps)) + 1) % m
    ordered = entries[first:] + entries[:first]
    return [e[3] for e in ordered], [e[2] for e in ordered], total


def xi_value(angles, boundary):
    m = len(angles)
    if boundary:
        return float(sum(abs(math.sin(angles[i] + angles[i + 1])) for i in range(m - 1)))
    return float(sum(abs(math.sin(angles[i] + angles[(i + 1) % m])) for i in range(m)))


def classify_vertices(mesh, xi_tol=XI_TOL):
    V = mesh.vertices
    btags = {}
    bnbrs = {}
    for (i, j), tag in mesh.boundary_tags.items():
        for a, b in ((i, j), (j, i)):
            btags.setdefault(a, set()).add(tag)
            bnbrs.setdefault(a, []).append(b)

    infos = []
    for v in range(mesh.n_vertices):
        fan, angles, total = element_fan(mesh, v)
        boundary = v in btags
        if not boundary:
            if abs(total - 2 * math.pi) > ANGLE_TOL:
                raise MeshError(f"fan ordering failure at interior vertex {v}")
            category = INTERIOR
            dirichlet = False
        else:
            nb = bnbrs[v]
            if len(nb) != 2:
                raise MeshError(f"boundary vertex {v} has {len(nb)} boundary edges")
            tags = btags[v]
            dirichlet = DIRICHLET in tags
            d0 = V[nb[0]] - V[v]
            d1 = V[nb[1]] - V[v]
            cross = d0[0] * d1[1] - d0[1] * d1[0]
            straight = abs(cross) <= 1e-10 * np.linalg.norm(d0) * np.linalg.norm(d1)
            if len(tags) == 2:
                category = DN_JUNCTION
            elif not straight:
                category = DOMAIN_CORNER
            elif dirichlet:
                category = DIRICHLET_BOUNDARY
            else:
                category = NEUMANN_BOUNDARY
        xi = xi_value(angles, boundary)
        infos.append(VertexInfo(category, dirichlet, tuple(fan), tuple(angles), xi, xi <= xi_tol))
    return VertexClassification(tuple(infos))


def is_corner_split(mesh, classification=None):
    """Return ``(ok, offending)``: no Dirichlet domain corner may be singular."""
    cls = classification or classify_vertices(mesh)
    bad = [v for v in cls.indices(DOMAIN_CORNER, dirichlet=True) if cls[v].singular]
    return len(bad) == 0, bad


def pressure_space_dim(mesh, p, classification=None):
    """Predicted dimension of the discrete pressure space (divergences of the
    constrained velocity space) from vertex counting."""
    if p < 1:
        raise ValueError("p must be >= 1")
    cls = classification or classify_vertices(mesh)
    dim = mesh.n_triangles * p * (p + 1) // 2
    dim -= len(cls.singular_interior)
    dim -= len(cls.singular_dirichlet)
    if mesh.all_dirichlet:
        dim -= 1
    return dim
