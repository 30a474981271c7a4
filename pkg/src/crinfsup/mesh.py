"""Conforming triangulations and their vertex-patch topology.

Besides the data model and structured generators this module measures how
close each vertex is to being *critical* (all incident edges on two straight
lines), sorts nearly critical vertices into patch categories, groups them
into fans around a common non-critical apex and computes the step-by-step
extension sequence used for acute boundary corners.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    ApexCritical,
    BadOrientation,
    DegenerateTriangle,
    EtaTooLarge,
    InvalidAngles,
    MeshParseError,
    NoInnerVertex,
    NonConforming,
    NotExhaustive,
    UnclassifiableCritical,
    ValidationError,
)

DEFAULT_ETA = 0.01
THETA_TOL = 1e-12
_GEOM_TOL = 1e-12


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


class Triangulation:
    """Immutable conforming triangulation with derived edge data.

    Triangles are counterclockwise vertex triples. Edge ``e`` joins
    ``edges[e] = (a, b)`` with ``a < b``; ``edge_triangles[e]`` lists the one
    or two adjacent triangles in increasing order and ``normals[e]`` is a unit
    normal pointing out of the first adjacent triangle (outward on the
    boundary, from the lower to the higher triangle index inside).
    ``tri_edges[K, i]`` is the edge of ``K`` opposite its local vertex ``i``.
    """

    def __init__(self, vertices, triangles):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self._derive_edges()

    def _derive_edges(self) -> None:
        index: dict[tuple[int, int], int] = {}
        edges: list[tuple[int, int]] = []
        adj: list[list[int]] = []
        tri_edges = np.empty((self.n_triangles, 3), dtype=np.int64)
        for K, tri in enumerate(self.triangles):
            for i in range(3):
                a, b = int(tri[(i + 1) % 3]), int(tri[(i + 2) % 3])
                key = (min(a, b), max(a, b))
                e = index.get(key)
                if e is None:
                    e = len(edges)
                    index[key] = e
                    edges.append(key)
                    adj.append([])
                adj[e].append(K)
                tri_edges[K, i] = e
        self.edge_index = index
        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.edge_triangles = [tuple(sorted(t)) for t in adj]
        self.tri_edges = tri_edges
        normals = np.empty((len(edges), 2))
        for e, (a, b) in enumerate(edges):
            t = self.vertices[b] - self.vertices[a]
            n = np.array([t[1], -t[0]]) / np.hypot(*t)
            K = self.edge_triangles[e][0]
            centroid = self.vertices[self.triangles[K]].mean(axis=0)
            if np.dot(n, self.vertices[a] - centroid) < 0:
                n = -n
            normals[e] = n
        self.normals = normals

    # basic counts -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    # geometry ---------------------------------------------------------------
    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths[self.tri_edges].max(axis=1)

    @cached_property
    def angles(self) -> np.ndarray:
        """Interior angle of triangle ``K`` at its local vertex ``i``."""
        out = np.empty((self.n_triangles, 3))
        p = self.vertices[self.triangles]
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            u /= np.linalg.norm(u, axis=1)[:, None]
            v /= np.linalg.norm(v, axis=1)[:, None]
            cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
            dot = np.sum(u * v, axis=1)
            out[:, i] = np.arctan2(np.abs(cross), dot)
        return out

    # topology ---------------------------------------------------------------
    def is_interior_edge(self, e: int) -> bool:
        return len(self.edge_triangles[e]) == 2

    @cached_property
    def interior_edges(self) -> list[int]:
        return [e for e in range(self.n_edges) if self.is_interior_edge(e)]

    @cached_property
    def boundary_edges(self) -> list[int]:
        return [e for e in range(self.n_edges) if not self.is_interior_edge(e)]

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        for e in self.boundary_edges:
            mask[self.edges[e]] = True
        return mask

    @cached_property
    def interior_vertices(self) -> list[int]:
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.triangles.ravel()] = True
        return [int(z) for z in np.flatnonzero(used & ~self.boundary_vertex_mask)]

    @cached_property
    def vertex_triangles(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for K, tri in enumerate(self.triangles):
            for z in tri:
                out[int(z)].append(K)
        return out

    @cached_property
    def vertex_edges(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for e, (a, b) in enumerate(self.edges):
            out[int(a)].append(e)
            out[int(b)].append(e)
        return out

    def local_index(self, K: int, z: int) -> int:
        hits = np.flatnonzero(self.triangles[K] == z)
        if hits.size == 0:
            raise ValidationError(f"vertex {z} is not in triangle {K}")
        return int(hits[0])

    def edge_of(self, a: int, b: int) -> int:
        return self.edge_index[(min(a, b), max(a, b))]

    def other_triangle(self, e: int, K: int) -> int | None:
        for L in self.edge_triangles[e]:
            if L != K:
                return L
        return None

    def vertex_patch(self, z: int) -> list[tuple[int, int, int]]:
        """Triangles around ``z`` as ``(K, a, b)`` with ``(z, a, b)`` counterclockwise.

        Consecutive entries share an edge (the ``b`` of one entry is the ``a``
        of the next). Interior patches form a cycle; boundary patches are
        listed from one boundary edge to the other.
        """
        items = []
        for K in self.vertex_triangles[z]:
            i = self.local_index(K, z)
            tri = self.triangles[K]
            items.append((K, int(tri[(i + 1) % 3]), int(tri[(i + 2) % 3])))
        if not items:
            return []
        by_a = {a: (K, a, b) for K, a, b in items}
        bs = {b for _, _, b in items}
        starts = [it for it in items if it[1] not in bs]
        if len(starts) > 1:
            raise NonConforming(f"patch of vertex {z} is not connected through edges")
        current = starts[0] if starts else min(items)
        ordered = [current]
        while len(ordered) < len(items):
            nxt = by_a.get(current[2])
            if nxt is None or nxt in ordered:
                raise NonConforming(f"patch of vertex {z} is not connected through edges")
            ordered.append(nxt)
            current = nxt
        return ordered

    def patch_angles(self, z: int) -> np.ndarray:
        return np.array([self.angles[K, self.local_index(K, z)] for K, _, _ in self.vertex_patch(z)])

    def to_text(self) -> str:
        lines = [f"v {float(x)!r} {float(y)!r}" for x, y in self.vertices]
        lines += [f"t {a} {b} {c}" for a, b, c in self.triangles]
        return "\n".join(lines) + "\n"

    def __repr__(self) -> str:
        return f"Triangulation(n_vertices={self.n_vertices}, n_triangles={self.n_triangles})"


# ---------------------------------------------------------------------------
# Validation and I/O
# ---------------------------------------------------------------------------


def validate(vertices, triangles, fix_orientation: bool = False) -> Triangulation:
    """Check raw mesh data and build a :class:`Triangulation`.

    Raises :class:`BadOrientation` for clockwise triangles unless
    ``fix_orientation`` is set, :class:`DegenerateTriangle` for near-zero
    areas and :class:`NonConforming` for hanging nodes or overlaps.
    """
    verts = np.asarray(vertices, dtype=float).reshape(-1, 2)
    tris = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    if tris.shape[0] == 0:
        raise ValidationError("mesh has no triangles")
    if tris.min() < 0 or tris.max() >= verts.shape[0]:
        raise ValidationError("triangle vertex index out of range")
    if np.any(tris[:, 0] == tris[:, 1]) or np.any(tris[:, 1] == tris[:, 2]) or np.any(tris[:, 0] == tris[:, 2]):
        raise DegenerateTriangle("triangle with repeated vertex")
    p = verts[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    h = np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1)
    degenerate = np.flatnonzero(np.abs(area) <= 1e-12 * h**2)
    if degenerate.size:
        raise DegenerateTriangle(f"triangle {int(degenerate[0])} has area {area[degenerate[0]]:.3e}")
    clockwise = np.flatnonzero(area < 0)
    if clockwise.size:
        if not fix_orientation:
            raise BadOrientation(f"triangle {int(clockwise[0])} is clockwise")
        tris = tris.copy()
        tris[clockwise] = tris[clockwise][:, [0, 2, 1]]
    mesh = Triangulation(verts, tris)
    _check_conforming(mesh)
    return mesh


def _check_conforming(mesh: Triangulation) -> None:
    for e, tris in enumerate(mesh.edge_triangles):
        if len(tris) > 2:
            raise NonConforming(f"edge {tuple(mesh.edges[e])} is shared by {len(tris)} triangles")
        if len(tris) == 2:
            a, b = mesh.edges[e]
            side = []
            for K in tris:
                c = [int(v) for v in mesh.triangles[K] if v not in (a, b)][0]
                side.append(_orient(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]))
            if side[0] * side[1] >= 0:
                raise NonConforming(f"triangles {tris} overlap across edge {(int(a), int(b))}")
    # no vertex inside or on the boundary of a triangle it does not belong to
    used = np.unique(mesh.triangles)
    pts = mesh.vertices[used]
    for K, tri in enumerate(mesh.triangles):
        a, b, c = mesh.vertices[tri]
        scale = mesh.diameters[K]
        det = 2.0 * mesh.signed_areas[K]
        l1 = ((b[0] - pts[:, 0]) * (c[1] - pts[:, 1]) - (b[1] - pts[:, 1]) * (c[0] - pts[:, 0])) / det
        l2 = ((c[0] - pts[:, 0]) * (a[1] - pts[:, 1]) - (c[1] - pts[:, 1]) * (a[0] - pts[:, 0])) / det
        l3 = 1.0 - l1 - l2
        inside = (l1 >= -_GEOM_TOL * scale) & (l2 >= -_GEOM_TOL * scale) & (l3 >= -_GEOM_TOL * scale)
        inside &= ~np.isin(used, tri)
        if np.any(inside):
            z = int(used[np.flatnonzero(inside)[0]])
            raise NonConforming(f"vertex {z} lies on or inside triangle {K} (hanging node or overlap)")
    _check_edge_crossings(mesh)


def _orient(a, b, c) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _check_edge_crossings(mesh: Triangulation, chunk: int = 512) -> None:
    p = mesh.vertices[mesh.edges[:, 0]]
    q = mesh.vertices[mesh.edges[:, 1]]
    ne = mesh.n_edges
    for start in range(0, ne, chunk):
        sl = slice(start, min(start + chunk, ne))
        a, b = p[sl, None, :], q[sl, None, :]
        c, d = p[None, :, :], q[None, :, :]

        def orient(u, v, w):
            return (v[..., 0] - u[..., 0]) * (w[..., 1] - u[..., 1]) - (v[..., 1] - u[..., 1]) * (w[..., 0] - u[..., 0])

        o1, o2 = orient(a, b, c), orient(a, b, d)
        o3, o4 = orient(c, d, a), orient(c, d, b)
        shared = (
            (mesh.edges[sl, None, 0] == mesh.edges[None, :, 0])
            | (mesh.edges[sl, None, 0] == mesh.edges[None, :, 1])
            | (mesh.edges[sl, None, 1] == mesh.edges[None, :, 0])
            | (mesh.edges[sl, None, 1] == mesh.edges[None, :, 1])
        )
        proper = (o1 * o2 < 0) & (o3 * o4 < 0) & ~shared
        if np.any(proper):
            i, j = np.argwhere(proper)[0]
            raise NonConforming(f"edges {tuple(mesh.edges[start + i])} and {tuple(mesh.edges[j])} cross")


def parse_mesh_text(text: str, fix_orientation: bool = False) -> Triangulation:
    """Parse ``v x y`` / ``t i j k`` lines (0-based, ``#`` comments)."""
    verts: list[tuple[float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "v" and len(parts) == 3:
                verts.append((float(parts[1]), float(parts[2])))
                continue
            if parts[0] == "t" and len(parts) == 4:
                tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
                continue
        except ValueError as exc:
            raise MeshParseError(f"line {lineno}: {exc}: {raw.strip()!r}") from exc
        raise MeshParseError(f"line {lineno}: expected 'v x y' or 't i j k', got {raw.strip()!r}")
    return validate(verts, tris, fix_orientation=fix_orientation)


def read_mesh(path, fix_orientation: bool = False) -> Triangulation:
    with open(path, encoding="utf-8") as fh:
        return parse_mesh_text(fh.read(), fix_orientation=fix_orientation)


# ---------------------------------------------------------------------------
# Shape measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapeReport:
    gamma: float
    phi: float
    h_max: float
    alpha_omega: float


def boundary_angle(mesh: Triangulation, z: int) -> float:
    """Interior angle of the domain at vertex ``z`` (sum of triangle angles)."""
    return float(sum(mesh.angles[K, mesh.local_index(K, z)] for K in mesh.vertex_triangles[z]))


def shape_report(mesh: Triangulation) -> ShapeReport:
    """Shape regularity, minimal angle, mesh width and minimal boundary angle."""
    perimeter = mesh.edge_lengths[mesh.tri_edges].sum(axis=1)
    inball = 4.0 * mesh.areas / perimeter
    gamma = float(np.max(mesh.diameters / inball))
    boundary = np.flatnonzero(mesh.boundary_vertex_mask)
    alpha = min(boundary_angle(mesh, int(z)) for z in boundary)
    return ShapeReport(gamma, float(mesh.angles.min()), float(mesh.diameters.max()), float(alpha))


def eta0(phi: float) -> float:
    """Admissible upper bound for the criticality threshold given the minimal angle."""
    if not 0 < phi < math.pi / 3 + 1e-9:
        raise ValidationError(f"minimal angle must lie in (0, pi/3], got {phi}")
    if phi <= math.pi / 8:
        c1 = min(math.sin(2 * phi), abs(math.sin(2 * math.pi - 4 * phi)))
    elif phi <= math.pi / 4:
        c1 = math.sin(2 * phi)
    else:
        c1 = 1.0
    return min(0.5, c1, 3 * phi / math.pi, math.sin(phi))


# ---------------------------------------------------------------------------
# Criticality
# ---------------------------------------------------------------------------


def theta(mesh: Triangulation, z: int) -> float:
    """Largest |sin| of the sum of two consecutive patch angles at ``z``.

    Cyclic for interior vertices, along the chain for boundary vertices and
    zero for a boundary vertex in a single triangle.
    """
    omega = mesh.patch_angles(z)
    m = omega.size
    if m == 0:
        return 0.0
    if mesh.boundary_vertex_mask[z]:
        if m == 1:
            return 0.0
        sums = omega[:-1] + omega[1:]
    else:
        sums = omega + np.roll(omega, -1)
    return float(np.max(np.abs(np.sin(sums))))


CLASSES = ("inner", "acute", "flat", "concave")


@dataclass
class Fan:
    """Nearly critical vertices sharing one apex.

    ``members`` are ordered counterclockwise around ``apex``; ``triangles``
    lists the ``len(members) + 1`` consecutive apex-patch triangles, where
    triangle ``j`` has corners ``(apex, members[j-1], members[j])`` for the
    inner ones.
    """

    apex: int
    members: list[int]
    edges: list[int]
    normals: list[tuple[float, float]]
    triangles: list[int]

    def support(self, mesh: Triangulation) -> set[int]:
        out: set[int] = set()
        for e in self.edges:
            out.update(mesh.edge_triangles[e])
        return out

    def to_dict(self) -> dict:
        return {
            "apex": self.apex,
            "members": list(self.members),
            "edges": [int(e) for e in self.edges],
            "normals": [list(map(float, n)) for n in self.normals],
            "triangles": list(self.triangles),
        }


@dataclass
class FanDecomposition:
    fans: list[Fan] = field(default_factory=list)
    chosen_edge: dict[int, int] = field(default_factory=dict)
    apex_of: dict[int, int] = field(default_factory=dict)
    normal_of: dict[int, tuple[float, float]] = field(default_factory=dict)

    def fan_of(self, z: int) -> Fan | None:
        for fan in self.fans:
            if z in fan.members:
                return fan
        return None


@dataclass
class TopologyReport:
    theta: dict[int, float]
    eta: float
    critical_sets: dict[str, list[int]]
    theta_min: float
    fans: FanDecomposition | None = None
    extension_L: int | None = None

    @property
    def critical(self) -> list[int]:
        return sorted(z for zs in self.critical_sets.values() for z in zs)

    @property
    def obtuse(self) -> list[int]:
        return sorted(self.critical_sets["inner"] + self.critical_sets["flat"] + self.critical_sets["concave"])

    def class_of(self, z: int) -> str | None:
        for name, zs in self.critical_sets.items():
            if z in zs:
                return name
        return None

    def to_json(self) -> str:
        data = {
            "theta": {str(z): t for z, t in sorted(self.theta.items())},
            "eta": self.eta,
            "classes": {k: list(v) for k, v in self.critical_sets.items()},
            "theta_min": self.theta_min,
            "fans": [f.to_dict() for f in self.fans.fans] if self.fans is not None else None,
            "extension_L": self.extension_L,
        }
        return json.dumps(data, indent=2, sort_keys=True)


def classify_critical(mesh: Triangulation, eta: float = DEFAULT_ETA, check_eta: bool = True) -> TopologyReport:
    """Assign every vertex with theta <= eta to one of the four categories.

    Raises :class:`EtaTooLarge` when ``eta`` is not below the admissible
    bound (unless ``check_eta`` is false) and :class:`UnclassifiableCritical`
    when a nearly critical vertex fits no category.
    """
    if eta < 0:
        raise ValidationError(f"eta must be non-negative, got {eta}")
    if check_eta:
        bound = eta0(min(float(mesh.angles.min()), math.pi / 3))
        if eta >= bound:
            raise EtaTooLarge(f"eta={eta} is not below the admissible bound {bound:.6g}")
    thetas = {z: theta(mesh, z) for z in range(mesh.n_vertices) if mesh.vertex_triangles[z]}
    sets: dict[str, list[int]] = {name: [] for name in CLASSES}
    non_critical = []
    for z, t in thetas.items():
        if t > eta + THETA_TOL:
            non_critical.append(t)
            continue
        n_edges = len(mesh.vertex_edges[z])
        if not mesh.boundary_vertex_mask[z]:
            if len(mesh.vertex_triangles[z]) != 4:
                raise UnclassifiableCritical(f"interior vertex {z} with theta={t:.3e} has {len(mesh.vertex_triangles[z])} triangles")
            sets["inner"].append(z)
        elif n_edges in (2, 3, 4):
            sets[{2: "acute", 3: "flat", 4: "concave"}[n_edges]].append(z)
        else:
            raise UnclassifiableCritical(f"boundary vertex {z} with theta={t:.3e} has {n_edges} edges")
    theta_min = min(non_critical) if non_critical else float("nan")
    return TopologyReport(thetas, float(eta), sets, float(theta_min))


def collinear_line_count(mesh: Triangulation, z: int, tol: float = 1e-9) -> int:
    """Number of distinct straight lines through ``z`` carrying its edges."""
    dirs = []
    for e in mesh.vertex_edges[z]:
        a, b = mesh.edges[e]
        other = b if a == z else a
        d = mesh.vertices[other] - mesh.vertices[z]
        dirs.append(d / np.hypot(*d))
    lines: list[np.ndarray] = []
    for d in dirs:
        if not any(abs(d[0] * l[1] - d[1] * l[0]) <= tol for l in lines):
            lines.append(d)
    return len(lines)


def choose_fan_edge(mesh: Triangulation, z: int, thetas: dict[int, float]) -> int:
    """Interior edge at ``z`` whose far endpoint has the largest theta.

    Ties are broken by the lowest far-endpoint index.
    """
    best = None
    for e in mesh.vertex_edges[z]:
        if not mesh.is_interior_edge(e):
            continue
        a, b = mesh.edges[e]
        other = int(b if a == z else a)
        key = (-thetas[other], other)
        if best is None or key < best[0]:
            best = (key, e)
    if best is None:
        raise UnclassifiableCritical(f"critical vertex {z} has no interior edge")
    return best[1]


def fan_decomposition(mesh: Triangulation, report: TopologyReport) -> FanDecomposition:
    """Group the obtuse nearly critical vertices into fans around their apex."""
    critical = set(report.critical)
    dec = FanDecomposition()
    by_apex: dict[int, list[int]] = {}
    for z in report.obtuse:
        e = choose_fan_edge(mesh, z, report.theta)
        a, b = (int(v) for v in mesh.edges[e])
        apex = b if a == z else a
        if apex in critical:
            raise ApexCritical(f"far endpoint {apex} of the edge chosen at {z} is nearly critical")
        d = mesh.vertices[apex] - mesh.vertices[z]
        d = d / np.hypot(*d)
        dec.chosen_edge[z] = e
        dec.apex_of[z] = apex
        dec.normal_of[z] = (float(-d[1]), float(d[0]))
        by_apex.setdefault(apex, []).append(z)
    if len(set(dec.chosen_edge.values())) != len(dec.chosen_edge):
        raise ApexCritical("chosen fan edges are not distinct")
    for apex in sorted(by_apex):
        members = set(by_apex[apex])
        patch = mesh.vertex_patch(apex)
        pos_b = {b: j for j, (_, _, b) in enumerate(patch)}
        pos_a = {a: j for j, (_, a, _) in enumerate(patch)}
        cyclic = not mesh.boundary_vertex_mask[apex]
        remaining = set(members)
        while remaining:
            # start a run at a member whose clockwise neighbour is not a member
            starts = []
            for z in remaining:
                K, a, _ = patch[pos_b[z]]
                if a not in remaining:
                    starts.append((pos_b[z], z))
            if not starts:
                raise ApexCritical(f"all neighbours of apex {apex} are nearly critical")
            _, z = min(starts)
            run = [z]
            remaining.discard(z)
            while True:
                j = pos_a.get(run[-1])
                if j is None:
                    break
                nxt = patch[j][2]
                if nxt in remaining:
                    run.append(nxt)
                    remaining.discard(nxt)
                else:
                    break
            tris = [patch[pos_b[run[0]]][0]] + [patch[pos_a[z]][0] for z in run]
            if not cyclic and None in tris:
                raise ApexCritical(f"fan at apex {apex} leaves the patch")
            dec.fans.append(
                Fan(
                    apex=apex,
                    members=run,
                    edges=[dec.chosen_edge[z] for z in run],
                    normals=[dec.normal_of[z] for z in run],
                    triangles=tris,
                )
            )
    _check_fan_supports(mesh, dec)
    report.fans = dec
    return dec


def _check_fan_supports(mesh: Triangulation, dec: FanDecomposition) -> None:
    seen: dict[int, int] = {}
    for ell, fan in enumerate(dec.fans):
        for K in fan.support(mesh):
            if K in seen and seen[K] != ell:
                raise ApexCritical(f"fans {seen[K]} and {ell} share triangle {K}")
            seen[K] = ell


def fan_supports_disjoint(mesh: Triangulation, dec: FanDecomposition) -> bool:
    supports = [fan.support(mesh) for fan in dec.fans]
    return all(not (supports[i] & supports[j]) for i in range(len(supports)) for j in range(i))


# ---------------------------------------------------------------------------
# Extension sequence
# ---------------------------------------------------------------------------


def _has_acute(mesh: Triangulation, subset: set[int]) -> bool:
    count: dict[int, int] = {}
    for K in subset:
        for z in mesh.triangles[K]:
            count[int(z)] = count.get(int(z), 0) + 1
    return any(c == 1 for c in count.values())


def _edge_neighbours(mesh: Triangulation, K: int) -> list[int]:
    out = []
    for e in mesh.tri_edges[K]:
        other = mesh.other_triangle(int(e), K)
        if other is not None:
            out.append(other)
    return out


def initial_subset(mesh: Triangulation) -> set[int]:
    """Largest acute-free subset grown from the lowest interior vertex.

    Starts from the edge-connected component of the union of all interior
    vertex patches that contains the patch of the lowest-index interior
    vertex, then adds single edge-adjacent triangles (lowest index first)
    as long as no triangle corner ends up in exactly one triangle.
    """
    if not mesh.interior_vertices:
        raise NoInnerVertex("mesh has no interior vertex")
    union = {K for z in mesh.interior_vertices for K in mesh.vertex_triangles[z]}
    z0 = mesh.interior_vertices[0]
    comp = set(mesh.vertex_triangles[z0])
    stack = list(comp)
    while stack:
        K = stack.pop()
        for L in _edge_neighbours(mesh, K):
            if L in union and L not in comp:
                comp.add(L)
                stack.append(L)
    changed = True
    while changed:
        changed = False
        for K in range(mesh.n_triangles):
            if K in comp or not any(L in comp for L in _edge_neighbours(mesh, K)):
                continue
            if not _has_acute(mesh, comp | {K}):
                comp.add(K)
                changed = True
    return comp


def extension_sequence(mesh: Triangulation) -> tuple[int, list[set[int]]]:
    """Nested subsets, each adding every triangle edge-adjacent to the previous one.

    Returns ``(L, subsets)`` where ``subsets[0]`` is the initial acute-free
    subset and ``L = len(subsets) - 1`` counts the attachment steps.
    """
    current = initial_subset(mesh)
    seq = [set(current)]
    while len(current) < mesh.n_triangles:
        added = {L for K in current for L in _edge_neighbours(mesh, K) if L not in current}
        if not added:
            raise NotExhaustive("triangles are not connected through edges")
        current = current | added
        seq.append(set(current))
    return len(seq) - 1, seq


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def crisscross(n: int) -> Triangulation:
    """Unit square with ``n x n`` cells, each cut by both diagonals."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    grid = [(i / n, j / n) for j in range(n + 1) for i in range(n + 1)]
    centers = [((i + 0.5) / n, (j + 0.5) / n) for j in range(n) for i in range(n)]
    verts = grid + centers
    tris = []
    g = lambda i, j: j * (n + 1) + i  # noqa: E731
    for j in range(n):
        for i in range(n):
            c = len(grid) + j * n + i
            a, b, d, e = g(i, j), g(i + 1, j), g(i + 1, j + 1), g(i, j + 1)
            tris += [(a, b, c), (b, d, c), (d, e, c), (e, a, c)]
    return validate(verts, tris)


def diagonal_square(n: int) -> Triangulation:
    """Unit square with ``n x n`` cells, each cut by its rising diagonal."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    verts = [(i / n, j / n) for j in range(n + 1) for i in range(n + 1)]
    g = lambda i, j: j * (n + 1) + i  # noqa: E731
    tris = []
    for j in range(n):
        for i in range(n):
            tris += [(g(i, j), g(i + 1, j), g(i + 1, j + 1)), (g(i, j), g(i + 1, j + 1), g(i, j + 1))]
    return validate(verts, tris)


def fan_patch(angles) -> Triangulation:
    """Nodal patch around the origin (vertex 0) with the given opening angles.

    The rays have unit length. If the angles add up to a full turn the patch
    is closed and the origin is an interior vertex.
    """
    angles = [float(a) for a in angles]
    total = sum(angles)
    if not angles or any(a <= 0 or a >= math.pi for a in angles) or total > 2 * math.pi + 1e-12:
        raise InvalidAngles(f"angles must lie in (0, pi) and sum to at most 2 pi, got {angles}")
    closed = abs(total - 2 * math.pi) <= 1e-12
    n_rays = len(angles) if closed else len(angles) + 1
    cum = np.concatenate([[0.0], np.cumsum(angles)])[:n_rays]
    verts = [(0.0, 0.0)] + [(math.cos(t), math.sin(t)) for t in cum]
    tris = [(0, 1 + j, 1 + (j + 1) % n_rays) for j in range(len(angles))]
    return validate(verts, tris)


def perturb(mesh: Triangulation, vertex: int, displacement) -> Triangulation:
    """Copy of ``mesh`` with one vertex moved by ``displacement``."""
    verts = mesh.vertices.copy()
    verts[vertex] += np.asarray(displacement, dtype=float)
    return validate(verts, mesh.triangles)


def glued_crisscross() -> Triangulation:
    """Criss-cross unit square with one extra triangle below the bottom edge.

    The far corner of the extra triangle is an acute boundary corner, so the
    extension sequence needs one attachment step.
    """
    base = crisscross(1)
    verts = np.vstack([base.vertices, [[0.5, -0.5]]])
    new = verts.shape[0] - 1
    tris = np.vstack([base.triangles, [[0, new, 1]]])
    return validate(verts, tris)


def flat_fan_mesh(offset: float = 1e-4) -> Triangulation:
    """Strip with two nearly flat boundary vertices sharing one apex.

    Boundary points (0,0), (1,0), (2,0), (3,0) are joined to the apex
    (1.5, 1); the two middle points are lifted by ``offset`` so that they are
    nearly but not exactly critical.
    """
    verts = [(0.0, 0.0), (1.0, offset), (2.0, -offset), (3.0, 0.0), (1.5, 1.0)]
    tris = [(0, 1, 4), (1, 2, 4), (2, 3, 4)]
    return validate(verts, tris)


def parse_generator(spec: str) -> Triangulation:
    """Build a mesh from a ``name:params`` string such as ``crisscross:4``."""
    name, _, params = spec.partition(":")
    args = [p for p in params.split(",") if p] if params else []
    try:
        if name == "crisscross":
            return crisscross(int(args[0]) if args else 1)
        if name == "diagonal":
            return diagonal_square(int(args[0]) if args else 1)
        if name == "fan":
            return fan_patch([float(a) for a in args])
        if name == "triangle":
            return validate([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])
        if name == "glued":
            return glued_crisscross()
        if name == "flatfan":
            return flat_fan_mesh(float(args[0]) if args else 1e-4)
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"bad generator parameters in {spec!r}: {exc}") from exc
    raise ValidationError(f"unknown generator {name!r}")
