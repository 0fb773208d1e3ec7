"""Conforming triangular meshes in the (r,z) half-plane.

A mesh stores counterclockwise triangles, the edge skeleton with a global
normal convention, and the bookkeeping needed for newest-vertex bisection.
Meshes are immutable after construction; refinement returns a new mesh that
remembers its parent elements so solutions can be transferred.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np


class MeshError(Exception):
    pass


class MshParseError(MeshError):
    pass


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed parametrization s in [0, 2*pi] -> (r, z)."""

    kind: str
    parametrization: Callable[[np.ndarray], np.ndarray]

    def points(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        p = np.asarray(self.parametrization(s), dtype=float)
        if p.shape != s.shape + (2,):
            p = p.reshape(s.shape + (2,))
        return p

    def validate(self) -> None:
        a = self.points(np.array(0.0))
        b = self.points(np.array(2.0 * np.pi))
        if not np.allclose(a, b, rtol=0.0, atol=1e-14):
            raise MeshError(f"boundary curve '{self.kind}' is not closed")


def rectangle_curve(r0: float, r1: float, z0: float, z1: float) -> BoundaryCurve:
    corners = np.array([[r0, z0], [r1, z0], [r1, z1], [r0, z1], [r0, z0]])

    def param(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = (s / (2.0 * np.pi)) * 4.0
        seg = np.clip(t.astype(int), 0, 3)
        loc = t - seg
        p = corners[seg] + loc[:, None] * (corners[seg + 1] - corners[seg])
        return p

    return BoundaryCurve("rectangle", param)


def d_shape_curve(eps: float = 0.32, delta: float = 0.33, kappa: float = 1.7) -> BoundaryCurve:
    def param(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        r = 1.0 + eps * np.cos(s + np.arcsin(delta * np.sin(s)))
        z = eps * kappa * np.sin(s)
        return np.column_stack([r, z])

    return BoundaryCurve("d-shape", param)


def polygon_curve(points: np.ndarray) -> BoundaryCurve:
    pts = np.asarray(points, dtype=float)
    closed = np.vstack([pts, pts[:1]])
    n = len(pts)

    def param(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = (s / (2.0 * np.pi)) * n
        seg = np.clip(t.astype(int), 0, n - 1)
        loc = t - seg
        return closed[seg] + loc[:, None] * (closed[seg + 1] - closed[seg])

    return BoundaryCurve("polygon", param)


def star_curve(kind: str, fn: Callable) -> BoundaryCurve:
    """Wrap an arbitrary closed parametrization (used for Solov'ev level sets)."""
    return BoundaryCurve(kind, fn)


class Mesh:
    """Conforming triangulation with skeleton, boundary flags and NVB state."""

    def __init__(
        self,
        vertices: np.ndarray,
        triangles: np.ndarray,
        refinement_edge: np.ndarray | None = None,
        generation: np.ndarray | None = None,
        parent_elements: np.ndarray | None = None,
        boundary_lines: Iterable[tuple[int, int]] | None = None,
    ):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=int)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be (V, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (T, 3)")
        if np.any(self.triangles < 0) or np.any(self.triangles >= len(self.vertices)):
            raise MeshError("triangle references a vertex out of range")
        if np.any(self.vertices[:, 0] <= 0.0):
            raise MeshError("all vertices must satisfy r > 0")

        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        self.areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(self.areas <= 0.0):
            bad = int(np.argmin(self.areas))
            raise MeshError(f"triangle {bad} has non-positive signed area {self.areas[bad]:.3e}")

        self._build_skeleton()

        if boundary_lines is not None:
            declared = {tuple(sorted(e)) for e in boundary_lines}
            present = {tuple(e) for e in self.edges[self.boundary_edge_flags]}
            missing = declared - {tuple(e) for e in self.edges}
            if missing:
                raise MeshError(f"boundary line {sorted(missing)[0]} is not a mesh edge")
            extra = declared - present
            if extra:
                raise MeshError(f"declared boundary edge {sorted(extra)[0]} is interior")

        n_v, n_e, n_t = len(self.vertices), len(self.edges), len(self.triangles)
        if n_v - n_e + n_t != 1:
            raise MeshError(
                f"Euler relation violated: {n_v} - {n_e} + {n_t} = {n_v - n_e + n_t} != 1"
            )

        if refinement_edge is None:
            refinement_edge = self._longest_edge_seed()
        self.refinement_edge = np.ascontiguousarray(refinement_edge, dtype=int)
        if generation is None:
            generation = np.zeros(n_t, dtype=int)
        self.generation = np.ascontiguousarray(generation, dtype=int)
        self.parent_elements = (
            None if parent_elements is None else np.ascontiguousarray(parent_elements, dtype=int)
        )
        self._geometry = None

    # -- skeleton -------------------------------------------------------

    def _build_skeleton(self):
        t = self.triangles
        edge_map: dict[tuple[int, int], int] = {}
        edge_list: list[tuple[int, int]] = []
        edge_tris: list[list[int]] = []
        tri_edges = np.empty((len(t), 3), dtype=int)
        for ti in range(len(t)):
            for le in range(3):
                a, b = t[ti, (le + 1) % 3], t[ti, (le + 2) % 3]
                key = (a, b) if a < b else (b, a)
                ei = edge_map.get(key)
                if ei is None:
                    ei = len(edge_list)
                    edge_map[key] = ei
                    edge_list.append(key)
                    edge_tris.append([])
                if len(edge_tris[ei]) >= 2:
                    raise MeshError(f"edge {key} adjacent to more than 2 triangles")
                edge_tris[ei].append(ti)
                tri_edges[ti, le] = ei
        self.edges = np.array(edge_list, dtype=int)
        self.edge_tris = np.array(
            [[et[0], et[1] if len(et) == 2 else -1] for et in edge_tris], dtype=int
        )
        self.boundary_edge_flags = self.edge_tris[:, 1] < 0
        self.tri_edges = tri_edges
        # orientation sign: +1 for the smaller-index adjacent triangle
        self.tri_edge_sign = np.where(
            self.edge_tris[:, 0][self.tri_edges] == np.arange(len(t))[:, None], 1, -1
        )
        # global normal = outward normal of the first adjacent triangle
        v = self.vertices
        tang = v[self.edges[:, 1]] - v[self.edges[:, 0]]
        self.edge_lengths = np.hypot(tang[:, 0], tang[:, 1])
        normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / self.edge_lengths[:, None]
        # fix sign so it is outward for edge_tris[:, 0]
        centroids = v[t].mean(axis=1)
        mid = 0.5 * (v[self.edges[:, 0]] + v[self.edges[:, 1]])
        out = mid - centroids[self.edge_tris[:, 0]]
        flip = np.sum(normal * out, axis=1) < 0
        normal[flip] *= -1.0
        self.edge_normals = normal

    def _longest_edge_seed(self) -> np.ndarray:
        # refinement edge = longest local edge (local edge i is opposite vertex i)
        lengths = self.edge_lengths[self.tri_edges]
        return np.argmax(lengths, axis=1)

    # -- geometry -------------------------------------------------------

    @property
    def geometry(self):
        """Affine maps per triangle: jac (T,2,2), inv_jac_T (T,2,2), det (T,)."""
        if self._geometry is None:
            v = self.vertices
            t = self.triangles
            jac = np.stack([v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]], axis=-1)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            inv = np.empty_like(jac)
            inv[:, 0, 0] = jac[:, 1, 1]
            inv[:, 1, 1] = jac[:, 0, 0]
            inv[:, 0, 1] = -jac[:, 0, 1]
            inv[:, 1, 0] = -jac[:, 1, 0]
            inv /= det[:, None, None]
            inv_T = np.swapaxes(inv, 1, 2)
            self._geometry = (jac, inv_T, det)
        return self._geometry

    def map_to_physical(self, tri: int, ref_points: np.ndarray) -> np.ndarray:
        jac, _, _ = self.geometry
        p0 = self.vertices[self.triangles[tri, 0]]
        return p0 + np.asarray(ref_points) @ jac[tri].T

    def map_to_reference(self, tri: int, phys_points: np.ndarray) -> np.ndarray:
        jac, _, _ = self.geometry
        p0 = self.vertices[self.triangles[tri, 0]]
        return np.linalg.solve(jac[tri], (np.asarray(phys_points) - p0).T).T

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def total_area(self) -> float:
        return float(self.areas.sum())


def extract_skeleton(mesh: Mesh):
    """Edge table with global normals and per-triangle orientation signs."""
    return mesh.edges, mesh.edge_normals, mesh.boundary_edge_flags, mesh.tri_edge_sign


# -- MSH reader ---------------------------------------------------------


def read_msh(text: str | bytes) -> Mesh:
    """Parse a Gmsh MSH ASCII v2.2 stream into a Mesh.

    Only 2-node lines (boundary markers) and 3-node triangles are used; the
    third node coordinate is ignored.  Errors carry the offending 1-based
    line number.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            ln = lines[pos].strip()
            pos += 1
            if ln:
                return ln, pos
        return None, pos

    ln, no = next_line()
    if ln != "$MeshFormat":
        raise MshParseError(f"line {no}: expected $MeshFormat, got {ln!r}")
    ln, no = next_line()
    parts = (ln or "").split()
    if not parts or not parts[0].startswith("2.2"):
        raise MshParseError(f"line {no}: unsupported MSH version {parts[0] if parts else '?'}"
                            " (only ASCII 2.2 is supported)")
    if len(parts) >= 2 and parts[1] != "0":
        raise MshParseError(f"line {no}: binary MSH files are not supported")
    ln, no = next_line()
    if ln != "$EndMeshFormat":
        raise MshParseError(f"line {no}: expected $EndMeshFormat")

    node_ids: dict[int, int] = {}
    coords: list[tuple[float, float]] = []
    tris: list[tuple[int, int, int]] = []
    tri_lines: list[int] = []
    blines: list[tuple[int, int]] = []

    while True:
        ln, no = next_line()
        if ln is None:
            break
        if ln == "$Nodes":
            ln, no = next_line()
            try:
                n_nodes = int(ln)
            except (TypeError, ValueError):
                raise MshParseError(f"line {no}: malformed node count {ln!r}")
            for _ in range(n_nodes):
                ln, no = next_line()
                parts = (ln or "").split()
                if len(parts) < 3:
                    raise MshParseError(f"line {no}: malformed node line {ln!r}")
                try:
                    nid = int(parts[0])
                    r, z = float(parts[1]), float(parts[2])
                except ValueError:
                    raise MshParseError(f"line {no}: malformed node line {ln!r}")
                if r <= 0.0:
                    raise MshParseError(f"line {no}: node {nid} has r = {r} <= 0")
                node_ids[nid] = len(coords)
                coords.append((r, z))
            ln, no = next_line()
            if ln != "$EndNodes":
                raise MshParseError(f"line {no}: expected $EndNodes")
        elif ln == "$Elements":
            ln, no = next_line()
            try:
                n_elems = int(ln)
            except (TypeError, ValueError):
                raise MshParseError(f"line {no}: malformed element count {ln!r}")
            for _ in range(n_elems):
                ln, no = next_line()
                parts = (ln or "").split()
                if len(parts) < 3:
                    raise MshParseError(f"line {no}: malformed element line {ln!r}")
                try:
                    etype = int(parts[1])
                    n_tags = int(parts[2])
                    nodes = [int(x) for x in parts[3 + n_tags:]]
                except ValueError:
                    raise MshParseError(f"line {no}: malformed element line {ln!r}")
                if etype == 1:
                    if len(nodes) != 2:
                        raise MshParseError(f"line {no}: line element needs 2 nodes")
                    blines.append(_resolve(nodes, node_ids, no))
                elif etype == 2:
                    if len(nodes) != 3:
                        raise MshParseError(f"line {no}: triangle element needs 3 nodes")
                    tris.append(_resolve(nodes, node_ids, no))
                    tri_lines.append(no)
                # other element types (points, quads, ...) are skipped
            ln, no = next_line()
            if ln != "$EndElements":
                raise MshParseError(f"line {no}: expected $EndElements")
        else:
            # skip unknown section
            if ln.startswith("$") and not ln.startswith("$End"):
                end = "$End" + ln[1:]
                while True:
                    ln2, no2 = next_line()
                    if ln2 is None:
                        raise MshParseError(f"line {no}: unterminated section {ln}")
                    if ln2 == end:
                        break

    if not tris:
        raise MshParseError("no triangles found in file")
    verts = np.array(coords)
    t = np.array(tris, dtype=int)
    d1 = verts[t[:, 1]] - verts[t[:, 0]]
    d2 = verts[t[:, 2]] - verts[t[:, 0]]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    bad = np.nonzero(area2 <= 0.0)[0]
    if len(bad):
        raise MshParseError(
            f"line {tri_lines[bad[0]]}: triangle has zero or negative area"
        )
    return Mesh(verts, t, boundary_lines=blines)


def _resolve(nodes, node_ids, line_no):
    try:
        return tuple(node_ids[n] for n in nodes)
    except KeyError as exc:
        raise MshParseError(f"line {line_no}: element references unknown node {exc.args[0]}")


# -- built-in meshers ---------------------------------------------------


def build_builtin_mesh(curve: BoundaryCurve, resolution: tuple[int, int]) -> Mesh:
    """Mesh the interior of a boundary curve.

    Rectangles get a structured grid with 2*nx*ny triangles whose diagonal
    pattern is mirror-symmetric about the grid midline; star-shaped curves
    get rings of scaled boundary copies triangulated toward the centroid.
    """
    na, nb = resolution
    if na < 1 or nb < 1:
        raise MeshError(f"degenerate resolution {resolution}")
    if curve.kind == "rectangle":
        return _rectangle_mesh(curve, na, nb)
    return _star_mesh(curve, na, nb)


def _rectangle_mesh(curve: BoundaryCurve, nx: int, ny: int) -> Mesh:
    s = np.linspace(0.0, 2.0 * np.pi, 5)[:4]
    corners = curve.points(s)
    r0, z0 = corners.min(axis=0)
    r1, z1 = corners.max(axis=0)
    rs = np.linspace(r0, r1, nx + 1)
    zs = np.linspace(z0, z1, ny + 1)
    vid = lambda i, j: j * (nx + 1) + i
    verts = np.array([[r, z] for z in zs for r in rs])
    tris = []
    for j in range(ny):
        for i in range(nx):
            c00, c10 = vid(i, j), vid(i + 1, j)
            c01, c11 = vid(i, j + 1), vid(i + 1, j + 1)
            if zs[j] + zs[j + 1] <= 2.0 * (z0 + z1) / 2.0 + 1e-15:
                tris.append((c00, c10, c11))
                tris.append((c00, c11, c01))
            else:  # mirrored diagonal keeps the mesh symmetric about the midline
                tris.append((c00, c10, c01))
                tris.append((c10, c11, c01))
    return Mesh(verts, np.array(tris, dtype=int))


def _star_mesh(curve: BoundaryCurve, n_angular: int, n_radial: int) -> Mesh:
    if n_angular < 3:
        raise MeshError("star-shaped mesh needs n_angular >= 3")
    s = np.linspace(0.0, 2.0 * np.pi, n_angular, endpoint=False)
    bd = curve.points(s)
    # enforce counterclockwise ordering
    area2 = np.sum(bd[:, 0] * np.roll(bd[:, 1], -1) - np.roll(bd[:, 0], -1) * bd[:, 1])
    if area2 < 0:
        bd = bd[::-1]
    centroid = _polygon_centroid(bd)
    verts = [bd]
    for j in range(1, n_radial):
        f = 1.0 - j / n_radial
        verts.append(centroid + f * (bd - centroid))
    verts = np.vstack(verts + [centroid[None, :]])
    center = len(verts) - 1
    n = n_angular
    tris = []
    for j in range(n_radial - 1):
        for i in range(n):
            a0 = j * n + i
            a1 = j * n + (i + 1) % n
            b0 = (j + 1) * n + i
            b1 = (j + 1) * n + (i + 1) % n
            tris.append((a0, a1, b1))
            tris.append((a0, b1, b0))
    j = n_radial - 1
    for i in range(n):
        tris.append((j * n + i, j * n + (i + 1) % n, center))
    return Mesh(verts, np.array(tris, dtype=int))


def _polygon_centroid(p: np.ndarray) -> np.ndarray:
    q = np.roll(p, -1, axis=0)
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    a = cross.sum() / 2.0
    c = ((p + q) * cross[:, None]).sum(axis=0) / (6.0 * a)
    return c


# -- refinement ---------------------------------------------------------


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into 4 via edge midpoints."""
    v = mesh.vertices
    e = mesh.edges
    mids = 0.5 * (v[e[:, 0]] + v[e[:, 1]])
    verts = np.vstack([v, mids])
    mid_id = mesh.n_vertices + np.arange(mesh.n_edges)
    tris = []
    parents = []
    for ti in range(mesh.n_triangles):
        v0, v1, v2 = mesh.triangles[ti]
        m0 = mid_id[mesh.tri_edges[ti, 0]]  # midpoint of edge opposite v0
        m1 = mid_id[mesh.tri_edges[ti, 1]]
        m2 = mid_id[mesh.tri_edges[ti, 2]]
        tris.extend([(v0, m2, m1), (v1, m0, m2), (v2, m1, m0), (m0, m1, m2)])
        parents.extend([ti] * 4)
    gen = np.repeat(mesh.generation + 1, 4)
    out = Mesh(verts, np.array(tris, dtype=int), generation=gen,
               parent_elements=np.array(parents, dtype=int))
    return out


def bisect_conforming(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of ``marked`` triangles with recursive closure.

    Every marked triangle is split at least once; the closure keeps the
    result conforming.  The returned mesh's parent_elements maps each child
    to its originating triangle in ``mesh``.
    """
    marked = sorted(set(int(m) for m in marked))
    if any(m < 0 or m >= mesh.n_triangles for m in marked):
        raise MeshError("marked set contains an invalid triangle index")
    if not marked:
        out = Mesh(mesh.vertices.copy(), mesh.triangles.copy(),
                   refinement_edge=mesh.refinement_edge.copy(),
                   generation=mesh.generation.copy(),
                   parent_elements=np.arange(mesh.n_triangles))
        return out

    verts = [tuple(p) for p in mesh.vertices]
    tris = [list(t) for t in mesh.triangles]
    refedge = list(mesh.refinement_edge)
    gen = list(mesh.generation)
    origin = list(range(mesh.n_triangles))
    alive = [True] * mesh.n_triangles
    midpoint: dict[tuple[int, int], int] = {}
    edge_owner: dict[tuple[int, int], set[int]] = {}
    for ti, t in enumerate(tris):
        for le in range(3):
            key = _ekey(t[(le + 1) % 3], t[(le + 2) % 3])
            edge_owner.setdefault(key, set()).add(ti)

    max_depth = 2 * mesh.n_triangles + 100

    def ref_key(ti):
        t = tris[ti]
        le = refedge[ti]
        return _ekey(t[(le + 1) % 3], t[(le + 2) % 3])

    def get_midpoint(key):
        mid = midpoint.get(key)
        if mid is None:
            a, b = key
            mid = len(verts)
            verts.append((0.5 * (verts[a][0] + verts[b][0]), 0.5 * (verts[a][1] + verts[b][1])))
            midpoint[key] = mid
        return mid

    def bisect_one(ti):
        t = tris[ti]
        le = refedge[ti]
        p, a, b = t[le], t[(le + 1) % 3], t[(le + 2) % 3]
        m = get_midpoint(_ekey(a, b))
        for lle in range(3):
            edge_owner[_ekey(t[(lle + 1) % 3], t[(lle + 2) % 3])].discard(ti)
        alive[ti] = False
        for child in ([m, p, a], [m, b, p]):
            ci = len(tris)
            tris.append(child)
            refedge.append(0)  # refinement edge opposite the newest vertex m
            gen.append(gen[ti] + 1)
            origin.append(origin[ti])
            alive.append(True)
            for lle in range(3):
                edge_owner.setdefault(
                    _ekey(child[(lle + 1) % 3], child[(lle + 2) % 3]), set()
                ).add(ci)

    def ensure_bisect(t0):
        stack = [t0]
        while stack:
            if len(stack) > max_depth:
                raise MeshError("bisection closure exceeded depth bound "
                                "(tangled refinement-edge assignment)")
            ti = stack[-1]
            if not alive[ti]:
                stack.pop()
                continue
            key = ref_key(ti)
            others = [o for o in edge_owner.get(key, ()) if o != ti and alive[o]]
            nb = others[0] if others else None
            if nb is not None and ref_key(nb) != key:
                stack.append(nb)
                continue
            bisect_one(ti)
            if nb is not None:
                bisect_one(nb)
            stack.pop()

    for m in marked:
        if alive[m]:
            ensure_bisect(m)

    keep = [i for i, al in enumerate(alive) if al]
    out = Mesh(
        np.array(verts),
        np.array([tris[i] for i in keep], dtype=int),
        refinement_edge=np.array([refedge[i] for i in keep], dtype=int),
        generation=np.array([gen[i] for i in keep], dtype=int),
        parent_elements=np.array([origin[i] for i in keep], dtype=int),
    )
    rel = abs(out.total_area() - mesh.total_area()) / mesh.total_area()
    if rel > 1e-12:
        raise MeshError(f"bisection lost area (relative {rel:.2e})")
    return out


def _ekey(a, b):
    return (a, b) if a < b else (b, a)
