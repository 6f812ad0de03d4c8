"""Hexahedral mesh container with derived edge/face incidence.

Cells use a fixed 8-corner ordering: bottom quad counterclockwise viewed
from outside the cell (corners 0..3), then the top quad with corner k+4
vertically above corner k.  Corner k sits at CORNER_OFFSETS[k] in the
cell's local unit frame; every stencil in the other modules is written
against this frame.
"""

from dataclasses import dataclass, field

import numpy as np

# local coordinates of the 8 corners in the cell's unit frame
CORNER_OFFSETS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)], dtype=np.int64)

# the 12 edges / 6 quad faces of a hexahedron as corner-index tuples
LOCAL_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0),
               (4, 5), (5, 6), (6, 7), (7, 4),
               (0, 4), (1, 5), (2, 6), (3, 7))
LOCAL_FACES = ((0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
               (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7))

# corner with all three coordinate bits flipped (the cell diagonal)
OPPOSITE_CORNER = (6, 7, 4, 5, 2, 3, 0, 1)

_LOCAL_EDGES_ARR = np.array(LOCAL_EDGES)
_LOCAL_FACES_ARR = np.array(LOCAL_FACES)


def _group_by(keys, values, nkeys):
    """Group `values` by integer `keys`; returns a list of nkeys arrays,
    each sorted ascending."""
    order = np.lexsort((values, keys))
    counts = np.bincount(keys, minlength=nkeys)
    return np.split(values[order], np.cumsum(counts)[:-1])


class HexMesh:
    """Immutable hexahedral mesh with derived adjacency.

    Parameters
    ----------
    vertices : (nv, 3) float array
    cells : (nc, 8) int array of vertex indices in the fixed corner order

    Derived on construction: unique edges (sorted vertex pairs), unique
    faces (canonicalized by sorted vertex set, with one oriented corner
    cycle kept per face), incidence maps vertex->edges/faces/cells,
    edge->faces/cells, face->cells, and boundary masks (a face is
    boundary iff it has exactly one incident cell).
    """

    def __init__(self, vertices, cells):
        self.vertices = np.array(vertices, dtype=float)
        self.cells = np.array(cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be an (nv, 3) array")
        if self.cells.ndim != 2 or self.cells.shape[1] != 8:
            raise ValueError("cells must be an (nc, 8) array")
        nv = len(self.vertices)
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= nv):
            raise ValueError("cell vertex index out of range")
        for ci, cell in enumerate(self.cells):
            if len(set(cell.tolist())) != 8:
                raise ValueError("cell %d has duplicate vertex indices" % ci)
        self._build_derived()
        for a in (self.vertices, self.cells, self.edges, self.faces,
                  self.face_cycles, self.cell_edges, self.cell_faces):
            a.setflags(write=False)

    def _build_derived(self):
        nc = len(self.cells)
        nv = len(self.vertices)

        pairs = np.sort(self.cells[:, _LOCAL_EDGES_ARR], axis=2).reshape(-1, 2)
        self.edges, einv = np.unique(pairs, axis=0, return_inverse=True)
        self.cell_edges = einv.reshape(nc, 12)

        quads = self.cells[:, _LOCAL_FACES_ARR]              # oriented cycles
        keys = np.sort(quads, axis=2).reshape(-1, 4)
        self.faces, first, finv = np.unique(
            keys, axis=0, return_index=True, return_inverse=True)
        self.cell_faces = finv.reshape(nc, 6)
        self.face_cycles = quads.reshape(-1, 4)[first].copy()

        ne, nf = len(self.edges), len(self.faces)
        cell_of_edge_slot = np.repeat(np.arange(nc), 12)
        cell_of_face_slot = np.repeat(np.arange(nc), 6)
        self.edge_cells = _group_by(einv, cell_of_edge_slot, ne)
        self.face_cells = _group_by(finv, cell_of_face_slot, nf)

        # a face contributes its 4 cycle edges to edge->face incidence
        fedges = np.stack([self.face_cycles, np.roll(self.face_cycles, -1, axis=1)], axis=2)
        fekeys = np.sort(fedges.reshape(-1, 2), axis=1)
        eid = {tuple(e): i for i, e in enumerate(map(tuple, self.edges.tolist()))}
        feids = np.fromiter((eid[tuple(k)] for k in fekeys.tolist()),
                            dtype=np.int64, count=4 * nf)
        self.face_edges = feids.reshape(nf, 4)
        self.edge_faces = _group_by(feids, np.repeat(np.arange(nf), 4), ne)

        self.vertex_edges = _group_by(self.edges.reshape(-1),
                                      np.repeat(np.arange(ne), 2), nv)
        self.vertex_faces = _group_by(self.faces.reshape(-1),
                                      np.repeat(np.arange(nf), 4), nv)
        self.vertex_cells = _group_by(self.cells.reshape(-1),
                                      np.repeat(np.arange(nc), 8), nv)

        self.boundary_face_mask = np.array(
            [len(cs) == 1 for cs in self.face_cells], dtype=bool)
        self.boundary_edge_mask = np.zeros(ne, dtype=bool)
        self.boundary_vertex_mask = np.zeros(nv, dtype=bool)
        bf = np.flatnonzero(self.boundary_face_mask)
        self.boundary_edge_mask[self.face_edges[bf].reshape(-1)] = True
        self.boundary_vertex_mask[self.faces[bf].reshape(-1)] = True

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def num_faces(self):
        return len(self.faces)

    @property
    def num_cells(self):
        return len(self.cells)

    def edge_index(self, a, b):
        """Edge id of the (a, b) vertex pair, or -1 if absent."""
        key = (min(a, b), max(a, b))
        i = np.searchsorted(self.edges[:, 0], key[0])
        while i < len(self.edges) and self.edges[i, 0] == key[0]:
            if self.edges[i, 1] == key[1]:
                return i
            i += 1
        return -1

    def face_centroid(self, f):
        return self.vertices[self.faces[f]].mean(axis=0)

    def edge_midpoint(self, e):
        return self.vertices[self.edges[e]].mean(axis=0)

    def cell_centroid(self, c):
        return self.vertices[self.cells[c]].mean(axis=0)

    def bbox_diagonal(self):
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


@dataclass
class VertexStar:
    """One-ring adjacency of a vertex: valence n, per-edge degree m_j
    (number of faces incident to that edge), incident face/cell ids."""
    center: int
    edges: np.ndarray
    edge_degrees: np.ndarray
    faces: np.ndarray
    cells: np.ndarray
    interior: bool

    @property
    def n(self):
        return len(self.edges)

    @property
    def n_face(self):
        return len(self.faces)

    @property
    def n_cell(self):
        return len(self.cells)

    @property
    def size(self):
        """Star vector length 1 + n + N_face + N_cell (= 6n-9 when simple)."""
        return 1 + self.n + self.n_face + self.n_cell

    @property
    def simple(self):
        """Interior star whose counts match N_face = 3(n-2), N_cell = 2(n-2)."""
        return (self.interior
                and self.n_face == 3 * (self.n - 2)
                and self.n_cell == 2 * (self.n - 2))


def vertex_star(mesh, v):
    """Build the VertexStar of vertex v."""
    if not 0 <= v < mesh.num_vertices:
        raise ValueError("vertex id %d out of range" % v)
    edges = mesh.vertex_edges[v]
    degrees = np.array([len(mesh.edge_faces[e]) for e in edges], dtype=np.int64)
    return VertexStar(center=int(v),
                      edges=edges,
                      edge_degrees=degrees,
                      faces=mesh.vertex_faces[v],
                      cells=mesh.vertex_cells[v],
                      interior=not mesh.boundary_vertex_mask[v])


@dataclass
class ValidationReport:
    """Findings from validate(); ok iff no findings."""
    findings: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.findings

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(self.findings)


def validate(mesh):
    """Check manifoldness, conformity and interior-vertex star counts.

    Reported findings:
      * non-manifold faces (more than 2 incident cells),
      * non-manifold boundary edges (boundary edges whose boundary-face
        count differs from 2, e.g. two cells glued along a single edge),
      * conformity violations (two cells sharing 3 or more vertices
        without sharing a whole quad face),
      * interior vertices whose face/cell counts break
        N_face = 3(n-2), N_cell = 2(n-2).
    """
    report = ValidationReport()
    for f in range(mesh.num_faces):
        k = len(mesh.face_cells[f])
        if k > 2:
            report.findings.append(
                "non-manifold face %d (vertices %s) with %d incident cells"
                % (f, tuple(mesh.faces[f]), k))

    for e in np.flatnonzero(mesh.boundary_edge_mask):
        nbf = int(mesh.boundary_face_mask[mesh.edge_faces[e]].sum())
        if nbf != 2:
            report.findings.append(
                "non-manifold edge %d (vertices %s) with %d boundary faces"
                % (e, tuple(mesh.edges[e]), nbf))

    seen = set()
    cell_vsets = [set(c.tolist()) for c in mesh.cells]
    cell_fsets = [set(fs.tolist()) for fs in mesh.cell_faces]
    for v in range(mesh.num_vertices):
        cs = mesh.vertex_cells[v]
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                a, b = int(cs[i]), int(cs[j])
                if (a, b) in seen:
                    continue
                seen.add((a, b))
                shared = len(cell_vsets[a] & cell_vsets[b])
                if shared >= 3 and not (cell_fsets[a] & cell_fsets[b]):
                    report.findings.append(
                        "conformity: cells %d and %d share %d vertices but no face"
                        % (a, b, shared))
                elif shared > 4:
                    report.findings.append(
                        "conformity: cells %d and %d share %d vertices"
                        % (a, b, shared))

    for v in range(mesh.num_vertices):
        if mesh.boundary_vertex_mask[v]:
            continue
        star = vertex_star(mesh, v)
        want_f, want_c = 3 * (star.n - 2), 2 * (star.n - 2)
        if star.n_face != want_f or star.n_cell != want_c:
            report.findings.append(
                "star: interior vertex %d has n=%d, N_face=%d (want %d), "
                "N_cell=%d (want %d)"
                % (v, star.n, star.n_face, want_f, star.n_cell, want_c))
    return report


def parse_mesh(text):
    """Parse the ASCII mesh format.

    Line 1: `nv nc`; then nv lines `x y z`; then nc lines of 8 vertex
    indices (0-based, fixed corner order).  `#` starts a comment;
    blank lines are skipped.  Errors carry the offending line number.
    """
    data = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            data.append((lineno, line))
    if not data:
        raise ValueError("empty mesh file")

    lineno, header = data[0]
    parts = header.split()
    if len(parts) != 2:
        raise ValueError("line %d: expected header 'nv nc'" % lineno)
    try:
        nv, nc = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError("line %d: malformed counts %r" % (lineno, header)) from None
    if nv < 0 or nc < 0:
        raise ValueError("line %d: negative counts" % lineno)
    if len(data) - 1 != nv + nc:
        raise ValueError(
            "line %d: header promises %d vertex and %d cell lines, found %d data lines"
            % (lineno, nv, nc, len(data) - 1))

    vertices = np.zeros((nv, 3))
    for i in range(nv):
        lineno, line = data[1 + i]
        parts = line.split()
        if len(parts) != 3:
            raise ValueError("line %d: expected 3 coordinates" % lineno)
        try:
            vertices[i] = [float(p) for p in parts]
        except ValueError:
            raise ValueError("line %d: malformed coordinate" % lineno) from None

    cells = np.zeros((nc, 8), dtype=np.int64)
    for i in range(nc):
        lineno, line = data[1 + nv + i]
        parts = line.split()
        if len(parts) != 8:
            raise ValueError("line %d: expected 8 vertex indices" % lineno)
        try:
            idx = [int(p) for p in parts]
        except ValueError:
            raise ValueError("line %d: malformed vertex index" % lineno) from None
        for p in idx:
            if not 0 <= p < nv:
                raise ValueError("line %d: vertex index %d out of range [0, %d)"
                                 % (lineno, p, nv))
        if len(set(idx)) != 8:
            raise ValueError("line %d: duplicate vertex index within cell" % lineno)
        cells[i] = idx
    return HexMesh(vertices, cells)


def serialize_mesh(mesh):
    """Serialize to the ASCII mesh format with round-trippable floats."""
    out = ["%d %d" % (mesh.num_vertices, mesh.num_cells)]
    for p in mesh.vertices:
        out.append("%.17g %.17g %.17g" % tuple(p))
    for c in mesh.cells:
        out.append(" ".join(str(int(i)) for i in c))
    return "\n".join(out) + "\n"
