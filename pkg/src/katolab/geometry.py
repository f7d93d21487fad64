"""Finite metric-measure Dirichlet spaces built from triangle meshes and graphs."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from ._fmm import fast_marching, vertex_face_csr

logger = logging.getLogger(__name__)

MIN_ANGLE = 1e-4
# closed balls absorb rounding so that rescaled spaces select the same vertices
BALL_SLACK = 1.0 + 1e-12


class GeometryError(ValueError):
    """Raised when a mesh or graph violates the invariants of a space."""


# --------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class MeshSurface:
    """Closed triangle mesh.

    ``period`` (optional, length 3) makes the ambient space a flat torus:
    edge vectors are reduced to their minimal image, which is how flat tori
    are represented without an isometric embedding.
    """

    positions: np.ndarray
    faces: np.ndarray
    period: np.ndarray | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float)
        fac = np.ascontiguousarray(self.faces, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError("positions must be an (N, 3) array")
        if fac.ndim != 2 or fac.shape[1] != 3:
            raise GeometryError("faces must be an (F, 3) array")
        if fac.size and (fac.min() < 0 or fac.max() >= len(pos)):
            raise GeometryError("face index out of range")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "faces", fac)
        if self.period is not None:
            object.__setattr__(self, "period", np.asarray(self.period, dtype=float))

    @property
    def vertex_count(self) -> int:
        return len(self.positions)

    def edge_vector(self, i, j):
        """Vector from vertex ``i`` to vertex ``j`` (minimal image if periodic)."""
        e = self.positions[j] - self.positions[i]
        if self.period is not None:
            per = self.period
            wrap = per > 0
            safe = np.where(wrap, per, 1.0)
            e = e - np.where(wrap, safe * np.round(e / safe), 0.0)
        return e

    def face_edge_vectors(self):
        f = self.faces
        e01 = self.edge_vector(f[:, 0], f[:, 1])
        e02 = self.edge_vector(f[:, 0], f[:, 2])
        e12 = self.edge_vector(f[:, 1], f[:, 2])
        return e01, e02, e12

    def face_areas(self) -> np.ndarray:
        e01, e02, _ = self.face_edge_vectors()
        return 0.5 * np.linalg.norm(np.cross(e01, e02), axis=1)

    def face_normals(self) -> np.ndarray:
        e01, e02, _ = self.face_edge_vectors()
        nrm = np.cross(e01, e02)
        return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

    def corner_angles(self) -> np.ndarray:
        """(F, 3) interior angles, column ``i`` at local vertex ``i``."""
        e01, e02, e12 = self.face_edge_vectors()

        def angle(u, v):
            c = np.einsum("ij,ij->i", u, v)
            s = np.linalg.norm(np.cross(u, v), axis=1)
            return np.arctan2(s, c)

        return np.column_stack([angle(e01, e02), angle(-e01, e12), angle(-e02, -e12)])

    def face_edge_lengths(self) -> np.ndarray:
        """(F, 3) lengths, column ``i`` is the edge opposite local vertex ``i``."""
        e01, e02, e12 = self.face_edge_vectors()
        return np.column_stack(
            [np.linalg.norm(e12, axis=1), np.linalg.norm(e02, axis=1), np.linalg.norm(e01, axis=1)]
        )

    def unique_edges(self) -> np.ndarray:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.vertex_count - len(self.unique_edges()) + len(self.faces)

    def validate(self):
        """Check closed orientable 2-manifold connectivity and triangle quality."""
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        keys, inverse, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
        bad = np.flatnonzero(counts != 2)
        if bad.size:
            edge = tuple(int(v) for v in keys[bad[0]])
            kind = "boundary" if counts[bad[0]] == 1 else "non-manifold"
            raise GeometryError(f"{kind} edge {edge} (used by {counts[bad[0]]} faces)")
        dkeys, dcounts = np.unique(directed, axis=0, return_counts=True)
        if np.any(dcounts > 1):
            edge = tuple(int(v) for v in dkeys[np.argmax(dcounts > 1)])
            raise GeometryError(f"inconsistent orientation at edge {edge}")
        ang = self.corner_angles()
        areas = self.face_areas()
        worst = np.minimum(ang.min(axis=1), np.where(areas > 0, np.inf, 0.0))
        if np.any(worst <= MIN_ANGLE):
            fid = int(np.argmin(worst))
            raise GeometryError(f"degenerate triangle at face {fid} (min angle {worst[fid]:.3g} rad)")


@dataclass(frozen=True)
class PotentialField:
    """Nonnegative per-vertex potential (curvature units, 1/length^2)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise GeometryError("potential must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return len(self.values)


def as_potential(V) -> np.ndarray:
    v = np.asarray(V, dtype=float)
    if np.any(v < 0):
        i = int(np.argmin(v))
        raise GeometryError(f"potential has a negative entry at vertex {i}: {v[i]:.3g}")
    return v


# --------------------------------------------------------------------------
# spaces


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """Finite metric-measure space carrying a Dirichlet form ``E(u) = u.W.u``.

    Distances are produced on demand.  ``metric`` selects how: ``"explicit"``
    (a matrix was supplied), ``"dijkstra"`` (shortest paths over
    ``edge_lengths``) or ``"fmm"`` (fast marching over the mesh faces).
    """

    n: int
    mu: np.ndarray
    stiffness: sparse.csr_matrix
    edges: np.ndarray
    edge_lengths: np.ndarray
    metric: str = "dijkstra"
    explicit_distance: np.ndarray | None = field(default=None, repr=False)
    distance_fn: object = field(default=None, repr=False)
    mesh: MeshSurface | None = field(default=None, repr=False)
    labels: tuple | None = None
    origin: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def vertex_count(self) -> int:
        return len(self.mu)

    @property
    def total_measure(self) -> float:
        return float(self.mu.sum())

    @property
    def mean_edge_length(self) -> float:
        return float(self.edge_lengths.mean()) if len(self.edge_lengths) else 0.0

    @property
    def max_edge_length(self) -> float:
        return float(self.edge_lengths.max()) if len(self.edge_lengths) else 0.0

    @property
    def t_min(self) -> float:
        """Advisory lower bound of trusted diffusion times."""
        return self.mean_edge_length**2

    @property
    def conductances(self) -> np.ndarray:
        """Per-edge weights ``-W_ij`` (may be negative for obtuse meshes)."""
        W = self.stiffness
        return -np.asarray(W[self.edges[:, 0], self.edges[:, 1]]).ravel()

    def energy(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ (self.stiffness @ u))

    def edge_energy(self, u) -> float:
        u = np.asarray(u, dtype=float)
        du = u[self.edges[:, 0]] - u[self.edges[:, 1]]
        return float(np.sum(self.conductances * du * du))

    def laplacian(self, u) -> np.ndarray:
        """Positive Laplacian ``M^-1 W u``."""
        return (self.stiffness @ np.asarray(u, dtype=float)) / self.mu

    def distances_from(self, x: int) -> np.ndarray:
        """Distances from vertex ``x`` to every vertex (cached, read-only)."""
        x = self._check_vertex(x)
        key = ("row", x)
        row = self._cache.get(key)
        if row is None:
            if self.explicit_distance is not None:
                row = self.explicit_distance[x]
            elif self.distance_fn is not None:
                row = self.distance_fn(x)
            elif "full" in self._cache:
                row = self._cache["full"][x]
            elif self.metric == "fmm":
                row = _fmm_row(self, x)
            else:
                row = csgraph.dijkstra(self._length_graph(), directed=False, indices=x)
            row = np.array(row, dtype=float)
            row.setflags(write=False)
            self._cache[key] = row
        return row

    def distances_within(self, x: int, radius: float) -> np.ndarray:
        """Distances from ``x``, exact up to ``radius`` and ``inf`` beyond (not cached)."""
        x = self._check_vertex(x)
        if ("row", x) in self._cache or self.explicit_distance is not None or self.distance_fn is not None \
                or "full" in self._cache:
            row = np.array(self.distances_from(x))
        elif self.metric == "fmm":
            row = _fmm_row(self, x, radius)
        else:
            row = csgraph.dijkstra(self._length_graph(), directed=False, indices=x, limit=radius)
        row[row > radius] = np.inf
        return row

    @property
    def distance(self) -> np.ndarray:
        """Full symmetric distance matrix."""
        return geodesic_distances(self)

    @property
    def diameter(self) -> float:
        key = "diam"
        if key not in self._cache:
            if self.explicit_distance is not None or "full" in self._cache or self.vertex_count <= 600:
                self._cache[key] = float(self.distance.max())
            else:
                # double sweep; exact on trees, within a factor 2 always
                r0 = self.distances_from(0)
                far = int(np.argmax(r0))
                self._cache[key] = float(self.distances_from(far).max())
        return self._cache[key]

    def _length_graph(self):
        key = "lengraph"
        if key not in self._cache:
            N = self.vertex_count
            e = self.edges
            self._cache[key] = sparse.csr_matrix(
                (self.edge_lengths, (e[:, 0], e[:, 1])), shape=(N, N)
            )
        return self._cache[key]

    def _check_vertex(self, x) -> int:
        if self.labels is not None and not isinstance(x, (int, np.integer)):
            try:
                return self.labels.index(x)
            except ValueError:
                raise GeometryError(f"unknown vertex {x!r}") from None
        x = int(x)
        if not 0 <= x < self.vertex_count:
            raise GeometryError(f"unknown vertex id {x}")
        return x


def _fmm_row(space: DiscreteSpace, x: int, limit: float = np.inf) -> np.ndarray:
    key = "fmm_data"
    data = space._cache.get(key)
    if data is None:
        mesh = space.mesh
        ptr, idx = vertex_face_csr(mesh.faces, mesh.vertex_count)
        # rescaling acts on lengths only; mesh positions are kept consistent
        lens = mesh.face_edge_lengths()
        data = (mesh.faces, np.ascontiguousarray(lens), ptr, idx)
        space._cache[key] = data
    faces, lens, ptr, idx = data
    return fast_marching(int(x), faces, lens, ptr, idx, space.vertex_count, float(limit))


def _check_connected(W, N):
    if N <= 1:
        return
    adj = W.copy()
    adj.setdiag(0)
    adj.eliminate_zeros()
    ncomp, labels = csgraph.connected_components(adj, directed=False)
    if ncomp > 1:
        comps = [np.flatnonzero(labels == c).tolist() for c in range(ncomp)]
        shown = "; ".join(str(c[:8]) + ("..." if len(c) > 8 else "") for c in comps[:6])
        raise GeometryError(f"disconnected space with {ncomp} components: {shown}")


def cotangent_stiffness(mesh: MeshSurface) -> sparse.csr_matrix:
    f = mesh.faces
    e01, e02, e12 = mesh.face_edge_vectors()

    def cot(u, v):
        return np.einsum("ij,ij->i", u, v) / np.linalg.norm(np.cross(u, v), axis=1)

    c0 = cot(e01, e02)  # angle at vertex 0, opposite edge (1, 2)
    c1 = cot(-e01, e12)
    c2 = cot(-e02, -e12)
    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([c0, c1, c2])
    N = mesh.vertex_count
    off = sparse.coo_matrix((-w, (i, j)), shape=(N, N))
    off = (off + off.T).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    W = (off + sparse.diags(diag)).tocsr()
    W.sum_duplicates()
    W.sort_indices()
    return W


def lumped_areas(mesh: MeshSurface) -> np.ndarray:
    a = mesh.face_areas() / 3.0
    return np.bincount(mesh.faces.ravel(), weights=np.repeat(a, 3), minlength=mesh.vertex_count)


def build_mesh_space(mesh: MeshSurface, metric: str = "fmm") -> DiscreteSpace:
    """Cotangent Dirichlet form, lumped one-third areas, model dimension 2.

    ``metric="fmm"`` (default) measures distances by fast marching over the
    faces; ``metric="dijkstra"`` uses shortest paths along edges, which is
    anisotropic on structured meshes and does not converge under refinement.
    """
    if metric not in ("fmm", "dijkstra"):
        raise GeometryError(f"unknown mesh metric {metric!r}")
    mesh.validate()
    W = cotangent_stiffness(mesh)
    mu = lumped_areas(mesh)
    _check_connected(W, mesh.vertex_count)
    edges = mesh.unique_edges()
    ev = mesh.edge_vector(edges[:, 0], edges[:, 1])
    lengths = np.linalg.norm(ev, axis=1)
    offdiag = np.asarray(W[edges[:, 0], edges[:, 1]]).ravel()
    if np.any(offdiag > 0):
        # obtuse triangles: kept as-is, energy stays unbiased
        logger.warning("%d mesh edges carry negative cotangent weight", int(np.sum(offdiag > 0)))
    return DiscreteSpace(n=2, mu=mu, stiffness=W, edges=edges, edge_lengths=lengths, metric=metric, mesh=mesh)


def build_graph_space(conductances, measures, n: int, distances=None, lengths=None, labels=None) -> DiscreteSpace:
    """Weighted-graph Dirichlet form ``E(u) = sum_{i<j} c_ij (u_i - u_j)^2``.

    ``lengths`` is an optional sparse matrix of edge lengths (default
    ``1/sqrt(c_ij)``).  ``distances`` overrides shortest paths; it is either a
    full matrix or a callable returning the row of distances from a vertex.
    """
    C = sparse.csr_matrix(conductances, dtype=float)
    N = C.shape[0]
    mu = np.asarray(measures, dtype=float).ravel()
    if C.shape != (N, N) or len(mu) != N:
        raise GeometryError("conductance matrix and measures disagree in size")
    if np.any(mu <= 0):
        raise GeometryError("measures must be positive")
    if int(n) < 1:
        raise GeometryError("model dimension must be a positive integer")
    C = C.copy()
    C.setdiag(0)
    C.eliminate_zeros()
    if abs(C - C.T).max() > 1e-12 * max(1.0, abs(C).max()) if C.nnz else False:
        raise GeometryError("conductances must be symmetric")
    if C.nnz and C.data.min() < 0:
        raise GeometryError("conductances must be nonnegative")
    C = ((C + C.T) * 0.5).tocsr()
    deg = np.asarray(C.sum(axis=1)).ravel()
    W = (sparse.diags(deg) - C).tocsr()
    W.sort_indices()
    _check_connected(W, N)
    up = sparse.triu(C, k=1).tocoo()
    edges = np.column_stack([up.row, up.col]).astype(np.int64)
    if lengths is not None:
        L = sparse.csr_matrix(lengths, dtype=float)
        L = L.maximum(L.T)
        given = np.asarray(L[edges[:, 0], edges[:, 1]]).ravel() if len(edges) else np.zeros(0)
        elen = np.where(given > 0, given, 1.0 / np.sqrt(up.data))
    else:
        elen = 1.0 / np.sqrt(up.data) if len(edges) else np.zeros(0)
    fn = None
    if callable(distances):
        D, fn, metric = None, distances, "explicit"
    elif distances is not None:
        D = np.array(distances, dtype=float)
        if D.shape != (N, N):
            raise GeometryError("distance matrix has the wrong shape")
        if np.any(np.abs(D - D.T) > 1e-12 * max(1.0, D.max())) or np.any(np.diag(D) != 0):
            raise GeometryError("distance matrix must be symmetric with zero diagonal")
        metric = "explicit"
    else:
        D = None
        metric = "dijkstra"
    if labels is not None:
        labels = tuple(labels)
    return DiscreteSpace(
        n=int(n), mu=mu, stiffness=W, edges=edges, edge_lengths=np.asarray(elen, dtype=float),
        metric=metric, explicit_distance=D, distance_fn=fn, labels=labels,
    )


def geodesic_distances(space: DiscreteSpace, method: str | None = None) -> np.ndarray:
    """Full distance matrix; symmetric with zero diagonal.

    ``method="dijkstra"`` forces edge-graph shortest paths regardless of the
    space's own metric.
    """
    if method == "dijkstra" and space.metric != "dijkstra":
        D = csgraph.dijkstra(space._length_graph(), directed=False)
        np.fill_diagonal(D, 0.0)
        return D
    if method not in (None, "dijkstra", space.metric):
        raise GeometryError(f"unknown distance method {method!r}")
    cache = space._cache
    if "full" in cache:
        return cache["full"]
    N = space.vertex_count
    if space.explicit_distance is not None:
        D = space.explicit_distance.copy()
    elif space.metric == "fmm" or space.distance_fn is not None:
        D = np.empty((N, N))
        for x in range(N):
            D[x] = space.distances_from(x)
        D = 0.5 * (D + D.T)
    else:
        D = csgraph.dijkstra(space._length_graph(), directed=False)
    np.fill_diagonal(D, 0.0)
    D.setflags(write=False)
    cache["full"] = D
    return D


def gaussian_curvature(mesh: MeshSurface) -> np.ndarray:
    """Angle-defect curvature density ``K_i = (2 pi - sum of angles) / mu_i``.

    Defects at the rounding level of the angle sum are set to zero, so flat
    vertices carry exactly zero curvature.
    """
    ang = mesh.corner_angles()
    total = np.bincount(mesh.faces.ravel(), weights=ang.ravel(), minlength=mesh.vertex_count)
    defect = 2.0 * np.pi - total
    valence = np.bincount(mesh.faces.ravel(), minlength=mesh.vertex_count)
    defect[np.abs(defect) <= 16 * np.finfo(float).eps * np.pi * np.maximum(valence, 1)] = 0.0
    return defect / lumped_areas(mesh)


def angle_defect_ric_minus(mesh: MeshSurface) -> PotentialField:
    """``Ric_- = max(-K, 0)`` in dimension two."""
    return PotentialField(np.maximum(-gaussian_curvature(mesh), 0.0))


def rescale(space: DiscreteSpace, eps: float) -> DiscreteSpace:
    """Metric ``g -> eps^-2 g``: lengths /eps, measure eps^-n, form eps^(2-n)."""
    eps = float(eps)
    if not eps > 0:
        raise GeometryError("rescaling factor must be positive")
    if eps == 1.0:
        return space
    n = space.n
    mesh = space.mesh
    if mesh is not None:
        per = None if mesh.period is None else mesh.period / eps
        mesh = MeshSurface(mesh.positions / eps, mesh.faces, per)
    D = None if space.explicit_distance is None else space.explicit_distance / eps
    fn = space.distance_fn
    if fn is not None:
        fn = _ScaledRows(fn, eps)
    return replace(
        space,
        mu=space.mu / eps**n,
        stiffness=(space.stiffness * eps ** (2 - n)).tocsr(),
        edge_lengths=space.edge_lengths / eps,
        explicit_distance=D,
        distance_fn=fn,
        mesh=mesh,
        _cache={},
    )


class _ScaledRows:
    def __init__(self, fn, eps):
        self.fn, self.eps = fn, eps

    def __call__(self, x):
        return np.asarray(self.fn(x)) / self.eps


def ball(space: DiscreteSpace, x, r: float):
    """Closed vertex ball ``{i : d(x, i) <= r}`` and its measure."""
    if r < 0:
        raise GeometryError("radius must be nonnegative")
    d = space.distances_from(x)
    idx = np.flatnonzero(d <= r * BALL_SLACK)
    return idx, float(space.mu[idx].sum())


def ball_measures(space: DiscreteSpace, x, radii) -> np.ndarray:
    d = space.distances_from(x)
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(space.mu[order])
    k = np.searchsorted(d[order], np.asarray(radii, dtype=float) * BALL_SLACK, side="right")
    return np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)


def omega(n: float) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


# --------------------------------------------------------------------------
# file formats


def read_off(path) -> MeshSurface:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line)
    head = tokens[0]
    if not head.startswith("OFF"):
        raise GeometryError("missing OFF header")
    rest = head[3:].split()
    body = tokens[1:]
    if not rest:
        rest, body = body[0].split(), body[1:]
    nv, nf = int(rest[0]), int(rest[1])
    pos = np.array([[float(v) for v in body[i].split()[:3]] for i in range(nv)])
    faces = []
    for line in body[nv : nv + nf]:
        vals = [int(v) for v in line.split()]
        if vals[0] != 3:
            raise GeometryError("only triangular faces are supported")
        faces.append(vals[1:4])
    return MeshSurface(pos, np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_obj(path) -> MeshSurface:
    pos, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            pos.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise GeometryError("only triangular faces are supported")
            faces.append([i - 1 if i > 0 else len(pos) + i for i in idx])
    return MeshSurface(np.array(pos, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> MeshSurface:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return read_off(path)
    if suffix == ".obj":
        return read_obj(path)
    raise GeometryError(f"unsupported mesh format {suffix!r}")


def write_off(mesh: MeshSurface, path):
    lines = ["OFF", f"{mesh.vertex_count} {len(mesh.faces)} 0"]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.positions]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_graph(text: str) -> DiscreteSpace:
    """Parse the ``graph n=<int>`` / ``v <id> <mu>`` / ``e <i> <j> <c> [len]`` format."""
    n = None
    ids, mus, rows = {}, [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "graph":
                for p in parts[1:]:
                    key, _, val = p.partition("=")
                    if key == "n":
                        n = int(val)
            elif parts[0] == "v":
                if parts[1] in ids:
                    raise GeometryError(f"line {lineno}: duplicate vertex {parts[1]!r}")
                ids[parts[1]] = len(mus)
                mus.append(float(parts[2]))
            elif parts[0] == "e":
                length = float(parts[4]) if len(parts) > 4 else 0.0
                rows.append((ids[parts[1]], ids[parts[2]], float(parts[3]), length))
            else:
                raise GeometryError(f"line {lineno}: unknown record {parts[0]!r}")
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, GeometryError):
                raise
            raise GeometryError(f"line {lineno}: malformed record {raw!r}") from exc
    if n is None:
        raise GeometryError("missing 'graph n=<int>' header")
    N = len(mus)
    if rows:
        i, j, c, ln = (np.array(col) for col in zip(*rows))
    else:
        i = j = np.zeros(0, dtype=int)
        c = ln = np.zeros(0)
    C = sparse.coo_matrix((c, (i, j)), shape=(N, N)).tocsr()
    C = C + C.T
    lengths = None
    if np.any(ln > 0):
        lengths = sparse.coo_matrix((ln, (i, j)), shape=(N, N)).tocsr()
    labels = list(ids.keys())
    if labels == [str(k) for k in range(N)]:
        labels = None
    return build_graph_space(C, np.array(mus), n, lengths=lengths, labels=labels)


def read_graph(path) -> DiscreteSpace:
    return parse_graph(Path(path).read_text())


def format_graph(space: DiscreteSpace) -> str:
    names = space.labels or tuple(str(i) for i in range(space.vertex_count))
    lines = [f"graph n={space.n}"]
    lines += [f"v {names[i]} {float(space.mu[i])!r}" for i in range(space.vertex_count)]
    c = space.conductances
    for (i, j), cij, ln in zip(space.edges, c, space.edge_lengths):
        lines.append(f"e {names[i]} {names[j]} {float(cij)!r} {float(ln)!r}")
    return "\n".join(lines) + "\n"


def space_to_json(space: DiscreteSpace, with_distances: bool = False) -> str:
    W = space.stiffness.tocoo()
    doc = {
        "n": space.n,
        "mu": space.mu.tolist(),
        "edges": [[int(i), int(j), float(ln)] for (i, j), ln in zip(space.edges, space.edge_lengths)],
        "stiffness_triplets": [[int(i), int(j), float(v)] for i, j, v in zip(W.row, W.col, W.data)],
    }
    if with_distances:
        doc["distances"] = geodesic_distances(space).tolist()
    return json.dumps(doc)


def space_from_json(text: str) -> DiscreteSpace:
    doc = json.loads(text)
    mu = np.asarray(doc["mu"], dtype=float)
    N = len(mu)
    t = np.asarray(doc["stiffness_triplets"], dtype=float).reshape(-1, 3)
    W = sparse.coo_matrix((t[:, 2], (t[:, 0].astype(int), t[:, 1].astype(int))), shape=(N, N)).tocsr()
    e = np.asarray(doc["edges"], dtype=float).reshape(-1, 3)
    D = doc.get("distances")
    if D is not None:
        D = np.asarray(D, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sparse.SparseEfficiencyWarning)
        W.sort_indices()
    return DiscreteSpace(
        n=int(doc["n"]), mu=mu, stiffness=W, edges=e[:, :2].astype(np.int64), edge_lengths=e[:, 2],
        metric="explicit" if D is not None else "dijkstra", explicit_distance=D,
    )


def face_gradients(mesh: MeshSurface, u) -> np.ndarray:
    """Gradient of the piecewise-linear interpolant of ``u``, one 3-vector per face."""
    u = np.asarray(u, dtype=float)
    f = mesh.faces
    e1, e2, _ = mesh.face_edge_vectors()
    a = np.einsum("ij,ij->i", e1, e1)
    b = np.einsum("ij,ij->i", e1, e2)
    c = np.einsum("ij,ij->i", e2, e2)
    du1 = u[f[:, 1]] - u[f[:, 0]]
    du2 = u[f[:, 2]] - u[f[:, 0]]
    det = a * c - b * b
    c1 = (c * du1 - b * du2) / det
    c2 = (a * du2 - b * du1) / det
    return c1[:, None] * e1 + c2[:, None] * e2
