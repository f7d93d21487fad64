"""Deterministic test surfaces and graphs.

Meshes come back as :class:`MeshSurface` (wrap with ``build_mesh_space``);
graph models come back as ready :class:`DiscreteSpace` objects.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse

from .geometry import DiscreteSpace, GeometryError, MeshSurface, build_graph_space, build_mesh_space

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def flat_torus(a: float = 1.0, b: float = 1.0, N: int = 32, M: int | None = None) -> MeshSurface:
    """Periodic ``N x M`` grid on the flat torus ``R^2 / (aZ x bZ)``.

    Each cell is split along its ``(0,0)-(1,1)`` diagonal.
    """
    M = N if M is None else M
    if N < 3 or M < 3:
        raise GeometryError("flat torus needs at least 3 cells per side")
    i, j = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    pos = np.column_stack([(i * a / N).ravel(), (j * b / M).ravel(), np.zeros(N * M)])
    vid = lambda p, q: (p % N) * M + (q % M)  # noqa: E731
    v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
    faces = np.concatenate(
        [np.column_stack([v00.ravel(), v10.ravel(), v11.ravel()]),
         np.column_stack([v00.ravel(), v11.ravel(), v01.ravel()])]
    )
    return MeshSurface(pos, faces, period=np.array([a, b, 0.0]))


def torus_distance_rows(a: float, b: float, N: int, M: int | None = None):
    """Exact flat-torus distance rows for :func:`flat_torus` vertex ids."""
    M = N if M is None else M
    i, j = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    x = (i * a / N).ravel()
    y = (j * b / M).ravel()

    def row(v):
        dx = np.abs(x - x[v])
        dy = np.abs(y - y[v])
        dx = np.minimum(dx, a - dx)
        dy = np.minimum(dy, b - dy)
        return np.hypot(dx, dy)

    return row


def flat_torus_spectrum(space: DiscreteSpace, a: float, b: float, N: int, M: int | None = None,
                        lam_max: float | None = None, m: int | None = None):
    """Closed-form eigenpairs of the :func:`flat_torus` mesh Laplacian.

    On the diagonal-split periodic grid the cotangent weights reduce to the
    five-point stencil (diagonal weights vanish), so real Fourier modes are
    exact eigenvectors with ``lam = (2 - 2cos(2 pi k/N))/hx^2 + (2 - 2cos(2 pi l/M))/hy^2``.
    Modes are kept up to ``lam_max`` (whole clusters) or the ``m`` lowest.
    Residuals are measured against ``space.stiffness``.
    """
    from .heat import SpectralData

    M = N if M is None else M
    hx, hy = a / N, b / M
    k = np.arange(N)
    l = np.arange(M)
    lx = (2 - 2 * np.cos(2 * np.pi * k / N)) / hx**2
    ly = (2 - 2 * np.cos(2 * np.pi * l / M)) / hy**2
    K, L = np.meshgrid(k, l, indexing="ij")
    lam = (lx[:, None] + ly[None, :]).ravel()
    K, L = K.ravel(), L.ravel()
    # one representative per conjugate pair (k, l) ~ (-k, -l)
    Kc, Lc = (-K) % N, (-L) % M
    rep = (K * M + L) <= (Kc * M + Lc)
    self_conj = (K == Kc) & (L == Lc)
    order = np.lexsort((K * M + L, lam))
    entries = []
    for idx in order:
        if not rep[idx]:
            continue
        entries.append((lam[idx], K[idx], L[idx], "c"))
        if not self_conj[idx]:
            entries.append((lam[idx], K[idx], L[idx], "s"))
    vals = np.array([e[0] for e in entries])
    if lam_max is not None:
        cut = int(np.searchsorted(vals, lam_max * (1 + 1e-12), side="right"))
    else:
        cut = len(entries) if m is None else int(m)
        while 0 < cut < len(entries) and vals[cut] <= vals[cut - 1] * (1 + 1e-12):
            cut += 1  # never split a degenerate cluster
    entries = entries[: max(cut, 1)]
    ii, jj = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    area = a * b
    modes = np.empty((N * M, len(entries)))
    for c, (_, kk, ll, kind) in enumerate(entries):
        ph = 2 * np.pi * (kk * ii / N + ll * jj / M)
        if kind == "c" and (kk == (-kk) % N and ll == (-ll) % M):
            modes[:, c] = np.cos(ph) / np.sqrt(area)
        elif kind == "c":
            modes[:, c] = np.sqrt(2.0 / area) * np.cos(ph)
        else:
            modes[:, c] = np.sqrt(2.0 / area) * np.sin(ph)
    ev = np.array([e[0] for e in entries])
    ev[0] = 0.0
    res = np.linalg.norm(space.stiffness @ modes - (space.mu[:, None] * modes) * ev, axis=0)
    return SpectralData(eigenvalues=ev, modes=modes, residuals=res, mu=space.mu)


def icosahedron(R: float = 1.0) -> MeshSurface:
    p = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
         [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
         [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]],
        dtype=float,
    )
    v *= R / np.linalg.norm(v[0])
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    return MeshSurface(v, f)


def _subdivide(pos, faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = len(pos) + inv.reshape(3, -1).T  # columns: m01, m12, m20
    pos = np.vstack([pos, 0.5 * (pos[uniq[:, 0]] + pos[uniq[:, 1]])])
    a, b, c = faces.T
    m01, m12, m20 = mid.T
    new = np.concatenate(
        [np.column_stack([a, m01, m20]), np.column_stack([b, m12, m01]),
         np.column_stack([c, m20, m12]), np.column_stack([m01, m12, m20])]
    )
    return pos, new


def icosphere(R: float = 1.0, level: int = 3) -> MeshSurface:
    """Subdivided icosahedron projected to the sphere; ``10 * 4**level + 2`` vertices."""
    if level < 0:
        raise GeometryError("level must be nonnegative")
    base = icosahedron(1.0)
    pos, faces = base.positions, base.faces
    for _ in range(level):
        pos, faces = _subdivide(pos, faces)
        pos = pos / np.linalg.norm(pos, axis=1, keepdims=True)
    return MeshSurface(R * pos, faces)


def ellipsoid(a: float = 1.0, b: float = 1.0, c: float = 1.0, level: int = 3) -> MeshSurface:
    s = icosphere(1.0, level)
    return MeshSurface(s.positions * np.array([a, b, c]), s.faces)


def dumbbell(neck_radius: float = 0.3, level: int = 4) -> MeshSurface:
    """Surface of revolution with a waist, profile ``rho = (neck + (1 - neck) c^2) sin(psi)``, ``z = 2c``.

    Here ``c = cos(psi)``.  The neck is negatively curved for ``neck_radius < 2/3``.
    Rings are equally spaced in profile arc length and staggered by half an
    angular step, which keeps every triangle acute at the default sizes.
    ``level`` sets ``5 * 2**(level - 1)`` rings of ``2**(level + 2)`` vertices.
    """
    if not 0 < neck_radius <= 1:
        raise GeometryError("neck radius must lie in (0, 1]")
    if level < 1:
        raise GeometryError("level must be at least 1")
    K = 5 * 2 ** (level - 1)
    M = 2 ** (level + 2)
    psi = np.linspace(0.0, np.pi, 20001)
    c = np.cos(psi)
    rho = (neck_radius + (1.0 - neck_radius) * c**2) * np.sin(psi)
    z = 2.0 * c
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(rho), np.diff(z)))])
    s_ring = arc[-1] * np.arange(1, K + 1) / (K + 1)
    rr = np.interp(s_ring, arc, rho)
    zz = np.interp(s_ring, arc, z)
    phi = 2 * np.pi * (np.arange(M)[None, :] + 0.5 * (np.arange(K)[:, None] % 2)) / M
    ring = np.stack([rr[:, None] * np.cos(phi), rr[:, None] * np.sin(phi),
                     np.broadcast_to(zz[:, None], phi.shape)], axis=-1).reshape(-1, 3)
    pos = np.vstack([[0.0, 0.0, 2.0], ring, [0.0, 0.0, -2.0]])
    top, bot = 0, 1 + K * M
    vid = lambda k, j: 1 + k * M + (j % M)  # noqa: E731
    j = np.arange(M)
    faces = [np.column_stack([np.full(M, top), vid(0, j), vid(0, j + 1)])]
    for k in range(K - 1):
        if k % 2 == 0:  # ring k+1 shifted by +1/2
            faces.append(np.column_stack([vid(k, j), vid(k + 1, j), vid(k, j + 1)]))
            faces.append(np.column_stack([vid(k, j + 1), vid(k + 1, j), vid(k + 1, j + 1)]))
        else:  # ring k shifted by +1/2
            faces.append(np.column_stack([vid(k, j), vid(k + 1, j), vid(k + 1, j + 1)]))
            faces.append(np.column_stack([vid(k, j), vid(k + 1, j + 1), vid(k, j + 1)]))
    faces.append(np.column_stack([np.full(M, bot), vid(K - 1, j + 1), vid(K - 1, j)]))
    return MeshSurface(pos, np.concatenate(faces))


def cycle(N: int, circumference: float | None = None) -> DiscreteSpace:
    """``N``-cycle; unit edges by default, otherwise a discretized circle."""
    if N < 3:
        raise GeometryError("a cycle needs at least 3 vertices")
    h = 1.0 if circumference is None else circumference / N
    i = np.arange(N)
    C = sparse.coo_matrix((np.full(N, 1.0 / h), (i, (i + 1) % N)), shape=(N, N)).tocsr()
    L = circumference if circumference is not None else float(N)

    def row(v):
        d = np.abs(i - v) * h
        return np.minimum(d, L - d)

    return build_graph_space(C + C.T, np.full(N, h), 1, distances=row, lengths=(C + C.T) * h * h)


def path(N: int, length: float | None = None) -> DiscreteSpace:
    """Path graph with ``N`` vertices; unit edges and unit measure by default."""
    if N < 1:
        raise GeometryError("a path needs at least one vertex")
    h = 1.0 if length is None else length / max(N - 1, 1)
    i = np.arange(N - 1)
    C = sparse.coo_matrix((np.full(N - 1, 1.0 / h), (i, i + 1)), shape=(N, N)).tocsr()
    mu = np.full(N, h)
    if length is not None and N > 1:
        mu[[0, -1]] = h / 2
    x = np.arange(N) * h
    return build_graph_space(C + C.T, mu, 1, distances=lambda v: np.abs(x - x[v]), lengths=(C + C.T) * h * h)


def cone_graph(angle: float = 1.5 * math.pi, N: int = 40, radius: float = 1.0) -> DiscreteSpace:
    """Flat cone of total angle ``angle`` truncated at ``radius``; vertex 0 is the apex.

    Vertices sit in ``M ~ angle * N`` angular columns with ``N`` cells each;
    column ``j`` is shifted radially by a golden-ratio offset so that ball
    boundaries do not align with whole rings.  Measures are exact cell areas
    and distances the exact cone metric.
    """
    if not 0 < angle < 4 * math.pi:
        raise GeometryError("cone angle must lie in (0, 4 pi)")
    if N < 2:
        raise GeometryError("cone graph needs N >= 2")
    h = radius / (N + 1)
    M = max(3, int(round(angle * N)))
    dth = angle / M
    delta = (np.arange(M) * GOLDEN) % 1.0
    k = np.arange(1, N + 1)
    r = (k[None, :] + delta[:, None] - 0.5) * h + 0.5 * h  # (M, N), first cell centre ~h
    lo = r - 0.5 * h
    hi = np.minimum(r + 0.5 * h, radius)
    lo[:, 0] = 0.5 * h
    cell = 0.5 * dth * (hi**2 - lo**2)
    apex = 0.5 * dth * (0.5 * h) ** 2 * M
    mu = np.concatenate([[apex], cell.ravel()])
    th = (np.arange(M) + 0.5) * dth
    radii = np.concatenate([[0.0], r.ravel()])
    theta = np.concatenate([[0.0], np.repeat(th, N)])

    vid = lambda j, kk: 1 + (j % M) * N + kk  # noqa: E731
    rows, cols, vals = [], [], []
    # apex to the first cell of every column
    for j in range(M):
        rows.append(0)
        cols.append(vid(j, 0))
        vals.append(0.5 * h * dth / r[j, 0])
    # radial neighbours within a column
    jj, kk = np.meshgrid(np.arange(M), np.arange(N - 1), indexing="ij")
    face = hi[jj, kk]
    rows += list(vid(jj, kk).ravel())
    cols += list(vid(jj, kk + 1).ravel())
    vals += list((face * dth / (r[jj, kk + 1] - r[jj, kk])).ravel())
    # angular neighbours, overlap of the shared radial face
    jj, kk = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    j2 = (jj + 1) % M
    for dk in (-1, 0, 1):
        k2 = kk + dk
        ok = (k2 >= 0) & (k2 < N)
        a, b2, k2c = jj[ok], j2[ok], k2[ok]
        kc = kk[ok]
        ov = np.minimum(hi[a, kc], hi[b2, k2c]) - np.maximum(lo[a, kc], lo[b2, k2c])
        use = ov > 1e-12 * h
        mid = 0.5 * (r[a, kc] + r[b2, k2c])
        rows += list(vid(a, kc)[use])
        cols += list(vid(b2, k2c)[use])
        vals += list((ov / (mid * dth))[use])
    Nv = 1 + M * N
    C = sparse.coo_matrix((vals, (rows, cols)), shape=(Nv, Nv)).tocsr()
    C = C + C.T

    def row(v):
        dth_ = np.abs(theta - theta[v])
        dth_ = np.minimum(dth_, angle - dth_)
        r1, r2 = radii[v], radii
        d2 = np.maximum(r1**2 + r2**2 - 2 * r1 * r2 * np.cos(np.minimum(dth_, math.pi)), 0.0)
        d = np.sqrt(d2)
        return np.where(dth_ >= math.pi, r1 + r2, d)

    Cu = sparse.triu(C, k=1).tocoo()
    lens = np.array([row(int(i))[int(j)] for i, j in zip(Cu.row, Cu.col)])
    Lm = sparse.coo_matrix((lens, (Cu.row, Cu.col)), shape=C.shape).tocsr()
    space = build_graph_space(C, mu, 2, distances=row, lengths=Lm + Lm.T)
    return _with_origin(space, 0)


def _with_origin(space: DiscreteSpace, origin: int) -> DiscreteSpace:
    from dataclasses import replace

    return replace(space, origin=origin, _cache={})


MESH_GENERATORS = {
    "flat_torus": flat_torus,
    "icosphere": icosphere,
    "ellipsoid": ellipsoid,
    "dumbbell": dumbbell,
}
GRAPH_GENERATORS = {
    "cone_graph": cone_graph,
    "cycle": cycle,
    "path": path,
}


def available() -> list[str]:
    return sorted({**MESH_GENERATORS, **GRAPH_GENERATORS})


def generate(name: str, **params):
    """Build a named generator; meshes return ``MeshSurface``, graphs ``DiscreteSpace``."""
    fn = MESH_GENERATORS.get(name) or GRAPH_GENERATORS.get(name)
    if fn is None:
        raise GeometryError(f"unknown generator {name!r}; available: {', '.join(available())}")
    return fn(**params)


def generate_space(name: str, metric: str = "fmm", **params) -> DiscreteSpace:
    obj = generate(name, **params)
    if isinstance(obj, MeshSurface):
        return build_mesh_space(obj, metric=metric)
    return obj
