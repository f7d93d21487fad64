"""Heat-semigroup cut-offs, the gauging function, harmonic replacement and splitting maps."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .geometry import DiscreteSpace, as_potential, ball, face_gradients
from .heat import HeatKernelHandle, carre_du_champ
from .inequalities import discrete_hessian, edge_lipschitz
from .kato import kato_constant
from .reports import VerificationReport

# --------------------------------------------------------------------------
# cut-off functions


def smooth_profile(z):
    """``1`` on ``z <= 1/4``, ``0`` on ``z >= 3/4``, quintic (C^2) in between."""
    z = np.asarray(z, dtype=float)
    w = np.clip((z - 0.25) / 0.5, 0.0, 1.0)
    return 1.0 - w**3 * (10.0 - 15.0 * w + 6.0 * w * w)


@dataclass
class CutoffReport:
    """Cut-off ``chi`` with its normalised derivative bounds and exactness defects."""

    chi: np.ndarray
    distances: np.ndarray
    x: int
    r: float
    s: float
    t: float
    T: float
    grad_norm: float
    lap_norm: float
    interior_defect: float
    exterior_defect: float
    taints: set = field(default_factory=set)

    def sandwich_report(self, tolerance: float = 1e-9) -> VerificationReport:
        """``1_{B_r} <= chi <= 1_{B_{r+s}}``; margins are minus the defects."""
        return VerificationReport(
            "cutoff_sandwich", [-self.interior_defect, -self.exterior_defect], tolerance,
            locations=["interior", "exterior"], taints=self.taints,
            samples={"x": self.x, "r": self.r, "s": self.s},
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["vertex", "distance", "chi"])
        for i, (d, c) in enumerate(zip(self.distances, self.chi)):
            w.writerow([i, repr(float(d)), repr(float(c))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"x": self.x, "r": self.r, "s": self.s, "t": self.t, "T": self.T,
                "grad_norm": self.grad_norm, "lap_norm": self.lap_norm,
                "interior_defect": self.interior_defect, "exterior_defect": self.exterior_defect,
                "taints": sorted(self.taints)}


def cutoff_time(s: float, n: int, T: float) -> float:
    """Smoothing time ``min((s / (4 e^2 sqrt(2n)))^2, T)``."""
    return min((s / (4.0 * math.e**2 * math.sqrt(2.0 * n))) ** 2, T)


def heat_cutoff(handle: HeatKernelHandle, x: int, r: float, s: float, T: float) -> CutoffReport:
    """``chi = u((P_t d_x - r) / s)`` with the smoothed distance ``P_t d_x``.

    Reports ``sup |d chi| min(s, sqrt T)`` and ``sup |L chi| min(s^2, T)``.
    A smoothing time below the trusted range taints the report.
    """
    space = handle.space
    if not (r >= 0 and s > 0 and T > 0):
        raise ValueError("need r >= 0, s > 0 and T > 0")
    taints = set()
    if s < 3 * space.mean_edge_length:
        taints.add("under-resolved")
    d = np.array(space.distances_from(x))
    t = cutoff_time(s, space.n, T)
    if t < space.t_min:
        taints.add("below-trusted-time")
    rho = handle.apply(t, d)
    taints |= handle.taints
    chi = smooth_profile((rho - r) / s)
    grad = math.sqrt(float(carre_du_champ(space, chi).max()))
    lap = float(np.max(np.abs(space.laplacian(chi))))
    inner = d <= r
    outer = d > r + s
    interior = float(np.max(1.0 - chi[inner])) if inner.any() else 0.0
    exterior = float(np.max(chi[outer])) if outer.any() else 0.0
    return CutoffReport(chi, d, int(x), r, s, t, T, grad * min(s, math.sqrt(T)), lap * min(s * s, T),
                        interior, exterior, taints)


# --------------------------------------------------------------------------
# gauging function


@dataclass
class GaugingResult:
    """``I`` solving ``I = 1 + 2 delta int_0^t P_{t-s}(V I(s)) ds`` and ``J = I^{-1/delta}``."""

    t_star: float
    k_star: float
    eps: float
    delta: float
    times: np.ndarray
    I: np.ndarray
    J: np.ndarray
    iterations: int
    residual: float
    budget: int
    taints: set = field(default_factory=set)

    def bounds_report(self, tolerance: float = 1e-8) -> VerificationReport:
        """``1 <= I <= e^{4 delta k}`` and ``e^{-4k} <= J <= 1`` plus the iteration budget."""
        k, dl = self.k_star, self.delta
        top_I = math.exp(4.0 * dl * k) if math.isfinite(dl) else 1.0
        margins = [
            float(self.I.min() - 1.0),
            float(top_I - self.I.max()),
            float(self.J.min() - math.exp(-4.0 * k)),
            float(1.0 - self.J.max()),
            float(self.budget - self.iterations) / self.budget,
        ]
        return VerificationReport(
            "gauging_bounds", margins, tolerance,
            locations=["I>=1", "I<=exp(4 delta k)", "J>=exp(-4k)", "J<=1", "iterations"],
            taints=self.taints, samples={"t_star": self.t_star, "k_star": k},
        )

    def to_json(self) -> str:
        return json.dumps(
            {"t_star": self.t_star, "k_star": self.k_star, "eps": self.eps,
             "delta": self.delta if math.isfinite(self.delta) else None,
             "times": self.times.tolist(), "J": self.J.tolist(), "iterations": self.iterations,
             "residual": self.residual, "budget": self.budget},
            sort_keys=True,
        )


def _phi1(z):
    """``(1 - e^{-z}) / z``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2, -np.expm1(-z) / safe)


def _phi2(z):
    """``(z - 1 + e^{-z}) / z^2``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    return np.where(small, 0.5 - z / 6 + z * z / 24, (z + np.expm1(-z)) / (safe * safe))


class _Duhamel:
    """``w(t_j) = int_0^{t_j} P_{t_j - s} f(s) ds`` for ``f`` linear between samples."""

    def __init__(self, handle: HeatKernelHandle, times):
        self.handle = handle
        self.times = times
        self.steps = np.diff(np.concatenate([[0.0], times]))
        if handle.backend == "modal":
            if handle.truncated:
                handle.taints.add("truncated")
            lam = handle.spectral.eigenvalues
            z = np.multiply.outer(self.steps, lam)
            self.decay = np.exp(-z)
            # contributions of the left and right endpoint values of f
            self.w_right = self.steps[:, None] * _phi2(z)
            self.w_left = self.steps[:, None] * _phi1(z) - self.w_right

    def __call__(self, F):
        """``F`` has shape ``(K + 1, N)``: samples at ``0`` and at every time."""
        h = self.handle
        if h.backend == "modal":
            modes = h.spectral.modes
            b = (modes.T @ (h.mu[:, None] * F.T)).T
            c = np.zeros(modes.shape[1])
            out = np.empty((len(self.times), F.shape[1]))
            for j in range(len(self.times)):
                c = self.decay[j] * c + self.w_left[j] * b[j] + self.w_right[j] * b[j + 1]
                out[j] = modes @ c
            return out
        return self._krylov(F)

    def _krylov(self, F):
        S, s = self.handle._sym()
        N = S.shape[0]
        w = np.zeros(N)
        out = np.empty((len(self.times), N))
        for j, dt in enumerate(self.steps):
            f0 = F[j] / s
            slope = (F[j + 1] - F[j]) / s / dt
            # state (w, p, q) with p' = 0, q' = p: forcing f0 p + slope q
            A = sparse.bmat(
                [[-S, sparse.csr_matrix(f0[:, None]), sparse.csr_matrix(slope[:, None])],
                 [None, sparse.csr_matrix((1, 1)), sparse.csr_matrix((1, 1))],
                 [None, sparse.csr_matrix([[1.0]]), sparse.csr_matrix((1, 1))]],
                format="csr",
            )
            z = splinalg.expm_multiply(dt * A, np.concatenate([w, [1.0, 0.0]]))
            w = z[:N]
            out[j] = w * s
        return out


def gauging_function(handle: HeatKernelHandle, V, t_star: float, time_grid=None, tol: float = 1e-10,
                     max_iter: int | None = None) -> GaugingResult:
    """Picard iteration ``I <- 1 + 2 delta D[V I]`` on a uniform time grid.

    ``D`` integrates the semigroup exactly against ``V I`` taken linear in
    time between grid samples.  Rejects ``k_{t*} >= 1/8``, where the
    contraction factor ``2 delta k = 1 - 2k`` is no longer below one half of
    the available room.
    """
    V = as_potential(V)
    if not t_star > 0:
        raise ValueError("t* must be positive")
    k = kato_constant(handle, V, t_star)
    if k >= 0.125:
        raise ValueError(f"k_t* = {k:.4g} >= 1/8: the gauging iteration is not guaranteed to contract")
    times = np.linspace(0.0, t_star, 201)[1:] if time_grid is None else np.asarray(time_grid, dtype=float)
    if times[0] <= 0 or abs(times[-1] - t_star) > 1e-12 * t_star or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be increasing, positive and end at t*")
    N = handle.space.vertex_count
    if k == 0.0:
        one = np.ones((len(times), N))
        return GaugingResult(t_star, 0.0, 0.0, math.inf, times, one, one.copy(), 1, 0.0, 1)
    eps = 4.0 * k
    delta = 2.0 / eps - 1.0
    budget = int(math.log(tol) / math.log(1.0 - 2.0 * k)) + 1
    max_iter = budget if max_iter is None else max_iter
    duh = _Duhamel(handle, times)
    I = np.ones((len(times) + 1, N))
    it, res = 0, math.inf
    while it < max_iter:
        new = np.ones_like(I)
        new[1:] += 2.0 * delta * duh(V[None, :] * I)
        res = float(np.max(np.abs(new - I)) / np.max(np.abs(new)))
        I = new
        it += 1
        if res <= tol:
            break
    I = I[1:]
    J = I ** (-1.0 / delta)
    return GaugingResult(t_star, k, eps, delta, times, I, J, it, res, budget, set(handle.taints))


# --------------------------------------------------------------------------
# harmonic replacement


def _as_indices(space: DiscreteSpace, subset) -> np.ndarray:
    subset = np.asarray(subset)
    if subset.dtype == bool:
        return np.flatnonzero(subset)
    return np.unique(subset.astype(int))


def harmonic_replacement(space: DiscreteSpace, boundary_set, boundary_data, interior=None) -> np.ndarray:
    """Field harmonic on ``interior`` with prescribed values elsewhere.

    ``boundary_data`` is either a full-length field or one value per vertex of
    ``boundary_set``.  ``interior`` defaults to the complement of the boundary
    set; vertices in neither set keep ``boundary_data`` (full-length input
    only) or zero.  Solves ``W_II u_I = -W_IB u_B``.
    """
    N = space.vertex_count
    B = _as_indices(space, boundary_set)
    if B.size == 0:
        raise ValueError("boundary set is empty")
    data = np.asarray(boundary_data, dtype=float)
    u = np.zeros(N)
    if data.shape == (N,):
        u[:] = data
    elif data.shape == (B.size,):
        u[B] = data
    else:
        raise ValueError("boundary data must be full-length or match the boundary set")
    if interior is None:
        mask = np.ones(N, dtype=bool)
        mask[B] = False
        Iset = np.flatnonzero(mask)
    else:
        Iset = _as_indices(space, interior)
        if np.intersect1d(Iset, B).size:
            raise ValueError("interior and boundary sets overlap")
    if Iset.size == 0:
        return u
    W = space.stiffness.tocsr()
    WII = W[Iset][:, Iset]
    WIB = W[Iset][:, B]
    touch = np.asarray(abs(WIB).sum(axis=1)).ravel() > 0
    ncomp, lab = csgraph.connected_components(WII != 0, directed=False)
    lonely = [c for c in range(ncomp) if not touch[lab == c].any()]
    if lonely:
        bad = Iset[lab == lonely[0]]
        raise ValueError(f"interior component without boundary contact (vertices {bad[:5].tolist()}...)")
    rhs = -(WIB @ u[B])
    u[Iset] = splinalg.spsolve(WII.tocsc(), rhs)
    return u


def ball_with_collar(space: DiscreteSpace, x: int, r: float):
    """Vertices of ``B_r(x)`` and the one-layer collar ``B_{r+h} minus B_r`` (``h`` the max edge length)."""
    inner, _ = ball(space, x, r)
    outer, _ = ball(space, x, r + space.max_edge_length)
    return inner, np.setdiff1d(outer, inner)


# --------------------------------------------------------------------------
# splitting maps


def _tangent_basis(normal):
    axis = np.eye(3)[np.argmin(np.abs(normal))]
    e1 = axis - (axis @ normal) * normal
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


def seed_coordinates(space: DiscreteSpace, x: int, k: int = 2) -> np.ndarray:
    """Tangent-plane coordinates around ``x``: ``k`` fields, shape ``(k, N)``.

    Offsets use the minimal image on periodic meshes, so on a flat torus the
    fields are exact local coordinate lifts.
    """
    mesh = space.mesh
    if mesh is None:
        raise ValueError("seed coordinates need a mesh space")
    if not 1 <= k <= 2:
        raise ValueError("a surface carries at most two coordinates")
    off = mesh.edge_vector(np.full(mesh.vertex_count, x), np.arange(mesh.vertex_count))
    fn = np.cross(*mesh.face_edge_vectors()[:2])
    around = np.any(mesh.faces == x, axis=1)
    nrm = fn[around].sum(axis=0)
    nrm /= np.linalg.norm(nrm)
    e1, e2 = _tangent_basis(nrm)
    return np.array([off @ e1, off @ e2])[:k]


def vertex_gram(space: DiscreteSpace, fields) -> np.ndarray:
    """Per-vertex Gram matrices ``<grad h_a, grad h_b>``, shape ``(N, k, k)``.

    Polarisation of :func:`carre_du_champ` on meshes (face gradients spread
    with one third of each face area).
    """
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    mesh = space.mesh
    if mesh is None:
        raise ValueError("gradient Gram matrices need a mesh space")
    g = np.array([face_gradients(mesh, h) for h in fields])
    w = mesh.face_areas() / 3.0
    per_face = np.einsum("afi,bfi->fab", g, g) * w[:, None, None]
    N = space.vertex_count
    out = np.zeros((N, len(fields), len(fields)))
    for c in range(3):
        np.add.at(out, mesh.faces[:, c], per_face)
    return out / space.mu[:, None, None]


@dataclass
class SplittingMap:
    """Harmonic map ``H = (h_1, ..., h_k)`` on ``B_r(x)`` with quality metrics."""

    center: int
    r: float
    fields: np.ndarray
    interior: np.ndarray
    collar: np.ndarray
    metrics: dict
    harmonic_residual: float
    space: DiscreteSpace = field(repr=False, default=None)
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {"center": int(self.center), "r": self.r, "fields": self.fields.tolist(),
             "metrics": {k: float(v) for k, v in self.metrics.items()}},
            sort_keys=True,
        )


def _pair_sample(m: int, seed: int = 0):
    if m <= 300:
        i, j = np.triu_indices(m, 1)
        return i, j
    rng = np.random.default_rng(seed)
    i = rng.integers(0, m, 10_000)
    j = rng.integers(0, m, 10_000)
    keep = i != j
    return i[keep], j[keep]


def map_quality(space: DiscreteSpace, fields, x: int, r: float, interior=None, seed: int = 0) -> dict:
    """``eps_lip``, ``eps_gram``, ``eps_hess`` and ``gh_defect`` of a map on ``B_r(x)``.

    ``eps_gram`` is the ``mu``-mean over the ball of the operator norm of
    ``Gram - Id``; ``eps_hess = r^2`` times the mean of the summed squared
    Hessians (vertices with a degenerate 1-ring fit are left out);
    ``gh_defect`` is the distortion of the map over sampled pairs.
    """
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    k = len(fields)
    inner = ball(space, x, r)[0] if interior is None else np.asarray(interior)
    mu = space.mu[inner]
    vol = float(mu.sum())
    gram = vertex_gram(space, fields)[inner] - np.eye(k)
    eps_gram = float(np.sum(np.linalg.norm(gram, ord=2, axis=(1, 2)) * mu) / vol)
    hess = np.zeros(space.vertex_count)
    valid = np.ones(space.vertex_count, dtype=bool)
    for h in fields:
        hh, ok = discrete_hessian(space, h)
        hess += np.nan_to_num(hh)
        valid &= ok
    ok = valid[inner]
    eps_hess = float(r * r * np.sum(hess[inner][ok] * mu[ok]) / max(float(mu[ok].sum()), 1e-300))
    eps_lip = max(edge_lipschitz(space, fields.T, inner) - 1.0, 0.0)
    i, j = _pair_sample(len(inner), seed)
    a, b = inner[i], inner[j]
    dist = np.empty(len(a))
    for p in np.unique(a):
        sel = a == p
        dist[sel] = space.distances_within(int(p), 2 * r * 1.01 + space.max_edge_length)[b[sel]]
    img = np.linalg.norm(fields[:, a] - fields[:, b], axis=0)
    gh = float(np.max(np.abs(img - dist))) if len(a) else 0.0
    return {"eps_lip": eps_lip, "eps_gram": eps_gram, "eps_hess": eps_hess, "gh_defect": gh}


def build_splitting_map(space: DiscreteSpace, handle: HeatKernelHandle | None, x: int, r: float,
                        seed_coords, seed: int = 0) -> SplittingMap:
    """Harmonic replacement of each seed on ``B_r(x)`` with the seed as collar data."""
    seeds = np.atleast_2d(np.asarray(seed_coords, dtype=float))
    if r < 5 * space.mean_edge_length:
        raise ValueError(f"radius {r:.3g} is below 5 mean edge lengths")
    inner, collar = ball_with_collar(space, x, r)
    if collar.size == 0:
        raise ValueError("the ball has no collar: it covers the whole space")
    for s in seeds:
        if np.ptp(s[np.concatenate([inner, collar])]) == 0:
            raise ValueError("constant seed field: the map would be rank-deficient")
    fields = np.array([harmonic_replacement(space, collar, s[collar], interior=inner) for s in seeds])
    # outside the closed ball keep the seeds so face gradients stay defined
    outside = np.setdiff1d(np.arange(space.vertex_count), np.concatenate([inner, collar]))
    fields[:, outside] = seeds[:, outside]
    res = float(np.max(np.abs((space.stiffness @ fields.T)[inner]))) if inner.size else 0.0
    metrics = map_quality(space, fields, x, r, inner, seed)
    return SplittingMap(int(x), r, fields, inner, collar, metrics, res, space, seed)


def splitting_quality(smap: SplittingMap) -> tuple:
    """Recompute ``(eps_lip, eps_gram, eps_hess, gh_defect)`` from the stored fields."""
    m = map_quality(smap.space, smap.fields, smap.center, smap.r, smap.interior, smap.seed)
    return m["eps_lip"], m["eps_gram"], m["eps_hess"], m["gh_defect"]


__all__ = [
    "smooth_profile", "CutoffReport", "cutoff_time", "heat_cutoff", "GaugingResult", "gauging_function",
    "harmonic_replacement", "ball_with_collar", "seed_coordinates", "vertex_gram", "SplittingMap",
    "map_quality", "splitting_quality", "build_splitting_map",
]
