"""Residual checks of the semigroup inequalities on discrete spaces.

Every check returns a :class:`VerificationReport` whose margins are already
normalised by the size of the inequality, so that a single tolerance applies.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import lambertw

from ._fmm import vertex_face_csr
from .geometry import DiscreteSpace, ball, face_gradients
from .heat import HeatKernelHandle, carre_du_champ
from .kato import KatoProfile
from .reports import VerificationReport, stability_report

HARMONIC_TOL = 1e-8


def _k_at(profile: KatoProfile | None, t: float) -> float:
    return 0.0 if profile is None else profile.at(t)


def _laplacian_of_flow(handle: HeatKernelHandle, t: float, u0) -> np.ndarray:
    """``L P_t u0`` (positive Laplacian), spectrally on the modal backend."""
    if handle.backend == "modal":
        handle._note_truncation(t)
        lam = handle.spectral.eigenvalues
        a = handle.coefficients(u0)
        return handle.spectral.modes @ (lam * np.exp(-lam * t) * a)
    return handle.space.laplacian(handle.apply(t, u0))


def _sample_vertices(space: DiscreteSpace, count: int) -> np.ndarray:
    N = space.vertex_count
    return np.unique(np.linspace(0, N - 1, min(count, N)).round().astype(int))


def edge_lipschitz(space: DiscreteSpace, u, subset=None) -> float:
    """Largest ``|u_i - u_j| / len_ij`` over edges (inside ``subset`` if given)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    e = space.edges
    keep = np.ones(len(e), dtype=bool)
    if subset is not None:
        inside = np.zeros(space.vertex_count, dtype=bool)
        inside[subset] = True
        keep = inside[e[:, 0]] & inside[e[:, 1]]
    if not keep.any():
        return 0.0
    du = np.linalg.norm(u[e[keep, 0]] - u[e[keep, 1]], axis=1)
    return float(np.max(du / space.edge_lengths[keep]))


# --------------------------------------------------------------------------
# Li-Yau


def li_yau_residual(handle: HeatKernelHandle, profile: KatoProfile | None, u0, t_grid,
                    xs=None, tolerance: float = 1e-3) -> VerificationReport:
    """Differential Harnack residual for ``u = P_t u0``.

    ``R = e^a n/2t - e^-a Gamma(u)/u^2 + (d_t u)/u`` with ``a = 8 sqrt(n k_t)``
    and ``d_t u = -L u`` evaluated spectrally;
    margins are ``R / (n/2t)``.  ``xs`` defaults to 20 spread-out vertices.
    """
    space = handle.space
    n = space.n
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 <= 0):
        raise ValueError("Li-Yau needs a strictly positive initial datum")
    xs = _sample_vertices(space, 20) if xs is None else np.asarray(xs, dtype=int)
    margins, locs = [], []
    reason = None
    step = 0.0
    for t in np.asarray(t_grid, dtype=float):
        k = _k_at(profile, t)
        if k > 1.0 / (16 * n):
            reason = f"k_t = {k:.3g} exceeds the Dynkin threshold at t = {t:.3g}"
        a = 8.0 * math.sqrt(n * k)
        u = handle.apply(t, u0)
        lap = _laplacian_of_flow(handle, t, u0)
        g = carre_du_champ(space, u)
        bound = n / (2.0 * t)
        R = math.exp(a) * bound - math.exp(-a) * g / u**2 - lap / u
        margins.extend(R[xs] / bound)
        locs.extend((float(t), int(x)) for x in xs)
        step = max(step, float(np.max(np.sqrt(g[xs]) / u[xs])) * space.mean_edge_length)
    # the discrete inequality needs |grad log u| resolved by the mesh: step well below 1
    return VerificationReport(
        "li_yau", margins, tolerance, locations=locs, taints=set(handle.taints), reason=reason,
        samples={"t": np.asarray(t_grid, dtype=float), "x": xs}, extra={"log_gradient_step": step},
    )


# --------------------------------------------------------------------------
# semigroup gradient estimate


def gradient_estimate_check(handle: HeatKernelHandle, profile: KatoProfile | None, u, t: float,
                            tolerance: float = 1e-6) -> VerificationReport:
    """Pointwise ``Gamma(P_t u) <= e^{4 k_t} P_t Gamma(u)``.

    Margins are divided by ``max(1, max P_t Gamma(u))``.  The extra field
    ``lipschitz_ratio`` compares edge Lipschitz constants of ``P_t u`` and
    ``u`` with the admissible factor ``e^{1/8n}``.
    """
    space = handle.space
    u = np.asarray(u, dtype=float)
    k = _k_at(profile, t)
    lhs = carre_du_champ(space, handle.apply(t, u))
    rhs = math.exp(4.0 * k) * handle.apply(t, carre_du_champ(space, u))
    scale = max(1.0, float(np.max(np.abs(rhs))))
    lu = edge_lipschitz(space, u)
    lpu = edge_lipschitz(space, handle.apply(t, u))
    return VerificationReport(
        "gradient_estimate", (rhs - lhs) / scale, tolerance, taints=set(handle.taints),
        samples={"t": t, "k_t": k},
        extra={"scale": scale, "lipschitz_ratio": lpu / lu if lu > 0 else 0.0,
               "lipschitz_factor": math.exp(1.0 / (8 * space.n))},
    )


# --------------------------------------------------------------------------
# Bakry-Ledoux


def bakry_ledoux_residual(handle: HeatKernelHandle, profile: KatoProfile | None, v, phi, t: float,
                          tolerance: float = 1e-6, form: str = "manifold") -> VerificationReport:
    """``1/2 int (P_t phi v^2 - phi (P_t v)^2) >= c (t int phi Gamma(P_t v) + t^2/n int phi (L P_t v)^2)``.

    ``form="manifold"`` uses ``c = e^{-12 k_t}``; ``form="limit"`` is the
    curvature-free version ``c = 1``.  The margin ``LHS - RHS`` is divided by
    ``||v||^2`` in ``L^2(mu)``.
    """
    space = handle.space
    n = space.n
    mu = space.mu
    v = np.asarray(v, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise ValueError("the weight phi must be nonnegative")
    if form not in ("manifold", "limit"):
        raise ValueError(f"unknown form {form!r}")
    k = _k_at(profile, t) if form == "manifold" else 0.0
    pv = handle.apply(t, v)
    lhs = 0.5 * float(np.sum((handle.apply(t, phi) * v * v - phi * pv * pv) * mu))
    gam = carre_du_champ(space, pv)
    lap = _laplacian_of_flow(handle, t, v)
    rhs = math.exp(-12.0 * k) * float(np.sum(phi * (t * gam + t * t / n * lap * lap) * mu))
    norm = float(np.sum(v * v * mu))
    scale = norm if norm > 0 else 1.0
    return VerificationReport(
        f"bakry_ledoux_{form}", [(lhs - rhs) / scale], tolerance, taints=set(handle.taints),
        samples={"t": t, "k_t": k}, extra={"lhs": lhs, "rhs": rhs, "norm": norm},
    )


def bakry_ledoux_scalar(xi, n: int) -> np.ndarray:
    """Per-mode margin ``(1 - e^{-2 xi})/2 - e^{-2 xi}(xi + xi^2/n)`` for ``xi = lambda t``."""
    xi = np.asarray(xi, dtype=float)
    return -0.5 * np.expm1(-2 * xi) - np.exp(-2 * xi) * (xi + xi * xi / n)


# --------------------------------------------------------------------------
# Gaussian bounds


def _beta_needed(q, a):
    """Smallest ``beta >= 1`` for ``q <= beta e^{-a/beta}`` and for ``q >= e^{-beta a}/beta``."""
    if a > 0:
        w = lambertw(a / q).real / a
        up, lo = 1.0 / w, w
    else:
        up, lo = q, 1.0 / q
    return max(1.0, up), max(1.0, lo)


def gaussian_bound_fit(handle: HeatKernelHandle, sample_pairs, t_grid, beta_budget: float = 100.0) -> VerificationReport:
    """Smallest ``beta`` with two-sided Gaussian bounds over the sample.

    Each sample uses ``q = H(t,x,y) mu(B_sqrt t (x))`` and ``a = d(x,y)^2 / t``.
    Kernel values below ``1e-15`` of the row maximum are excluded and taint
    the report.  The margin is ``1 - beta / beta_budget``.
    """
    space = handle.space
    betas, locs = [], []
    taints = set()
    excluded = 0
    for t in np.asarray(t_grid, dtype=float):
        for x, y in sample_pairs:
            row = handle.kernel_row(t, x)
            H = float(row[y])
            if not H > 1e-15 * row.max():
                excluded += 1
                taints.add("clamped")
                continue
            _, vol = ball(space, x, math.sqrt(t))
            d = float(space.distances_from(x)[y])
            up, lo = _beta_needed(H * vol, d * d / t)
            betas.append(max(up, lo))
            locs.append((float(t), int(x), int(y)))
    betas = np.array(betas)
    beta = float(betas.max()) if betas.size else float("nan")
    rep = VerificationReport(
        "gaussian_bounds", [1.0 - beta / beta_budget] if betas.size else [], 0.0,
        taints=taints | set(handle.taints), samples={"pairs": len(sample_pairs), "t": np.asarray(t_grid)},
        extra={"beta": beta, "excluded": excluded, "worst": locs[int(np.argmax(betas))] if betas.size else None},
        reason=None if betas.size else "every sample was excluded",
    )
    return rep


# --------------------------------------------------------------------------
# discrete Hessian


def _tangent_frames(mesh):
    """Area-weighted vertex normals and an orthonormal tangent basis per vertex."""
    N = mesh.vertex_count
    fn = np.cross(*mesh.face_edge_vectors()[:2])
    nrm = np.zeros((N, 3))
    for c in range(3):
        np.add.at(nrm, mesh.faces[:, c], fn)
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    # axis least aligned with the normal seeds the frame
    axis = np.eye(3)[np.argmin(np.abs(nrm), axis=1)]
    e1 = axis - np.einsum("ij,ij->i", axis, nrm)[:, None] * nrm
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(nrm, e1)
    return nrm, e1, e2


def discrete_hessian(space: DiscreteSpace, u):
    """Squared Frobenius norm of the Hessian at each vertex and a validity mask.

    The per-face gradients of the linear interpolant around a vertex are
    fitted by an affine map of the face-centroid offsets in tangent-plane
    coordinates; the linear part is the Hessian.  Vertices whose 1-ring does
    not determine the fit are marked invalid.
    """
    mesh = space.mesh
    if mesh is None:
        raise ValueError("the discrete Hessian needs a mesh space")
    N = space.vertex_count
    f = mesh.faces
    g = face_gradients(mesh, u)
    _, e1, e2 = _tangent_frames(mesh)
    M = np.zeros((N, 3, 3))
    R = np.zeros((N, 3, 2))
    for c in range(3):
        v = f[:, c]
        off = (mesh.edge_vector(v, f[:, (c + 1) % 3]) + mesh.edge_vector(v, f[:, (c + 2) % 3])) / 3.0
        p = np.column_stack([np.ones(len(v)), np.einsum("ij,ij->i", off, e1[v]), np.einsum("ij,ij->i", off, e2[v])])
        G = np.column_stack([np.einsum("ij,ij->i", g, e1[v]), np.einsum("ij,ij->i", g, e2[v])])
        np.add.at(M, v, p[:, :, None] * p[:, None, :])
        np.add.at(R, v, p[:, :, None] * G[:, None, :])
    cond = np.linalg.cond(M)
    valid = np.isfinite(cond) & (cond < 1e12)
    out = np.full(N, np.nan)
    if valid.any():
        sol = np.linalg.solve(M[valid], R[valid])
        out[valid] = np.sum(sol[:, 1:, :] ** 2, axis=(1, 2))
    return out, valid


def hessian_estimate_check(space: DiscreteSpace, u, x: int, r: float, T: float,
                           budget: float = 100.0) -> VerificationReport:
    """Ratio ``int_{B_r/2} |Hess u|^2 / int_{B_r} ((L u)^2 + Gamma(u) / min(r^2, T))``.

    The margin is ``1 - ratio / budget``; stability across refinements is
    judged with :func:`refinement_stability` on the reported ratios.
    """
    if r < 5 * space.mean_edge_length:
        reason = f"radius {r:.3g} is below 5 mean edge lengths"
    else:
        reason = None
    u = np.asarray(u, dtype=float)
    mu = space.mu
    hess, valid = discrete_hessian(space, u)
    inner, _ = ball(space, x, r / 2)
    outer, _ = ball(space, x, r)
    ok = inner[valid[inner]]
    lhs = float(np.sum(hess[ok] * mu[ok]))
    lap = space.laplacian(u)
    gam = carre_du_champ(space, u)
    rhs = float(np.sum((lap[outer] ** 2 + gam[outer] / min(r * r, T)) * mu[outer]))
    ratio = lhs / rhs if rhs > 0 else 0.0
    return VerificationReport(
        "hessian_estimate", [1.0 - ratio / budget], 0.0, reason=reason,
        samples={"x": int(x), "r": r, "T": T},
        extra={"lhs": lhs, "rhs": rhs, "ratio": ratio, "excluded": int(np.count_nonzero(~valid[inner]))},
    )


# --------------------------------------------------------------------------
# harmonic functions


def harmonic_residual(space: DiscreteSpace, h, interior) -> float:
    """``max |(W h)_I|`` relative to ``max |diag W| max |h|``."""
    h = np.asarray(h, dtype=float)
    res = (space.stiffness @ h)[interior]
    scale = float(np.max(np.abs(space.stiffness.diagonal()))) * max(float(np.max(np.abs(h))), 1e-300)
    return float(np.max(np.abs(res)) / scale) if len(res) else 0.0


def harmonic_gradient_bound_check(space: DiscreteSpace, h, x: int, r: float, T: float,
                                  c_n: float | None = None, tolerance: float = HARMONIC_TOL) -> VerificationReport:
    """Gradient of a function harmonic on ``B_r(x)``, measured on ``B_{r/2}(x)``.

    ``ratio_energy = sup |grad h| / (mean_{B_r} |grad h|^2)^{1/2}`` and
    ``ratio_sup = r sup |grad h| / sup_{B_r} |h|``.  The margin compares the
    first ratio with ``c_n^{1 + r/sqrt T}`` (default ``c_n = 2n``).
    """
    h = np.asarray(h, dtype=float)
    inner, _ = ball(space, x, r / 2)
    outer, vol = ball(space, x, r)
    res = harmonic_residual(space, h, outer)
    if res > tolerance:
        raise ValueError(f"field is not harmonic on the ball (relative residual {res:.3g})")
    gam = carre_du_champ(space, h)
    top = math.sqrt(float(gam[inner].max()))
    mean = math.sqrt(float(np.sum(gam[outer] * space.mu[outer]) / vol))
    hmax = float(np.max(np.abs(h[outer])))
    ratio = top / mean if mean > 0 else 0.0
    ratio_sup = r * top / hmax if hmax > 0 else 0.0
    c_n = 2.0 * space.n if c_n is None else c_n
    budget = c_n ** (1.0 + r / math.sqrt(T))
    return VerificationReport(
        "harmonic_gradient", [1.0 - ratio / budget], 0.0, samples={"x": int(x), "r": r, "T": T},
        extra={"ratio_energy": ratio, "ratio_sup": ratio_sup, "budget": budget, "residual": res},
    )


def lipschitz_improvement_check(handle: HeatKernelHandle, profile: KatoProfile | None, h, x: int, r: float,
                                delta: float, c_budget: float = 10.0) -> VerificationReport:
    """Edge Lipschitz constant of ``h`` on ``B_{r/2}(x)`` against ``1 + C delta``.

    Hypotheses: ``k_{r^2} <= delta <= 1/16n`` and ``mean_{B_r} |Gamma(h) - 1| <= delta^2``;
    an unmet one makes the report inconclusive and is named in ``reason``.
    The fitted constant is ``C = max(Lip - 1, 0) / delta``.
    """
    space = handle.space
    n = space.n
    h = np.asarray(h, dtype=float)
    outer, vol = ball(space, x, r)
    inner, _ = ball(space, x, r / 2)
    k = _k_at(profile, r * r)
    gam = carre_du_champ(space, h)
    dev = float(np.sum(np.abs(gam[outer] - 1.0) * space.mu[outer]) / vol)
    reason = None
    if not k <= delta:
        reason = f"k_(r^2) = {k:.3g} exceeds delta = {delta:.3g}"
    elif delta > 1.0 / (16 * n):
        reason = f"delta = {delta:.3g} exceeds 1/(16n)"
    elif dev > delta * delta:
        reason = f"mean |Gamma(h) - 1| = {dev:.3g} exceeds delta^2 = {delta * delta:.3g}"
    lip = edge_lipschitz(space, h, inner)
    C = max(lip - 1.0, 0.0) / delta if delta > 0 else float("inf")
    return VerificationReport(
        "lipschitz_improvement", [(1.0 + c_budget * delta - lip) / (1.0 + c_budget * delta)], 0.0,
        reason=reason, samples={"x": int(x), "r": r, "delta": delta},
        extra={"lipschitz": lip, "fitted_C": C, "k": k, "energy_deviation": dev},
    )


def refinement_stability(name: str, values, factor: float = 2.0) -> VerificationReport:
    """Values from successive refinements stay within ``factor`` of each other."""
    return stability_report(name, values, factor)


__all__ = [
    "li_yau_residual", "gradient_estimate_check", "bakry_ledoux_residual", "bakry_ledoux_scalar",
    "gaussian_bound_fit", "discrete_hessian", "hessian_estimate_check", "harmonic_residual",
    "harmonic_gradient_bound_check", "lipschitz_improvement_check", "edge_lipschitz", "refinement_stability",
]
