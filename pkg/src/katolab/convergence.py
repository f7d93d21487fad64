"""Gromov-Hausdorff estimates, function transfer and refinement studies."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.stats import qmc

from .entropy import big_theta
from .geometry import DiscreteSpace, ball, ball_measures, omega
from .heat import spectrum
from .reports import VerificationReport

EXHAUSTIVE_LIMIT = 8


@dataclass
class GHEstimate:
    """Bounds on ``d_GH`` with a witnessing correspondence (list of index pairs)."""

    lower: float
    upper: float
    correspondence: list
    method: str

    def __post_init__(self):
        if not 0 <= self.lower <= self.upper + 1e-15:
            raise ValueError("need 0 <= lower <= upper")


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, DiscreteSpace):
        return np.asarray(X.distance, dtype=float)
    D = np.asarray(X, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("a finite metric space is given by a square distance matrix")
    return D


def distortion(DX, DY, pairs) -> float:
    """``max |d_X(x, x') - d_Y(y, y')|`` over pairs of related points."""
    p = np.asarray(pairs, dtype=int)
    if len(p) == 0:
        return 0.0
    return float(np.max(np.abs(DX[np.ix_(p[:, 0], p[:, 0])] - DY[np.ix_(p[:, 1], p[:, 1])])))


# --------------------------------------------------------------------------
# exhaustive search


@njit(cache=True)
def _branch_and_bound(DX, DY, best0):
    # slots 0..nx-1 pick f(x) in Y; slots nx..nx+ny-1 pick g(y) in X
    nx, ny = DX.shape[0], DY.shape[0]
    S = nx + ny
    pa = np.zeros(S, dtype=np.int64)
    pb = np.zeros(S, dtype=np.int64)
    choice = np.full(S, -1, dtype=np.int64)
    cur = np.zeros(S + 1)
    best = best0
    best_a = np.full(S, -1, dtype=np.int64)
    best_b = np.full(S, -1, dtype=np.int64)
    found = False
    level = 0
    while level >= 0:
        choice[level] += 1
        width = ny if level < nx else nx
        if choice[level] >= width:
            choice[level] = -1
            level -= 1
            continue
        if level < nx:
            a, b = level, choice[level]
        else:
            a, b = choice[level], level - nx
        worst = cur[level]
        ok = True
        for q in range(level):
            v = abs(DX[a, pa[q]] - DY[b, pb[q]])
            if v > worst:
                worst = v
                if worst >= best:
                    ok = False
                    break
        if not ok:
            continue
        pa[level] = a
        pb[level] = b
        cur[level + 1] = worst
        if level == S - 1:
            best = worst
            best_a[:] = pa
            best_b[:] = pb
            found = True
        else:
            level += 1
    return best, best_a, best_b, found


def _dedupe(a, b):
    seen = []
    for p in zip(a.tolist(), b.tolist()):
        if p not in seen:
            seen.append(p)
    return sorted(seen)


def gh_distance_small(X, Y, limit: int = EXHAUSTIVE_LIMIT) -> GHEstimate:
    """Exact ``d_GH`` as half the least distortion over all correspondences.

    A correspondence contains the graphs of some ``f: X -> Y`` and
    ``g: Y -> X``, so enumerating such pairs (branch and bound, in
    lexicographic order) is exhaustive.  The witness is the first optimal
    relation found.  Larger inputs fall back to :func:`gh_upper_bound`.
    """
    DX, DY = _as_matrix(X), _as_matrix(Y)
    if len(DX) > limit or len(DY) > limit:
        return gh_upper_bound(DX, DY)
    if len(DX) == 0 or len(DY) == 0:
        raise ValueError("metric spaces must be nonempty")
    greedy = gh_upper_bound(DX, DY)
    start = 2.0 * greedy.upper
    best, a, b, found = _branch_and_bound(DX, DY, start + 1e-300 if start == 0 else np.nextafter(start, np.inf))
    if not found:
        return GHEstimate(greedy.upper, greedy.upper, greedy.correspondence, "exhaustive")
    pairs = _dedupe(a, b)
    value = 0.5 * distortion(DX, DY, pairs)
    return GHEstimate(value, value, pairs, "exhaustive")


# --------------------------------------------------------------------------
# greedy surrogate


def _farthest_order(D, start=0):
    n = len(D)
    order = [start]
    d = D[start].copy()
    for _ in range(n - 1):
        nxt = int(np.argmax(d))
        order.append(nxt)
        d = np.minimum(d, D[nxt])
    return order


def _greedy_relation(DX, DY, x0, y0):
    pairs = [(x0, y0)]
    px, py = [x0], [y0]
    for x in _farthest_order(DX, x0)[1:]:
        cost = np.max(np.abs(DY[:, py] - DX[x, px][None, :]), axis=1)
        y = int(np.argmin(cost))
        pairs.append((x, y))
        px.append(x)
        py.append(y)
    covered = set(py)
    for y in _farthest_order(DY, y0):
        if y in covered:
            continue
        cost = np.max(np.abs(DX[:, px] - DY[y, py][None, :]), axis=1)
        x = int(np.argmin(cost))
        pairs.append((x, y))
        px.append(x)
        py.append(y)
    return pairs


def _refine(DX, DY, pairs, rounds):
    """Move single related pairs while the distortion drops."""
    pairs = list(pairs)
    cur = distortion(DX, DY, pairs)
    for _ in range(rounds):
        p = np.asarray(pairs)
        M = np.abs(DX[np.ix_(p[:, 0], p[:, 0])] - DY[np.ix_(p[:, 1], p[:, 1])])
        i, j = np.unravel_index(np.argmax(M), M.shape)
        improved = False
        for k in (i, j):
            rest = np.delete(p, k, axis=0)
            if len(rest) == 0:
                continue
            x, y = p[k]
            # keep coverage: x must stay related unless another pair covers it
            xs = np.array([x]) if x not in rest[:, 0] else np.arange(len(DX))
            ys = np.array([y]) if y not in rest[:, 1] else np.arange(len(DY))
            base = distortion(DX, DY, rest)
            C = np.max(np.abs(DX[np.ix_(xs, rest[:, 0])][:, None, :] - DY[np.ix_(ys, rest[:, 1])][None, :, :]), axis=2)
            C = np.maximum(C, base)
            a, b = np.unravel_index(np.argmin(C), C.shape)
            best = (cur, None)
            if C[a, b] < cur - 1e-15:
                best = (float(C[a, b]), (int(xs[a]), int(ys[b])))
            if best[1] is not None:
                pairs[k] = best[1]
                cur = best[0]
                improved = True
                break
        if not improved:
            break
    return pairs, cur


def gh_upper_bound(X, Y, budget: int = 16) -> GHEstimate:
    """Greedy correspondence from farthest-point orders plus local moves.

    The first landmark is the point of ``X`` with the largest distance sum;
    the ``budget`` points of ``Y`` whose distance sums are closest to it are
    tried as its image, so isometric relabelings are found.  The upper bound
    is half the distortion of the produced correspondence; the lower bound is
    ``|diam X - diam Y| / 2``.
    """
    DX, DY = _as_matrix(X), _as_matrix(Y)
    if len(DX) == 0 or len(DY) == 0:
        raise ValueError("metric spaces must be nonempty")
    sx, sy = DX.sum(axis=1), DY.sum(axis=1)
    x0 = int(np.argmax(sx))
    cands = np.argsort(np.abs(sy - sx[x0]), kind="stable")[:budget]
    best = None
    for y0 in cands:
        pairs = _greedy_relation(DX, DY, x0, int(y0))
        d = distortion(DX, DY, pairs)
        if best is None or d < best[0]:
            best = (d, pairs)
        if d == 0:
            break
    pairs, d = _refine(DX, DY, best[1], rounds=4 * budget)
    lower = 0.5 * abs(DX.max() - DY.max())
    return GHEstimate(min(lower, 0.5 * d), 0.5 * d, sorted(set(pairs)), "greedy")


# --------------------------------------------------------------------------
# balls against Euclidean balls


def euclidean_ball_sample(k: int, r: float, m: int, seed: int = 0) -> np.ndarray:
    """``m`` Halton points in the closed Euclidean ``k``-ball of radius ``r`` (centre included)."""
    sampler = qmc.Halton(d=k, scramble=True, seed=seed)
    pts = [np.zeros(k)]
    while len(pts) < m:
        z = (2.0 * sampler.random(4 * m) - 1.0) * r
        z = z[np.linalg.norm(z, axis=1) <= r]
        pts.extend(z[: m - len(pts)])
    return np.array(pts[:m])


def ball_distance_matrix(space: DiscreteSpace, x: int, r: float, m: int = 200):
    """Vertices of ``B_r(x)`` (farthest-point subsample of size ``m``) and their distances."""
    idx, _ = ball(space, x, r)
    pick = [int(x)]
    reach = 2 * r * 1.01 + space.max_edge_length
    rows = [space.distances_within(int(x), reach)]
    dmin = rows[0][idx].copy()
    while len(pick) < min(m, len(idx)):
        nxt = int(idx[np.argmax(dmin)])
        pick.append(nxt)
        rows.append(space.distances_within(nxt, reach))
        dmin = np.minimum(dmin, rows[-1][idx])
    D = np.array([row[pick] for row in rows])
    return np.array(pick), 0.5 * (D + D.T)


def ball_gh_to_euclidean(space: DiscreteSpace, x: int, r: float, k: int | None = None,
                         m_samples: int = 120, seed: int = 0) -> GHEstimate:
    """Greedy ``d_GH(B_r(x), B^k(r))`` with both balls sampled by ``m_samples`` points.

    Bounds are in length units; divide by ``r`` for the scale-free defect.
    """
    k = space.n if k is None else int(k)
    _, DX = ball_distance_matrix(space, x, r, m_samples)
    P = euclidean_ball_sample(k, r, m_samples, seed)
    DY = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    est = gh_upper_bound(DX, DY)
    return GHEstimate(est.lower, est.upper, est.correspondence, "sampled")


# --------------------------------------------------------------------------
# transfer of functions


def separated_set(D, eps: float) -> np.ndarray:
    """Greedy maximal ``eps``-separated subset (index order)."""
    chosen = []
    free = np.ones(len(D), dtype=bool)
    for i in range(len(D)):
        if free[i]:
            chosen.append(i)
            free &= D[i] > eps
    return np.array(chosen, dtype=int)


def transfer_function(correspondence, phi, eps: float, DY) -> np.ndarray:
    """Push ``phi`` on ``X`` to ``Y`` through a bump partition of unity.

    Centres ``p`` form a maximal ``2 eps``-separated set of ``Y``; the bump
    of ``p`` is ``1`` on ``B_{2 eps}(p)`` and vanishes outside ``B_{4 eps}(p)``.
    Each centre takes the value of ``phi`` at its first related point.  The
    result is linear in ``phi`` and a convex combination of its values.
    """
    DY = _as_matrix(DY)
    phi = np.asarray(phi, dtype=float)
    partner = {}
    for a, b in correspondence:
        partner.setdefault(int(b), int(a))
    related = np.zeros(len(DY), dtype=bool)
    related[list(partner)] = True
    if not related.any():
        raise ValueError("the correspondence relates no point of Y")
    uncovered = np.flatnonzero(DY[:, related].min(axis=1) > eps)
    if uncovered.size:
        raise ValueError(f"Y vertices not covered within eps: {uncovered[:10].tolist()}")
    centres = separated_set(DY, 2 * eps)
    vals = np.empty(len(centres))
    for i, p in enumerate(centres):
        if p in partner:
            vals[i] = phi[partner[p]]
        else:
            # nearest related point stands in for an unrelated centre
            q = int(np.flatnonzero(related)[np.argmin(DY[p, related])])
            vals[i] = phi[partner[q]]
    bumps = np.clip(2.0 - DY[:, centres] / (2.0 * eps), 0.0, 1.0)
    return (bumps @ vals) / bumps.sum(axis=1)


# --------------------------------------------------------------------------
# refinement studies


@dataclass
class SpectralStudy:
    """First ``m`` nonzero eigenvalues per refinement level."""

    levels: list
    table: np.ndarray
    targets: np.ndarray | None
    report: VerificationReport

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "k", "lambda"])
        for lv, row in zip(self.levels, self.table):
            for k, lam in enumerate(row, start=1):
                w.writerow([lv, k, repr(float(lam))])
        return buf.getvalue()


def spectral_convergence_study(space_family, m: int, targets=None, tolerance: float = 0.01,
                               spectra=None, labels=None) -> SpectralStudy:
    """Eigenvalues ``lambda_1..lambda_m`` along a refinement family.

    Margins: for each ``k`` the successive differences must shrink; with
    ``targets`` the finest level must also be within ``tolerance`` relative.
    ``spectra`` may supply precomputed :class:`SpectralData` per level.
    """
    rows = []
    for i, sp in enumerate(space_family):
        data = spectra[i] if spectra is not None else spectrum(sp, m=m + 1)
        rows.append(np.asarray(data.eigenvalues[1 : m + 1]))
    table = np.array(rows)
    margins, locs = [], []
    gaps = np.abs(np.diff(table, axis=0))
    for j in range(1, len(gaps)):
        # successive differences decrease (a 1e-12 relative floor absorbs exact levels)
        floor = 1e-12 * np.abs(table[-1])
        margins.extend((gaps[j - 1] - gaps[j] + floor) / np.maximum(gaps[j - 1], floor))
        locs.extend(("cauchy", j, k + 1) for k in range(m))
    tg = None
    if targets is not None:
        tg = np.asarray(targets, dtype=float)[:m]
        rel = np.abs(table[-1] - tg) / tg
        margins.extend(tolerance - rel)
        locs.extend(("target", k + 1) for k in range(m))
    rep = VerificationReport("spectral_convergence", margins, 0.0, locations=locs,
                             samples={"levels": len(table), "m": m},
                             extra={"finest_rel_error": (np.abs(table[-1] - tg) / tg) if tg is not None else None})
    return SpectralStudy(list(labels) if labels is not None else list(range(len(table))), table, tg, rep)


@dataclass
class TangentProbe:
    """Rescaling diagnostics at ``x`` for each ``eps``: volume ratios, GH and Theta defects."""

    x: int
    eps_grid: np.ndarray
    r_grid: np.ndarray
    ratios: np.ndarray
    cone_defect: np.ndarray
    gh_defect: np.ndarray
    theta_defect: np.ndarray
    excluded: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "r", "ratio", "gh_defect", "theta_defect"])
        for i, e in enumerate(self.eps_grid):
            for j, r in enumerate(self.r_grid):
                w.writerow([repr(float(e)), repr(float(r)), repr(float(self.ratios[i, j])),
                            repr(float(self.gh_defect[i])), repr(float(self.theta_defect[i]))])
        return buf.getvalue()


def tangent_probe(space: DiscreteSpace, handle, x: int, eps_grid, r_grid=None, gh_samples: int = 0) -> TangentProbe:
    """How nearly ``(X, d/eps, mu/eps^n, x)`` looks like a metric cone at ``x``.

    For each ``eps``: ratios ``mu(B_{eps r}) / (omega_n (eps r)^n)`` over
    ``r in [1/2, 2]``, their spread (cone defect), the spread of
    ``Theta_x((eps r)^2)`` over the same ``r`` and, when ``gh_samples > 0``,
    the GH defect of ``B_eps(x)`` to the Euclidean ball divided by ``eps``.
    Scales below five mean edge lengths are excluded.
    """
    del handle  # the probe is purely metric-measure; the handle is accepted for interface symmetry
    n = space.n
    eps_grid = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    r_grid = np.linspace(0.5, 2.0, 7) if r_grid is None else np.asarray(r_grid, dtype=float)
    keep, excluded = [], []
    for e in eps_grid:
        if e < 5 * space.mean_edge_length:
            excluded.append({"eps": float(e), "note": "below 5 mean edge lengths"})
        else:
            keep.append(e)
    keep = np.array(keep)
    ratios = np.zeros((len(keep), len(r_grid)))
    cone, gh, th = np.zeros(len(keep)), np.full(len(keep), np.nan), np.zeros(len(keep))
    for i, e in enumerate(keep):
        rad = e * r_grid
        ratios[i] = ball_measures(space, x, rad) / (omega(n) * rad**n)
        cone[i] = float(ratios[i].max() - ratios[i].min())
        vals = np.array([big_theta(space, q * q, x) for q in rad])
        th[i] = float(vals.max() - vals.min())
        if gh_samples > 0:
            gh[i] = ball_gh_to_euclidean(space, x, e, n, gh_samples).upper / e
    return TangentProbe(int(x), keep, r_grid, ratios, cone, gh, th, excluded)


def _match_points(space: DiscreteSpace, p):
    if np.ndim(p) == 0:
        return space._check_vertex(int(p))
    if space.mesh is None:
        raise ValueError("positions can only be matched on mesh spaces")
    off = space.mesh.edge_vector(np.zeros(space.vertex_count, dtype=int), np.arange(space.vertex_count))
    pos = space.mesh.positions[0] + off
    d = np.linalg.norm(pos - np.asarray(p, dtype=float), axis=1)
    i = int(np.argmin(d))
    if d[i] > space.max_edge_length:
        raise ValueError(f"no vertex within one edge length of {p}")
    return i


def volume_continuity_check(space_family, points, r: float, target: float | None = None,
                            tolerance: float = 0.02) -> VerificationReport:
    """``mu(B_r(x_level))`` along a family with matched basepoints.

    ``points`` holds one vertex id or one position per level.  The finest
    value must lie within ``tolerance`` (relative) of ``target``.  Also
    reports whether successive differences shrink.
    """
    space_family = list(space_family)
    if len(points) != len(space_family):
        raise ValueError("one basepoint per level is required")
    vols = np.array([ball(sp, _match_points(sp, p), r)[1] for sp, p in zip(space_family, points)])
    diffs = np.abs(np.diff(vols))
    cauchy = bool(np.all(np.diff(diffs) <= 0)) if len(diffs) > 1 else True
    margins, locs = [], []
    if target is not None:
        rel = abs(vols[-1] - target) / abs(target)
        margins.append(tolerance - rel)
        locs.append("target")
    return VerificationReport("volume_continuity", margins, 0.0, locations=locs,
                              samples={"levels": len(vols), "r": r},
                              extra={"volumes": vols, "target": target, "cauchy": cauchy,
                                     "rel_errors": np.abs(vols - target) / abs(target) if target else None},
                              reason=None if target is not None else "no analytic target given")


__all__ = [
    "GHEstimate", "distortion", "gh_distance_small", "gh_upper_bound", "euclidean_ball_sample",
    "ball_distance_matrix", "ball_gh_to_euclidean", "separated_set", "transfer_function",
    "SpectralStudy", "spectral_convergence_study", "TangentProbe", "tangent_probe", "volume_continuity_check",
]
