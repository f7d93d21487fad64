"""Theta- and Theta-volumes, heat-trace quantity and volume density.

With ``U(t,x,y) = -4t log((4 pi t)^{n/2} H(t,x,y))`` the two volumes are

    theta_x(s, t) = (4 pi s)^{-n/2} sum_y exp(-U(t,x,y) / 4s) mu_y
    Theta_x(s)    = (4 pi s)^{-n/2} sum_y exp(-d(x,y)^2 / 4s) mu_y

``theta`` is evaluated as a power of the normalised kernel, never through
``U``, which keeps it accurate where ``H`` is tiny.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DiscreteSpace, ball_measures, omega
from .heat import HeatKernelHandle
from .kato import KatoProfile, strong_kato_integral
from .reports import INCONCLUSIVE, VerificationReport

CLAMP_REL = 1e-15


class EntropyError(ValueError):
    pass


def _row(handle: HeatKernelHandle, t: float, x: int):
    """Kernel row with the relative floor applied; returns ``(row, clamped)``."""
    row = handle.kernel_row(t, x)
    top = row.max()
    if not top > 0:
        raise EntropyError(f"heat kernel row at x={x}, t={t} has no positive entry")
    lo = CLAMP_REL * top
    clamped = row < lo
    if clamped.any():
        handle.taints.add("clamped")
        row = np.maximum(row, lo)
    return row, clamped


def u_function(handle: HeatKernelHandle, t: float, x: int):
    """``U(t, x, .)`` and the mask of clamped kernel entries."""
    n = handle.space.n
    row, clamped = _row(handle, t, x)
    return -4.0 * t * np.log((4 * np.pi * t) ** (n / 2) * row), clamped


def theta(handle: HeatKernelHandle, s: float, t: float, x: int) -> float:
    """``theta_x(s, t)`` via ``sum_y ((4 pi t)^{n/2} H)^{t/s} mu_y``."""
    if not (s > 0 and t > 0):
        raise ValueError("s and t must be positive")
    n = handle.space.n
    row, _ = _row(handle, t, x)
    logq = np.log(row) + (n / 2) * math.log(4 * math.pi * t)
    return float(np.exp((t / s) * logq) @ handle.mu) * (4 * math.pi * s) ** (-n / 2)


def big_theta(space: DiscreteSpace, s: float, x: int, method: str = "direct") -> float:
    """``Theta_x(s)``; ``method="cavalieri"`` sums over sorted distance shells."""
    if not s > 0:
        raise ValueError("s must be positive")
    d = space.distances_from(x)
    pref = (4 * math.pi * s) ** (-space.n / 2)
    if method == "direct":
        return pref * float(np.exp(-(d * d) / (4 * s)) @ space.mu)
    if method != "cavalieri":
        raise ValueError(f"unknown method {method!r}")
    # Theta = sum_k mu(B_{d_k}) (e^{-d_k^2/4s} - e^{-d_{k+1}^2/4s})
    order = np.argsort(d, kind="stable")
    ds = d[order]
    cum = np.cumsum(space.mu[order])
    last = np.r_[ds[1:] != ds[:-1], True]
    dk, ck = ds[last], cum[last]
    g = np.exp(-(dk * dk) / (4 * s))
    return pref * float(np.sum(ck * (g - np.r_[g[1:], 0.0])))


def heat_trace_quantity(handle: HeatKernelHandle, x: int, t: float) -> float:
    """``(4 pi t)^{n/2} H(t, x, x)``."""
    n = handle.space.n
    return float((4 * math.pi * t) ** (n / 2) * handle.kernel_row(t, x)[x])


@dataclass
class EntropyGrid:
    x: int
    n: int
    s_grid: np.ndarray
    t_grid: np.ndarray
    U: np.ndarray
    theta: np.ndarray
    big_theta: np.ndarray
    taints: set = field(default_factory=set)


def entropy_grid(handle: HeatKernelHandle, x: int, s_grid, t_grid) -> EntropyGrid:
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    before = set(handle.taints)
    U = np.array([u_function(handle, t, x)[0] for t in t_grid])
    th = np.array([[theta(handle, s, t, x) for t in t_grid] for s in s_grid])
    bt = np.array([big_theta(handle.space, s, x) for s in s_grid])
    return EntropyGrid(x, handle.space.n, s_grid, t_grid, U, th, bt, set(handle.taints) - before)


def theta_limit_check(handle: HeatKernelHandle, s: float, x: int, t_grid, tolerance: float = 0.02) -> VerificationReport:
    """Gap ``|theta_x(s,t) - Theta_x(s)|`` along a decreasing ``t_grid``.

    Margin ``tolerance - gap`` at the smallest ``t``; the approach is also
    required to be monotone within ``tolerance`` along the grid.
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))[::-1]
    ref = big_theta(handle.space, s, x)
    gaps = np.array([abs(theta(handle, s, t, x) - ref) for t in t_grid]) / ref
    steps = gaps[:-1] - gaps[1:]  # should be >= 0 when the gap shrinks
    margins = np.concatenate([[tolerance - gaps[-1]], steps + tolerance])
    rep = VerificationReport(
        "theta_limit", margins, tolerance=0.0,
        locations=[("final_gap", float(t_grid[-1]))] + [("step", float(t)) for t in t_grid[1:]],
        taints=set(handle.taints), samples={"s": s, "x": x, "t_grid": t_grid},
        extra={"gaps": gaps, "big_theta": ref},
    )
    return rep


def derive_cn(n: int):
    """``(b_n, c_n)`` with ``b_n = max_{0<r<=1/16n} (e^{8 sqrt(n r)} - 1)/sqrt(r)`` and ``c_n = n b_n``.

    The maximand is increasing in ``r`` so the maximum sits at ``r = 1/16n``,
    which gives ``b_n = 4 sqrt(n) (e^2 - 1)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    r = 1.0 / (16 * n)
    b = math.expm1(8 * math.sqrt(n * r)) / math.sqrt(r)
    return b, n * b


def phi_at(profile: KatoProfile, tau: float) -> float:
    """``Phi(tau)``; below the first node the linear-vanishing model applies."""
    if tau <= 0:
        return 0.0
    t1, k1 = profile.times[0], max(profile.values[0], 0.0)
    if tau < t1:
        return 2.0 * math.sqrt(k1 * tau / t1)
    return strong_kato_integral(profile, tau).value


@dataclass
class MonotonicityScan:
    x: int
    s: float
    t: float
    lambdas: np.ndarray
    raw: np.ndarray
    corrected: np.ndarray
    lam_bar: float
    c_n: float
    Lambda: float
    report: VerificationReport

    @property
    def verdict(self) -> str:
        return self.report.verdict

    @property
    def direction(self) -> str:
        if self.t > self.s:
            return "nondecreasing"
        if self.t < self.s:
            return "nonincreasing"
        return "constant"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "theta_raw", "theta_corrected", "verdict"])
        for lam, r, c in zip(self.lambdas, self.raw, self.corrected):
            w.writerow([repr(float(lam)), repr(float(r)), repr(float(c)), self.verdict])
        return buf.getvalue()


def monotonicity_scan(handle: HeatKernelHandle, profile: KatoProfile, x: int, s: float, t: float,
                      lam_grid=None, c_n: float | None = None, T: float | None = None,
                      step_tolerance: float = 1e-4) -> MonotonicityScan:
    """Scan ``lam -> theta_x(lam s, lam t) exp(c_n Phi(lam t) (t/s - s/t))``.

    In ``lam`` the corrected value should be nondecreasing when ``t >= s``
    and nonincreasing when ``t <= s``, for ``lam <= lam_bar`` with
    ``lam_bar = min(exp(-c_n Lambda s/t), exp(-4 sqrt(n) Lambda))`` and
    ``Lambda = Phi(T)``.  Grid points with ``lam min(s,t)`` below the trusted
    time ``t_min`` of the space are dropped; if none survive the verdict is
    inconclusive.
    """
    space = handle.space
    n = space.n
    if c_n is None:
        c_n = derive_cn(n)[1]
    T = profile.times[-1] if T is None else T
    if t > T * (1 + 1e-12):
        raise ValueError("t must lie in (0, T]")
    Lam = phi_at(profile, T)
    lam_bar = min(math.exp(-c_n * Lam * s / t), math.exp(-4 * math.sqrt(n) * Lam))
    t_min = space.t_min
    if lam_grid is None:
        lam_grid = lam_bar * np.logspace(-2, 0, 16)
    lam_grid = np.sort(np.asarray(lam_grid, dtype=float))
    if np.any(lam_grid > lam_bar * (1 + 1e-12)):
        raise ValueError(f"lambda grid exceeds lambda_bar = {lam_bar:.6g}")
    keep = lam_grid * min(s, t) >= t_min
    lam_grid = lam_grid[keep]
    before = set(handle.taints)
    raw = np.array([theta(handle, lam * s, lam * t, x) for lam in lam_grid])
    corr_exp = (t / s - s / t) * c_n
    corrected = raw * np.exp(corr_exp * np.array([phi_at(profile, lam * t) for lam in lam_grid]))
    sign = 1.0 if t > s else (-1.0 if t < s else 0.0)
    d = np.diff(corrected)
    if sign == 0.0:
        margins = -np.abs(d) / corrected[:-1]
    else:
        margins = sign * d / corrected[:-1]
    reason = None
    if len(lam_grid) < 2:
        reason = f"lambda_bar = {lam_bar:.3g} leaves no grid point above t_min = {t_min:.3g}"
        margins = np.zeros(0)
    rep = VerificationReport(
        "monotonicity", margins, tolerance=step_tolerance,
        locations=[("lambda", float(a), float(b)) for a, b in zip(lam_grid[:-1], lam_grid[1:])],
        taints=set(handle.taints) - before, reason=reason,
        samples={"x": x, "s": s, "t": t, "lambda_bar": lam_bar, "c_n": c_n, "Lambda": Lam,
                 "direction": "nondecreasing" if sign > 0 else ("nonincreasing" if sign < 0 else "constant")},
    )
    return MonotonicityScan(x, s, t, lam_grid, raw, corrected, lam_bar, c_n, Lam, rep)


@dataclass
class HeatTraceScan:
    times: np.ndarray
    values: np.ndarray
    phi: np.ndarray
    eta: float
    raw_monotone: bool


def heat_trace_scan(handle: HeatKernelHandle, profile: KatoProfile, x: int, t_grid) -> HeatTraceScan:
    """Fit the largest ``eta`` making ``exp(Phi(t)/eta) (4 pi t)^{n/2} H(t,x,x)`` nondecreasing.

    ``eta = inf`` means no correction is needed; ``eta = nan`` means no
    finite ``eta`` works (a decrease where ``Phi`` is flat).
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    q = np.array([heat_trace_quantity(handle, x, t) for t in t_grid])
    phi = np.array([phi_at(profile, t) for t in t_grid])
    dlog = np.diff(np.log(q))
    dphi = np.diff(phi)
    need = dlog < 0
    if not need.any():
        return HeatTraceScan(t_grid, q, phi, float("inf"), True)
    if np.any(need & (dphi <= 0)):
        return HeatTraceScan(t_grid, q, phi, float("nan"), False)
    kappa = float(np.max(-dlog[need] / dphi[need]))
    return HeatTraceScan(t_grid, q, phi, 1.0 / kappa, False)


@dataclass
class DensityEstimate:
    """Ball-volume ratios ``mu(B_r) / (omega_n r^n)`` and the extrapolated density.

    ``density`` is the intercept of a least-squares fit ``ratio = a + b r^2``
    over the trusted radii; ``richardson`` is the classical two-radius value
    from the two smallest trusted radii, kept for comparison.
    """

    basepoint: int
    n: int
    r_grid: np.ndarray
    ball_volumes: np.ndarray
    ratios: np.ndarray
    density: float
    uncertainty: float
    richardson: float
    big_theta_check: float
    excluded: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "ball_volume", "ratio"])
        for r, b, q in zip(self.r_grid, self.ball_volumes, self.ratios):
            w.writerow([repr(float(r)), repr(float(b)), repr(float(q))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {"basepoint": int(self.basepoint), "n": self.n, "r_grid": self.r_grid.tolist(),
             "ratios": self.ratios.tolist(), "density": self.density, "uncertainty": self.uncertainty,
             "richardson": self.richardson, "big_theta_check": self.big_theta_check,
             "excluded": self.excluded},
            sort_keys=True,
        )


MIN_BALL_VERTICES = 64


def richardson(r1, q1, r2, q2):
    """Remove an ``r^2`` term: value at ``r = 0`` of ``q = a + b r^2``."""
    return (r2 * r2 * q1 - r1 * r1 * q2) / (r2 * r2 - r1 * r1)


def _trusted_window(space: DiscreteSpace, x: int):
    d = space.distances_from(x)
    top = d.max() / 4
    k = min(MIN_BALL_VERTICES, len(d)) - 1
    lo = max(3 * space.mean_edge_length, float(np.partition(d, k)[k]))
    return lo, top


def default_radii(space: DiscreteSpace, x: int, count: int = 24) -> np.ndarray:
    """Geometric radii across the trusted window of ``x``."""
    lo, top = _trusted_window(space, x)
    if lo >= top:
        return np.array([top])
    return np.geomspace(lo, top, count)


def _fit_intercept(r, q, n):
    A = np.column_stack([np.ones_like(r), r**2])
    return float(np.linalg.lstsq(A, q, rcond=None)[0][0])


def volume_density(space: DiscreteSpace, x: int, r_grid=None) -> DensityEstimate:
    """Extrapolate ``mu(B_r(x)) / (omega_n r^n)`` to ``r = 0``.

    Trusted radii lie between ``max(3 h, r_64)`` and a quarter of the
    eccentricity of ``x``, where ``h`` is the mean edge length and ``r_64``
    the radius of the smallest ball holding 64 vertices; others are excluded
    with a note.  The density is the intercept of a least-squares fit in
    ``r^2``; fitting over the whole window averages out the vertex-count
    quantisation that a two-radius extrapolation would amplify.  The
    uncertainty is the spread of the intercepts on the full, lower and
    upper two-thirds of the window.
    """
    n = space.n
    r_grid = default_radii(space, x) if r_grid is None else np.sort(np.asarray(r_grid, dtype=float))
    lo, top = _trusted_window(space, x)
    excluded = []
    ok = []
    for r in r_grid:
        if r < lo * (1 - 1e-12):
            excluded.append({"r": float(r), "note": "below resolution (3 edge lengths / 64 vertices)"})
        elif r > top * (1 + 1e-12):
            excluded.append({"r": float(r), "note": "above a quarter of the eccentricity"})
        else:
            ok.append(r)
    r_ok = np.array(ok)
    if len(r_ok) < 2:
        raise EntropyError(f"volume density needs two trusted radii in [{lo:.4g}, {top:.4g}]")
    vols = ball_measures(space, x, r_ok)
    ratios = vols / (omega(n) * r_ok**n)
    dens = _fit_intercept(r_ok, ratios, n)
    m = len(r_ok)
    parts = [dens]
    if m >= 6:
        cut = (2 * m) // 3
        parts += [_fit_intercept(r_ok[:cut], ratios[:cut], n), _fit_intercept(r_ok[-cut:], ratios[-cut:], n)]
    unc = float(max(parts) - min(parts)) if len(parts) > 1 else float("nan")
    rich = float(richardson(r_ok[0], ratios[0], r_ok[1], ratios[1]))
    check = big_theta(space, r_ok[0] ** 2, x)
    return DensityEstimate(x, n, r_ok, vols, ratios, dens, unc, rich, check, excluded)


def density_lsc_probe(spaces, xs, r_grids=None, tolerance: float = 0.05) -> VerificationReport:
    """Density estimates along a refinement family; last estimate is the limit proxy.

    Margin per member: ``theta_alpha - (theta_final - tolerance)``.
    """
    spaces, xs = list(spaces), list(xs)
    if len(spaces) != len(xs):
        raise EntropyError("each space needs exactly one basepoint")
    r_grids = [None] * len(spaces) if r_grids is None else list(r_grids)
    est = np.array([volume_density(sp, x, rg).density for sp, x, rg in zip(spaces, xs, r_grids)])
    final = est[-1]
    return VerificationReport(
        "density_lsc", est - final + tolerance, tolerance=0.0,
        locations=[("member", i) for i in range(len(est))],
        samples={"members": len(est)}, extra={"estimates": est},
    )


def theta_ball_bounds(space: DiscreteSpace, xs, s_grid):
    """Fitted ``a, A`` with ``a mu(B_sqrt s)/s^{n/2} <= Theta_x(s) <= A mu(B_sqrt s)/s^{n/2}``."""
    ratios = []
    for x in xs:
        for s in s_grid:
            vol = ball_measures(space, x, [math.sqrt(s)])[0]
            ratios.append(big_theta(space, s, x) / (vol / s ** (space.n / 2)))
    ratios = np.array(ratios)
    return float(ratios.min()), float(ratios.max())


def varadhan_check(handle: HeatKernelHandle, x: int, t: float, d_max: float, d_min: float = 0.0,
                   distances=None, tolerance: float = 0.05) -> VerificationReport:
    """Relative error ``|U(t,x,y) - d^2| / d^2`` for ``d_min <= d(x,y) <= d_max``.

    ``distances`` may supply a reference distance row (e.g. an exact metric
    for the surface the mesh approximates); otherwise the space's own.
    """
    U, clamped = u_function(handle, t, x)
    d = handle.space.distances_from(x) if distances is None else np.asarray(distances, dtype=float)
    sel = np.flatnonzero((d > 0) & (d >= d_min) & (d <= d_max))
    if sel.size == 0:
        return VerificationReport("varadhan", [], tolerance, reason="no vertex in the distance window")
    err = np.abs(U[sel] - d[sel] ** 2) / d[sel] ** 2
    return VerificationReport(
        "varadhan", tolerance - err, tolerance=0.0, locations=[int(y) for y in sel],
        tainted=clamped[sel], taints={"clamped"} if clamped[sel].any() else set(),
        samples={"x": x, "t": t, "d_min": d_min, "d_max": d_max}, extra={"max_rel_error": float(err.max())},
    )


__all__ = [
    "EntropyGrid", "DensityEstimate", "MonotonicityScan", "HeatTraceScan", "EntropyError",
    "u_function", "theta", "big_theta", "heat_trace_quantity", "entropy_grid", "theta_limit_check",
    "derive_cn", "phi_at", "monotonicity_scan", "heat_trace_scan", "volume_density", "richardson",
    "density_lsc_probe", "theta_ball_bounds", "varadhan_check", "INCONCLUSIVE",
]
