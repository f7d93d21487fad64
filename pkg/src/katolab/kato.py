"""Kato-type curvature constants ``k_t = max_x int_0^t P_s V (x) ds``."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .geometry import as_potential, ball_measures
from .heat import HeatKernelHandle

TRAPEZOID_NODES = 64


@dataclass(frozen=True)
class KatoProfile:
    """Sampled ``t -> k_t``.

    ``argmax[j]`` is the vertex realising the maximum at ``times[j]``;
    ``pointwise`` (optional) holds the full per-vertex integrals.
    """

    times: np.ndarray
    values: np.ndarray
    argmax: np.ndarray
    rule: str
    nodes: int
    potential_max: float
    pointwise: np.ndarray | None = field(default=None, repr=False)

    def at(self, tau: float) -> float:
        """Linear interpolation of ``k`` (``k_0 = 0``)."""
        t = np.concatenate([[0.0], self.times])
        k = np.concatenate([[0.0], self.values])
        if tau < 0 or tau > t[-1] * (1 + 1e-12):
            raise ValueError(f"tau={tau} outside the profile range (0, {t[-1]}]")
        return float(np.interp(tau, t, k))

    def to_csv(self, n: int) -> str:
        phi = strong_kato_running(self)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "k_t", "phi_t", "gamma_t"])
        for t, k, p in zip(self.times, self.values, phi):
            w.writerow([repr(float(t)), repr(float(k)), repr(float(p)), repr(_gamma(k, n))])
        return buf.getvalue()


def _weights(lam, t):
    """``int_0^t exp(-lam s) ds`` evaluated stably."""
    lam = np.asarray(lam, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    pos = lam > 0
    safe = np.where(pos, lam, 1.0)
    return np.where(pos, -np.expm1(-np.multiply.outer(t, lam)) / safe, t[:, None])


def _krylov_integrals(handle: HeatKernelHandle, V, times):
    # z = (w, J) with w' = -S w, J' = w, w(0) = sqrt(mu) V
    S, s = handle._sym()
    N = len(V)
    Z = sparse.csr_matrix((N, N))
    A = sparse.bmat([[-S, Z], [sparse.identity(N), Z]], format="csr")
    z = np.concatenate([V / s, np.zeros(N)])
    out, prev = [], 0.0
    for t in times:
        z = splinalg.expm_multiply((t - prev) * A, z)
        prev = t
        out.append(z[N:] * s)
    return np.array(out)


def _trapezoid_integrals(handle: HeatKernelHandle, V, times, nodes=TRAPEZOID_NODES):
    times = np.asarray(times, dtype=float)
    grid = np.logspace(np.log10(times[0] * 1e-4), np.log10(times[-1]), nodes)
    grid = np.unique(np.concatenate([[0.0], grid, times]))
    g = np.array([handle.apply(s, V) for s in grid])
    cum = np.concatenate([np.zeros((1, len(V))), np.cumsum(0.5 * np.diff(grid)[:, None] * (g[1:] + g[:-1]), axis=0)])
    idx = np.searchsorted(grid, times)
    return cum[idx], len(grid)


def kato_integrals(handle: HeatKernelHandle, V, times, rule: str = "exact"):
    """Per-vertex ``int_0^t (P_s V)(x) ds`` for every ``t`` in ``times``; shape ``(T, N)``.

    ``rule="exact"`` integrates each heat mode in closed form (or the
    augmented Krylov system on partial spectra); ``rule="trapezoid"`` uses a
    composite trapezoid on a log-spaced grid with ``s = 0`` as a node.
    """
    V = as_potential(V)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be positive and increasing")
    if rule == "trapezoid":
        return _trapezoid_integrals(handle, V, times)
    if rule != "exact":
        raise ValueError(f"unknown quadrature rule {rule!r}")
    if handle.backend == "krylov":
        return _krylov_integrals(handle, V, times), 0
    # the integral picks up exp(-lam s) for all s in (0, t): truncation always matters
    if handle.truncated:
        handle.taints.add("truncated")
    a = handle.coefficients(V)
    w = _weights(handle.spectral.eigenvalues, times)
    return (w * a) @ handle.spectral.modes.T, 0


def kato_constant(handle: HeatKernelHandle, V, t: float, rule: str = "exact") -> float:
    """``k_t = max_x int_0^t sum_y H(s,x,y) V_y mu_y ds``."""
    if not t > 0:
        raise ValueError("time must be positive")
    vals, _ = kato_integrals(handle, V, [t], rule=rule)
    return float(max(vals[0].max(), 0.0))


def kato_profile(handle: HeatKernelHandle, V, time_grid, rule: str = "exact", keep_pointwise: bool = False) -> KatoProfile:
    vals, nodes = kato_integrals(handle, V, time_grid, rule=rule)
    V = as_potential(V)
    return KatoProfile(
        times=np.asarray(time_grid, dtype=float),
        values=np.maximum(vals.max(axis=1), 0.0),
        argmax=vals.argmax(axis=1),
        rule=rule,
        nodes=nodes,
        potential_max=float(V.max()) if len(V) else 0.0,
        pointwise=vals if keep_pointwise else None,
    )


def kato_lp(handle: HeatKernelHandle, V, T: float, p: float) -> float:
    """``(max_x T^(p-1) int_0^T P_s(V^p)(x) ds)^(1/p)``."""
    if p < 1:
        raise ValueError("p must be at least 1")
    V = as_potential(V)
    vals, _ = kato_integrals(handle, V**p, [T])
    return float(max(T ** (p - 1) * vals[0].max(), 0.0) ** (1.0 / p))


@dataclass(frozen=True)
class StrongKato:
    """``Phi(T) = int_0^T sqrt(k_s) / s ds`` with a bracket for the unsampled tail."""

    value: float
    lower: float
    upper: float
    divergent: bool
    low_end_slope: float


def _restrict(profile: KatoProfile, T: float):
    t, k = profile.times, profile.values
    if T > t[-1] * (1 + 1e-12):
        raise ValueError(f"profile ends at {t[-1]} < T = {T}")
    if T < t[0]:
        raise ValueError(f"T = {T} lies below the first profile time {t[0]}")
    keep = t < T
    t = np.concatenate([t[keep], [T]])
    k = np.concatenate([k[keep], [profile.at(T)]])
    return t, k


def strong_kato_integral(profile: KatoProfile, T: float) -> StrongKato:
    """Trapezoid in ``log s`` plus a linear-vanishing tail below the first node.

    The tail assumes ``k_s = k_{t1} s / t1`` and contributes ``2 sqrt(k_{t1})``.
    The bracket replaces it by ``0`` (lower) and by the bound obtained from
    ``k_s <= min(k_{t1}, s max V)`` (upper).  A log-log slope of ``k`` near the
    first node below 0.05 means ``k`` does not vanish at ``0`` and flags the
    integral as divergent.
    """
    t, k = _restrict(profile, T)
    k = np.maximum(k, 0.0)
    body = float(np.sum(0.5 * np.diff(np.log(t)) * (np.sqrt(k[1:]) + np.sqrt(k[:-1])))) if len(t) > 1 else 0.0
    k1, t1 = float(k[0]), float(t[0])
    tail = 2.0 * math.sqrt(k1)
    vmax = profile.potential_max
    if k1 > 0 and vmax > 0:
        upper_tail = 2.0 * math.sqrt(k1) + math.sqrt(k1) * math.log(max(t1 * vmax / k1, 1.0))
    else:
        upper_tail = tail
    slope = float("nan")
    pos = profile.values > 0
    if np.count_nonzero(pos) >= 2:
        tt, kk = profile.times[pos][:2], profile.values[pos][:2]
        slope = float(np.log(kk[1] / kk[0]) / np.log(tt[1] / tt[0]))
    divergent = bool(np.isfinite(slope) and slope < 0.05)
    return StrongKato(body + tail, body, body + upper_tail, divergent, slope)


def strong_kato_running(profile: KatoProfile) -> np.ndarray:
    """``Phi(t_j)`` at every profile time."""
    t, k = profile.times, np.maximum(profile.values, 0.0)
    steps = 0.5 * np.diff(np.log(t)) * (np.sqrt(k[1:]) + np.sqrt(k[:-1]))
    return 2.0 * math.sqrt(k[0]) + np.concatenate([[0.0], np.cumsum(steps)])


def _gamma(k, n):
    return math.expm1(8.0 * math.sqrt(n * max(float(k), 0.0)))


def gamma_tau(profile: KatoProfile, tau: float, n: int) -> float:
    """``Gamma_tau = exp(8 sqrt(n k_tau)) - 1``."""
    return _gamma(profile.at(tau), n)


def gamma_from_k(k: float, n: int) -> float:
    return _gamma(k, n)


@dataclass(frozen=True)
class BoundClassification:
    T: float
    n: int
    k_T: float
    dynkin_threshold: float
    dynkin_margin: float
    dynkin_holds: bool
    crossing_time: float | None
    profile: KatoProfile
    strong: StrongKato
    non_collapsing: float

    def to_json(self) -> str:
        lam = None if self.strong.divergent else self.strong.value
        return json.dumps(
            {
                "dynkin": {"T": self.T, "margin": self.dynkin_margin, "holds": self.dynkin_holds,
                           "crossing_time": self.crossing_time},
                "lambda": lam,
                "lambda_bracket": [self.strong.lower, self.strong.upper],
                "v": self.non_collapsing,
                "n": self.n,
            },
            sort_keys=True,
        )


def default_time_grid(T: float, count: int = 48, decades: float = 4.0) -> np.ndarray:
    return T * np.logspace(-decades, 0.0, count)


def classify_bounds(handle: HeatKernelHandle, V, T: float, n: int | None = None,
                    time_grid=None, volume_sources=None) -> BoundClassification:
    """Dynkin margin ``1 - 16 n k_T``, strong-Kato ``Phi(T)`` and non-collapsing ``v``.

    ``v = min_x mu(B_sqrt(T)(x)) / T^(n/2)`` over ``volume_sources`` (all
    vertices by default).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    space = handle.space
    n = space.n if n is None else int(n)
    grid = default_time_grid(T) if time_grid is None else np.asarray(time_grid, dtype=float)
    if grid[-1] < T:
        grid = np.concatenate([grid, [T]])
    profile = kato_profile(handle, V, grid)
    kT = profile.at(T)
    thr = 1.0 / (16.0 * n)
    crossing = None
    over = np.flatnonzero(profile.values > thr)
    if over.size:
        j = over[0]
        if j == 0:
            crossing = float(profile.times[0])
        else:
            t0, t1 = profile.times[j - 1], profile.times[j]
            k0, k1 = profile.values[j - 1], profile.values[j]
            crossing = float(t0 + (thr - k0) * (t1 - t0) / (k1 - k0))
    strong = strong_kato_integral(profile, T)
    r = math.sqrt(T)
    srcs = range(space.vertex_count) if volume_sources is None else volume_sources
    v = min(float(ball_measures(space, x, [r])[0]) for x in srcs) / T ** (n / 2)
    return BoundClassification(T, n, kT, thr, 1.0 - kT / thr, kT <= thr, crossing, profile, strong, v)
