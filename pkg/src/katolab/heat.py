"""Heat semigroup and heat kernel of a :class:`DiscreteSpace`.

The Laplacian ``L = M^-1 W`` is diagonalised through the symmetric matrix
``S = M^-1/2 W M^-1/2``; eigenvectors are rescaled to be orthonormal for the
measure, so that ``H(t, x, y) = sum_k exp(-lam_k t) phi_k(x) phi_k(y)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .geometry import DiscreteSpace, face_gradients

logger = logging.getLogger(__name__)

DENSE_LIMIT = 600
TRUNCATION_LEVEL = 1e-12


class SpectralError(RuntimeError):
    """Eigensolver failure; ``residuals`` holds what was achieved."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Mass-orthonormal eigenpairs of ``W phi = lam M phi``.

    Attributes
    ----------
    eigenvalues : (m,) ndarray
        Nondecreasing, ``eigenvalues[0] == 0``.
    modes : (N, m) ndarray
        Columns ``phi_k`` with ``sum_i mu_i phi_k(i) phi_l(i) = delta_kl``.
    residuals : (m,) ndarray
        ``||W phi_k - lam_k M phi_k||_2``.
    mu : (N,) ndarray
        Vertex measure the modes are normalised against.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    residuals: np.ndarray
    mu: np.ndarray

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def vertex_count(self) -> int:
        return self.modes.shape[0]

    @property
    def complete(self) -> bool:
        return self.m == self.vertex_count

    def to_json(self) -> str:
        return json.dumps(
            {"eigenvalues": self.eigenvalues.tolist(), "residuals": self.residuals.tolist(), "m": self.m}
        )

    def write_modes(self, path):
        """Little-endian float64 blob, one mode after another."""
        np.ascontiguousarray(self.modes.T, dtype="<f8").tofile(Path(path))

    @staticmethod
    def read_modes(path, vertex_count: int) -> np.ndarray:
        return np.fromfile(Path(path), dtype="<f8").reshape(-1, vertex_count).T


def _symmetric_operator(space: DiscreteSpace):
    s = 1.0 / np.sqrt(space.mu)
    D = sparse.diags(s)
    return (D @ space.stiffness @ D).tocsr(), s


def _fix_signs(modes):
    # largest-magnitude entry positive, ties resolved by the lowest index
    idx = np.argmax(np.abs(modes) >= np.abs(modes).max(axis=0) * (1 - 1e-12), axis=0)
    sgn = np.sign(modes[idx, np.arange(modes.shape[1])])
    sgn[sgn == 0] = 1.0
    return modes * sgn


def spectrum(space: DiscreteSpace, m: int | None = None, seed: int = 0, tol: float = 1e-8) -> SpectralData:
    """Lowest ``m`` eigenpairs of the Laplacian (all of them by default).

    A dense symmetric solve is used when the space has at most 600 vertices
    or the whole spectrum is requested; otherwise shift-invert Lanczos near
    zero with a seeded start vector.

    Raises
    ------
    SpectralError
        If a relative residual exceeds ``tol``.
    """
    N = space.vertex_count
    m = N if m is None else int(m)
    if not 1 <= m <= N:
        raise ValueError(f"mode count must lie in [1, {N}], got {m}")
    S, s = _symmetric_operator(space)
    if N <= DENSE_LIMIT or m == N or m >= N - 1:
        lam, psi = linalg.eigh(S.toarray(), subset_by_index=(0, m - 1), driver="evr")
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(N)
        scale = float(S.diagonal().mean())
        try:
            lam, psi = splinalg.eigsh(S, k=m, sigma=-1e-4 * scale, which="LM", v0=v0, tol=0.0)
        except splinalg.ArpackNoConvergence as exc:
            raise SpectralError("Lanczos did not converge", residuals=None) from exc
        order = np.argsort(lam, kind="stable")
        lam, psi = lam[order], psi[:, order]
    psi = _fix_signs(psi)
    modes = psi * s[:, None]
    total = float(space.mu.sum())
    lam_max = max(abs(lam[-1]), 1e-300)
    if abs(lam[0]) <= 1e-9 * max(lam_max, 1.0) or N == 1:
        lam = lam.copy()
        lam[0] = 0.0
        modes[:, 0] = 1.0 / np.sqrt(total)
    W = space.stiffness
    res = np.linalg.norm(W @ modes - (space.mu[:, None] * modes) * lam, axis=0)
    scale = np.linalg.norm(space.mu[:, None] * modes, axis=0) * np.maximum(np.abs(lam), 1.0)
    rel = res / scale
    if np.any(rel > tol):
        raise SpectralError(f"eigen-residual {rel.max():.3g} exceeds {tol:g}", residuals=res)
    return SpectralData(eigenvalues=lam, modes=modes, residuals=res, mu=space.mu)


@dataclass(eq=False)
class HeatKernelHandle:
    """Heat-kernel evaluator bound to a space and its spectral data.

    ``backend="modal"`` evaluates everything from the stored modes (a
    truncation taint is recorded when the spectrum is partial);
    ``backend="krylov"`` applies ``exp(-tL)`` with ``expm_multiply`` and is
    exact at any ``t`` regardless of the number of stored modes.
    """

    space: DiscreteSpace
    spectral: SpectralData
    floor: float = 0.0
    backend: str = "modal"
    taints: set = field(default_factory=set)

    def __post_init__(self):
        if self.backend not in ("modal", "krylov"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not 0 <= self.floor <= 1e-12:
            raise ValueError("kernel floor must lie in [0, 1e-12]")

    @property
    def truncated(self) -> bool:
        return not self.spectral.complete

    def truncated_at(self, t: float) -> bool:
        """True when dropped modes may still carry weight ``> 1e-12`` at time ``t``."""
        if self.spectral.complete:
            return False
        return bool(np.exp(-self.spectral.eigenvalues[-1] * t) > TRUNCATION_LEVEL)

    def _note_truncation(self, t):
        if self.truncated_at(t):
            self.taints.add("truncated")

    @property
    def mu(self) -> np.ndarray:
        return self.space.mu

    def coefficients(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        w = self.mu[:, None] * f if f.ndim == 2 else self.mu * f
        return self.spectral.modes.T @ w

    def _modal(self, t, f):
        self._note_truncation(t)
        a = self.coefficients(f)
        decay = np.exp(-self.spectral.eigenvalues * t)
        if a.ndim == 2:
            return self.spectral.modes @ (decay[:, None] * a)
        return self.spectral.modes @ (decay * a)

    def _krylov(self, t, f):
        S, s = self._sym()
        g = f / s if f.ndim == 1 else f / s[:, None]
        out = splinalg.expm_multiply(-t * S, g)
        return out * s if f.ndim == 1 else out * s[:, None]

    def _sym(self):
        if not hasattr(self, "_sym_cache"):
            self._sym_cache = _symmetric_operator(self.space)
        return self._sym_cache

    def apply(self, t: float, f) -> np.ndarray:
        """``P_t f``; ``f`` may carry several columns."""
        if t < 0:
            raise ValueError("time must be nonnegative")
        f = np.asarray(f, dtype=float)
        if t == 0:
            return f.copy()
        if self.backend == "krylov":
            return self._krylov(t, f)
        return self._modal(t, f)

    def kernel_row(self, t: float, x: int) -> np.ndarray:
        """``H(t, x, .)`` as a vector."""
        _check_time(t)
        if self.backend == "krylov":
            e = np.zeros(self.space.vertex_count)
            e[x] = 1.0 / self.mu[x]
            return self._krylov(t, e)
        self._note_truncation(t)
        phi = self.spectral.modes
        return phi @ (np.exp(-self.spectral.eigenvalues * t) * phi[x])

    def kernel_matrix(self, t: float) -> np.ndarray:
        """Dense ``H(t, ., .)``, exactly symmetric."""
        _check_time(t)
        if self.backend == "krylov":
            N = self.space.vertex_count
            H = self._krylov(t, np.diag(1.0 / self.mu))
            return 0.5 * (H + H.T) if N else H
        self._note_truncation(t)
        phi = self.spectral.modes
        H = (phi * np.exp(-self.spectral.eigenvalues * t)) @ phi.T
        return 0.5 * (H + H.T)

    def clamp(self, values, x_scale=None):
        """Apply the kernel floor; records a taint when anything moved."""
        values = np.asarray(values, dtype=float)
        if self.floor <= 0:
            return values
        lo = self.floor * (np.max(values) if x_scale is None else x_scale)
        if np.any(values < lo):
            self.taints.add("clamped")
        return np.maximum(values, lo)


def _check_time(t):
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")


def heat_handle(space: DiscreteSpace, m: int | None = None, floor: float = 0.0,
                backend: str = "auto", seed: int = 0, spectral: SpectralData | None = None) -> HeatKernelHandle:
    """Spectrum plus evaluator.  ``backend="auto"`` picks modal for full spectra."""
    spec = spectrum(space, m=m, seed=seed) if spectral is None else spectral
    if backend == "auto":
        backend = "modal" if spec.complete else "krylov"
    return HeatKernelHandle(space, spec, floor=floor, backend=backend)


def heat_kernel(handle: HeatKernelHandle, t: float, x: int, y: int) -> float:
    """``H(t, x, y)``, symmetric in ``x`` and ``y`` by construction."""
    _check_time(t)
    if handle.backend == "krylov":
        a = handle.kernel_row(t, x)[y]
        b = handle.kernel_row(t, y)[x]
        val = 0.5 * (a + b)
    else:
        handle._note_truncation(t)
        phi = handle.spectral.modes
        val = float(np.sum(np.exp(-handle.spectral.eigenvalues * t) * (phi[x] * phi[y])))
    if handle.floor > 0 and val < handle.floor:
        handle.taints.add("clamped")
        val = handle.floor
    return float(val)


def heat_apply(handle: HeatKernelHandle, t: float, f) -> np.ndarray:
    return handle.apply(t, f)


def stochastic_mass(handle: HeatKernelHandle, t: float, x: int) -> float:
    """``sum_y H(t, x, y) mu_y``."""
    row = handle.kernel_row(t, x)
    return float(row @ handle.mu)


def chapman_residual(handle: HeatKernelHandle, t: float, s: float, x: int, y: int) -> float:
    """``|sum_z H(t,x,z) H(s,z,y) mu_z - H(t+s,x,y)|``."""
    a = handle.kernel_row(t, x)
    b = handle.kernel_row(s, y)
    return float(abs(np.sum(a * b * handle.mu) - heat_kernel(handle, t + s, x, y)))


def dirichlet_energy_t(handle: HeatKernelHandle, t: float, u) -> float:
    """``E_t(u) = <u - P_t u, u>_mu / t``, nonincreasing in ``t``."""
    _check_time(t)
    u = np.asarray(u, dtype=float)
    if handle.backend == "modal" or not handle.truncated:
        a = handle.coefficients(u)
        lam = handle.spectral.eigenvalues
        val = np.sum(-np.expm1(-lam * t) * a * a)
        if handle.truncated:
            # unresolved modes decay at least like exp(-lam_max t)
            rest = max(float(u @ (handle.mu * u)) - float(a @ a), 0.0)
            val += rest * -np.expm1(-lam[-1] * t)
            handle._note_truncation(t)
        return float(val / t)
    return float(((u - handle.apply(t, u)) * handle.mu) @ u / t)


def carre_du_champ(space: DiscreteSpace, u) -> np.ndarray:
    """Pointwise ``|grad u|^2`` whose ``mu``-integral is the Dirichlet energy.

    Mesh spaces use per-face gradients of the linear interpolant, spread to
    vertices with one third of each face area; graph spaces use
    ``(1 / 2 mu_i) sum_j c_ij (u_i - u_j)^2``.
    """
    u = np.asarray(u, dtype=float)
    if space.mesh is not None:
        mesh = space.mesh
        g = face_gradients(mesh, u)
        # rescaled spaces keep mesh coordinates in the new units
        e = np.einsum("ij,ij->i", g, g) * mesh.face_areas() / 3.0
        acc = np.bincount(mesh.faces.ravel(), weights=np.repeat(e, 3), minlength=space.vertex_count)
        return acc / space.mu
    c = space.conductances
    i, j = space.edges.T
    e = c * (u[i] - u[j]) ** 2
    acc = np.bincount(i, weights=e, minlength=space.vertex_count) + np.bincount(
        j, weights=e, minlength=space.vertex_count
    )
    return acc / (2.0 * space.mu)
