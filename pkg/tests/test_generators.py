import math

import numpy as np
import pytest
from scipy import linalg

from katolab import generators, geometry
from katolab.geometry import GeometryError


@pytest.mark.parametrize("name, params", [
    ("flat_torus", {"N": 8}),
    ("icosphere", {"level": 2}),
    ("ellipsoid", {"a": 1.0, "b": 0.7, "c": 0.5, "level": 2}),
    ("dumbbell", {"level": 2}),
    ("cycle", {"N": 9}),
    ("path", {"N": 9}),
    ("cone_graph", {"N": 6}),
])
def test_generators_build_valid_spaces(name, params):
    sp = generators.generate_space(name, **params)
    assert name in generators.available()
    assert np.all(sp.mu > 0)
    assert np.all(sp.edge_lengths > 0)
    np.testing.assert_allclose(sp.stiffness @ np.ones(sp.vertex_count), 0.0, atol=1e-9)
    if sp.mesh is not None:
        sp.mesh.validate()


def test_unknown_generator():
    with pytest.raises(GeometryError, match="available"):
        generators.generate("klein_bottle")


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_icosphere_counts(level):
    mesh = generators.icosphere(level=level)
    assert mesh.vertex_count == 10 * 4**level + 2
    np.testing.assert_allclose(np.linalg.norm(mesh.positions, axis=1), 1.0)


def test_ellipsoid_axes():
    mesh = generators.ellipsoid(2.0, 1.0, 0.5, level=2)
    np.testing.assert_allclose(np.abs(mesh.positions).max(axis=0), [2.0, 1.0, 0.5], rtol=1e-12)


def test_dumbbell_has_negative_curvature():
    mesh = generators.dumbbell(level=3)
    K = geometry.gaussian_curvature(mesh)
    assert K.min() < 0 < K.max()
    assert mesh.euler_characteristic() == 2


def test_cone_graph_origin_and_total_angle():
    cone = generators.cone_graph(angle=1.5 * math.pi, N=12)
    assert cone.origin == 0
    # the measure of the unit cone is angle/2
    assert cone.total_measure == pytest.approx(0.75 * math.pi, rel=0.05)


@pytest.mark.parametrize("N, M", [(6, 6), (8, 5), (4, 7)])
def test_flat_torus_spectrum_matches_dense(N, M):
    sp = generators.generate_space("flat_torus", N=N, M=M)
    spec = generators.flat_torus_spectrum(sp, 1.0, 1.0, N, M)
    assert spec.complete
    lam = linalg.eigh(sp.stiffness.toarray(), np.diag(sp.mu), eigvals_only=True)
    np.testing.assert_allclose(spec.eigenvalues, np.maximum(lam, 0.0), atol=1e-8 * lam.max())
    assert spec.residuals.max() < 1e-9 * lam.max()
    G = spec.modes.T @ (sp.mu[:, None] * spec.modes)
    np.testing.assert_allclose(G, np.eye(N * M), atol=1e-12)


def test_flat_torus_spectrum_keeps_clusters():
    sp = generators.generate_space("flat_torus", N=16)
    spec = generators.flat_torus_spectrum(sp, 1.0, 1.0, 16, m=2)
    # the first nonzero eigenvalue has multiplicity four
    assert spec.m == 5
    spec = generators.flat_torus_spectrum(sp, 1.0, 1.0, 16, lam_max=50.0)
    assert spec.eigenvalues.max() <= 50.0


def test_torus_distance_rows_symmetry():
    row = generators.torus_distance_rows(1.0, 2.0, 8, 6)
    D = np.array([row(v) for v in range(48)])
    np.testing.assert_allclose(D, D.T)
    assert D.max() == pytest.approx(math.hypot(0.5, 1.0))


def test_generator_argument_errors():
    with pytest.raises(GeometryError):
        generators.cycle(2)
    with pytest.raises(GeometryError):
        generators.flat_torus(N=2)
