import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from katolab import constructions, generators, heat


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.0, 2.0))
def test_smooth_profile_range(z):
    v = float(constructions.smooth_profile(z))
    assert 0.0 <= v <= 1.0
    if z <= 0.25:
        assert v == 1.0
    if z >= 0.75:
        assert v == 0.0


def test_smooth_profile_is_c2():
    h = 1e-4
    for z0 in (0.25, 0.75):
        z = np.array([z0 - h, z0, z0 + h])
        v = constructions.smooth_profile(z)
        d1 = (v[2] - v[0]) / (2 * h)
        d2 = (v[2] - 2 * v[1] + v[0]) / h**2
        assert abs(d1) < 1e-6 and abs(d2) < 1e-2
    assert constructions.smooth_profile(0.5) == pytest.approx(0.5)


def test_cutoff_time():
    s, n = 0.2, 2
    assert constructions.cutoff_time(s, n, 1.0) == pytest.approx((s / (4 * math.e**2 * 2)) ** 2)
    assert constructions.cutoff_time(100.0, n, 1e-3) == 1e-3


def test_heat_cutoff_sandwich(torus16):
    h = heat.heat_handle(torus16, m=6, backend="krylov")
    rep = constructions.heat_cutoff(h, 0, 0.2, 0.2, 1.0)
    assert rep.sandwich_report().passed
    assert rep.interior_defect == 0.0 and rep.exterior_defect == 0.0
    assert rep.grad_norm > 0 and rep.lap_norm > 0
    assert "below-trusted-time" in rep.taints
    assert rep.to_csv().splitlines()[0] == "vertex,distance,chi"
    assert rep.summary()["r"] == 0.2


def test_heat_cutoff_rejects_bad_arguments(torus16_handle):
    with pytest.raises(ValueError):
        constructions.heat_cutoff(torus16_handle, 0, 0.2, 0.0, 1.0)


def test_heat_cutoff_under_resolved(torus16_handle):
    assert "under-resolved" in constructions.heat_cutoff(torus16_handle, 0, 0.1, 0.1, 1.0).taints


@pytest.mark.parametrize("c", [0.01, 0.05])
def test_gauging_constant_potential(c, cycle20_handle):
    res = constructions.gauging_function(cycle20_handle, np.full(20, c), 1.0)
    np.testing.assert_allclose(res.J, np.broadcast_to(np.exp(-2 * c * res.times)[:, None], res.J.shape), atol=1e-6)
    assert res.bounds_report().passed
    assert res.iterations <= res.budget
    doc = json.loads(res.to_json())
    assert doc["t_star"] == 1.0 and len(doc["J"]) == len(res.times)


def test_gauging_zero_potential(torus16_handle, torus16):
    res = constructions.gauging_function(torus16_handle, np.zeros(torus16.vertex_count), 0.5)
    assert np.all(res.J == 1.0) and res.iterations == 1
    assert res.bounds_report().passed


def test_gauging_rejections(cycle20_handle):
    with pytest.raises(ValueError, match="1/8"):
        constructions.gauging_function(cycle20_handle, np.full(20, 0.2), 1.0)
    with pytest.raises(ValueError):
        constructions.gauging_function(cycle20_handle, np.full(20, 0.01), 0.0)
    with pytest.raises(ValueError):
        constructions.gauging_function(cycle20_handle, np.full(20, 0.01), 1.0, time_grid=[0.5, 0.9])


def test_gauging_feynman_kac():
    # I(t) = expm(-t (L - 2 delta V)) 1 solves the integral equation
    sp = generators.path(3)
    h = heat.heat_handle(sp)
    V = np.array([0.02, 0.0, 0.05])
    res = constructions.gauging_function(h, V, 1.0)
    L = sp.stiffness.toarray() / sp.mu[:, None]
    for j in (49, 199):
        t = res.times[j]
        exact = linalg.expm(-t * (L - 2 * res.delta * np.diag(V))) @ np.ones(3)
        np.testing.assert_allclose(res.I[j], exact, rtol=1e-5)


def test_gauging_krylov_matches_modal(sphere2, sphere2_handle, rng):
    V = rng.uniform(0, 0.05, sphere2.vertex_count)
    grid = np.linspace(0.0, 0.5, 21)[1:]
    a = constructions.gauging_function(sphere2_handle, V, 0.5, time_grid=grid)
    b = constructions.gauging_function(heat.heat_handle(sphere2, m=4, backend="krylov"), V, 0.5, time_grid=grid)
    np.testing.assert_allclose(a.J, b.J, rtol=1e-8)


def test_harmonic_replacement_reproduces_linear(sphere2):
    p = sphere2.mesh.positions
    line = generators.path(11, length=1.0)
    got = constructions.harmonic_replacement(line, [0, 10], [0.0, 1.0])
    np.testing.assert_allclose(got, np.linspace(0, 1, 11), atol=1e-12)
    # harmonic on the upper cap, boundary data kept elsewhere
    B = np.flatnonzero(p[:, 2] < 0.5)
    f = constructions.harmonic_replacement(sphere2, B, p[:, 2])
    np.testing.assert_array_equal(f[B], p[B, 2])
    assert np.abs(sphere2.stiffness @ f)[p[:, 2] >= 0.5].max() < 1e-10


def test_harmonic_replacement_rejections(cycle20):
    with pytest.raises(ValueError, match="empty"):
        constructions.harmonic_replacement(cycle20, [], [])
    with pytest.raises(ValueError, match="boundary contact"):
        constructions.harmonic_replacement(cycle20, [0], np.zeros(20), interior=[5, 6])
    with pytest.raises(ValueError, match="overlap"):
        constructions.harmonic_replacement(cycle20, [0, 1], np.zeros(20), interior=[1, 2])
    with pytest.raises(ValueError, match="full-length"):
        constructions.harmonic_replacement(cycle20, [0, 1], [1.0, 2.0, 3.0])


def test_seed_coordinates_on_torus(torus16):
    seeds = constructions.seed_coordinates(torus16, 0, 2)
    assert seeds.shape == (2, torus16.vertex_count)
    gram = constructions.vertex_gram(torus16, seeds)[np.abs(seeds).max(axis=0) < 0.3]
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-12)
    with pytest.raises(ValueError):
        constructions.seed_coordinates(torus16, 0, 3)


def test_mesh_only_helpers(cycle20):
    with pytest.raises(ValueError):
        constructions.seed_coordinates(cycle20, 0)
    with pytest.raises(ValueError):
        constructions.vertex_gram(cycle20, np.ones((1, 20)))


def test_splitting_map_on_flat_torus():
    sp = generators.generate_space("flat_torus", N=32)
    seeds = constructions.seed_coordinates(sp, 0, 2)
    smap = constructions.build_splitting_map(sp, None, 0, 0.2, seeds)
    m = smap.metrics
    assert m["eps_gram"] < 1e-10 and m["eps_hess"] < 1e-10 and m["eps_lip"] < 1e-10
    assert m["gh_defect"] < 0.05
    assert smap.harmonic_residual < 1e-10
    keys = ("eps_lip", "eps_gram", "eps_hess", "gh_defect")
    assert constructions.splitting_quality(smap) == pytest.approx(tuple(m[k] for k in keys))
    assert json.loads(smap.to_json())["center"] == 0


def test_splitting_map_on_sphere_is_imperfect():
    sp = generators.generate_space("icosphere", level=3)
    smap = constructions.build_splitting_map(sp, None, 0, 0.8, constructions.seed_coordinates(sp, 0, 2))
    assert smap.metrics["eps_gram"] > 1e-3


def test_splitting_map_rejections(torus16):
    seeds = constructions.seed_coordinates(torus16, 0, 2)
    with pytest.raises(ValueError, match="5 mean edge"):
        constructions.build_splitting_map(torus16, None, 0, 0.1, seeds)
    with pytest.raises(ValueError, match="constant seed"):
        constructions.build_splitting_map(torus16, None, 0, 0.4, np.ones((1, torus16.vertex_count)))
    with pytest.raises(ValueError, match="collar"):
        constructions.build_splitting_map(torus16, None, 0, 5.0, seeds)
