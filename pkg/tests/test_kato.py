import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg

from katolab import generators, geometry, heat, kato


def brute_integrals(space, V, t):
    M = space.stiffness.toarray() / space.mu[:, None]
    val, _ = integrate.quad_vec(lambda s: linalg.expm(-s * M) @ V, 0.0, t, epsabs=1e-14, epsrel=1e-12)
    return val


@pytest.fixture(scope="module")
def path3():
    return generators.path(3)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=3, max_size=3), st.floats(1e-3, 5.0))
def test_exact_rule_matches_brute_force(V, t):
    sp = generators.path(3)
    h = heat.heat_handle(sp)
    V = np.array(V)
    got, _ = kato.kato_integrals(h, V, [t])
    np.testing.assert_allclose(got[0], brute_integrals(sp, V, t), rtol=1e-9, atol=1e-13)


def test_krylov_rule_matches_modal(sphere2, sphere2_handle, rng):
    V = rng.uniform(0, 1, sphere2.vertex_count)
    kr = heat.heat_handle(sphere2, m=4, backend="krylov")
    times = [0.01, 0.1, 1.0]
    a, _ = kato.kato_integrals(sphere2_handle, V, times)
    b, _ = kato.kato_integrals(kr, V, times)
    np.testing.assert_allclose(a, b, rtol=1e-8)


def test_trapezoid_converges_to_exact(cycle20_handle, rng):
    V = rng.uniform(0, 1, 20)
    exact = kato.kato_constant(cycle20_handle, V, 2.0)
    coarse, _ = kato.kato_integrals(cycle20_handle, V, [2.0], rule="trapezoid")
    assert abs(coarse[0].max() - exact) / exact < 1e-2


@pytest.mark.parametrize("c", [0.0, 0.2, 3.0])
def test_constant_potential(c, sphere2_handle, sphere2):
    for t in (1e-4, 0.3, 4.0):
        assert kato.kato_constant(sphere2_handle, np.full(sphere2.vertex_count, c), t) == pytest.approx(c * t, rel=1e-10)


def test_flat_torus_is_exactly_zero(torus16_handle, torus16):
    V = geometry.angle_defect_ric_minus(torus16.mesh)
    prof = kato.kato_profile(torus16_handle, V, kato.default_time_grid(1.0))
    assert np.all(prof.values == 0.0)


@pytest.mark.parametrize("eps", [0.25, 0.5, 3.0])
def test_scaling_identity(eps):
    sp = generators.generate_space("dumbbell", level=2)
    sc = geometry.rescale(sp, eps)
    V = geometry.angle_defect_ric_minus(sp.mesh)
    Ve = geometry.angle_defect_ric_minus(sc.mesh)
    h, he = heat.heat_handle(sp), heat.heat_handle(sc)
    for t in (0.01, 0.2):
        assert kato.kato_constant(he, Ve, t) == pytest.approx(kato.kato_constant(h, V, eps * eps * t), rel=1e-9)


def test_profile_is_nondecreasing(sphere2_handle, rng):
    V = rng.uniform(0, 1, sphere2_handle.space.vertex_count)
    prof = kato.kato_profile(sphere2_handle, V, kato.default_time_grid(1.0), keep_pointwise=True)
    assert np.all(np.diff(prof.values) >= 0)
    np.testing.assert_allclose(prof.values, prof.pointwise.max(axis=1))
    assert prof.at(prof.times[5]) == pytest.approx(prof.values[5])
    with pytest.raises(ValueError):
        prof.at(2.0)


def test_lp_reduces_to_kato(cycle20_handle, rng):
    V = rng.uniform(0, 1, 20)
    assert kato.kato_lp(cycle20_handle, V, 0.5, 1.0) == pytest.approx(kato.kato_constant(cycle20_handle, V, 0.5))
    # Jensen: the L^p version dominates for p > 1
    assert kato.kato_lp(cycle20_handle, V, 0.5, 2.0) >= kato.kato_constant(cycle20_handle, V, 0.5) - 1e-12


def test_strong_kato_closed_form(sphere2_handle, sphere2):
    c, T = 0.05, 1.0
    prof = kato.kato_profile(sphere2_handle, np.full(sphere2.vertex_count, c), kato.default_time_grid(T, count=200))
    res = kato.strong_kato_integral(prof, T)
    assert res.value == pytest.approx(2 * math.sqrt(c * T), rel=1e-3)
    assert res.lower <= res.value <= res.upper
    assert not res.divergent
    running = kato.strong_kato_running(prof)
    assert running[-1] == pytest.approx(res.value)


def test_strong_kato_flags_nonvanishing_profile():
    times = np.geomspace(1e-4, 1.0, 20)
    prof = kato.KatoProfile(times, np.full(20, 0.01), np.zeros(20, dtype=int), "exact", 0, 1.0)
    assert kato.strong_kato_integral(prof, 1.0).divergent


def test_classify_bounds(sphere2_handle, sphere2):
    V = np.full(sphere2.vertex_count, 0.01)
    cls = kato.classify_bounds(sphere2_handle, V, 1.0)
    assert cls.k_T == pytest.approx(0.01)
    assert cls.dynkin_holds and cls.dynkin_margin == pytest.approx(1 - 0.01 * 32)
    assert cls.crossing_time is None
    doc = json.loads(cls.to_json())
    assert doc["dynkin"]["holds"] and doc["lambda"] > 0
    hot = kato.classify_bounds(sphere2_handle, V * 100, 1.0)
    assert hot.crossing_time == pytest.approx(1.0 / 32, rel=1e-6)


def test_gamma():
    assert kato.gamma_from_k(0.0, 2) == 0.0
    assert kato.gamma_from_k(1 / 32, 2) == pytest.approx(math.e**2 - 1)


def test_profile_csv(cycle20_handle):
    prof = kato.kato_profile(cycle20_handle, np.full(20, 0.1), [0.1, 1.0])
    rows = prof.to_csv(1).splitlines()
    assert rows[0] == "t,k_t,phi_t,gamma_t"
    assert len(rows) == 3


def test_invalid_grids(cycle20_handle):
    V = np.ones(20)
    with pytest.raises(ValueError):
        kato.kato_integrals(cycle20_handle, V, [1.0, 0.5])
    with pytest.raises(ValueError):
        kato.kato_integrals(cycle20_handle, V, [1.0], rule="simpson")
    with pytest.raises(ValueError):
        kato.kato_constant(cycle20_handle, V, 0.0)
    with pytest.raises(ValueError):
        kato.kato_lp(cycle20_handle, V, 1.0, 0.5)
