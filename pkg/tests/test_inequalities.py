import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from katolab import generators, heat, inequalities, kato
from katolab.inequalities import _beta_needed


def test_li_yau_on_resolved_data(sphere2_handle, sphere2):
    # the coarse sphere has h ~ 0.3, so the datum must already be spread out
    u0 = sphere2_handle.kernel_row(1.0, 0)
    rep = inequalities.li_yau_residual(sphere2_handle, None, u0, np.geomspace(0.01, 2.0, 8))
    assert rep.passed
    assert len(rep.margins) == 8 * 20
    assert rep.extra["log_gradient_step"] < 1.0


def test_li_yau_flags_unresolved_data(torus16_handle, torus16):
    # a kernel started below the lattice scale has |grad log u| ~ 1/h
    u0 = torus16_handle.kernel_row(torus16.t_min / 4, 0)
    rep = inequalities.li_yau_residual(torus16_handle, None, u0, [torus16.t_min / 4])
    assert rep.extra["log_gradient_step"] > 1.0


def test_li_yau_rejects_nonpositive_data(cycle20_handle):
    with pytest.raises(ValueError):
        inequalities.li_yau_residual(cycle20_handle, None, np.zeros(20), [0.1])


def test_li_yau_names_dynkin_violation(cycle20_handle):
    times = kato.default_time_grid(1.0)
    prof = kato.KatoProfile(times, times, np.zeros(len(times), dtype=int), "exact", 0, 1.0)
    rep = inequalities.li_yau_residual(cycle20_handle, prof, np.ones(20), [0.5])
    assert "Dynkin" in rep.reason


@pytest.mark.parametrize("j", [1, 3, 6])
def test_gradient_estimate_on_modes(sphere2_handle, j):
    u = sphere2_handle.spectral.modes[:, j]
    for t in (1e-3, 0.1, 1.0):
        rep = inequalities.gradient_estimate_check(sphere2_handle, None, u, t)
        assert rep.passed
        assert rep.extra["lipschitz_factor"] == pytest.approx(math.exp(1 / 16))


def test_gradient_estimate_random(cycle20_handle, rng):
    u = rng.normal(size=20)
    rep = inequalities.gradient_estimate_check(cycle20_handle, None, u, 0.5)
    assert rep.passed
    assert rep.extra["lipschitz_ratio"] <= 1.0 + 1e-12


@pytest.mark.parametrize("form", ["manifold", "limit"])
def test_bakry_ledoux(form, torus16_handle, torus16, rng):
    v = rng.normal(size=torus16.vertex_count)
    phi = rng.uniform(0, 1, torus16.vertex_count)
    for t in (1e-3, 0.05):
        assert inequalities.bakry_ledoux_residual(torus16_handle, None, v, phi, t, form=form).passed


def test_bakry_ledoux_rejections(cycle20_handle):
    with pytest.raises(ValueError):
        inequalities.bakry_ledoux_residual(cycle20_handle, None, np.ones(20), -np.ones(20), 0.1)
    with pytest.raises(ValueError):
        inequalities.bakry_ledoux_residual(cycle20_handle, None, np.ones(20), np.ones(20), 0.1, form="other")


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 50.0), st.integers(1, 4))
def test_bakry_ledoux_scalar_nonnegative(xi, n):
    assert inequalities.bakry_ledoux_scalar(xi, n) >= -1e-15


def test_beta_needed():
    assert _beta_needed(3.0, 0.0) == (3.0, 1.0)
    assert _beta_needed(0.25, 0.0) == (1.0, 4.0)
    up, lo = _beta_needed(0.5, 2.0)
    assert 0.5 <= up * math.exp(-2.0 / up) * (1 + 1e-9)
    assert 0.5 >= math.exp(-lo * 2.0) / lo * (1 - 1e-9)


def test_gaussian_bound_fit(sphere2_handle):
    pairs = [(0, 5), (0, 40), (3, 100)]
    rep = inequalities.gaussian_bound_fit(sphere2_handle, pairs, [0.01, 0.1, 1.0])
    assert rep.passed
    assert 1.0 <= rep.extra["beta"] < 100


def test_gaussian_bound_excludes_underflow(cycle20):
    h = heat.heat_handle(cycle20)
    rep = inequalities.gaussian_bound_fit(h, [(0, 10)], [1e-4])
    assert rep.verdict == "inconclusive"
    assert "clamped" in rep.taints


def test_discrete_hessian_exact_on_quadratic():
    N = 16
    sp = generators.generate_space("flat_torus", N=N)
    p = sp.mesh.positions
    u = p[:, 0] ** 2 - p[:, 1] ** 2
    hess, valid = inequalities.discrete_hessian(sp, u)
    # away from the periodic seam the interpolant sees a genuine quadratic
    inner = valid & (p[:, 0] > 0.2) & (p[:, 0] < 0.8) & (p[:, 1] > 0.2) & (p[:, 1] < 0.8)
    np.testing.assert_allclose(hess[inner], 8.0, rtol=1e-8)


def test_discrete_hessian_linear_is_zero(sphere2):
    hess, valid = inequalities.discrete_hessian(sphere2, np.ones(sphere2.vertex_count))
    assert valid.all()
    np.testing.assert_allclose(hess, 0.0, atol=1e-20)


def test_discrete_hessian_needs_mesh(cycle20):
    with pytest.raises(ValueError):
        inequalities.discrete_hessian(cycle20, np.ones(20))


def test_hessian_estimate(torus16):
    u = np.cos(2 * np.pi * torus16.mesh.positions[:, 0])
    rep = inequalities.hessian_estimate_check(torus16, u, 0, 0.4, 1.0)
    assert rep.passed and rep.reason is None
    assert 0 < rep.extra["ratio"] < 100
    assert inequalities.hessian_estimate_check(torus16, u, 0, 0.1, 1.0).reason is not None


def harmonic_on_path(N=21):
    sp = generators.path(N, length=1.0)
    return sp, np.linspace(0.0, 1.0, N)


def test_harmonic_gradient_on_linear_function():
    sp, h = harmonic_on_path()
    rep = inequalities.harmonic_gradient_bound_check(sp, h, 10, 0.4, 1.0)
    assert rep.extra["ratio_energy"] == pytest.approx(1.0, rel=1e-10)
    assert rep.passed


def test_harmonic_gradient_rejects_nonharmonic():
    sp, h = harmonic_on_path()
    with pytest.raises(ValueError, match="harmonic"):
        inequalities.harmonic_gradient_bound_check(sp, h**2, 10, 0.4, 1.0)


def test_harmonic_residual_interior():
    sp, h = harmonic_on_path()
    assert inequalities.harmonic_residual(sp, h, np.arange(1, 20)) < 1e-12


def test_lipschitz_improvement():
    sp, h = harmonic_on_path()
    hh = heat.heat_handle(sp)
    rep = inequalities.lipschitz_improvement_check(hh, None, h, 10, 0.4, 0.05)
    assert rep.reason is None
    assert rep.extra["lipschitz"] == pytest.approx(1.0)
    assert rep.extra["fitted_C"] == pytest.approx(0.0, abs=1e-9)
    assert rep.passed
    bad = inequalities.lipschitz_improvement_check(hh, None, 2 * h, 10, 0.4, 0.05)
    assert "Gamma" in bad.reason
    big = inequalities.lipschitz_improvement_check(hh, None, h, 10, 0.4, 0.5)
    assert "1/(16n)" in big.reason


def test_edge_lipschitz_subset(cycle20):
    u = np.zeros(20)
    u[10] = 1.0
    assert inequalities.edge_lipschitz(cycle20, u) == pytest.approx(1.0)
    assert inequalities.edge_lipschitz(cycle20, u, np.arange(5)) == 0.0


def test_refinement_stability():
    assert inequalities.refinement_stability("r", [1.0, 1.3, 1.5]).passed
    assert not inequalities.refinement_stability("r", [1.0, 3.0]).passed
