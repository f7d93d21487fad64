import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from katolab import entropy, generators, heat, kato


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1.0), st.integers(0, 161))
def test_theta_identities(t, x):
    h = _sphere()
    assert entropy.theta(h, t, t, x) == pytest.approx(1.0, abs=1e-10)
    assert entropy.theta(h, t / 4, t / 2, x) == pytest.approx(entropy.heat_trace_quantity(h, x, t), rel=1e-10)


_CACHE = {}


def _sphere():
    if "h" not in _CACHE:
        _CACHE["h"] = heat.heat_handle(generators.generate_space("icosphere", level=2))
    return _CACHE["h"]


def test_u_function_on_the_diagonal(torus16_handle):
    t = 0.01
    U, clamped = entropy.u_function(torus16_handle, t, 0)
    q = entropy.heat_trace_quantity(torus16_handle, 0, t)
    assert U[0] == pytest.approx(-4 * t * math.log(q))
    assert not clamped[0]


@pytest.mark.parametrize("s", [1e-3, 0.01, 0.1])
def test_big_theta_methods_agree(s, sphere2):
    a = entropy.big_theta(sphere2, s, 3)
    b = entropy.big_theta(sphere2, s, 3, method="cavalieri")
    assert a == pytest.approx(b, rel=1e-12)


def test_big_theta_single_vertex():
    from katolab import geometry

    sp = geometry.build_graph_space(np.zeros((1, 1)), [2.0], 1)
    assert entropy.big_theta(sp, 0.5, 0) == pytest.approx(2.0 / math.sqrt(4 * math.pi * 0.5))


def test_theta_limit_on_flat_torus():
    gaps = []
    for N in (32, 64):
        sp = generators.generate_space("flat_torus", N=N)
        h = heat.heat_handle(sp, spectral=generators.flat_torus_spectrum(sp, 1.0, 1.0, N, m=10), backend="krylov")
        # stop where the lattice still resolves the Gaussian weight at d ~ 2 sqrt(s)
        rep = entropy.theta_limit_check(h, 0.01, 0, np.geomspace(0.05, 0.01, 4))
        assert rep.passed
        gaps.append(rep.extra["gaps"][-1])
    assert gaps[-1] < 0.02
    assert gaps[1] < gaps[0]


def test_theta_limit_breaks_down_at_lattice_scale():
    sp = generators.generate_space("flat_torus", N=64)
    h = heat.heat_handle(sp, spectral=generators.flat_torus_spectrum(sp, 1.0, 1.0, 64, m=10), backend="krylov")
    rep = entropy.theta_limit_check(h, 0.01, 0, np.geomspace(0.01, sp.t_min, 4))
    assert rep.verdict == "fail"


def test_derive_cn():
    b, c = entropy.derive_cn(2)
    assert b == pytest.approx(4 * math.sqrt(2) * (math.e**2 - 1))
    assert c == pytest.approx(2 * b)
    with pytest.raises(ValueError):
        entropy.derive_cn(0)


def linear_profile(c, T):
    times = kato.default_time_grid(T, count=100)
    return kato.KatoProfile(times, c * times, np.zeros(len(times), dtype=int), "exact", 0, c)


def test_phi_at_linear_model():
    prof = linear_profile(0.1, 1.0)
    assert entropy.phi_at(prof, 0.0) == 0.0
    assert entropy.phi_at(prof, 1e-6) == pytest.approx(2 * math.sqrt(0.1e-6))
    assert entropy.phi_at(prof, 0.5) == pytest.approx(2 * math.sqrt(0.05), rel=1e-3)


@pytest.mark.parametrize("s, t, direction", [(0.25, 0.5, "nondecreasing"), (0.5, 0.25, "nonincreasing")])
def test_monotonicity_on_zero_curvature(s, t, direction):
    N = 64
    sp = generators.generate_space("flat_torus", N=N)
    h = heat.heat_handle(sp, spectral=generators.flat_torus_spectrum(sp, 1.0, 1.0, N, lam_max=2000.0))
    prof = kato.kato_profile(h, np.zeros(sp.vertex_count), kato.default_time_grid(0.5))
    scan = entropy.monotonicity_scan(h, prof, 0, s, t, lam_grid=np.geomspace(0.1, 1.0, 8), T=0.5)
    assert scan.direction == direction
    assert scan.lam_bar == 1.0
    assert scan.report.verdict in ("pass", "pass-with-taint")
    assert scan.to_csv().startswith("lambda,theta_raw,theta_corrected,verdict")


def test_monotonicity_inconclusive_below_resolution(torus16_handle):
    prof = linear_profile(0.05, 1.0)
    scan = entropy.monotonicity_scan(torus16_handle, prof, 0, 0.1, 0.2, T=1.0)
    assert scan.lam_bar < 1e-6
    assert scan.report.verdict == "inconclusive"


def test_monotonicity_rejects_large_lambda(torus16_handle, torus16):
    prof = kato.kato_profile(torus16_handle, np.zeros(torus16.vertex_count), [0.1, 0.5])
    with pytest.raises(ValueError):
        entropy.monotonicity_scan(torus16_handle, prof, 0, 0.1, 0.2, lam_grid=[0.5, 2.0])


def test_heat_trace_scan_without_curvature(sphere2_handle, sphere2):
    prof = kato.kato_profile(sphere2_handle, np.zeros(sphere2.vertex_count), kato.default_time_grid(0.1))
    scan = entropy.heat_trace_scan(sphere2_handle, prof, 0, np.geomspace(1e-3, 0.1, 10))
    # on a positively curved space the heat-trace quantity decreases with nothing to absorb it
    assert math.isnan(scan.eta) or scan.raw_monotone


def test_richardson_exact_on_quadratics():
    a, b = 0.8, -3.0
    q = lambda r: a + b * r * r  # noqa: E731
    assert entropy.richardson(0.1, q(0.1), 0.3, q(0.3)) == pytest.approx(a)


def test_volume_density_torus_and_cone():
    torus = generators.generate_space("flat_torus", N=64)
    est = entropy.volume_density(torus, 0)
    assert est.density == pytest.approx(1.0, abs=0.03)
    cone = generators.cone_graph(angle=1.5 * math.pi, N=24)
    est = entropy.volume_density(cone, cone.origin)
    assert est.density == pytest.approx(0.75, rel=0.05)


def test_density_excludes_unresolved_radii():
    torus = generators.generate_space("flat_torus", N=32)
    est = entropy.volume_density(torus, 0, r_grid=[0.001, 0.15, 0.16, 0.17, 0.9])
    notes = [e["note"] for e in est.excluded]
    assert len(notes) == 2 and "resolution" in notes[0] and "eccentricity" in notes[1]
    with pytest.raises(entropy.EntropyError):
        entropy.volume_density(torus, 0, r_grid=[0.001, 0.9])


def test_density_artifacts():
    est = entropy.volume_density(generators.generate_space("flat_torus", N=32), 0)
    lines = est.to_csv().splitlines()
    assert lines[0] == "r,ball_volume,ratio" and len(lines) == len(est.r_grid) + 1
    doc = json.loads(est.to_json())
    assert doc["density"] == est.density


def test_density_lsc_probe():
    fam = [generators.generate_space("flat_torus", N=N) for N in (32, 64)]
    rep = entropy.density_lsc_probe(fam, [0, 0])
    assert rep.passed
    with pytest.raises(entropy.EntropyError):
        entropy.density_lsc_probe(fam, [0])


def test_theta_ball_bounds(torus16):
    a, A = entropy.theta_ball_bounds(torus16, [0, 5], [0.01, 0.02])
    assert 0 < a <= A


def test_varadhan_window(torus16_handle, torus16):
    rep = entropy.varadhan_check(torus16_handle, 0, 0.01, d_max=0.0)
    assert rep.verdict == "inconclusive"
    rep = entropy.varadhan_check(torus16_handle, 0, 0.01, d_max=0.3, d_min=0.2)
    assert all(0.2 <= torus16.distances_from(0)[y] <= 0.3 for y in rep.locations)


def test_entropy_grid_shapes(cycle20_handle):
    g = entropy.entropy_grid(cycle20_handle, 0, [0.5, 1.0], [0.5, 1.0, 2.0])
    assert g.U.shape == (3, 20)
    assert g.theta.shape == (2, 3)
    assert g.big_theta.shape == (2,)
    np.testing.assert_allclose(np.diag(g.theta[:, :2]), 1.0, atol=1e-10)
