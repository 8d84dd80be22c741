import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from deadtime import (BinGrid, CapacityError, ConvergenceError, DegenerateModelError,
                      SceneModel, UnsupportedModeError, arrival_pdf, build_kernel,
                      detection_pdf, fisher_information, fisher_tau_to_depth, intensity_at,
                      spectral_gap, stationary_distribution, transition_pdf)
from deadtime.markov import SPEED_OF_LIGHT_M_PER_NS


def _reset_point(model, y):
    return (y + model.x_d) % model.t_r


@settings(max_examples=25, deadline=None)
@given(y=st.floats(0, 19.99), S=st.floats(0.05, 5), B=st.floats(0.05, 5),
       t_d=st.floats(0.5, 60))
def test_transition_pdf_normalized(y, S, B, t_d):
    m = SceneModel(t_r=20.0, t_d=t_d, sigma=0.8, S=S, B=B, tau=6.0)
    u = _reset_point(m, y)
    pts = sorted({u, m.tau})
    total, _ = quad(lambda x: transition_pdf(m, y, x), 0.0, m.t_r, points=pts, limit=400)
    assert total == pytest.approx(1.0, rel=1e-7)


def test_transition_pdf_closed_form_background_only():
    # uniform intensity b: density b exp(-b * wait) / (1 - exp(-B))
    m = SceneModel(t_r=10.0, t_d=4.0, S=0.0, B=2.0, tau=1.0)
    b = m.background_rate
    for y, x in [(1.0, 6.0), (1.0, 4.0), (8.0, 1.0), (8.0, 3.0)]:
        wait = (x - (y + 4.0)) % 10.0
        expect = b * np.exp(-b * wait) / (1 - np.exp(-2.0))
        assert transition_pdf(m, y, x) == pytest.approx(expect, rel=1e-12)


def test_transition_pdf_zero_flux():
    with pytest.raises(DegenerateModelError):
        transition_pdf(SceneModel(S=0, B=0), 1.0, 2.0)


def dense_oracle(model, grid, quad_nodes=4):
    """Kernel by direct quadrature of the point transition density over target bins."""
    xi, wq = np.polynomial.legendre.leggauss(quad_nodes)
    n_b, t_bin = grid.n_b, grid.t_bin
    P = np.zeros((n_b, n_b))
    for m in range(n_b):
        ys = m * t_bin + 0.5 * (xi + 1) * t_bin
        w = intensity_at(model, ys) * wq
        w = w / w.sum()
        for y, wj in zip(ys, w):
            u = _reset_point(model, y)
            for n in range(n_b):
                lo, hi = n * t_bin, (n + 1) * t_bin
                pts = [p for p in (u, model.tau) if lo < p < hi]
                val, _ = quad(lambda x: transition_pdf(model, y, x), lo, hi,
                              points=pts or None, epsabs=1e-13, epsrel=1e-11)
                P[m, n] += wj * val
    return P


def test_dense_kernel_matches_quadrature_oracle():
    m = SceneModel(t_r=10.0, t_d=6.3, sigma=0.7, S=2.5, B=0.8, tau=3.1)
    g = BinGrid.for_model(m, 0.5)
    K = build_kernel(m, g, "dense")
    np.testing.assert_allclose(K.matrix, dense_oracle(m, g), atol=1e-9)


def test_kernel_rows_stochastic(small_grid_scene):
    m, g = small_grid_scene
    K = build_kernel(m, g, "dense")
    assert K.mode == "dense"
    assert np.all(K.matrix >= 0)
    np.testing.assert_allclose(K.matrix.sum(axis=1), 1.0, atol=1e-14)


def test_matrix_free_matches_dense(small_grid_scene):
    m, g = small_grid_scene
    dense = build_kernel(m, g, "dense")
    free = build_kernel(m, g)
    assert free.mode == "matrix-free"
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = rng.random(g.n_b)
        p /= p.sum()
        np.testing.assert_allclose(free.apply_left(p), dense.apply_left(p), atol=1e-15)
        # matrix-free rows are stochastic too
        assert free.apply_left(p).sum() == pytest.approx(1.0, abs=1e-13)


def test_dense_capacity_and_mode_errors(small_grid_scene):
    m, g = small_grid_scene
    with pytest.raises(CapacityError):
        build_kernel(m, g, "dense", max_dense_bins=10)
    with pytest.raises(UnsupportedModeError):
        build_kernel(m, g, "sparse")
    with pytest.raises(UnsupportedModeError):
        spectral_gap(build_kernel(m, g))


def test_spectral_gap_background_only_circulant():
    # uniform intensity makes the kernel circulant; its eigenvalues are the DFT of a row
    m = SceneModel(t_r=20.0, t_d=13.0, S=0.0, B=1.5, tau=1.0)
    g = BinGrid.for_model(m, 0.25)
    K = build_kernel(m, g, "dense")
    row = K.matrix[0]
    for k in range(1, g.n_b):
        np.testing.assert_allclose(K.matrix[k], np.roll(row, k), atol=1e-14)
    mods = np.sort(np.abs(np.fft.fft(row)))[::-1]
    assert spectral_gap(K) == pytest.approx(1 - mods[1], abs=1e-10)
    # uniform distribution is stationary
    res = stationary_distribution(K)
    np.testing.assert_allclose(res.pdf, 1 / m.t_r, rtol=1e-8)


def test_spectral_gap_scene_and_power_estimate():
    m = SceneModel(t_r=100, t_d=75, sigma=2.0, S=3.16, B=3.16, tau=50)
    g = BinGrid.for_model(m, 0.5)
    K = build_kernel(m, g, "dense")
    gap = spectral_gap(K)
    assert 0 < gap < 1
    res = stationary_distribution(K, tol=1e-13)
    assert res.gap == pytest.approx(gap, rel=0.05)


def test_stationary_is_fixed_point(fig2_scene):
    g = BinGrid.for_model(fig2_scene, 0.05)
    K = build_kernel(fig2_scene, g)
    res = stationary_distribution(K)
    p = res.pdf * g.t_bin
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)
    assert np.abs(K.apply_left(p) - p).sum() < 1e-9
    assert res.residual < 1e-9


def test_stationary_dense_equals_matrix_free(small_grid_scene):
    m, g = small_grid_scene
    a = stationary_distribution(build_kernel(m, g, "dense"), tol=1e-13).pdf
    b = stationary_distribution(build_kernel(m, g), tol=1e-13).pdf
    np.testing.assert_allclose(a, b, atol=1e-11)


def test_stationary_reports_nonconvergence(fig2_scene):
    g = BinGrid.for_model(fig2_scene, 0.05)
    with pytest.raises(ConvergenceError) as info:
        stationary_distribution(build_kernel(fig2_scene, g), max_iter=3)
    assert info.value.residual > 0


@pytest.mark.parametrize("t_d", [100.0, 200.0])
def test_no_distortion_when_dead_time_is_whole_periods(t_d):
    m = SceneModel(t_r=100, t_d=t_d, sigma=2.0, S=3.16, B=3.16, tau=50)
    g = BinGrid.for_model(m, 0.05)
    assert g.n_d == 0
    np.testing.assert_allclose(detection_pdf(m, g), arrival_pdf(m, g), atol=1e-6)


def test_high_signal_shifts_mode_earlier():
    m = SceneModel(t_r=100, t_d=75, sigma=2.0, S=3.16, B=0.1, tau=50)
    g = BinGrid.for_model(m, 0.05)
    f_d, f_a = detection_pdf(m, g), arrival_pdf(m, g)
    assert g.centers[np.argmax(f_d)] < g.centers[np.argmax(f_a)]
    # the detected pulse is narrower, so its peak is higher
    mode = np.argmax(f_d)
    assert f_d[mode] > f_a.max()


def test_fisher_arrival_gaussian_limit():
    m = SceneModel(t_r=100, t_d=75, sigma=0.2, S=1.0, B=0.0, tau=50)
    g = BinGrid.for_model(m, 0.01)
    assert fisher_information(m, g, "arrival") == pytest.approx(1 / 0.04, rel=2e-3)


def test_fisher_shifted_step_matches_roll():
    m = SceneModel(t_r=100, t_d=75, sigma=0.5, S=2.0, B=0.3, tau=50.025)
    g = BinGrid.for_model(m, 0.05)
    a = fisher_information(m, g, "arrival")
    b = fisher_information(m, g, "arrival", delta_tau=0.05 * (1 + 1e-6))
    assert a == pytest.approx(b, rel=1e-4)
    with pytest.raises(ValueError):
        fisher_information(m, g, "other")


def test_fisher_depth_conversion():
    assert fisher_tau_to_depth(1.0) == pytest.approx((2 / SPEED_OF_LIGHT_M_PER_NS) ** 2)
