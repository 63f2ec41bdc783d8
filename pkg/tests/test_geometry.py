import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from rsmimo.geometry import (correlation_factor, correlation_matrix, correlations_for_setup,
                             generate_topology, large_scale_fading, path_loss)
from rsmimo.params import ConfigurationError, SystemParameters


@settings(max_examples=40, deadline=None)
@given(K=st.integers(1, 12), width=st.floats(0.05, 2 * np.pi), center=st.floats(-np.pi, np.pi),
       seed=st.integers(0, 2 ** 31))
def test_circular_topology_invariants(K, width, center, seed):
    geo = generate_topology("circular", K, width, np.random.default_rng(seed), center_angle=center)
    assert_allclose(np.hypot(*geo.positions.T), 125.0, rtol=1e-12)
    assert_allclose(geo.distances, 0.125)
    assert np.all(np.abs(geo.angles - center) <= width / 2 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(K=st.integers(1, 12), width=st.floats(0.3, 2 * np.pi), center=st.floats(-np.pi, np.pi),
       seed=st.integers(0, 2 ** 31))
def test_rectangular_topology_invariants(K, width, center, seed):
    geo = generate_topology("rectangular", K, width, np.random.default_rng(seed), center_angle=center)
    assert np.all(np.abs(geo.positions) <= 125.0)
    assert np.all(geo.distances >= 0.010)
    assert np.all(np.abs(geo.angles - center) <= width / 2 + 1e-12)
    # angles are the bearings of the positions
    bearing = np.arctan2(geo.positions[:, 1], geo.positions[:, 0])
    assert_allclose(np.exp(1j * bearing), np.exp(1j * geo.angles), atol=1e-12)


@pytest.mark.parametrize("kind,K,width", [("circular", 0, 1.0), ("circular", 2, 0.0),
                                          ("rectangular", 2, 7.0), ("hexagon", 2, 1.0),
                                          ("circular", 2.5, 1.0)])
def test_topology_rejects_bad_input(kind, K, width):
    with pytest.raises(ConfigurationError):
        generate_topology(kind, K, width, 0)


def test_topology_is_reproducible():
    a = generate_topology("rectangular", 6, np.pi / 4, np.random.default_rng(11))
    b = generate_topology("rectangular", 6, np.pi / 4, np.random.default_rng(11))
    assert_array_equal(a.positions, b.positions)


def test_path_loss_reference_values():
    # -148.1 - 37.6 * log10(d): at 1 km the constant, at 125 m +33.956 dB
    assert path_loss(1.0) == pytest.approx(-148.1)
    assert path_loss(0.125) == pytest.approx(-148.1 + 37.6 * np.log10(8.0), abs=1e-12)
    assert path_loss(0.125, 4.0) == pytest.approx(path_loss(0.125) + 4.0)
    with pytest.raises(ValueError):
        path_loss(0.0)


def test_shadowing_statistics():
    geo = generate_topology("circular", 4000, 2 * np.pi, 1)
    ls = large_scale_fading(geo, SystemParameters(), np.random.default_rng(2))
    assert ls.shadowing_db.mean() == pytest.approx(0.0, abs=0.2)
    assert ls.shadowing_db.std() == pytest.approx(4.0, rel=0.05)


def test_uncorrelated_model_is_scaled_identity():
    R, nominal = correlation_matrix(2.0, 0.3, 8, "uncorrelated")
    assert_array_equal(R, 2.0 * np.eye(8))
    assert nominal is None


def _scattering_oracle(beta, nominal, M, sigma):
    """Entries by numerical integration over the Gaussian angular spread."""
    d = np.arange(M)[:, None] - np.arange(M)[None, :]
    x, w = np.polynomial.hermite_e.hermegauss(80)
    w = w / w.sum()
    R = np.zeros((M, M), dtype=complex)
    for phi in nominal:
        for xi, wi in zip(x, w):
            R += wi * np.exp(1j * np.pi * d * np.sin(phi + sigma * xi))
    return beta * R / len(nominal)


def test_scattering_matches_integral_for_narrow_spread():
    # the closed form is a small-angle expansion; with a 0.5 degree spread it is tight
    rng = np.random.default_rng(4)
    sigma = np.deg2rad(0.5)
    R, nominal = correlation_matrix(3.0, 0.4, 12, "gaussian_scattering", 5, sigma, rng=rng)
    assert_allclose(R, _scattering_oracle(3.0, nominal, 12, sigma), atol=3e-3 * 3.0)


@settings(max_examples=25, deadline=None)
@given(M=st.integers(1, 64), beta=st.floats(1e-14, 10.0), phi=st.floats(-np.pi, np.pi),
       seed=st.integers(0, 2 ** 31))
def test_scattering_invariants(M, beta, phi, seed):
    R, _ = correlation_matrix(beta, phi, M, rng=np.random.default_rng(seed))
    assert np.real(np.trace(R)) / M == pytest.approx(beta, rel=1e-9)
    assert_array_equal(R, R.conj().T)
    assert np.linalg.eigvalsh(R).min() >= -1e-10 * beta


def test_diagonal_equals_beta():
    R, _ = correlation_matrix(0.7, 1.0, 16, rng=3)
    assert_allclose(np.diag(R), 0.7)


def test_correlations_for_setup_reproducible_and_traced():
    p = SystemParameters()
    out = []
    for _ in range(2):
        rng = np.random.default_rng(8)
        geo = generate_topology("circular", 3, np.pi / 4, rng)
        ls = large_scale_fading(geo, p, rng)
        out.append((ls, correlations_for_setup(ls, geo, 20, rng=rng)))
    assert_array_equal(out[0][1].R, out[1][1].R)
    assert_allclose(out[0][1].betas, out[0][0].beta_linear, rtol=1e-9)


def test_correlation_factor_reconstructs():
    R, _ = correlation_matrix(1.0, 0.2, 40, rng=5)
    F = correlation_factor(R)
    assert_allclose(F @ F.conj().T, R, atol=1e-9)
    bad = np.diag([1.0, -0.5])
    with pytest.raises(np.linalg.LinAlgError):
        correlation_factor(bad)


def test_bad_correlation_inputs():
    with pytest.raises(ConfigurationError):
        correlation_matrix(1.0, 0.0, 0)
    with pytest.raises(ConfigurationError):
        correlation_matrix(-1.0, 0.0, 4)
    with pytest.raises(ConfigurationError):
        correlation_matrix(1.0, 0.0, 4, "kronecker")
