from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdeasym.core_model import (
    DimensionError,
    SdeSystem,
    ZeroPointError,
    decompose_matrix,
    decompose_vector,
    identity_diffusion,
    normalize_angle,
    polar_coefficients,
    polar_coefficients_at,
    zero_diffusion,
    zero_drift,
)
from sdeasym.scenarios import build_perturbed_drift, build_power_drift


def bm_system(n):
    return SdeSystem(n, n, zero_drift, identity_diffusion(n), "bm")


class TestDecomposeVector:
    def test_axis_aligned(self):
        d = decompose_vector([1.0, 0.0], [2.0, 3.0])
        np.testing.assert_array_equal(d.radial, [2.0, 0.0])
        np.testing.assert_array_equal(d.tangential, [0.0, 3.0])

    def test_parallel(self):
        x = np.array([0.3, -1.2, 2.0])
        d = decompose_vector(x, 5 * x)
        np.testing.assert_allclose(d.radial, 5 * x, rtol=1e-15)
        np.testing.assert_allclose(d.tangential, 0.0, atol=1e-14)

    def test_hand_projection(self):
        d = decompose_vector([3.0, 4.0], [1.0, 0.0])
        np.testing.assert_allclose(d.radial, [9 / 25, 12 / 25], rtol=1e-15)
        np.testing.assert_allclose(d.tangential, [16 / 25, -12 / 25], rtol=1e-15)
        assert abs(np.dot([3.0, 4.0], d.tangential)) < 1e-15

    def test_origin_rejected(self):
        with pytest.raises(ZeroPointError):
            decompose_vector([0.0, 0.0], [1.0, 2.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            decompose_vector([1.0, 0.0], [1.0, 2.0, 3.0])

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(2, 6).flatmap(
            lambda n: st.tuples(
                arrays(float, n, elements=st.floats(-100, 100)),
                arrays(float, n, elements=st.floats(-100, 100)),
            )
        )
    )
    def test_reconstruction_and_orthogonality(self, xv):
        x, v = xv
        if np.linalg.norm(x) < 1e-6 or np.linalg.norm(v) < 1e-100:
            return
        d = decompose_vector(x, v)
        scale = np.linalg.norm(v)
        assert np.max(np.abs(d.radial + d.tangential - v)) <= 1e-12 * scale
        assert abs(np.dot(x, d.tangential)) <= 1e-12 * np.linalg.norm(x) * scale


class TestDecomposeMatrix:
    def test_identity_plane(self):
        d = decompose_matrix([1.0, 0.0], np.eye(2))
        np.testing.assert_array_equal(d.radial, [[1, 0], [0, 0]])
        np.testing.assert_array_equal(d.tangential, [[0, 0], [0, 1]])

    def test_parallel_columns(self):
        x = np.array([1.0, 2.0, -0.5])
        B = np.outer(x, [2.0, -1.0])
        d = decompose_matrix(x, B)
        np.testing.assert_allclose(d.tangential, 0.0, atol=1e-14)

    def test_projection_trace(self):
        x = np.ones(3) / np.sqrt(3)
        d = decompose_matrix(x, np.eye(3))
        assert np.sum(d.tangential**2) == pytest.approx(2.0, rel=1e-14)

    def test_frobenius_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n, m = rng.integers(2, 6), rng.integers(1, 5)
            x, B = rng.normal(size=n), rng.normal(size=(n, m))
            d = decompose_matrix(x, B)
            assert np.sum(B**2) == pytest.approx(np.sum(d.radial**2) + np.sum(d.tangential**2), rel=1e-12)

    def test_origin_rejected(self):
        with pytest.raises(ZeroPointError):
            decompose_matrix(np.zeros(3), np.eye(3))


class TestPolarCoefficients:
    def test_driftless_bm(self):
        c = polar_coefficients(bm_system(3), 2.0, np.array([0.0, 0.6, 0.8]))
        assert c.mu == pytest.approx(0.5, abs=1e-15)
        assert c.sigma == pytest.approx(1.0, abs=1e-15)

    def test_all_zero(self):
        sys = SdeSystem(3, 2, zero_drift, zero_diffusion(3, 2))
        c = polar_coefficients(sys, 1.5, np.array([1.0, 0.0, 0.0]))
        assert c.mu == 0 and c.sigma == 0
        assert np.all(c.nu == 0) and np.all(c.chi == 0)

    def test_angle_coefficients_planar_bm(self):
        c = polar_coefficients(bm_system(2), 2.0, np.array([1.0, 0.0]))
        np.testing.assert_allclose(c.nu, [-1 / 8, 0.0], atol=1e-16)
        assert np.sqrt(np.sum(c.chi**2)) == pytest.approx(0.5, rel=1e-15)

    @pytest.mark.parametrize("n,alpha", [(2, 0.5), (3, 0.0), (5, -0.5)])
    def test_power_drift_radius_sde(self, n, alpha):
        sys = build_power_drift(n, alpha).system
        rng = np.random.default_rng(11)
        r = rng.uniform(0.1, 100.0, size=100)
        phi = rng.normal(size=(100, n))
        phi /= np.linalg.norm(phi, axis=1, keepdims=True)
        c = polar_coefficients(sys, r, phi)
        np.testing.assert_allclose(c.mu, r**alpha + (n - 1) / (2 * r), rtol=1e-12)
        np.testing.assert_allclose(c.sigma, 1.0, rtol=1e-12)

    def test_sigma_nonnegative(self, random_system_factory):
        rng = np.random.default_rng(3)
        sys = random_system_factory(4, 3, rng).system()
        phi = rng.normal(size=(200, 4))
        phi /= np.linalg.norm(phi, axis=1, keepdims=True)
        c = polar_coefficients(sys, rng.uniform(0.1, 5, 200), phi)
        assert np.all(c.sigma >= 0)

    def test_zero_radius(self):
        with pytest.raises(ZeroPointError):
            polar_coefficients(bm_system(2), 0.0, np.array([1.0, 0.0]))

    def test_phi_dimension(self):
        with pytest.raises(DimensionError):
            polar_coefficients(bm_system(2), 1.0, np.array([1.0, 0.0, 0.0]))

    def test_phi_renormalized_or_rejected(self):
        phi = np.array([1.0 + 5e-10, 0.0])
        np.testing.assert_allclose(normalize_angle(phi), [1.0, 0.0], rtol=1e-15)
        with pytest.raises(ValueError):
            normalize_angle(np.array([1.001, 0.0]))

    def test_point_and_polar_agree_bitwise(self, random_system_factory):
        rng = np.random.default_rng(8)
        sys = random_system_factory(3, 2, rng).system()
        for _ in range(20):
            r = rng.uniform(0.2, 4)
            phi = rng.normal(size=3)
            phi /= np.linalg.norm(phi)
            a = polar_coefficients(sys, r, phi)
            b = polar_coefficients_at(sys, r * phi)
            c = polar_coefficients(sys, r, phi)
            for f in ("mu", "sigma", "nu", "chi"):
                assert np.array_equal(getattr(a, f), getattr(c, f))
            # the point route recomputes (r, phi) from x, so agreement is to rounding
            np.testing.assert_allclose(a.mu, b.mu, rtol=1e-13)

    def test_batch_matches_single(self):
        # user fields built on BLAS calls may round differently per batch size,
        # so use one written with elementwise operations only
        rng = np.random.default_rng(9)
        sys = build_perturbed_drift(3, 0.25, 0.5, 0.3).system
        r = rng.uniform(0.2, 4, 16)
        phi = rng.normal(size=(16, 3))
        phi /= np.linalg.norm(phi, axis=1, keepdims=True)
        batch = polar_coefficients(sys, r, phi)
        for i in range(16):
            one = polar_coefficients(sys, r[i], phi[i])
            assert one.mu == batch.mu[i]
            assert np.array_equal(one.nu, batch.nu[i])

    def test_drift_shape_checked(self):
        sys = SdeSystem(2, 2, lambda x: np.zeros(3), identity_diffusion(2))
        with pytest.raises(DimensionError):
            polar_coefficients(sys, 1.0, np.array([1.0, 0.0]))


def test_system_dimension_guards():
    with pytest.raises(DimensionError):
        SdeSystem(1, 1, zero_drift, identity_diffusion(1))
    with pytest.raises(DimensionError):
        SdeSystem(2, 0, zero_drift, identity_diffusion(2))
