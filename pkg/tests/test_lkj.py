import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

import oracle
from perfcomplete.lkj import (corr_cholesky, corr_cholesky_inverse, corr_cholesky_vjp,
                              lkj_cholesky_logpdf, n_corr)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10 ** 6))
def test_factor_is_valid_correlation(D, seed):
    z = np.random.default_rng(seed).normal(0, 1.5, n_corr(D))
    L, _ = corr_cholesky(z, D)
    R = L @ L.T
    assert np.allclose(np.diag(R), 1.0, atol=1e-12)
    assert np.all(np.diag(L) > 0)
    assert np.allclose(np.triu(L, 1), 0.0)
    assert np.allclose(corr_cholesky_inverse(L), z, atol=1e-8)


@pytest.mark.parametrize("D,eta", [(2, 1.0), (3, 2.0), (4, 0.7), (5, 3.5)])
def test_density_on_unconstrained_axis_matches_reference(D, eta, rng):
    # the package works in L coordinates, the reference in R = L L^T
    # coordinates; only density plus log-Jacobian is coordinate free
    for _ in range(4):
        z = rng.normal(0, 0.6, n_corr(D))
        L, logjac = corr_cholesky(z, D)
        ours = lkj_cholesky_logpdf(L, eta) + logjac
        ref = oracle.lkj_logpdf(L @ L.T, eta) + oracle.log_abs_det_z_to_corr(z, D)
        assert ours == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_two_dimensional_case_coordinates_coincide(rng):
    z = rng.normal(0, 1, 1)
    L, logjac = corr_cholesky(z, 2)
    assert logjac == pytest.approx(oracle.log_abs_det_z_to_corr(z, 2), rel=1e-12)
    assert lkj_cholesky_logpdf(L, 2.0) == pytest.approx(oracle.lkj_logpdf(L @ L.T, 2.0), rel=1e-12)


@pytest.mark.parametrize("eta", [0.8, 1.0, 2.0, 5.0])
def test_density_integrates_to_one_on_unconstrained_axis(eta):
    # D = 2: a single partial correlation
    def f(z):
        L, lj = corr_cholesky(np.array([z]), 2)
        return np.exp(lkj_cholesky_logpdf(L, eta) + lj)
    total, _ = integrate.quad(f, -40, 40, epsabs=1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_vjp_matches_finite_differences(rng):
    for D in (2, 3, 4):
        z = rng.normal(0, 0.7, n_corr(D))
        gL = np.tril(rng.standard_normal((D, D)))

        def obj(zz):
            L, lj = corr_cholesky(zz, D)
            return float(np.sum(gL * L) + lj)
        h = 1e-6
        fd = np.array([(obj(z + h * e) - obj(z - h * e)) / (2 * h) for e in np.eye(z.size)])
        assert np.allclose(corr_cholesky_vjp(z, D, gL), fd, rtol=1e-6, atol=1e-8)
