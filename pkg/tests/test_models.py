import math

import numpy as np
import pytest
from scipy import integrate, stats

import oracle
from perfcomplete.models import (VARIANTS, FactorModel, LatentState, Layout, ModelError, ModelSpec,
                                 _hier_prior, init_state, pack_state, reconstruct, unpack_state)


def _instance(rng, variant, M=3, N=4, S=2, D=2, K=2, J=3, density=0.7, **kw):
    vals = rng.standard_normal((M, N, S))
    mask = rng.random((M, N, S)) < density
    H, G = rng.standard_normal((M, K)), rng.standard_normal((N, J))
    spec = ModelSpec(variant=variant, D=D, **kw)
    fm = FactorModel(spec, vals, mask, H, G)
    return fm, vals, mask, H, G


def test_pmf_all_at_zero():
    spec = ModelSpec("PMF", D=1, noise=1.0)
    fm = FactorModel(spec, np.zeros((1, 1, 1)), np.ones((1, 1, 1), bool))
    assert fm.dim == 2
    assert fm.log_joint(np.zeros(2)) == pytest.approx(-3 * 0.5 * math.log(2 * math.pi), abs=1e-15)


def test_ptf_mean_enters_likelihood():
    spec = ModelSpec("PTF", D=1, noise=1.0)
    st = LatentState(U=np.array([[2.0]]), V=np.array([[1.0]]), w=np.array([0.5]), b=np.array([1.0]))
    assert reconstruct(st, spec)[0, 0, 0] == 2.0
    fm = FactorModel(spec, np.full((1, 1, 1), 2.0), np.ones((1, 1, 1), bool))
    v = pack_state(st, fm.layout)
    priors = sum(stats.norm.logpdf(x) for x in (2.0, 1.0, 0.5, 1.0))
    assert fm.log_joint(v) == pytest.approx(stats.norm.logpdf(0.0) + priors, rel=1e-14)


def test_pmf_dot_product():
    st = LatentState(U=np.array([[1.0, 2.0]]), V=np.array([[3.0, -1.0]]))
    assert reconstruct(st, ModelSpec("PMF", D=2))[0, 0, 0] == 1.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_matches_reference_evaluator(variant, rng):
    for _ in range(3):
        fm, vals, mask, H, G = _instance(rng, variant, eta=1.7, lam=0.8, sigma_U=0.7)
        v = 0.5 * rng.standard_normal(fm.dim)
        ref = oracle.log_joint(v, variant, 2, vals, mask, H, G, eta=1.7, lam=0.8, sigma_U=0.7)
        assert fm.log_joint(v) == pytest.approx(ref, rel=1e-10)
        np.testing.assert_allclose(fm.reconstruct(v), oracle.reconstruct(v, variant, 2, vals.shape, H, G),
                                   rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("noise", [None, 0.3])
def test_gradient_finite_differences(variant, noise, rng):
    fm, *_ = _instance(rng, variant, D=3, noise=noise)
    v = 0.5 * rng.standard_normal(fm.dim)
    g = fm.grad_log_joint(v)
    h = 1e-5
    fd = np.array([(fm.log_joint(v + h * e) - fm.log_joint(v - h * e)) / (2 * h)
                   for e in np.eye(v.size)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_prior_gradient_zero_at_origin():
    spec = ModelSpec("PMF", D=2, noise=1.0)
    fm = FactorModel(spec, np.zeros((3, 4, 1)), np.ones((3, 4, 1), bool))
    assert np.all(fm.grad_log_joint(np.zeros(fm.dim)) == 0.0)


def test_duplicate_entries_double_likelihood_gradient(rng):
    # PMF predicts the same value for every metric, so two identical metric
    # slices are the same cell observed twice
    spec = ModelSpec("PMF", D=2, noise=0.5)
    vals = rng.standard_normal((3, 4, 1))
    mask = rng.random((3, 4, 1)) < 0.8
    one = FactorModel(spec, vals, mask)
    two = FactorModel(spec, np.repeat(vals, 2, axis=2), np.repeat(mask, 2, axis=2))
    empty = FactorModel(spec, vals, np.zeros_like(mask))
    v = rng.standard_normal(one.dim)
    lik1 = one.grad_log_joint(v) - empty.grad_log_joint(v)
    lik2 = two.grad_log_joint(v) - empty.grad_log_joint(v)
    np.testing.assert_allclose(lik2, 2 * lik1, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_monotone_masking(variant, rng):
    fm, vals, mask, H, G = _instance(rng, variant)
    cell = tuple(np.argwhere(~mask)[0])
    mask2 = mask.copy()
    mask2[cell] = True
    fm2 = FactorModel(fm.spec, vals, mask2, H, G)
    v = 0.5 * rng.standard_normal(fm.dim)
    st = unpack_state(v, fm.layout)
    pred = fm.reconstruct(v)[cell]
    term = stats.norm.logpdf(vals[cell], pred, st.sigma)
    assert fm2.log_joint(v) - fm.log_joint(v) == pytest.approx(term, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("pair", [("PTF", "CPTF"), ("BPTF", "BCPTF")])
def test_constrained_zero_profiles(pair, rng):
    base_var, con_var = pair
    M, N, S, D, K, J = 3, 4, 2, 2, 2, 3
    vals = rng.standard_normal((M, N, S))
    mask = rng.random((M, N, S)) < 0.7
    base = FactorModel(ModelSpec(base_var, D=D), vals, mask)
    con = FactorModel(ModelSpec(con_var, D=D), vals, mask, np.zeros((M, K)), np.zeros((N, J)))
    v = 0.5 * rng.standard_normal(con.dim)
    p = con.layout.unpack(v)
    v_base = base.layout.pack({k: p[k] for k in base.layout.slices})
    extra = (stats.norm.logpdf(p["Y"], 0, con.spec.sigma_Y).sum()
             + stats.norm.logpdf(p["X"], 0, con.spec.sigma_X).sum())
    assert con.log_joint(v) == pytest.approx(base.log_joint(v_base) + extra, rel=1e-12)
    np.testing.assert_allclose(con.reconstruct(v), base.reconstruct(v_base), rtol=0, atol=1e-15)


def test_layout_sizes():
    assert Layout(ModelSpec("PMF", D=1, noise=0.1), 1, 1, 1).size == 2
    assert Layout(ModelSpec("PMF", D=1), 1, 1, 1).size == 3
    ptf = Layout(ModelSpec("PTF", D=2), 3, 4, 2).size
    bptf = Layout(ModelSpec("BPTF", D=2), 3, 4, 2).size
    assert bptf - ptf == 2 + 2 + 2 * 1 + 2 * 2
    lay = Layout(ModelSpec("BCPTF", D=3), 3, 4, 2, 2, 5)
    assert list(lay.slices) == ["U", "V", "w", "b", "mu_U", "mu_V", "chol_U", "chol_V",
                                "sigma_L_U", "sigma_L_V", "Y", "X", "log_sigma"]
    with pytest.raises(ModelError):
        Layout(ModelSpec("CPTF", D=2), 3, 4, 1)


def test_init_state_deterministic():
    spec = ModelSpec("BCPTF", D=3)
    a = init_state(spec, (4, 5, 2, 2, 3), seed=9)
    b = init_state(spec, (4, 5, 2, 2, 3), seed=9)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_state(spec, (4, 5, 2, 2, 3), seed=10))


@pytest.mark.parametrize("variant", VARIANTS)
def test_state_roundtrip(variant, rng):
    fm, *_ = _instance(rng, variant, D=3)
    v = 0.5 * rng.standard_normal(fm.dim)
    st = unpack_state(v, fm.layout)
    np.testing.assert_allclose(pack_state(st, fm.layout), v, atol=1e-10)
    st2 = LatentState.from_json(st.to_json(fm.spec))
    np.testing.assert_allclose(pack_state(st2, fm.layout), v, atol=1e-10)


def test_noise_prior_jacobian_integrates_to_one():
    # nothing observed: only the half-normal prior on sigma depends on log_sigma
    spec = ModelSpec("PMF", D=1)
    fm = FactorModel(spec, np.zeros((1, 1, 1)), np.zeros((1, 1, 1), bool))
    base = 2 * stats.norm.logpdf(0.0)

    def f(x):
        return math.exp(fm.log_joint(np.array([0.0, 0.0, x])) - base)
    total, _ = integrate.quad(f, -40, 10, epsabs=1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_scale_prior_jacobian_integrates_to_one(lam):
    # D = 1, no rows: the joint over (mu, log sd) is Normal(mu; 0, sd^2) Exponential(sd; lam)
    def f(mu, x):
        lp = _hier_prior(np.zeros((0, 1)), np.array([mu]), np.zeros(0), np.array([x]), 2.0, lam)[0]
        return math.exp(lp)
    total, _ = integrate.dblquad(f, -30, 6, lambda x: -40 * math.exp(x), lambda x: 40 * math.exp(x),
                                 epsabs=1e-11)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_missing_profiles_rejected():
    with pytest.raises(ModelError):
        FactorModel(ModelSpec("CPTF", D=2), np.zeros((2, 2, 1)), np.ones((2, 2, 1), bool))


def test_spec_roundtrip_and_validation():
    spec = ModelSpec("BCPTF", D=4, eta=1.5, lam=0.3, noise=0.2)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ModelError):
        ModelSpec("XYZ", D=2)
    with pytest.raises(ModelError):
        ModelSpec("PMF", D=0)
