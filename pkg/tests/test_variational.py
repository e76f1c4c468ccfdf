import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescall import autodiff as ad
from bayescall import variational as vr
from bayescall.autodiff import Tensor
from bayescall.errors import ContractError, DomainError
from bayescall.network import (HEAD_VARIATIONAL, Model, ModelSpec, param_names)
from bayescall.variational import (DenseNoise, GaussianPrior,
                                   GaussianVariationalParams, softplus_sigma)


def layer(mu_k, rho_k, mu_b, rho_b):
    return GaussianVariationalParams(Tensor(mu_k), Tensor(rho_k),
                                     Tensor(mu_b), Tensor(rho_b))


def toy_spec(head=HEAD_VARIATIONAL):
    return ModelSpec(depth=3, features=6, hidden1=2, hidden2=2,
                     dense_units=2, head=head)


def zero_model(spec, sigma_p):
    """All-zero deterministic parts; variational layers at mu=0, sigma=sigma_p."""
    rho0 = vr.softplus_inverse(sigma_p)
    template = Model.initialize(spec, np.random.default_rng(0)).params
    params = {}
    for name in param_names(spec):
        shape = template[name].shape
        if name.endswith(".rho"):
            params[name] = np.full(shape, rho0)
        else:
            params[name] = np.zeros(shape)
    return Model(spec, params)


# ---------------------------------------------------------------------------
# softplus scale


def test_softplus_sigma_values():
    assert softplus_sigma(0.0) == pytest.approx(math.log(2.0), abs=1e-15)
    assert softplus_sigma(40.0) == pytest.approx(40.0, abs=1e-12)
    tiny = softplus_sigma(-40.0)
    assert 0.0 < tiny < 1e-15


def test_softplus_inverse_roundtrip():
    for s in (0.05, 0.5, 1.0, 3.0):
        assert softplus_sigma(vr.softplus_inverse(s)) == pytest.approx(s, rel=1e-12)


# ---------------------------------------------------------------------------
# KL divergence


def test_kl_zero_for_identical_distributions():
    sp = 0.7
    rho = vr.softplus_inverse(sp)
    p = layer(np.zeros((3, 2)), np.full((3, 2), rho), np.zeros(2), np.full(2, rho))
    sigma = softplus_sigma(rho)
    kl = vr.kl_gaussian_diag(p, GaussianPrior(sigma)).item()
    assert abs(kl) < 1e-12


def test_kl_single_weight_closed_form():
    # one weight mu=1 sigma=1 prior=1 -> (1+1)/2 - 1/2 = 0.5; zero the bias
    # contribution by matching it to the prior
    rho1 = vr.softplus_inverse(1.0)
    p = layer(np.array([[1.0]]), np.array([[rho1]]),
              np.zeros(1), np.array([rho1]))
    kl = vr.kl_gaussian_diag(p, GaussianPrior(softplus_sigma(rho1))).item()
    assert kl == pytest.approx(0.5, abs=1e-12)


def test_kl_matches_monte_carlo_oracle():
    # 10-weight layer (4x2 kernel + 2 bias) vs a 10^6-sample Monte-Carlo
    # estimate of E_Q[log q(w) - log p(w)]
    rng = np.random.default_rng(123)
    mu_k = rng.uniform(-1.0, 1.0, (4, 2))
    rho_k = rng.uniform(-2.0, 0.5, (4, 2))
    mu_b = rng.uniform(-1.0, 1.0, 2)
    rho_b = rng.uniform(-2.0, 0.5, 2)
    sp = 0.8
    closed = vr.kl_gaussian_diag(layer(mu_k, rho_k, mu_b, rho_b),
                                 GaussianPrior(sp)).item()

    mu = np.concatenate([mu_k.ravel(), mu_b])
    sigma = np.logaddexp(0.0, np.concatenate([rho_k.ravel(), rho_b]))
    n = 1_000_000
    w = mu[None] + sigma[None] * rng.standard_normal((n, 10))
    log_q = (-0.5 * ((w - mu[None]) / sigma[None]) ** 2
             - np.log(sigma[None]) - 0.5 * math.log(2 * math.pi)).sum(axis=1)
    log_p = (-0.5 * (w / sp) ** 2
             - math.log(sp) - 0.5 * math.log(2 * math.pi)).sum(axis=1)
    mc = float((log_q - log_p).mean())
    assert closed == pytest.approx(mc, rel=0.01)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=6),
       st.lists(st.floats(-3, 1), min_size=2, max_size=6),
       st.floats(0.1, 3.0))
def test_kl_is_nonnegative(mus, rhos, sp):
    k = min(len(mus), len(rhos))
    p = layer(np.array(mus[:k]).reshape(k, 1), np.array(rhos[:k]).reshape(k, 1),
              np.zeros(1), np.array([vr.softplus_inverse(sp)]))
    assert vr.kl_gaussian_diag(p, GaussianPrior(sp)).item() >= -1e-12


def test_prior_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        GaussianPrior(0.0)
    with pytest.raises(DomainError):
        GaussianPrior(-1.0)


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    prior = GaussianPrior(0.9)

    def fn(p):
        gv = GaussianVariationalParams(p["km"], p["kr"], p["bm"], p["br"])
        return vr.kl_gaussian_diag(gv, prior)

    params = {"km": rng.standard_normal((3, 2)), "kr": rng.uniform(-2, 1, (3, 2)),
              "bm": rng.standard_normal(2), "br": rng.uniform(-2, 1, 2)}
    assert ad.grad_check(fn, params) < 1e-7


# ---------------------------------------------------------------------------
# reparameterized sampling


def test_reparam_collapses_to_mean_at_tiny_sigma():
    mu = np.array([[0.3, -1.2], [2.0, 0.1]])
    p = layer(mu, np.full((2, 2), -40.0), np.zeros(2), np.full(2, -40.0))
    kernel, bias = vr.sample_weights_reparam(p, np.random.default_rng(0))
    np.testing.assert_allclose(kernel.data, mu, rtol=0, atol=1e-15)
    np.testing.assert_allclose(bias.data, np.zeros(2), rtol=0, atol=1e-15)


def test_reparam_empirical_mean_within_four_standard_errors():
    n = 100_000
    mu_val, sigma = 0.7, 0.35
    rho = vr.softplus_inverse(sigma)
    p = layer(np.full((1, n), mu_val), np.full((1, n), rho),
              np.zeros(n), np.full(n, rho))
    kernel, _ = vr.sample_weights_reparam(p, np.random.default_rng(99))
    se = sigma / math.sqrt(n)
    assert abs(kernel.data.mean() - mu_val) < 4 * se


def test_reparam_fixed_seed_reproducible():
    rng_a = np.random.default_rng(7)
    rng_b = np.random.default_rng(7)
    p = layer(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros(3), np.zeros(3))
    ka, ba = vr.sample_weights_reparam(p, rng_a)
    kb, bb = vr.sample_weights_reparam(p, rng_b)
    assert ka.data.tobytes() == kb.data.tobytes()
    assert ba.data.tobytes() == bb.data.tobytes()


def test_reparam_requires_rng_or_noise():
    p = layer(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), np.zeros(2))
    with pytest.raises(ContractError):
        vr.sample_weights_reparam(p)


# ---------------------------------------------------------------------------
# Flipout


def test_flipout_sign_enumeration_recovers_mean():
    # 2-in/1-out layer, single row: 2^(2+1) = 8 sign assignments average to
    # X mu + bias_sample exactly (the batch-shared mean at fixed noise)
    rng = np.random.default_rng(21)
    mu = rng.standard_normal((2, 1))
    rho = np.full((2, 1), vr.softplus_inverse(0.7))
    p = layer(mu, rho, rng.standard_normal(1), np.array([vr.softplus_inverse(0.4)]))
    x = rng.standard_normal((1, 2))
    kernel_eps = rng.standard_normal((2, 1))
    bias_eps = rng.standard_normal(1)

    outs = []
    for s0, s1, r0 in itertools.product((-1.0, 1.0), repeat=3):
        noise = DenseNoise(kernel_eps, bias_eps,
                           np.array([[s0, s1]]), np.array([[r0]]))
        outs.append(vr.flipout_forward(Tensor(x), p, noise=noise).data)
    mean = np.mean(outs, axis=0)
    bias_sample = p.bias_mu.data + softplus_sigma(p.bias_rho.data[0]) * bias_eps
    expected = x @ mu + bias_sample
    np.testing.assert_allclose(mean, expected, rtol=0, atol=1e-14)


def test_flipout_zero_sigma_is_exact_mean_path():
    # rho = -800 underflows softplus to exactly 0, so the perturbation
    # term vanishes bit-for-bit
    rng = np.random.default_rng(2)
    mu = rng.standard_normal((3, 2))
    mu_b = rng.standard_normal(2)
    p = layer(mu, np.full((3, 2), -800.0), mu_b, np.full(2, -800.0))
    x = rng.standard_normal((4, 3))
    out = vr.flipout_forward(Tensor(x), p, np.random.default_rng(0))
    np.testing.assert_array_equal(out.data, x @ mu + mu_b)


def test_flipout_identical_rows_get_different_perturbations():
    rng = np.random.default_rng(3)
    mu = rng.standard_normal((4, 3))
    p = layer(mu, np.full((4, 3), vr.softplus_inverse(0.5)),
              np.zeros(3), np.full(3, -800.0))
    row = rng.standard_normal(4)
    x = np.stack([row, row])
    out = vr.flipout_forward(Tensor(x), p, np.random.default_rng(17)).data
    assert np.abs(out[0] - out[1]).max() > 1e-6


def test_flipout_rejects_empty_batch():
    p = layer(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), np.zeros(2))
    with pytest.raises(DomainError):
        vr.flipout_forward(Tensor(np.zeros((0, 2))), p, np.random.default_rng(0))


def test_flipout_gradient_matches_finite_differences():
    rng = np.random.default_rng(31)
    x = rng.standard_normal((4, 3))
    noise = vr.draw_dense_noise(3, 2, rng, batch_size=4)

    def fn(p):
        gv = GaussianVariationalParams(p["km"], p["kr"], p["bm"], p["br"])
        out = vr.flipout_forward(Tensor(x), gv, noise=noise)
        return ad.reduce_mean(ad.multiply(out, out))

    params = {"km": rng.standard_normal((3, 2)), "kr": rng.uniform(-2, 0, (3, 2)),
              "bm": rng.standard_normal(2), "br": rng.uniform(-2, 0, 2)}
    assert ad.grad_check(fn, params) < 1e-6


# ---------------------------------------------------------------------------
# minibatch objective


def test_elbo_coin_flip_classifier():
    # mu = 0, sigma = sigma_p (tiny), zero deterministic parts, uniform
    # labels: the KL vanishes and the cross-entropy is ln 2
    spec = toy_spec()
    model = zero_model(spec, 1e-12)
    x = np.random.default_rng(0).uniform(0, 1, (8, 3, 6))
    y = np.array([0, 1] * 4)
    report = vr.elbo_minibatch(model, (x, y), 4, np.random.default_rng(1),
                               prior=GaussianPrior(1e-12))
    assert abs(report.kl) < 1e-9
    assert report.nll == pytest.approx(math.log(2.0), abs=1e-9)
    assert report.kl_weight == 0.25
    assert report.total == report.nll + report.kl_weight * report.kl


def test_elbo_kl_weight_reconstructs_full_kl_over_epoch():
    spec = toy_spec()
    model = Model.initialize(spec, np.random.default_rng(4))
    x = np.random.default_rng(5).uniform(0, 1, (4, 3, 6))
    y = np.array([0, 1, 1, 0])
    M = 4
    rng = np.random.default_rng(6)
    reports = [vr.elbo_minibatch(model, (x, y), M, rng) for _ in range(M)]
    summed = sum(r.kl_weight * r.kl for r in reports)
    assert summed == pytest.approx(reports[0].kl, rel=1e-12)


def test_elbo_requires_variational_head():
    spec = toy_spec(head="deterministic")
    model = Model.initialize(spec, np.random.default_rng(0))
    x = np.zeros((2, 3, 6))
    with pytest.raises(ContractError):
        vr.elbo_minibatch(model, (x, np.array([0, 1])), 1,
                          np.random.default_rng(0))


def test_elbo_rejects_empty_batch():
    model = Model.initialize(toy_spec(), np.random.default_rng(0))
    with pytest.raises(DomainError):
        vr.elbo_minibatch(model, (np.zeros((0, 3, 6)), np.zeros(0)), 1,
                          np.random.default_rng(0))


def test_elbo_gradients_cover_all_parameters_and_pass_fd():
    spec = toy_spec()
    model = Model.initialize(spec, np.random.default_rng(8))
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, (4, 3, 6))
    y = np.array([0, 1, 0, 1])
    report, grads, logits = vr.elbo_minibatch(
        model, (x, y), 3, np.random.default_rng(10), return_grads=True)
    assert set(grads) == set(model.params)
    assert logits.shape == (4, 2)

    # frozen-noise finite-difference check of the same objective
    noise = model.draw_noise("flipout", 4, np.random.default_rng(11))
    xf = vr._flatten_steps(x)
    prior = GaussianPrior(1.0)

    def fn(bound):
        lg = model.logits_from_flat(bound, Tensor(xf), 4, "flipout", noise)
        nll = ad.cross_entropy_mean(lg, y)
        kl = model.kl_total(bound, prior)
        return ad.add(nll, ad.multiply(kl, Tensor(1.0 / 3.0)))

    assert ad.grad_check(fn, model.params, step=1e-5) < 1e-4


def test_standard_minibatch_reports_zero_kl():
    spec = toy_spec(head="deterministic")
    model = Model.initialize(spec, np.random.default_rng(1))
    x = np.random.default_rng(2).uniform(0, 1, (4, 3, 6))
    y = np.array([0, 1, 0, 1])
    report = vr.standard_minibatch(model, (x, y))
    assert report.kl == 0.0
    assert report.total == report.nll


def test_shared_sampling_mode_runs():
    model = Model.initialize(toy_spec(), np.random.default_rng(1))
    x = np.random.default_rng(2).uniform(0, 1, (4, 3, 6))
    y = np.array([0, 1, 0, 1])
    report = vr.elbo_minibatch(model, (x, y), 2, np.random.default_rng(3),
                               sampling="shared")
    assert math.isfinite(report.total)
    with pytest.raises(ContractError):
        vr.elbo_minibatch(model, (x, y), 2, np.random.default_rng(3),
                          sampling="qmc")
