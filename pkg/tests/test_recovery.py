import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcnn_gsr.graph import build_rbf_graph, from_adjacency
from bcnn_gsr.prior import PriorParams, filter_matrices
from bcnn_gsr.recovery import (
    BaselineConfig,
    Posterior,
    RecoveryConfig,
    gmrf_signal_update,
    gmrf_vb_baseline,
    recover,
    save_posterior_json,
    tikhonov_oracle,
    update_noise_posterior,
    update_signal_posterior,
    write_trace_csv,
)
from bcnn_gsr.signals import (
    SamplingMask,
    add_noise_at_snr,
    gen_bandlimited_gmrf,
    make_sampling_mask,
)


def graph(n, seed=0):
    return build_rbf_graph(np.random.default_rng(seed).uniform(size=(n, 2)))


def identity_prior(sigma2=1.0):
    return PriorParams([[1.0]], [[0.0]], [[sigma2]])


def random_prior(M, C, seed):
    rng = np.random.default_rng(seed)
    return PriorParams(rng.standard_normal((M, 4)), rng.standard_normal((M, C)),
                       rng.uniform(0.2, 3.0, size=(M, C)))


# -- signal posterior -------------------------------------------------------------------------


def test_identity_full_sampling_hand_case():
    g = from_adjacency([[0.0, 1.0], [1.0, 0.0]])
    full = SamplingMask(np.arange(2), 2)
    post = update_signal_posterior(identity_prior(), g, full, np.array([2.0, 2.0]), 1.0)
    assert np.allclose(post.mu[0, 0], [1.0, 1.0], rtol=0, atol=1e-15)
    assert np.allclose(post.Sigma[0, 0], 0.5 * np.eye(2), rtol=0, atol=1e-15)
    oracle = tikhonov_oracle(np.eye(2), 1.0, full, np.array([2.0, 2.0]), 1.0, 1.0)
    assert np.allclose(oracle, [1.0, 1.0], rtol=0, atol=1e-15)


def test_single_component_weight_is_one():
    g = graph(6)
    mask = make_sampling_mask(6, 3, 0)
    th = PriorParams([[0.5, 0.1, 0.0, 0.2]], [[0.0]], [[0.4]])
    for y in (np.zeros(3), np.array([5.0, -3.0, 1.0])):
        assert update_signal_posterior(th, g, mask, y, 0.3).pi_prime[0, 0] == 1.0


@pytest.mark.parametrize("seed", range(4))
def test_weights_match_direct_exponentials(seed):
    g = graph(8, seed)
    th = random_prior(2, 2, seed)
    mask = make_sampling_mask(8, 5, seed)
    y = np.random.default_rng(seed).standard_normal(5) * 0.5
    s2e = 0.7
    post = update_signal_posterior(th, g, mask, y, s2e)
    F = filter_matrices(th, g)
    Psi = mask.matrix
    lik = 1.0 / (th.M * s2e)
    w = np.empty((2, 2))
    for m in range(2):
        for c in range(2):
            A = F[m].T @ F[m] / th.sigma2[m, c] + lik * Psi.T @ Psi
            mu = np.linalg.solve(A, lik * Psi.T @ y)
            w[m, c] = th.pi[m, c] * np.exp(0.5 * mu @ A @ mu - y @ y / (2 * s2e))
    assert np.allclose(post.pi_prime, w / w.sum(), rtol=0, atol=1e-10)


def test_posterior_invariants():
    g = graph(10, 1)
    th = random_prior(3, 4, 1)
    mask = make_sampling_mask(10, 6, 1)
    y = np.random.default_rng(1).standard_normal(6)
    post = update_signal_posterior(th, g, mask, y, 0.2)
    assert post.pi_prime.sum() == pytest.approx(1.0, abs=1e-14)
    for S in post.Sigma.reshape(-1, 10, 10):
        assert np.array_equal(S, S.T)
        np.linalg.cholesky(S)
    mean = np.einsum("mc,mcn->n", post.pi_prime, post.mu)
    second = sum(post.pi_prime[m, c] * (post.Sigma[m, c] + np.outer(post.mu[m, c], post.mu[m, c]))
                 for m in range(3) for c in range(4))
    assert np.allclose(post.mean_mm, mean, rtol=0, atol=1e-12)
    assert np.allclose(post.cov_mm, second - np.outer(mean, mean), rtol=0, atol=1e-10)
    assert np.linalg.eigvalsh(post.cov_mm).min() >= -1e-10


def test_constant_log_weight_shift_cancels():
    # -y'y / (2 sigma_e2) is shared by every component; dropping it must not
    # change the normalized weights.
    g = graph(8, 2)
    th = random_prior(2, 3, 2)
    mask = make_sampling_mask(8, 4, 2)
    y = np.array([30.0, -25.0, 40.0, 10.0])
    post = update_signal_posterior(th, g, mask, y, 0.05)
    logw = post.log_weights + y @ y / (2 * 0.05)
    ref = np.exp(logw - logw.max())
    assert np.allclose(post.pi_prime, ref / ref.sum(), rtol=0, atol=1e-12)


def test_singular_precision_gets_recorded_jitter():
    g = graph(6, 3)
    th = PriorParams([[0.0, 0.0, 0.0, 0.0]], [[0.0]], [[1.0]])  # F = 0
    mask = make_sampling_mask(6, 3, 0)
    post = update_signal_posterior(th, g, mask, np.ones(3), 1.0)
    assert post.jittered == ((0, 0),)


def test_signal_update_validation():
    g = graph(6)
    mask = make_sampling_mask(6, 3, 0)
    with pytest.raises(ValueError):
        update_signal_posterior(identity_prior(), g, mask, np.ones(3), 0.0)
    with pytest.raises(ValueError):
        update_signal_posterior(identity_prior(), g, mask, np.ones(4), 1.0)


# -- noise posterior ---------------------------------------------------------------------------


def _point_posterior(mean, cov):
    one = np.ones((1, 1))
    return Posterior(one, mean[None, None], cov[None, None], mean, cov)


def test_shape_update_value():
    mask = make_sampling_mask(20, 10, 0)
    post = _point_posterior(np.zeros(20), np.eye(20))
    noise = update_noise_posterior(1e-6, 1e-6, mask, np.ones(10), post)
    assert noise.rho_e == 1e-6 + 10 / 2
    assert noise.rho_e == pytest.approx(5.000001, abs=1e-15)


def test_zero_residual_gives_prior_rate():
    mask = make_sampling_mask(8, 5, 1)
    x = np.random.default_rng(0).standard_normal(8)
    noise = update_noise_posterior(1.0, 0.25, mask, mask.sample(x),
                                   _point_posterior(x, np.zeros((8, 8))))
    assert noise.xi_e == 0.25


def test_rate_matches_monte_carlo():
    rng = np.random.default_rng(3)
    mask = make_sampling_mask(8, 5, 2)
    mean = rng.standard_normal(8)
    A = rng.standard_normal((8, 8))
    cov = A @ A.T / 8
    y = rng.standard_normal(5)
    noise = update_noise_posterior(1e-6, 0.1, mask, y, _point_posterior(mean, cov))
    draws = rng.multivariate_normal(mean, cov, size=100_000)
    mc = 0.1 + 0.5 * np.mean(np.sum((y - draws[:, mask.selected]) ** 2, axis=1))
    assert noise.xi_e == pytest.approx(mc, rel=0.01)


def test_noise_update_validation():
    mask = make_sampling_mask(4, 2, 0)
    with pytest.raises(ValueError):
        update_noise_posterior(0.0, 1.0, mask, np.ones(2), _point_posterior(np.zeros(4), np.eye(4)))


# -- recover ----------------------------------------------------------------------------------------


def test_noiseless_full_sampling_returns_observation():
    g = graph(12, 4)
    x = np.random.default_rng(4).standard_normal(12)
    full = SamplingMask(np.arange(12), 12)
    y = add_noise_at_snr(x, 300, 0).y
    # Noise-free data: the noise precision grows only linearly per iteration,
    # so the estimate approaches y at rate 1/t and needs a long budget.
    res = recover(identity_prior(1e4), g, full, y, RecoveryConfig(max_iter=2000, tol=1e-30))
    assert np.linalg.norm(res.x_hat - y) < 1e-3 * np.linalg.norm(y)


def test_zero_observation_gives_zero_estimate():
    g = graph(10, 5)
    res = recover(random_prior(2, 3, 5), g, make_sampling_mask(10, 5, 0), np.zeros(5))
    assert np.array_equal(res.x_hat, np.zeros(10))


@pytest.mark.parametrize("seed", range(3))
def test_recover_matches_tikhonov_fixed_point(seed):
    g = graph(8, seed)
    rng = np.random.default_rng(seed)
    mask = make_sampling_mask(8, 5, seed)
    y = rng.standard_normal(5)
    # The final signal step uses the final noise estimate, so the match holds
    # whether or not the iteration met its tolerance.
    res = recover(identity_prior(2.0), g, mask, y)
    oracle = tikhonov_oracle(np.eye(8), 2.0, mask, y, res.noise.sigma_e2, 1.0,
                             RecoveryConfig().ridge)
    assert np.linalg.norm(res.x_hat - oracle) / np.linalg.norm(oracle) < 1e-8


def test_shape_parameter_exact_after_recover():
    g = graph(10, 6)
    mask = make_sampling_mask(10, 7, 0)
    cfg = RecoveryConfig(rho0=0.3, max_iter=5)
    res = recover(random_prior(2, 2, 6), g, mask, np.ones(7), cfg)
    assert res.noise.rho_e == 0.3 + 7 / 2


def test_fixed_point_consistency():
    g = graph(8, 7)
    mask = make_sampling_mask(8, 6, 1)
    y = np.random.default_rng(7).standard_normal(6)
    th = PriorParams([[1.0, 0.3, 0.0, 0.0]], [[0.0]], [[1.5]])
    cfg = RecoveryConfig(max_iter=2000)
    res = recover(th, g, mask, y, cfg)
    assert res.converged
    noise = update_noise_posterior(cfg.rho0, cfg.xi0, mask, y, res.posterior)
    again = update_signal_posterior(th, g, mask, y, noise.sigma_e2, m_divisor=1.0,
                                    ridge=cfg.ridge).mean_mm
    change = np.sum((again - res.x_hat) ** 2) / np.sum(res.x_hat**2)
    assert change < cfg.tol


def test_trace_and_posterior_outputs(tmp_path):
    g = graph(8, 8)
    mask = make_sampling_mask(8, 4, 0)
    truth = np.random.default_rng(8).standard_normal(8)
    res = recover(random_prior(2, 2, 8), g, mask, mask.sample(truth),
                  RecoveryConfig(max_iter=4), truth=truth)
    write_trace_csv(tmp_path / "t.csv", res.trace)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["iter", "iterate_delta", "mean_precision", "nmse_if_truth_given"]
    assert len(rows) == 5 and all(np.isfinite(float(v)) for v in rows[-1])
    save_posterior_json(tmp_path / "p.json", res.posterior)
    d = json.loads((tmp_path / "p.json").read_text())
    assert np.array(d["pi_prime"]).shape == (2, 2) and "Sigma" in d
    assert "Sigma" not in res.posterior.to_dict(include_covariance=False)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.1, 10.0))
def test_recover_is_linear_in_scale_for_gaussian_prior(seed, scale):
    # With a single Gaussian component the noise estimate scales with y^2, so
    # the estimate is positively homogeneous: recover(a y) = a recover(y). A
    # fixed ridge would not scale with the prior, so it is switched off.
    g = graph(8, 9)
    mask = make_sampling_mask(8, 5, seed)
    y = np.random.default_rng(seed).standard_normal(5)
    th = identity_prior(1.0)
    cfg = RecoveryConfig(rho0=1e-12, xi0=1e-12, max_iter=30, ridge=0.0)
    a = recover(th, g, mask, y, cfg).x_hat
    b = recover(identity_prior(scale**2), g, mask, scale * y, cfg).x_hat
    assert np.allclose(b, scale * a, rtol=1e-6, atol=1e-9)


# -- GMRF-VB baseline --------------------------------------------------------------------------------


def test_baseline_large_noise_precision_limit():
    g = graph(12, 10)
    x = np.random.default_rng(10).standard_normal(12)
    full = SamplingMask(np.arange(12), 12)
    Q = np.asarray(g.L) + 0.01 * np.eye(12)
    mu, _ = gmrf_signal_update(Q, full, add_noise_at_snr(x, 300, 0).y, 1e12)
    assert np.linalg.norm(mu - x) < 1e-3 * np.linalg.norm(x)


def test_baseline_noiseless_full_sampling_smooth_signal():
    # The VB noise estimate only decays to zero when ||Q y||^2 < tr Q, which a
    # smooth signal satisfies; rough signals settle at a small positive level.
    g = graph(12, 10)
    x = gen_bandlimited_gmrf(g, 3, 1, 10)[0]
    full = SamplingMask(np.arange(12), 12)
    res = gmrf_vb_baseline(g, full, add_noise_at_snr(x, 300, 0).y, BaselineConfig(max_iter=2000))
    assert res.converged
    assert np.linalg.norm(res.x_hat - x) < 1e-3 * np.linalg.norm(x)


def test_baseline_zero_observation():
    g = graph(10, 11)
    res = gmrf_vb_baseline(g, make_sampling_mask(10, 4, 0), np.zeros(4))
    assert np.array_equal(res.x_hat, np.zeros(10))


def test_baseline_single_step_matches_dense_solve():
    g = graph(8, 12)
    mask = make_sampling_mask(8, 5, 3)
    y = np.random.default_rng(12).standard_normal(5)
    Q = np.asarray(g.L) + 0.01 * np.eye(8)
    mu, Sigma = gmrf_signal_update(Q, mask, y, 4.0)
    A = Q + 4.0 * mask.matrix.T @ mask.matrix
    assert np.allclose(mu, np.linalg.solve(A, 4.0 * mask.matrix.T @ y), rtol=0, atol=1e-10)
    assert np.allclose(Sigma @ A, np.eye(8), rtol=0, atol=1e-10)


def test_baseline_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(rho0=0.0)
    with pytest.raises(ValueError):
        RecoveryConfig(max_iter=0)


def test_ridge_matches_oracle_and_is_validated():
    g = graph(8, 13)
    mask = make_sampling_mask(8, 3, 1)
    y = np.random.default_rng(13).standard_normal(3)
    th = PriorParams([[0.2, 0.5, 0.0, 0.0]], [[0.0]], [[1.0]])
    F = filter_matrices(th, g)[0]
    post = update_signal_posterior(th, g, mask, y, 0.5, m_divisor=1.0, ridge=0.3)
    oracle = tikhonov_oracle(F, 1.0, mask, y, 0.5, 1.0, ridge=0.3)
    assert np.allclose(post.mean_mm, oracle, rtol=0, atol=1e-10)
    with pytest.raises(ValueError):
        RecoveryConfig(ridge=-1.0)
