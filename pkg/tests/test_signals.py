import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import gamma as gamma_fn

from bcnn_gsr.graph import build_rbf_graph, from_adjacency
from bcnn_gsr.signals import (
    GaussianMixture1D,
    SamplingMask,
    add_noise_at_snr,
    extract_patches,
    gen_bandlimited_gmrf,
    gen_ggd_signal,
    gen_gmm_signal,
    load_mask,
    load_signals_csv,
    make_sampling_mask,
    save_mask,
    save_signals_csv,
)


@pytest.fixture(scope="module")
def g64():
    return build_rbf_graph(np.random.default_rng(0).uniform(size=(64, 2)))


# -- bandlimited GMRF ----------------------------------------------------------------


def test_full_bandwidth_is_isotropic(g64):
    # Monte Carlo Frobenius error is about 8 / sqrt(K) relative; K = 1e5 keeps it near 0.025.
    x = gen_bandlimited_gmrf(g64, 64, 100_000, 1)
    C = x.T @ x / len(x)
    assert np.linalg.norm(C - np.eye(64)) / np.linalg.norm(np.eye(64)) < 0.05


def test_bandwidth_one_is_constant():
    W = np.ones((6, 6)) - np.eye(6)
    W[0, 1] = W[1, 0] = 0.5
    g = from_adjacency(W)
    x = gen_bandlimited_gmrf(g, 1, 5, 2)
    assert np.allclose(x, x[:, :1], rtol=0, atol=1e-12)


def test_bandlimited_covariance(g64):
    x = gen_bandlimited_gmrf(g64, 25, 10000, 3)
    _, U = np.linalg.eigh(g64.L)
    ref = U[:, :25] @ U[:, :25].T
    C = x.T @ x / len(x)
    assert np.linalg.norm(C - ref) / np.linalg.norm(ref) < 0.05


def test_bandlimited_projection_residual(g64):
    x = gen_bandlimited_gmrf(g64, 25, 10, 4)
    _, U = np.linalg.eigh(g64.L)
    P = U[:, :25] @ U[:, :25].T
    for v in x:
        assert np.linalg.norm(v - P @ v) <= 1e-10 * np.linalg.norm(v)


def test_bandwidth_out_of_range(g64):
    with pytest.raises(ValueError):
        gen_bandlimited_gmrf(g64, 65, 1, 0)


# -- GMM ------------------------------------------------------------------------------


def test_single_component_is_standard_normal():
    mix = GaussianMixture1D((0.0,), (1.0,), (1.0,))
    x = gen_gmm_signal(mix, 100, 1000, 5).ravel()
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_degenerate_weights_match_single_component():
    a = gen_gmm_signal(GaussianMixture1D((0.0, 5, 6, 7), (1.0, 1, 1, 1), (1.0, 0, 0, 0)), 100, 1000, 6)
    x = a.ravel()
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_default_mixture_moments():
    mix = GaussianMixture1D()
    x = gen_gmm_signal(mix, 100, 1000, 7).ravel()
    # Analytic moments: mean sum w mu, variance sum w (v + mu^2) - mean^2.
    assert mix.mean == 0.0 and mix.variance == pytest.approx(5.5)
    assert abs(x.mean() - mix.mean) < 0.02 * np.sqrt(mix.variance)
    assert x.var() == pytest.approx(mix.variance, rel=0.02)


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixture1D((0.0, 1.0), (1.0, -1.0), (0.5, 0.5))
    with pytest.raises(ValueError):
        GaussianMixture1D((0.0, 1.0), (1.0, 1.0), (0.5, 0.6))


def test_shared_component_switch():
    x = gen_gmm_signal(GaussianMixture1D(variances=(0, 0, 0, 0)), 10, 50, 8, iid=False)
    assert np.all(x == x[:, :1])


# -- generalized Gamma -------------------------------------------------------------------


def test_ggd_power_one_is_gamma():
    x = gen_ggd_signal(shape=3.0, power=1.0, scale=2.0, n=1000, count=100, seed=9,
                       symmetrize=False)
    assert x.mean() == pytest.approx(6.0, rel=0.02)


def test_ggd_half_normal():
    x = gen_ggd_signal(shape=1.0, power=2.0, scale=1.5, n=1000, count=100, seed=10,
                       symmetrize=False).ravel()
    # density ~ exp(-(x/s)^2): half-normal with standard deviation s / sqrt(2)
    assert stats.kstest(x, stats.halfnorm(scale=1.5 / np.sqrt(2)).cdf).pvalue > 0.01


def test_ggd_default_moments_quadrature():
    a, p, s = 2.0, 1.5, 1.0
    dens = lambda t: t ** (a - 1) * np.exp(-((t / s) ** p))  # noqa: E731
    z = integrate.quad(dens, 0, np.inf)[0]
    m1 = integrate.quad(lambda t: t * dens(t), 0, np.inf)[0] / z
    m2 = integrate.quad(lambda t: t * t * dens(t), 0, np.inf)[0] / z
    x = np.abs(gen_ggd_signal(a, p, s, n=1000, count=100, seed=11))
    assert x.mean() == pytest.approx(m1, rel=0.02)
    assert (x**2).mean() == pytest.approx(m2, rel=0.02)
    # closed form agrees with quadrature as a sanity check of the oracle
    assert m1 == pytest.approx(s * gamma_fn((a + 1) / p) / gamma_fn(a / p), rel=1e-8)


def test_ggd_symmetrized_is_centered():
    x = gen_ggd_signal(n=1000, count=100, seed=12)
    assert abs(x.mean()) < 0.02 and np.any(x < 0)


def test_ggd_validation():
    with pytest.raises(ValueError):
        gen_ggd_signal(shape=0.0)


# -- masks and noise ------------------------------------------------------------------------


def test_full_mask_is_identity():
    m = make_sampling_mask(10, 10, 0)
    assert np.array_equal(m.selected, np.arange(10))
    assert np.array_equal(m.matrix, np.eye(10))


def test_single_observation_mask():
    m = make_sampling_mask(10, 1, 0)
    assert m.m == 1 and 0 <= m.selected[0] < 10


def test_masks_differ_across_seeds():
    collisions = sum(
        np.array_equal(make_sampling_mask(64, 32, 2 * i).selected,
                       make_sampling_mask(64, 32, 2 * i + 1).selected)
        for i in range(100)
    )
    assert collisions == 0


def test_mask_matrix_has_one_unit_per_row():
    m = make_sampling_mask(20, 7, 1)
    assert np.all(m.matrix.sum(axis=1) == 1)
    x = np.arange(20.0)
    assert np.array_equal(m.matrix @ x, m.sample(x))
    assert np.array_equal(m.matrix.T @ m.sample(x), m.lift(m.sample(x)))


def test_mask_validation():
    with pytest.raises(ValueError):
        SamplingMask(np.array([1, 1]), 5)
    with pytest.raises(ValueError):
        SamplingMask(np.array([5]), 5)


def test_vanishing_noise():
    clean = np.random.default_rng(0).standard_normal(30)
    obs = add_noise_at_snr(clean, 300, 1)
    assert np.linalg.norm(obs.y - clean) < 1e-12 * np.linalg.norm(clean)


@pytest.mark.parametrize("snr, ratio", [(0.0, 1.0), (10.0, 0.1)])
def test_noise_power(snr, ratio):
    clean = np.random.default_rng(0).standard_normal(40)
    e = [np.sum((add_noise_at_snr(clean, snr, k).y - clean) ** 2) for k in range(1000)]
    assert np.mean(e) / np.sum(clean**2) == pytest.approx(ratio, rel=0.05)


def test_realized_snr_average():
    clean = np.random.default_rng(1).standard_normal(50)
    snrs = [add_noise_at_snr(clean, 10.0, k).snr_db for k in range(10000)]
    assert abs(np.mean(snrs) - 10.0) <= 0.2


def test_zero_signal_rejected():
    with pytest.raises(ValueError):
        add_noise_at_snr(np.zeros(4), 10, 0)


# -- patches -------------------------------------------------------------------------------------


def test_full_size_patch_is_whole_signal():
    W = np.ones((5, 5)) - np.eye(5)
    g = from_adjacency(W)
    x = np.arange(5.0)[None]
    (p,) = extract_patches(g, x, 5, 1, 0)
    assert sorted(p.nodes.tolist()) == list(range(5))
    assert np.array_equal(p.values, x[0, p.nodes])


def test_patch_size_one_rejected(g64):
    with pytest.raises(ValueError):
        extract_patches(g64, np.zeros((1, 64)), 1, 1, 0)


def test_patches_are_valid(g64):
    x = np.random.default_rng(0).standard_normal((3, 64))
    patches = extract_patches(g64, x, 5, 10000, 1)
    for p in patches:
        assert p.nodes.size == 5 and np.unique(p.nodes).size == 5
        assert p.nodes.min() >= 0 and p.nodes.max() < 64
        assert np.array_equal(p.values, x[p.signal_index, p.nodes])


def test_patch_impossible_raises():
    W = np.zeros((4, 4))
    W[0, 1] = W[1, 0] = W[2, 3] = W[3, 2] = 1.0
    with pytest.raises(ValueError, match="BFS ball"):
        extract_patches(from_adjacency(W), np.zeros((1, 4)), 3, 2, 0)


# -- reproducibility and persistence -----------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**63 - 1))
def test_generators_are_reproducible(seed):
    g = build_rbf_graph(np.random.default_rng(1).uniform(size=(12, 2)))
    for gen in (
        lambda: gen_bandlimited_gmrf(g, 5, 3, seed),
        lambda: gen_gmm_signal(GaussianMixture1D(), 12, 3, seed),
        lambda: gen_ggd_signal(n=12, count=3, seed=seed),
        lambda: make_sampling_mask(12, 6, seed).selected,
        lambda: add_noise_at_snr(np.ones(5), 10, seed).y,
    ):
        assert np.array_equal(gen(), gen())


def test_csv_roundtrip(tmp_path):
    x = np.random.default_rng(0).standard_normal((4, 7))
    save_signals_csv(tmp_path / "s.csv", x)
    assert np.array_equal(load_signals_csv(tmp_path / "s.csv"), x)
    m = make_sampling_mask(30, 9, 2)
    save_mask(tmp_path / "m.txt", m)
    back = load_mask(tmp_path / "m.txt")
    assert back.n == 30 and np.array_equal(back.selected, m.selected)
