import math

import numpy as np
import pytest

from latentverify.gp import (
    GpConfig,
    SeKernel,
    bound_over_region,
    error_bound,
    fit_inclusion_gp,
    fit_latent_c,
    gp_from_dict,
    gp_posterior,
    gp_to_dict,
    make_model,
    rkhs_constants,
    set_rkhs_constants,
)


def dense_oracle(kern_fn, X, Y, Xs, jitter):
    """Independent posterior: explicit inverse, loop-built Gram matrices."""
    m = X.shape[0]
    K = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            K[i, j] = kern_fn(X[i], X[j])
    G = np.linalg.inv(K + jitter * np.eye(m))
    mus, sds = [], []
    for xs in Xs:
        ks = np.array([kern_fn(xs, X[i]) for i in range(m)])
        mu = ks @ G @ Y
        var = kern_fn(xs, xs) - ks @ G @ ks
        mus.append(mu)
        sds.append(math.sqrt(max(var, 0.0)))
    return np.array(mus), np.array(sds)


def se_fn(sv, ls):
    ls = np.asarray(ls, dtype=float)

    def k(a, b):
        return sv * math.exp(-0.5 * float((((a - b) / ls) ** 2).sum()))

    return k


def random_model(rng, m=15, d=3, jitter=1e-6):
    X = rng.uniform(-1, 1, (m, d))
    Y = np.column_stack([np.sin(X @ rng.normal(size=d)),
                         np.cos(X @ rng.normal(size=d))])
    kernels = [SeKernel(float(rng.uniform(0.5, 2.0)), rng.uniform(0.3, 1.0, d))
               for _ in range(2)]
    model = make_model(X, Y, kernels, jitter=jitter)
    set_rkhs_constants(model, B=[3.0, 3.0])
    return model, X, Y


def test_posterior_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        model, X, Y = random_model(rng, m=int(rng.integers(5, 25)))
        Xs = rng.uniform(-1, 1, (7, 3))
        mu, sd = gp_posterior(model, Xs[:, :2], Xs[:, 2])
        for j, gd in enumerate(model.dims):
            fn = se_fn(gd.kernel.signal_var, gd.kernel.lengthscales)
            mu_o, sd_o = dense_oracle(fn, X, Y[:, j], Xs, gd.jitter)
            assert np.allclose(mu[:, j], mu_o, atol=1e-8)
            assert np.allclose(sd[:, j], sd_o, atol=1e-8)


def test_posterior_interpolates_training_points():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (12, 3))
    Y = np.column_stack([X[:, 0] ** 2, X[:, 1]])
    kernels = [SeKernel(1.0, np.full(3, 0.7)) for _ in range(2)]
    model = make_model(X, Y, kernels, jitter=1e-8)
    mu, _ = gp_posterior(model, X[:, :2], X[:, 2])
    assert np.allclose(mu, Y, atol=1e-4)


def test_posterior_variance_bounded_by_prior():
    rng = np.random.default_rng(2)
    model, X, Y = random_model(rng)
    Xs = rng.uniform(-2, 2, (50, 3))
    _, sd = gp_posterior(model, Xs[:, :2], Xs[:, 2])
    for j, gd in enumerate(model.dims):
        assert np.all(sd[:, j] ** 2 <= gd.kernel.signal_var + 1e-12)


# ---------------------------------------------------------------------------
# RKHS error bound


def planted_function(rng, kern: SeKernel, d, n_centers=8):
    C = rng.uniform(-1, 1, (n_centers, d))
    a = rng.normal(0, 0.5, n_centers)
    K = kern(C, C)
    B = math.sqrt(max(a @ K @ a, 1e-12))

    def f(X):
        return kern(np.atleast_2d(X), C) @ a

    return f, B


def test_planted_rkhs_bound_zero_violations():
    rng = np.random.default_rng(3)
    for _ in range(10):
        kern = SeKernel(1.0, rng.uniform(0.4, 0.9, 3))
        f, B = planted_function(rng, kern, 3)
        X = rng.uniform(-1, 1, (25, 3))
        Y = np.column_stack([f(X), f(X)])
        model = make_model(X, Y, [kern, SeKernel(kern.signal_var,
                                                 kern.lengthscales.copy())])
        set_rkhs_constants(model, B=[B, B])
        Xt = rng.uniform(-1, 1, (1000, 3))
        mu, _ = gp_posterior(model, Xt[:, :2], Xt[:, 2])
        eps = error_bound(model, Xt[:, :2], Xt[:, 2])
        truth = f(Xt)
        assert np.all(np.abs(mu[:, 0] - truth) <= eps[:, 0] + 1e-12)


def test_error_bound_degenerate_and_linear():
    rng = np.random.default_rng(4)
    model, X, Y = random_model(rng)
    set_rkhs_constants(model, B=[2.0, 2.0], d_star=[4.0, 4.0])
    eps = error_bound(model, X[:5, :2], X[:5, 2])
    assert np.allclose(eps, 0.0)
    set_rkhs_constants(model, B=[2.0, 2.0], d_star=0.0)
    e1 = error_bound(model, X[:5, :2], X[:5, 2])
    set_rkhs_constants(model, B=[4.0, 4.0], d_star=0.0)
    e2 = error_bound(model, X[:5, :2], X[:5, 2])
    assert np.allclose(e2, 2.0 * e1)


def test_rkhs_constants_defaults():
    B, d = rkhs_constants(L_g=1.5, diameter=2.0)
    assert d == 0.0
    assert B == pytest.approx(2.0 * 1.5 * 2.0)
    B, d = rkhs_constants(L_g=1.5, diameter=2.0, B_user=7.25)
    assert B == 7.25


# ---------------------------------------------------------------------------
# region bounds


def test_bound_over_region_singleton_collapses():
    rng = np.random.default_rng(5)
    model, X, Y = random_model(rng)
    z = np.array([0.3, -0.2])
    c = 0.4
    res = bound_over_region(model, z, z, (c, c), grid=(1, 1, 1))
    mu, _ = gp_posterior(model, z[None, :], c)
    eps = error_bound(model, z[None, :], c)
    for j in range(2):
        lo, hi, eb = res[j]
        assert lo == pytest.approx(mu[0, j], abs=1e-10)
        assert hi == pytest.approx(mu[0, j], abs=1e-10)
        assert eb >= eps[0, j] - 1e-12


def test_bound_over_region_contains_sweep():
    rng = np.random.default_rng(6)
    for _ in range(5):
        model, X, Y = random_model(rng, m=12)
        q_lo = rng.uniform(-0.5, 0.0, 2)
        q_hi = q_lo + rng.uniform(0.1, 0.4, 2)
        u = (0.2, 0.6)
        res = bound_over_region(model, q_lo, q_hi, u, grid=(4, 4, 3))
        gx = np.linspace(q_lo[0], q_hi[0], 40)
        gy = np.linspace(q_lo[1], q_hi[1], 40)
        gc = np.linspace(u[0], u[1], 20)
        pts = np.stack(np.meshgrid(gx, gy, gc, indexing="ij"), -1).reshape(-1, 3)
        mu, _ = gp_posterior(model, pts[:, :2], pts[:, 2])
        eps = error_bound(model, pts[:, :2], pts[:, 2])
        for j in range(2):
            lo, hi, eb = res[j]
            assert lo <= mu[:, j].min() + 1e-12
            assert hi >= mu[:, j].max() - 1e-12
            assert eb >= eps[:, j].max() - 1e-12


def test_bound_over_region_monotone_in_q():
    rng = np.random.default_rng(7)
    model, X, Y = random_model(rng)
    small = bound_over_region(model, [0.0, 0.0], [0.2, 0.2], (0.0, 0.5))
    big = bound_over_region(model, [-0.1, -0.1], [0.3, 0.3], (0.0, 0.5))
    for j in range(2):
        assert big[j][0] <= small[j][0] + 1e-9
        assert big[j][1] >= small[j][1] - 1e-9


# ---------------------------------------------------------------------------
# latent variable fitting


def test_fit_latent_c_in_range():
    rng = np.random.default_rng(8)
    Z = rng.uniform(-1, 1, (40, 2))
    Zp = 0.7 * Z
    c = fit_latent_c(Z, Zp, (0.0, 1.0), GpConfig(mle_iters=30, c_steps=15,
                                                 c_rounds=1, n_starts=2, seed=0))
    assert np.all(c >= 0.0) and np.all(c <= 1.0)


def test_fit_latent_c_separates_two_branches():
    rng = np.random.default_rng(9)
    m = 60
    z = rng.uniform(-1, 1, (m, 1))
    branch = rng.integers(0, 2, m)
    zp = z + np.where(branch[:, None] == 1, 0.5, -0.5)
    cfg = GpConfig(mle_iters=60, c_steps=40, c_rounds=2, n_starts=2, seed=1)
    c = fit_latent_c(z, zp, (0.0, 1.0), cfg)
    X = np.column_stack([z[:, 0], c])
    model = fit_inclusion_gp(X, zp, GpConfig(mle_iters=80, seed=2))
    mu_lo, _ = gp_posterior(model, z[:10], np.full(10, c.min()))
    mu_hi, _ = gp_posterior(model, z[:10], np.full(10, c.max()))
    spread = np.abs(mu_hi[:, 0] - mu_lo[:, 0])
    assert np.all(spread >= 0.5), spread


def test_fit_latent_c_deterministic():
    rng = np.random.default_rng(10)
    Z = rng.uniform(-1, 1, (30, 2))
    Zp = 0.5 * Z + 0.1
    cfg = GpConfig(mle_iters=20, c_steps=10, c_rounds=1, n_starts=2, seed=3)
    c1 = fit_latent_c(Z, Zp, (0.0, 1.0), cfg)
    c2 = fit_latent_c(Z, Zp, (0.0, 1.0), cfg)
    assert np.array_equal(c1, c2)


# ---------------------------------------------------------------------------
# serialization


def test_gp_round_trip():
    rng = np.random.default_rng(11)
    model, X, Y = random_model(rng)
    model2 = gp_from_dict(gp_to_dict(model))
    Xs = rng.uniform(-1, 1, (9, 3))
    mu1, sd1 = gp_posterior(model, Xs[:, :2], Xs[:, 2])
    mu2, sd2 = gp_posterior(model2, Xs[:, :2], Xs[:, 2])
    assert np.array_equal(mu1, mu2)
    assert np.allclose(sd1, sd2, atol=1e-12)
    assert model2.dims[0].B == model.dims[0].B


def test_fit_inclusion_gp_with_feature_net():
    rng = np.random.default_rng(12)
    X = rng.uniform(-1, 1, (60, 3))
    Y = np.column_stack([np.tanh(2 * X[:, 0]) + 0.3 * X[:, 2], X[:, 1] ** 2])
    cfg = GpConfig(mle_iters=40, feature_net=True, feat_dims=(8, 8, 2),
                   feat_iters=30, seed=4)
    model = fit_inclusion_gp(X, Y, cfg)
    assert model.dims[0].feat is not None
    mu, sd = gp_posterior(model, X[:5, :2], X[:5, 2])
    assert mu.shape == (5, 2) and np.all(sd >= 0)
    # region bounds stay certified with the feature net in place
    set_rkhs_constants(model, B=[2.0, 2.0])
    res = bound_over_region(model, [-0.2, -0.2], [0.2, 0.2], (0.2, 0.8))
    pts = rng.uniform(-0.2, 0.2, (2000, 2))
    cs = rng.uniform(0.2, 0.8, 2000)
    mu, _ = gp_posterior(model, pts, cs)
    for j in range(2):
        assert res[j][0] <= mu[:, j].min() + 1e-10
        assert res[j][1] >= mu[:, j].max() - 1e-10
