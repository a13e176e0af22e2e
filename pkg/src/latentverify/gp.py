"""Inclusion GP: deep-kernel GP regression over augmented inputs [z, c].

The latent successor set g(z) is modeled by sweeping a scalar input
c over [a, b]: each fixed c yields an ordinary GP posterior, and region
predictions take certified min/max of the posterior mean plus the
deterministic RKHS error bound sigma(x) * sqrt(B^2 - d*).

Certified region bounds combine a dense grid with Lipschitz constants of
the posterior mean and standard deviation. Both constants come from the
kernel metric: with feature map phi, mu(x) = <w, phi(x)> so
|mu(x)-mu(y)| <= ||w|| d_k(x,y), and sigma(x) = ||M^(1/2) phi(x)|| with
0 <= M <= I so |sigma(x)-sigma(y)| <= d_k(x,y); for the SE kernel
d_k(x,y) <= sigma_f * ||(x-y)/l||.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .nets import Adam, Mlp


@dataclass
class SeKernel:
    signal_var: float
    lengthscales: np.ndarray

    def __post_init__(self):
        self.lengthscales = np.asarray(self.lengthscales, dtype=float)

    def __call__(self, A, B):
        A = np.atleast_2d(A) / self.lengthscales
        B = np.atleast_2d(B) / self.lengthscales
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
        return self.signal_var * np.exp(-0.5 * d2)

    def diag(self, A):
        return np.full(np.atleast_2d(A).shape[0], self.signal_var)


@dataclass
class GpConfig:
    jitter: float = 1e-6  # sigma_n^2 > 0 required by the error bound
    mle_iters: int = 120
    mle_lr: float = 0.05
    mle_subset: int = 400
    c_rounds: int = 2
    c_steps: int = 60
    c_lr: float = 0.08
    n_starts: int = 2
    feature_net: bool = False
    feat_dims: tuple = (32, 32, 2)
    feat_iters: int = 150
    feat_lr: float = 2e-3
    max_points: int | None = None
    seed: int = 0


@dataclass
class GpDim:
    """Posterior state for one output dimension."""

    kernel: SeKernel
    feat: Mlp | None
    X: np.ndarray  # (m, d) augmented training inputs
    y: np.ndarray  # (m,)
    chol: np.ndarray  # lower Cholesky of K + jitter*I
    alpha: np.ndarray  # (K + jitter*I)^{-1} y
    jitter: float
    B: float = 1.0
    d_star: float = 0.0
    mean_rkhs_norm: float = field(init=False)

    def __post_init__(self):
        K = self._features_gram()
        self.mean_rkhs_norm = float(np.sqrt(max(self.alpha @ K @ self.alpha, 0.0)))

    def _features(self, X):
        return self.feat.forward(X) if self.feat is not None else X

    def _features_gram(self):
        F = self._features(self.X)
        return self.kernel(F, F)

    def feat_lipschitz(self):
        if self.feat is None:
            return 1.0
        return float(np.prod([np.linalg.svd(l.W, compute_uv=False)[0]
                              for l in self.feat.layers]))

    def posterior(self, Xs):
        F = self._features(self.X)
        Fs = self._features(np.atleast_2d(Xs))
        ks = self.kernel(Fs, F)
        mu = ks @ self.alpha
        v = solve_triangular(self.chol, ks.T, lower=True)
        var = np.maximum(self.kernel.diag(Fs) - (v**2).sum(axis=0), 0.0)
        return mu, np.sqrt(var)

    def scaled_halfdiag(self, half_widths):
        """Kernel-metric radius of a box with the given input half widths."""
        h = np.asarray(half_widths, dtype=float)
        if self.feat is None:
            return float(np.sqrt(((h / self.kernel.lengthscales) ** 2).sum()))
        lmin = float(self.kernel.lengthscales.min())
        return self.feat_lipschitz() * float(np.linalg.norm(h)) / lmin

    def mu_lipschitz_unit(self):
        """Bound on |mu(x)-mu(y)| per unit of kernel-metric distance."""
        sf = math.sqrt(self.kernel.signal_var)
        return self.mean_rkhs_norm * sf

    def sigma_lipschitz_unit(self):
        return math.sqrt(self.kernel.signal_var)


@dataclass
class InclusionGpModel:
    dims: list  # [GpDim] per latent output dimension
    c_range: tuple = (0.0, 1.0)

    @property
    def n_p(self):
        return len(self.dims)

    def c_intervals(self, n_u: int):
        a, b = self.c_range
        edges = np.linspace(a, b, n_u + 1)
        return [(float(edges[i]), float(edges[i + 1])) for i in range(n_u)]


# ---------------------------------------------------------------------------
# Marginal likelihood machinery


def _chol_jitter(K, jitter):
    m = K.shape[0]
    return np.linalg.cholesky(K + jitter * np.eye(m))


def _nlml_and_M(K, y, jitter):
    """Negative log marginal likelihood, alpha, and M = Kinv - alpha alpha^T."""
    m = K.shape[0]
    L = _chol_jitter(K, jitter)
    alpha = cho_solve((L, True), y)
    nlml = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * m * math.log(2 * math.pi)
    Kinv = cho_solve((L, True), np.eye(m))
    M = Kinv - np.outer(alpha, alpha)
    return float(nlml), alpha, M


def _se_gram_parts(X, log_sv, log_ls):
    ls = np.exp(log_ls)
    A = X / ls
    d2 = ((A[:, None, :] - A[None, :, :]) ** 2).sum(axis=2)
    K = np.exp(log_sv) * np.exp(-0.5 * d2)
    return K, ls


def fit_se_hypers(X, y, jitter, iters, lr, seed=0):
    """Type-II ML fit of SE signal variance and per-dimension lengthscales."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    log_sv = np.array([math.log(max(float(np.var(y)), 1e-4))])
    spread = np.maximum(X.max(axis=0) - X.min(axis=0), 1e-2)
    log_ls = np.log(spread / 3.0)
    params = [log_sv, log_ls]
    opt = Adam(params, lr=lr)
    for _ in range(iters):
        K, ls = _se_gram_parts(X, log_sv[0], log_ls)
        _, _, M = _nlml_and_M(K, y, jitter)
        g_sv = 0.5 * float((M * K).sum())  # dK/dlog sv = K
        A = X / ls
        diff2 = (A[:, None, :] - A[None, :, :]) ** 2
        g_ls = 0.5 * np.einsum("ij,ijd->d", M * K, diff2)  # dK/dlog l_d = K*d2_d
        opt.step([np.array([g_sv]), g_ls])
        np.clip(log_ls, -6.0, 6.0, out=log_ls)
        np.clip(log_sv, -8.0, 8.0, out=log_sv)
    return SeKernel(float(np.exp(log_sv[0])), np.exp(log_ls))


def _subset(X, y_cols, max_n, rng):
    m = X.shape[0]
    if m <= max_n:
        return X, y_cols
    idx = rng.choice(m, size=max_n, replace=False)
    return X[idx], [y[idx] for y in y_cols]


# ---------------------------------------------------------------------------
# Latent-variable fitting (GPLVM style)


def _residual_pca_init(Z, Zp, rng):
    """Initialize c from the principal direction of successor residuals
    relative to a nearest-neighbor mean; informative when the inclusion
    dynamics are genuinely multi-valued."""
    m = Z.shape[0]
    k = min(10, m - 1)
    d2 = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1)[:, :k]
    resid = Zp - Zp[nn].mean(axis=1)
    resid = resid - resid.mean(axis=0)
    _, _, vt = np.linalg.svd(resid, full_matrices=False)
    proj = resid @ vt[0]
    lo, hi = proj.min(), proj.max()
    if hi - lo < 1e-12:
        return rng.uniform(0.0, 1.0, size=m)
    return (proj - lo) / (hi - lo)


def fit_latent_c(Z, Zp, c_range=(0.0, 1.0), cfg: GpConfig | None = None, seed=None):
    """Learn a scalar c_i in [a, b] per latent pair so that a GP over [z, c]
    explains the successors: alternate SE hyperparameter fits with projected
    gradient descent of the joint negative log marginal likelihood over the
    c vector, multi-started; deterministic under the seed."""
    cfg = cfg or GpConfig()
    if seed is None:
        seed = cfg.seed
    rng = np.random.default_rng(seed)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Zp = np.atleast_2d(np.asarray(Zp, dtype=float))
    a, b = c_range
    assert a < b
    m, n_p = Z.shape

    inits = [_residual_pca_init(Z, Zp, rng)]
    for _ in range(max(cfg.n_starts - 1, 0)):
        inits.append(rng.uniform(0.0, 1.0, size=m))

    # a looser jitter during c optimization keeps the NLML gradients tame
    jit = max(cfg.jitter, 1e-4)
    best = None
    for c01 in inits:
        c = a + (b - a) * np.asarray(c01, dtype=float)
        kernels = None
        for _ in range(cfg.c_rounds):
            X = np.column_stack([Z, c])
            Xs, ys = _subset(X, [Zp[:, j] for j in range(n_p)], cfg.mle_subset, rng)
            kernels = [fit_se_hypers(Xs, ys[j], jit, cfg.mle_iters, cfg.mle_lr)
                       for j in range(n_p)]
            for _ in range(cfg.c_steps):
                X = np.column_stack([Z, c])
                grad = np.zeros(m)
                for j, kern in enumerate(kernels):
                    K = kern(X, X)
                    _, _, M = _nlml_and_M(K, Zp[:, j], jit)
                    P = M * K
                    lc2 = kern.lengthscales[-1] ** 2
                    grad += -(c * P.sum(axis=1) - P @ c) / lc2
                gmax = float(np.abs(grad).max())
                if gmax > 1.0:
                    grad = grad / gmax
                c = np.clip(c - cfg.c_lr * (b - a) * grad, a, b)
        X = np.column_stack([Z, c])
        total = 0.0
        for j, kern in enumerate(kernels):
            K = kern(X, X)
            nlml, _, _ = _nlml_and_M(K, Zp[:, j], jit)
            total += nlml
        if best is None or total < best[0]:
            best = (total, c.copy())
    return best[1]


# ---------------------------------------------------------------------------
# Deep-kernel training and model assembly


def _train_feature_net(X, y, dims, kernel, jitter, iters, lr, seed):
    rng = np.random.default_rng(seed)
    feat = Mlp([X.shape[1], *dims], rng, activation="tanh")
    opt = Adam(feat.params(), lr=lr)
    # unit lengthscales while the features train; base hypers refit afterwards
    kern = SeKernel(kernel.signal_var, np.ones(dims[-1]))
    for _ in range(iters):
        cache = []
        F = feat.forward(X, cache)
        K = kern(F, F)
        _, _, M = _nlml_and_M(K, y, jitter)
        P = M * K
        rs = P.sum(axis=1)
        dF = -(F * rs[:, None] - P @ F) / kern.lengthscales**2
        feat.zero_grad()
        feat.backward(dF, cache)
        opt.step(feat.grads())
    return feat, kern


def fit_inclusion_gp(X_aug, Y, cfg: GpConfig | None = None,
                     c_range=(0.0, 1.0)) -> InclusionGpModel:
    """Fit one GP per latent output dimension on augmented inputs [z, c]."""
    cfg = cfg or GpConfig()
    rng = np.random.default_rng(cfg.seed + 7)
    X_aug = np.atleast_2d(np.asarray(X_aug, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if cfg.max_points is not None and X_aug.shape[0] > cfg.max_points:
        idx = rng.choice(X_aug.shape[0], size=cfg.max_points, replace=False)
        X_aug, Y = X_aug[idx], Y[idx]
    dims = []
    for j in range(Y.shape[1]):
        y = Y[:, j]
        Xs, ys = _subset(X_aug, [y], cfg.mle_subset, rng)
        kern = fit_se_hypers(Xs, ys[0], cfg.jitter, cfg.mle_iters, cfg.mle_lr)
        feat = None
        if cfg.feature_net:
            feat, kern = _train_feature_net(Xs, ys[0], cfg.feat_dims, kern,
                                            cfg.jitter, cfg.feat_iters, cfg.feat_lr,
                                            cfg.seed + 11 * j)
            # refit base hypers in feature space
            Fs = feat.forward(Xs)
            kern = fit_se_hypers(Fs, ys[0], cfg.jitter, cfg.mle_iters // 2, cfg.mle_lr)
        F = feat.forward(X_aug) if feat is not None else X_aug
        K = kern(F, F)
        L = _chol_jitter(K, cfg.jitter)
        alpha = cho_solve((L, True), y)
        dims.append(GpDim(kernel=kern, feat=feat, X=X_aug, y=y, chol=L,
                          alpha=alpha, jitter=cfg.jitter))
    return InclusionGpModel(dims=dims, c_range=c_range)


def make_model(X, Y, kernels, jitter=1e-6, feats=None,
               c_range=(0.0, 1.0)) -> InclusionGpModel:
    """Assemble a model from given kernels and data, skipping hyper fitting
    (planted-function suites and unit tests)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    feats = feats or [None] * Y.shape[1]
    dims = []
    for j in range(Y.shape[1]):
        kern = kernels[j]
        F = feats[j].forward(X) if feats[j] is not None else X
        L = _chol_jitter(kern(F, F), jitter)
        alpha = cho_solve((L, True), Y[:, j])
        dims.append(GpDim(kernel=kern, feat=feats[j], X=X, y=Y[:, j], chol=L,
                          alpha=alpha, jitter=jitter))
    return InclusionGpModel(dims=dims, c_range=c_range)


def set_rkhs_constants(model: InclusionGpModel, B, d_star=0.0):
    B = np.broadcast_to(np.asarray(B, dtype=float), (model.n_p,))
    d = np.broadcast_to(np.asarray(d_star, dtype=float), (model.n_p,))
    for j, gd in enumerate(model.dims):
        if d[j] < 0 or d[j] > B[j] ** 2:
            raise ValueError("need 0 <= d* <= B^2")
        gd.B = float(B[j])
        gd.d_star = float(d[j])


def rkhs_constants(L_g: float, diameter: float, c_B: float = 2.0, B_user=None):
    """Default RKHS constants: d* = 0 and B = c_B * L_g * diam(Z), unless a
    user-supplied B is given (respected verbatim)."""
    if B_user is not None:
        return float(B_user), 0.0
    if L_g <= 0:
        raise ValueError("L_g must be positive")
    return c_B * L_g * diameter, 0.0


# ---------------------------------------------------------------------------
# Queries


def gp_posterior(model: InclusionGpModel, Z, c):
    """Posterior mean and std per output dimension at [z, c]."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    c = np.broadcast_to(np.asarray(c, dtype=float), (Z.shape[0],))
    X = np.column_stack([Z, c])
    mus, sigmas = [], []
    for gd in model.dims:
        mu, sd = gd.posterior(X)
        mus.append(mu)
        sigmas.append(sd)
    return np.column_stack(mus), np.column_stack(sigmas)


def error_bound(model: InclusionGpModel, Z, c):
    """Deterministic regression error radius sigma(x) sqrt(B^2 - d*)."""
    _, sd = gp_posterior(model, Z, c)
    fac = np.array([math.sqrt(max(gd.B**2 - gd.d_star, 0.0)) for gd in model.dims])
    return sd * fac


def bound_over_cells(model: InclusionGpModel, los, his, u, grid=(4, 4, 3),
                     chunk=20000):
    """Certified bounds of mean and error over box x u, batched over cells.

    Returns (n_cells, n_p, 3) with columns (mu_lo, mu_hi, eps_bar):
    mu_lo <= min mu, mu_hi >= max mu, eps_bar >= max sigma*sqrt(B^2-d*);
    grid extrema widened by the Lipschitz constants times the subcell
    half-diagonal in the kernel metric.
    """
    los = np.atleast_2d(np.asarray(los, dtype=float))
    his = np.atleast_2d(np.asarray(his, dtype=float))
    u_lo, u_hi = float(u[0]), float(u[1])
    gx, gy, gc = grid
    n_cells = los.shape[0]
    G = gx * gy * gc
    offs = [(2 * np.arange(g) + 1) / (2 * g) for g in (gx, gy, gc)]
    w = his - los
    xs = los[:, 0, None] + w[:, 0, None] * offs[0]
    ys = los[:, 1, None] + w[:, 1, None] * offs[1]
    cs = u_lo + (u_hi - u_lo) * offs[2]
    pts = np.empty((n_cells, gx, gy, gc, 3))
    pts[..., 0] = xs[:, :, None, None]
    pts[..., 1] = ys[:, None, :, None]
    pts[..., 2] = cs[None, None, None, :]
    flat = pts.reshape(-1, 3)
    half = np.empty((n_cells, 3))
    half[:, 0] = w[:, 0] / (2 * gx)
    half[:, 1] = w[:, 1] / (2 * gy)
    half[:, 2] = (u_hi - u_lo) / (2 * gc)
    half_norm = np.linalg.norm(half, axis=1)

    sub_los = pts.reshape(-1, 3) - np.repeat(half, G, axis=0)
    sub_his = pts.reshape(-1, 3) + np.repeat(half, G, axis=0)
    out = np.empty((n_cells, model.n_p, 3))
    for j, gd in enumerate(model.dims):
        mus = np.empty(flat.shape[0])
        sds = np.empty(flat.shape[0])
        for i in range(0, flat.shape[0], chunk):
            mu, sd = gd.posterior(flat[i:i + chunk])
            mus[i:i + chunk] = mu
            sds[i:i + chunk] = sd
        mus = mus.reshape(n_cells, G)
        sds = sds.reshape(n_cells, G)
        ls = gd.kernel.lengthscales
        lmin = float(ls.min())
        lfeat = gd.feat_lipschitz()
        if gd.feat is None:
            delta = np.sqrt(((half / ls) ** 2).sum(axis=1))
        else:
            delta = lfeat * half_norm / lmin
        dmu = gd.mu_lipschitz_unit() * delta
        mu_lo = mus.min(axis=1) - dmu
        mu_hi = mus.max(axis=1) + dmu
        if gd.feat is None:
            # exact per-subcell interval propagation through the SE kernel is
            # usually far tighter than the Lipschitz widening
            lo_ibp, hi_ibp = _mu_interval_ibp(gd, sub_los, sub_his, chunk)
            mu_lo = np.maximum(mu_lo, lo_ibp.reshape(n_cells, G).min(axis=1))
            mu_hi = np.minimum(mu_hi, hi_ibp.reshape(n_cells, G).max(axis=1))
        dsd = gd.sigma_lipschitz_unit() * delta
        sf = math.sqrt(gd.kernel.signal_var)
        sd_max = np.minimum(sds.max(axis=1) + dsd, sf)
        eps_bar = sd_max * math.sqrt(max(gd.B**2 - gd.d_star, 0.0))
        out[:, j, 0] = mu_lo
        out[:, j, 1] = mu_hi
        out[:, j, 2] = eps_bar
    return out


def _mu_interval_ibp(gd: GpDim, sub_los, sub_his, chunk=4096):
    """Certified per-box extrema of mu = sum_i alpha_i k(., x_i).

    The SE kernel is monotone in the scaled squared distance, whose exact
    box extrema are attained at the clamped projection (min) and the farthest
    corner (max); positive weights take the kernel max for the upper bound,
    negative weights the min, and vice versa.
    """
    ls = gd.kernel.lengthscales
    sv = gd.kernel.signal_var
    X = gd.X
    a_pos = np.maximum(gd.alpha, 0.0)
    a_neg = np.minimum(gd.alpha, 0.0)
    n = sub_los.shape[0]
    lo_out = np.empty(n)
    hi_out = np.empty(n)
    step = max(1, int(chunk // max(X.shape[0], 1)) * 8)
    for s in range(0, n, step):
        lo = sub_los[s:s + step][:, None, :]  # (b,1,d)
        hi = sub_his[s:s + step][:, None, :]
        Xb = X[None, :, :]  # (1,m,d)
        near = np.clip(Xb, lo, hi)
        d2_min = (((near - Xb) / ls) ** 2).sum(axis=2)
        far = np.where(Xb - lo > hi - Xb, lo, hi)
        d2_max = (((far - Xb) / ls) ** 2).sum(axis=2)
        k_max = sv * np.exp(-0.5 * d2_min)
        k_min = sv * np.exp(-0.5 * d2_max)
        hi_out[s:s + step] = k_max @ a_pos + k_min @ a_neg
        lo_out[s:s + step] = k_min @ a_pos + k_max @ a_neg
    return lo_out, hi_out


def bound_over_region(model: InclusionGpModel, q_lo, q_hi, u, grid=(4, 4, 3)):
    """Certified (mu_lo, mu_hi, eps_bar) per output dimension over q x u."""
    res = bound_over_cells(model, np.asarray(q_lo)[None, :], np.asarray(q_hi)[None, :],
                           u, grid)
    return [tuple(res[0, j]) for j in range(model.n_p)]


# ---------------------------------------------------------------------------
# Serialization


def _a2b(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode()}


def _b2a(d):
    return np.frombuffer(base64.b64decode(d["data"]), dtype=np.float64).reshape(d["shape"]).copy()


def gp_to_dict(model: InclusionGpModel) -> dict:
    from .encoder import mlp_to_dict

    return {
        "format_version": 1,
        "kind": "inclusion_gp",
        "c_range": list(model.c_range),
        "dims": [{
            "signal_var": gd.kernel.signal_var,
            "lengthscales": _a2b(gd.kernel.lengthscales),
            "X": _a2b(gd.X),
            "y": _a2b(gd.y),
            "alpha": _a2b(gd.alpha),
            "jitter": gd.jitter,
            "B": gd.B,
            "d_star": gd.d_star,
            "feat": mlp_to_dict(gd.feat) if gd.feat is not None else None,
        } for gd in model.dims],
    }


def gp_from_dict(d: dict) -> InclusionGpModel:
    from .encoder import mlp_from_dict

    if d.get("kind") != "inclusion_gp":
        raise ValueError("unrecognized GP container")
    dims = []
    for dd in d["dims"]:
        kern = SeKernel(dd["signal_var"], _b2a(dd["lengthscales"]))
        feat = mlp_from_dict(dd["feat"]) if dd["feat"] is not None else None
        X = _b2a(dd["X"])
        y = _b2a(dd["y"])
        F = feat.forward(X) if feat is not None else X
        L = _chol_jitter(kern(F, F), dd["jitter"])
        gd = GpDim(kernel=kern, feat=feat, X=X, y=y, chol=L, alpha=_b2a(dd["alpha"]),
                   jitter=dd["jitter"], B=dd["B"], d_star=dd["d_star"])
        dims.append(gd)
    return InclusionGpModel(dims=dims, c_range=tuple(d["c_range"]))


def save_gp(model, path):
    with open(path, "w") as fh:
        json.dump(gp_to_dict(model), fh)


def load_gp(path) -> InclusionGpModel:
    with open(path) as fh:
        return gp_from_dict(json.load(fh))
