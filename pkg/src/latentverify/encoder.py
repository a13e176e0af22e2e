"""Convex (CICO) encoder: architecture, training, audits, serialization.

The encoder is an input-convex network with strictly monotone SoftPlus
activations, nonnegative weights after the first hidden layer, and injective
first/skip layers, optionally with identity-passthrough input coordinates
occupying the leading latent dimensions. Training jointly fits an auxiliary
set-valued latent dynamics net and a decoder under a five-term composite
loss; the auxiliary nets carry no guarantees and are never used to build the
abstraction.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import TrainingDiverged
from .nets import Adam, Affine, CicoCore, Mlp, softplus, softplus_grad

FORMAT_VERSION = 1


@dataclass
class LossWeights:
    alphas: tuple = (1.0, 0.1, 1.0, 0.01, 0.1)
    A_X: np.ndarray | None = None  # defaults to identity
    A_Z: np.ndarray | None = None


@dataclass
class TrainConfig:
    epochs: int = 200
    batch: int = 128
    lr: float = 1e-3
    rank_tol: float = 1e-6
    seed: int = 0
    prior_var: float = 1.0
    # apply the metric term across shuffled batch pairs as well; this is what
    # actually separates regions in the latent domain
    cross_metric: bool = True


class CicoEncoder:
    """Deterministic convex encoder with optional identity passthrough.

    Latent layout: passthrough input coordinates first (in listed order),
    then the convex core's outputs over the remaining input coordinates.
    """

    def __init__(self, n_x, n_p, widths, skip_at, passthrough, rng, beta=1.0,
                 spectral_caps=None, skip_cap=None):
        self.n_x = n_x
        self.n_p = n_p
        self.passthrough = list(passthrough)
        self.free_idx = [i for i in range(n_x) if i not in self.passthrough]
        n_core_out = n_p - len(self.passthrough)
        if n_core_out < 1:
            raise ValueError("need at least one non-passthrough latent dim")
        dims = [len(self.free_idx)] + list(widths) + [n_core_out]
        self.core = CicoCore(dims, rng, skip_at=skip_at, beta=beta,
                             spectral_caps=spectral_caps, skip_cap=skip_cap)
        self.beta = beta
        # VAE head (training-time only): affine log-variance of q(z|x)
        self.logvar_head = Affine(n_x, n_p, rng, scale=0.01)

    def encode(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        core_out = self.core.forward(x[:, self.free_idx])
        return np.column_stack([x[:, self.passthrough], core_out])

    def __call__(self, x):
        return self.encode(x)

    def encode_with_cache(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cache = []
        core_out = self.core.forward(x[:, self.free_idx], cache)
        z = np.column_stack([x[:, self.passthrough], core_out])
        return z, cache

    def backward_latent(self, dz, cache, x=None):
        """Backprop dL/dz into core parameter grads; returns dL/dx."""
        k = len(self.passthrough)
        d_core = self.core.backward(dz[:, k:], cache)
        dx = np.zeros((dz.shape[0], self.n_x))
        dx[:, self.passthrough] = dz[:, :k]
        dx[:, self.free_idx] = d_core
        return dx

    def logvar(self, x):
        return self.logvar_head.forward(np.atleast_2d(np.asarray(x, dtype=float)))

    def params(self):
        return self.core.params() + self.logvar_head.params()

    def grads(self):
        return self.core.grads() + self.logvar_head.grads()

    def zero_grad(self):
        for g in self.grads():
            g.fill(0.0)

    def clamp(self):
        self.core.clamp()


class LatentDynNet:
    """Set-valued latent dynamics: ball of radius g_r(z) centered at g_c(z)."""

    def __init__(self, n_p, rng, widths_c=(32, 32), widths_r=(32, 16)):
        self.center = Mlp([n_p, *widths_c, n_p], rng, activation="tanh")
        self.radius_net = Mlp([n_p, *widths_r, 1], rng, activation="tanh")

    def center_of(self, z, cache=None):
        return self.center.forward(z, cache)

    def radius_of(self, z, cache=None):
        raw = self.radius_net.forward(z, cache)
        if cache is not None:
            cache.append(raw)
        return softplus(raw)[:, 0]

    def radius_backward(self, dr, cache):
        raw = cache.pop()
        draw = dr[:, None] * softplus_grad(raw)
        return self.radius_net.backward(draw, cache)

    def params(self):
        return self.center.params() + self.radius_net.params()

    def grads(self):
        return self.center.grads() + self.radius_net.grads()

    def zero_grad(self):
        for g in self.grads():
            g.fill(0.0)


def make_decoder(n_x, n_p, rng, widths=(64, 64)) -> Mlp:
    return Mlp([n_p, *widths, n_x], rng, activation="tanh")


def build_networks(n_x, n_p, widths, skip_at, passthrough, seed, beta=1.0,
                   spectral_caps=None, skip_cap=None):
    rng = np.random.default_rng(seed)
    enc = CicoEncoder(n_x, n_p, widths, skip_at, passthrough, rng, beta,
                      spectral_caps=spectral_caps, skip_cap=skip_cap)
    dyn = LatentDynNet(n_p, rng)
    dec = make_decoder(n_x, n_p, rng)
    return enc, dyn, dec


# ---------------------------------------------------------------------------
# Losses

_TINY = 1e-12


def loss_components(x, xp, nets, weights: LossWeights, rng=None, prior_var=1.0,
                    compute_grads=False):
    """The five loss terms and their weighted total on a batch of pairs.

    With compute_grads the parameter gradients of the weighted total are
    accumulated into the nets. The VAE term uses the Gaussian
    reparameterization only when an rng is supplied (training); otherwise the
    posterior mean is used, matching the deterministic post-training contract.
    """
    enc, dyn, dec = nets
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xp = np.atleast_2d(np.asarray(xp, dtype=float))
    B = x.shape[0]
    a = weights.alphas
    A_X = weights.A_X if weights.A_X is not None else np.eye(x.shape[1])
    A_Z = weights.A_Z if weights.A_Z is not None else np.eye(enc.n_p)

    z, cache_z = enc.encode_with_cache(x)
    zp, cache_zp = enc.encode_with_cache(xp)

    cache_c, cache_r = [], []
    g_c = dyn.center_of(z, cache_c)
    g_r = dyn.radius_of(z, cache_r)

    cache_d = []
    recon = dec.forward(z, cache_d)

    # L1: successors must land in the predicted ball (hinge)
    resid = zp - g_c
    resid_norm = np.sqrt(np.maximum((resid**2).sum(axis=1), _TINY**2))
    slack = resid_norm - g_r
    active = slack > 0
    L1 = float(np.maximum(slack, 0.0).mean())

    # L2: ball size penalty
    L2 = float(g_r.mean())

    # L3: reconstruction distance
    err = x - recon
    err_norm = np.sqrt(np.maximum((err**2).sum(axis=1), _TINY**2))
    L3 = float(err_norm.mean())

    # L4: ELBO form (reconstruction of a reparameterized sample + KL);
    # overflow here only happens on diverged parameters, which the caller
    # detects through the non-finite total
    lv = enc.logvar(x)
    eps_noise = rng.standard_normal(lv.shape) if rng is not None else np.zeros_like(lv)
    with np.errstate(over="ignore", invalid="ignore"):
        std = np.exp(0.5 * lv)
        z_tilde = z + std * eps_noise
        cache_d4 = []
        recon4 = dec.forward(z_tilde, cache_d4)
        rec4 = 0.5 * ((x - recon4) ** 2).sum(axis=1)
        kl = 0.5 * ((np.exp(lv) + z**2) / prior_var - 1.0 - lv + np.log(prior_var)).sum(axis=1)
    L4 = float((rec4 + kl).mean())

    # L5: metric preservation between the pair distance and its latent image
    dx_vec = x - xp
    dz_vec = z - zp
    dX = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", dx_vec, A_X, dx_vec), _TINY**2))
    dZ = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", dz_vec, A_Z, dz_vec), _TINY**2))
    L5 = float(np.abs(dX - dZ).mean())

    total = a[0] * L1 + a[1] * L2 + a[2] * L3 + a[3] * L4 + a[4] * L5
    comps = (L1, L2, L3, L4, L5, total)
    if not compute_grads:
        return comps

    dz_total = np.zeros_like(z)
    dzp_total = np.zeros_like(zp)

    # L1 backward
    unit = resid / resid_norm[:, None]
    w1 = (a[0] / B) * active.astype(float)
    dzp_total += w1[:, None] * unit
    d_gc = -w1[:, None] * unit
    dz_total += dyn.center.backward(d_gc, cache_c)
    d_gr = -w1
    # L2 backward shares the radius-net path
    d_gr = d_gr + a[1] / B
    dz_total += dyn.radius_backward(d_gr, cache_r)

    # L3 backward
    d_rec = -(a[2] / B) * err / err_norm[:, None]
    dz_total += dec.backward(d_rec, cache_d)

    # L4 backward
    with np.errstate(over="ignore", invalid="ignore"):
        d_rec4 = (a[3] / B) * (recon4 - x)
        dz_tilde = dec.backward(d_rec4, cache_d4)
        dz_total += dz_tilde
        dlv = dz_tilde * eps_noise * 0.5 * std
        dz_total += (a[3] / B) * z / prior_var
        dlv += (a[3] / (2 * B)) * (np.exp(lv) / prior_var - 1.0)
    enc.logvar_head.backward(x, dlv)

    # L5 backward
    sgn = np.sign(dX - dZ)
    coef = -(a[4] / B) * sgn / dZ
    dz_pair = coef[:, None] * (dz_vec @ A_Z.T)
    dz_total += dz_pair
    dzp_total -= dz_pair

    enc.backward_latent(dz_total, cache_z)
    enc.backward_latent(dzp_total, cache_zp)
    return comps


def metric_cross_term(enc, x, z_ref, weights: LossWeights, perm,
                      compute_grads=False):
    """Metric-preservation term across a shuffled pairing of the batch.

    Returns the mean |d_X(x_i, x_pi(i)) - d_Z(z_i, z_pi(i))| and, when asked,
    accumulates its alpha_5-weighted gradient into the encoder.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B = x.shape[0]
    A_X = weights.A_X if weights.A_X is not None else np.eye(x.shape[1])
    A_Z = weights.A_Z if weights.A_Z is not None else np.eye(enc.n_p)
    if compute_grads:
        z, cache = enc.encode_with_cache(x)
    else:
        z = z_ref if z_ref is not None else enc.encode(x)
    dx_vec = x - x[perm]
    dz_vec = z - z[perm]
    dX = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", dx_vec, A_X, dx_vec), _TINY**2))
    dZ = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", dz_vec, A_Z, dz_vec), _TINY**2))
    L = float(np.abs(dX - dZ).mean())
    if not compute_grads:
        return L
    a5 = weights.alphas[4]
    coef = -(a5 / B) * np.sign(dX - dZ) / dZ
    dz = coef[:, None] * (dz_vec @ A_Z.T)
    dz_total = dz.copy()
    np.add.at(dz_total, perm, -dz)
    enc.backward_latent(dz_total, cache)
    return L


def train(learning_set, weights: LossWeights, cfg: TrainConfig, nets=None,
          arch=None):
    """Gradient-descent training of (encoder, dynamics net, decoder).

    Nonnegativity is enforced by clamping constrained weights after every
    optimizer step so the audited weights are the executed weights. Returns
    the three nets plus the per-epoch history of loss components.
    """
    x, xp = learning_set.x, learning_set.x_plus
    n = x.shape[0]
    if n == 0:
        raise ValueError("learning set is empty")
    if nets is None:
        arch = arch or {}
        nets = build_networks(
            n_x=x.shape[1],
            n_p=arch.get("n_p", 2),
            widths=arch.get("widths", (128, 64, 32, 16)),
            skip_at=arch.get("skip_at", (2,)),
            passthrough=arch.get("passthrough", ()),
            seed=cfg.seed,
            beta=arch.get("beta", 1.0),
        )
    enc, dyn, dec = nets
    params = enc.params() + dyn.params() + dec.params()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    cross = cfg.cross_metric and weights.alphas[4] > 0
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(6)
        batches = 0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            enc.zero_grad()
            dyn.zero_grad()
            dec.zero_grad()
            comps = list(loss_components(x[idx], xp[idx], nets, weights, rng=rng,
                                         prior_var=cfg.prior_var, compute_grads=True))
            if cross and len(idx) > 1:
                perm = rng.permutation(len(idx))
                l5x = metric_cross_term(enc, x[idx], None, weights, perm,
                                        compute_grads=True)
                comps[4] += l5x
                comps[5] += weights.alphas[4] * l5x
            if not np.isfinite(comps[-1]):
                raise TrainingDiverged(f"loss became non-finite: {comps}")
            opt.step(enc.grads() + dyn.grads() + dec.grads())
            enc.clamp()
            sums += comps
            batches += 1
        history.append(tuple(sums / batches))
    return enc, dyn, dec, history


# ---------------------------------------------------------------------------
# Audit


@dataclass
class AuditReport:
    nonneg_ok: list
    sigma_min_rel: list
    rank_ok: list
    skip_injective: list
    jacobian_rank_ok: bool
    jacobian_min_rel: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = (all(self.nonneg_ok) and all(self.rank_ok)
                       and all(self.skip_injective) and self.jacobian_rank_ok)


def _rel_sigma_min(W, want_full_col_rank=False):
    s = np.linalg.svd(W, compute_uv=False)
    r = min(W.shape) if not want_full_col_rank else W.shape[1]
    if len(s) < r or s[0] == 0.0:
        return 0.0
    return float(s[r - 1] / s[0])


def check_cico(enc: CicoEncoder, probes=16, rank_tol=1e-6, rng=None) -> AuditReport:
    """Architecture audit: nonnegativity of constrained weights, relative
    smallest singular values of every layer, injectivity of the first layer
    and skips, and finite-difference Jacobian rank n_p at probe points."""
    rng = rng or np.random.default_rng(0)
    core = enc.core
    nonneg_ok, sig_rel, rank_ok = [], [], []
    for i, lay in enumerate(core.layers):
        nonneg_ok.append(bool((lay.W >= 0.0).all()) if lay.nonneg else True)
        rel = _rel_sigma_min(lay.W)
        sig_rel.append(rel)
        rank_ok.append(rel > rank_tol)
    skip_inj = []
    first = core.layers[0].W
    skip_inj.append(first.shape[0] >= first.shape[1]
                    and _rel_sigma_min(first, True) > rank_tol)
    for t in sorted(core.skips):
        W = core.skips[t].W
        skip_inj.append(W.shape[0] >= W.shape[1] and _rel_sigma_min(W, True) > rank_tol)

    # submersion check: full encoder Jacobian has rank n_p at random probes
    h = 1e-6
    jac_ok = True
    worst = np.inf
    for _ in range(probes):
        x0 = rng.uniform(-0.5, 0.5, size=enc.n_x)
        J = np.empty((enc.n_p, enc.n_x))
        for j in range(enc.n_x):
            e = np.zeros(enc.n_x)
            e[j] = h
            J[:, j] = (enc.encode(x0 + e)[0] - enc.encode(x0 - e)[0]) / (2 * h)
        s = np.linalg.svd(J, compute_uv=False)
        rel = float(s[enc.n_p - 1] / s[0]) if s[0] > 0 else 0.0
        worst = min(worst, rel)
        jac_ok &= rel > rank_tol
    return AuditReport(nonneg_ok, sig_rel, rank_ok, skip_inj, bool(jac_ok), worst)


def lipschitz_bound(enc: CicoEncoder) -> float:
    """Upper bound on the l2 Lipschitz constant: sum over input-output paths
    of products of layer spectral norms (SoftPlus slope <= 1); an identity
    passthrough contributes exactly 1 on its own path."""
    core = enc.core
    norms = [np.linalg.svd(lay.W, compute_uv=False)[0] for lay in core.layers]
    L = float(np.prod(norms))
    for t, sk in core.skips.items():
        tail = float(np.prod(norms[t:]))  # layers after the insertion point
        L += float(np.linalg.svd(sk.W, compute_uv=False)[0]) * tail
    if enc.passthrough:
        # passthrough and core act on disjoint coordinates
        return max(1.0, L)
    return L


class RemappedEncoder:
    """Monitoring-time wrapper: equals the encoder on the domain, and pushes
    out-of-domain states radially from Z's centroid to strictly outside Z.
    Deliberately non-convex; never used for region mapping."""

    def __init__(self, enc: CicoEncoder, domain_hull, in_domain):
        self.enc = enc
        self.hull = domain_hull
        self.in_domain = in_domain
        self.centroid = domain_hull.vertices.mean(axis=0)
        lo, hi = domain_hull.bbox()
        self.push = 3.0 * float(np.linalg.norm(hi - lo)) + 1.0

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = self.enc.encode(x)
        mask = ~np.asarray(self.in_domain(x), dtype=bool)
        if mask.any():
            d = z[mask] - self.centroid
            nrm = np.linalg.norm(d, axis=1, keepdims=True)
            d = np.where(nrm > 1e-12, d / np.maximum(nrm, 1e-300),
                         np.array([[1.0, 0.0]]))
            z[mask] = self.centroid + self.push * d
        return z


def remap_outliers(enc: CicoEncoder, domain_hull, in_domain) -> RemappedEncoder:
    return RemappedEncoder(enc, domain_hull, in_domain)


# ---------------------------------------------------------------------------
# Serialization (bit-exact round trip via raw float64 bytes)


def _arr_to_b64(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode()}


def _arr_from_b64(d):
    a = np.frombuffer(base64.b64decode(d["data"]), dtype=np.float64)
    return a.reshape(d["shape"]).copy()


def encoder_to_dict(enc: CicoEncoder) -> dict:
    core = enc.core
    return {
        "format_version": FORMAT_VERSION,
        "kind": "cico_encoder",
        "activation": "softplus",
        "beta": enc.beta,
        "n_x": enc.n_x,
        "n_p": enc.n_p,
        "passthrough": enc.passthrough,
        "dims": core.dims,
        "layers": [{"W": _arr_to_b64(l.W), "b": _arr_to_b64(l.b), "nonneg": l.nonneg}
                   for l in core.layers],
        "skips": {str(t): {"W": _arr_to_b64(s.W), "b": _arr_to_b64(s.b)}
                  for t, s in core.skips.items()},
        "logvar": {"W": _arr_to_b64(enc.logvar_head.W), "b": _arr_to_b64(enc.logvar_head.b)},
    }


def encoder_from_dict(d: dict) -> CicoEncoder:
    if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "cico_encoder":
        raise ValueError("unrecognized encoder container")
    rng = np.random.default_rng(0)
    widths = d["dims"][1:-1]
    enc = CicoEncoder(d["n_x"], d["n_p"], widths,
                      [int(t) for t in d["skips"]], d["passthrough"], rng, d["beta"])
    for lay, ld in zip(enc.core.layers, d["layers"]):
        lay.W = _arr_from_b64(ld["W"])
        lay.b = _arr_from_b64(ld["b"])
        lay.nonneg = ld["nonneg"]
        lay.dW = np.zeros_like(lay.W)
        lay.db = np.zeros_like(lay.b)
    for t, sd in d["skips"].items():
        sk = enc.core.skips[int(t)]
        sk.W = _arr_from_b64(sd["W"])
        sk.b = _arr_from_b64(sd["b"])
        sk.dW = np.zeros_like(sk.W)
        sk.db = np.zeros_like(sk.b)
    enc.logvar_head.W = _arr_from_b64(d["logvar"]["W"])
    enc.logvar_head.b = _arr_from_b64(d["logvar"]["b"])
    return enc


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "mlp",
        "dims": net.dims,
        "activation": net.activation,
        "beta": net.beta,
        "out_act": net.out_act,
        "layers": [{"W": _arr_to_b64(l.W), "b": _arr_to_b64(l.b)} for l in net.layers],
    }


def mlp_from_dict(d: dict) -> Mlp:
    net = Mlp(d["dims"], np.random.default_rng(0), activation=d["activation"],
              beta=d["beta"], out_act=d["out_act"])
    for lay, ld in zip(net.layers, d["layers"]):
        lay.W = _arr_from_b64(ld["W"])
        lay.b = _arr_from_b64(ld["b"])
        lay.dW = np.zeros_like(lay.W)
        lay.db = np.zeros_like(lay.b)
    return net


def save_encoder(enc: CicoEncoder, path):
    with open(path, "w") as fh:
        json.dump(encoder_to_dict(enc), fh)


def load_encoder(path) -> CicoEncoder:
    with open(path) as fh:
        return encoder_from_dict(json.load(fh))
