"""Small feedforward network kit with hand-rolled reverse-mode gradients.

Everything downstream (encoder training, deep-kernel features, decoding)
backpropagates through these layers, so gradient correctness is gated by
finite-difference tests rather than an autodiff framework.
"""

from __future__ import annotations

import numpy as np


def softplus(x, beta=1.0):
    return np.logaddexp(0.0, beta * x) / beta


def softplus_grad(x, beta=1.0):
    # sigmoid(beta*x), written via tanh for overflow safety
    return 0.5 * (1.0 + np.tanh(0.5 * beta * x))


def tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


_ACTS = {
    "softplus": (softplus, softplus_grad),
    "tanh": (lambda x, beta=1.0: np.tanh(x), lambda x, beta=1.0: tanh_grad(x)),
    "identity": (lambda x, beta=1.0: x, lambda x, beta=1.0: np.ones_like(x)),
}


class Affine:
    """y = x W^T + b with optional nonnegativity constraint on W and an
    optional spectral-norm cap, both enforced by projection so the audited
    weights are exactly the executed weights."""

    def __init__(self, n_in, n_out, rng, nonneg=False, scale=None, spectral_cap=None):
        if scale is None:
            scale = 1.0 / np.sqrt(n_in)
        w = rng.normal(0.0, scale, size=(n_out, n_in))
        if nonneg:
            # start strictly inside the feasible cone
            w = np.abs(w)
        self.W = w
        self.b = np.zeros(n_out)
        self.nonneg = nonneg
        self.spectral_cap = spectral_cap
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        return x @ self.W.T + self.b

    def backward(self, x, dy):
        self.dW += dy.T @ x
        self.db += dy.sum(axis=0)
        return dy @ self.W

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def clamp(self):
        if self.nonneg:
            np.maximum(self.W, 0.0, out=self.W)
        if self.spectral_cap is not None:
            s = np.linalg.svd(self.W, compute_uv=False)[0]
            if s > self.spectral_cap:
                self.W *= self.spectral_cap / s


class Mlp:
    """Plain feedforward net: affine layers with an activation between them.

    ``out_act`` optionally applies the activation after the last layer too
    (used for nonnegative outputs such as the inclusion-ball radius).
    """

    def __init__(self, dims, rng, activation="tanh", beta=1.0, out_act=False):
        self.dims = list(dims)
        self.activation = activation
        self.beta = beta
        self.out_act = out_act
        self.layers = [Affine(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def forward(self, x, cache=None):
        act, _ = _ACTS[self.activation]
        h = x
        if cache is not None:
            cache.append(h)
        for i, lay in enumerate(self.layers):
            a = lay.forward(h)
            last = i == len(self.layers) - 1
            h = act(a, self.beta) if (not last or self.out_act) else a
            if cache is not None:
                cache.append(a)
                cache.append(h)
        return h

    def __call__(self, x):
        return self.forward(x)

    def backward(self, dy, cache):
        """Accumulate parameter grads; return gradient w.r.t. the input."""
        _, dact = _ACTS[self.activation]
        g = dy
        pos = len(cache) - 1
        for i in reversed(range(len(self.layers))):
            a = cache[pos - 1]
            h_in = cache[pos - 2]
            last = i == len(self.layers) - 1
            if not last or self.out_act:
                g = g * dact(a, self.beta)
            g = self.layers[i].backward(h_in, g)
            pos -= 2
        return g

    def params(self):
        return [p for lay in self.layers for p in lay.params()]

    def grads(self):
        return [g for lay in self.layers for g in lay.grads()]

    def zero_grad(self):
        for g in self.grads():
            g.fill(0.0)

    def clamp(self):
        for lay in self.layers:
            lay.clamp()


class CicoCore:
    """Convex feedforward core: nonnegative weights after the first hidden
    layer, SoftPlus activations, affine skip maps from the raw input added
    pre-activation at selected layers.

    Each output coordinate is a convex function of the input because it is
    built from affine maps of the input plus nonnegative combinations of
    convex nondecreasing functions.
    """

    def __init__(self, dims, rng, skip_at=(), beta=1.0, spectral_caps=None,
                 skip_cap=None):
        self.dims = list(dims)
        self.beta = beta
        n_in = dims[0]
        caps = spectral_caps or [None] * (len(dims) - 1)
        if len(caps) != len(dims) - 1:
            raise ValueError("spectral_caps must match the layer count")
        self.layers = []
        for i in range(len(dims) - 1):
            self.layers.append(Affine(dims[i], dims[i + 1], rng, nonneg=(i >= 1),
                                      spectral_cap=caps[i]))
        # skip_at indexes layers (1-based into self.layers) whose pre-activation
        # receives an unconstrained affine image of the raw input
        self.skips = {}
        for t in skip_at:
            if not (1 <= t <= len(self.layers)):
                raise ValueError(f"skip target {t} out of range")
            self.skips[t] = Affine(n_in, dims[t], rng, spectral_cap=skip_cap)

    def forward(self, x, cache=None):
        h = x
        if cache is not None:
            cache.append(h)
        for i, lay in enumerate(self.layers):
            a = lay.forward(h)
            t = i + 1
            if t in self.skips:
                a = a + self.skips[t].forward(x)
            last = i == len(self.layers) - 1
            h = softplus(a, self.beta) if not last else a
            if cache is not None:
                cache.append(a)
                cache.append(h)
        return h

    def __call__(self, x):
        return self.forward(x)

    def backward(self, dy, cache):
        g = dy
        x = cache[0]
        dx = np.zeros_like(x)
        pos = len(cache) - 1
        for i in reversed(range(len(self.layers))):
            a = cache[pos - 1]
            h_in = cache[pos - 2]
            last = i == len(self.layers) - 1
            if not last:
                g = g * softplus_grad(a, self.beta)
            t = i + 1
            if t in self.skips:
                dx += self.skips[t].backward(x, g)
            g = self.layers[i].backward(h_in, g)
            pos -= 2
        return dx + g

    def params(self):
        ps = [p for lay in self.layers for p in lay.params()]
        for t in sorted(self.skips):
            ps.extend(self.skips[t].params())
        return ps

    def grads(self):
        gs = [g for lay in self.layers for g in lay.grads()]
        for t in sorted(self.skips):
            gs.extend(self.skips[t].grads())
        return gs

    def zero_grad(self):
        for g in self.grads():
            g.fill(0.0)

    def clamp(self):
        for lay in self.layers:
            lay.clamp()
        for sk in self.skips.values():
            sk.clamp()


class Adam:
    """Adam on a flat list of parameter arrays (in-place updates)."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
