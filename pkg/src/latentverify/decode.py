"""Decoding verified latent states back to the original space.

Witnesses are found by projected (sub)gradient descent of either the
distance objective ||h(x) - z|| or the cell max-ratio objective
max_j |h(x)_j - q_c_j| / r_q_j, multi-started and with an adaptive step.
Returned witnesses are always re-verified by a fresh forward pass; the
optimizer is never trusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import NotConverged, NoWitness
from .regions import eps_randup


@dataclass
class SearchSpace:
    """Box-constrained search coordinates plus an optional manifold embed.

    For systems whose states live on an embedded manifold the search runs in
    the low-dimensional parameterization; embed lifts search points to
    ambient states and project extracts search coordinates from them.
    """

    lo: np.ndarray
    hi: np.ndarray
    embed: callable | None = None  # v -> ambient x (identity when None)
    project: callable | None = None  # ambient x -> v

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    @property
    def dim(self):
        return self.lo.shape[0]

    def clamp(self, v):
        return np.clip(v, self.lo, self.hi)

    def to_ambient(self, v):
        if self.embed is None:
            return np.atleast_2d(v)
        return self.embed(np.atleast_2d(v))

    def from_ambient(self, x):
        if self.project is not None:
            return self.project(x)
        return np.asarray(x, dtype=float)[..., : self.dim]


@dataclass
class DecodeResult:
    x: np.ndarray  # ambient witness
    v: np.ndarray  # search-space witness
    objective: float
    iterations: int
    converged: bool
    extra: dict = field(default_factory=dict)


def _descend(objective_grad, v0, space: SearchSpace, budget):
    """Adaptive projected subgradient descent; returns (best_v, best_f, evals)."""
    v = space.clamp(np.asarray(v0, dtype=float))
    f, g = objective_grad(v)
    best_v, best_f = v.copy(), f
    step = 0.25 * float(np.max(space.hi - space.lo))
    evals = 1
    while evals < budget and step > 1e-13:
        gn = np.linalg.norm(g)
        if gn < 1e-15:
            break
        cand = space.clamp(v - step * g / gn)
        fc, gc = objective_grad(cand)
        evals += 1
        if fc < f - 1e-15:
            v, f, g = cand, fc, gc
            if f < best_f:
                best_v, best_f = v.copy(), f
            step *= 1.3
        else:
            step *= 0.5
    return best_v, best_f, evals


def _dist_obj(enc, space, z_target):
    def objective_grad(v):
        x = space.to_ambient(v)
        if space.embed is None:
            zc, cache = enc.encode_with_cache(x)
            r = zc[0] - z_target
            nrm = float(np.linalg.norm(r))
            u = r / max(nrm, 1e-15)
            dx = enc.backward_latent(u[None, :], cache)[0]
            return nrm, dx
        # manifold search: central finite differences in the few search dims
        z = enc.encode(x)[0]
        nrm = float(np.linalg.norm(z - z_target))
        g = np.zeros(space.dim)
        h = 1e-5
        for d in range(space.dim):
            e = np.zeros(space.dim)
            e[d] = h
            fp = float(np.linalg.norm(enc.encode(space.to_ambient(v + e))[0] - z_target))
            fm = float(np.linalg.norm(enc.encode(space.to_ambient(v - e))[0] - z_target))
            g[d] = (fp - fm) / (2 * h)
        return nrm, g

    return objective_grad


def decode_point(enc, z, space: SearchSpace, n_starts=16, budget=2000,
                 tol=1e-4, seed=0) -> DecodeResult:
    """argmin_x ||h(x) - z|| over the domain; raises NotConverged when the
    best objective stays above tol (z likely outside the encoded domain)."""
    rng = np.random.default_rng(seed)
    obj = _dist_obj(enc, space, np.asarray(z, dtype=float))
    best = None
    total_iters = 0
    per_start = max(budget // n_starts, 50)
    for s in range(n_starts):
        v0 = rng.uniform(space.lo, space.hi)
        v, f, ev = _descend(obj, v0, space, per_start)
        total_iters += ev
        if best is None or f < best[1]:
            best = (v, f)
        if f <= tol:
            break
    v, f = best
    x = space.to_ambient(v)[0]
    res = DecodeResult(x=x, v=v, objective=f, iterations=total_iters,
                       converged=f <= tol)
    if not res.converged:
        raise NotConverged(f"decode_point objective {f:.3g} > tol {tol}")
    return res


def decode_cell(enc, q_lo, q_hi, space: SearchSpace, decoder=None, n_starts=16,
                budget=2000, seed=0) -> DecodeResult:
    """Find x in the domain with h(x) inside the latent rectangle q.

    Sampled latent points initialize the search through the decoder when one
    is available; descent stops as soon as the strict max-ratio criterion
    max_j |h(x)_j - q_c_j| / r_q_j < 1 holds, and the witness is re-verified
    with a fresh encoder pass.
    """
    q_lo = np.asarray(q_lo, dtype=float)
    q_hi = np.asarray(q_hi, dtype=float)
    qc = 0.5 * (q_lo + q_hi)
    rq = 0.5 * (q_hi - q_lo)
    if np.any(rq <= 0):
        raise ValueError("cell must be nondegenerate")
    rng = np.random.default_rng(seed)

    def objective_grad(v):
        x = space.to_ambient(v)
        if space.embed is None:
            zc, cache = enc.encode_with_cache(x)
            ratios = np.abs(zc[0] - qc) / rq
            j = int(np.argmax(ratios))
            dz = np.zeros((1, enc.n_p))
            dz[0, j] = np.sign(zc[0, j] - qc[j]) / rq[j]
            dx = enc.backward_latent(dz, cache)[0]
            return float(ratios[j]), dx[: space.dim]
        z = enc.encode(x)[0]
        ratios = np.abs(z - qc) / rq
        f0 = float(ratios.max())
        g = np.zeros(space.dim)
        h = 1e-5
        for d in range(space.dim):
            e = np.zeros(space.dim)
            e[d] = h
            zp = enc.encode(space.to_ambient(v + e))[0]
            zm = enc.encode(space.to_ambient(v - e))[0]
            fp = float((np.abs(zp - qc) / rq).max())
            fm = float((np.abs(zm - qc) / rq).max())
            g[d] = (fp - fm) / (2 * h)
        return f0, g

    best = None
    total = 0
    per_start = max(budget // n_starts, 50)
    for s in range(n_starts):
        z0 = rng.uniform(q_lo, q_hi)
        if decoder is not None:
            x0 = decoder.forward(z0[None, :])[0]
            v0 = space.clamp(space.from_ambient(x0))
        else:
            v0 = rng.uniform(space.lo, space.hi)
        v, f, ev = _descend(objective_grad, v0, space, per_start)
        total += ev
        if best is None or f < best[1]:
            best = (v, f)
        if f < 1.0:
            break
    v, f = best
    x = space.to_ambient(v)[0]
    z_check = enc.encode(space.to_ambient(v))[0]
    inside = bool(np.all(z_check >= q_lo) and np.all(z_check <= q_hi))
    res = DecodeResult(x=x, v=v, objective=f, iterations=total,
                       converged=f < 1.0 and inside)
    if not res.converged:
        raise NotConverged(f"decode_cell objective {f:.3g} (inside={inside})")
    return res


# ---------------------------------------------------------------------------
# Pre-image over-approximation


@dataclass
class PreimageRegion:
    kind: str  # hull2d | hull3d | box
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    epsilon: float
    hull_normals: np.ndarray | None = None  # (k, d) for hull kinds
    hull_offsets: np.ndarray | None = None  # (k,)

    def contains(self, v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        ok = np.all((v >= self.bbox_lo - 1e-12) & (v <= self.bbox_hi + 1e-12), axis=1)
        if self.hull_normals is not None:
            ok &= np.all(v @ self.hull_normals.T <= self.hull_offsets + 1e-12, axis=1)
        return ok


def preimage_overapprox(enc, q_lo, q_hi, space: SearchSpace, witnesses,
                        N=2000, delta=0.05, seed=0, burn=5) -> PreimageRegion:
    """Sampled over-approximation of Pre(q) via hit-and-run around decoded
    witnesses, inflated by the sampling bound's eps in the search space.

    Search dims <= 3 get a convex hull (offset outward by eps); higher
    dimensions fall back to an inflated bounding box.
    """
    witnesses = [np.asarray(w, dtype=float) for w in witnesses]
    if not witnesses:
        raise NoWitness("need at least one decode_cell witness")
    q_lo = np.asarray(q_lo, dtype=float)
    q_hi = np.asarray(q_hi, dtype=float)
    rng = np.random.default_rng(seed)

    def member(v):
        z = enc.encode(space.to_ambient(v))[0]
        return bool(np.all(z >= q_lo) and np.all(z <= q_hi))

    samples = []
    cur = witnesses[0].copy()
    span = float(np.max(space.hi - space.lo))
    while len(samples) < N:
        d = rng.standard_normal(space.dim)
        d /= np.linalg.norm(d)
        # expand to the membership chord through cur, then bisect endpoints
        t_hi = _chord_end(member, space, cur, d, span)
        t_lo = -_chord_end(member, space, cur, -d, span)
        t = rng.uniform(t_lo, t_hi)
        cand = space.clamp(cur + t * d)
        if member(cand):
            cur = cand
            samples.append(cur.copy())
        # occasional restart from another witness keeps the chain mixing
        if rng.random() < 0.02 and len(witnesses) > 1:
            cur = witnesses[rng.integers(len(witnesses))].copy()
    pts = np.array(samples[burn:])
    dim = space.dim
    eps = eps_randup(pts.shape[0], delta, 1.0, dim, dim)
    lo = pts.min(axis=0) - eps
    hi = pts.max(axis=0) + eps
    if dim == 2:
        from .geometry import convex_hull, minkowski_expand

        hull = minkowski_expand(convex_hull(pts), eps)
        if hull.degeneracy == "polygon":
            v = hull.vertices
            edges = np.roll(v, -1, axis=0) - v
            # outward normals of a CCW polygon; interior is n.x <= n.v
            normals = np.column_stack([edges[:, 1], -edges[:, 0]])
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            offsets = (normals * v).sum(axis=1)
            return PreimageRegion("hull2d", lo, hi, eps, normals, offsets)
        return PreimageRegion("box", lo, hi, eps)
    if dim == 3:
        try:
            from scipy.spatial import ConvexHull

            h = ConvexHull(pts)
            normals = h.equations[:, :3]
            offsets = -h.equations[:, 3] + eps * np.linalg.norm(normals, axis=1)
            return PreimageRegion("hull3d", lo, hi, eps, normals, offsets)
        except Exception:
            return PreimageRegion("box", lo, hi, eps)
    return PreimageRegion("box", lo, hi, eps)


def _chord_end(member, space, cur, d, span):
    """Length of the membership interval from cur along d (bisected)."""
    t = 0.01 * span
    last_good = 0.0
    while t <= span and member(space.clamp(cur + t * d)):
        last_good = t
        t *= 2.0
    lo, hi = last_good, min(t, span)
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if member(space.clamp(cur + mid * d)):
            lo = mid
        else:
            hi = mid
    return lo
