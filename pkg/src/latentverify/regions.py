"""Mapping regions of interest into the latent space and labeling cells.

A convex region is mapped by encoding N uniform samples: the convex hull of
the encodings under-approximates the true image (deterministically, by
convexity of the encoder), and the hull inflated by the closed-form
eps(N, delta) over-approximates it with probability >= 1 - delta.

Labels are realized conservatively at cell granularity: a cell earns the
positive proposition of a region only if it sits inside the sampled hull and
misses every inflated hull of the region's complement parts; it earns the
negation proposition only if it misses the region's inflated hull entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import IncompleteNegationCover, InvalidConfidence
from .geometry import (
    ConvexPolygon,
    convex_hull,
    minkowski_expand,
    polygon_contains,
    rect_inside_polygon,
    rect_intersects_polygon,
)


def ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def eps_randup(N: int, delta: float, L_h: float, n_x: int, n_p: int) -> float:
    """Closed-form inflation radius for the sampling-based over-approximation.

    eps = L * (v_{n_x} / (N v_{n_p}) * log((4 L sqrt(n_x))^{n_x} / delta))^{1/n_p}
    with v_i the volume of the i-dimensional unit ball. Assumes the region is
    a subset of the unit ball and sampled uniformly.
    """
    if not (0.0 < delta < 1.0):
        raise InvalidConfidence(f"delta={delta} not in (0, 1)")
    if N < 1 or L_h <= 0.0 or n_p > n_x or n_p < 1:
        raise ValueError("need N >= 1, L_h > 0, 1 <= n_p <= n_x")
    log_term = n_x * math.log(4.0 * L_h * math.sqrt(n_x)) + math.log(1.0 / delta)
    inner = ball_volume(n_x) / (N * ball_volume(n_p)) * log_term
    if inner <= 0.0:
        return 0.0
    return L_h * inner ** (1.0 / n_p)


@dataclass
class RegionSampler:
    """Uniform sampler for one convex part, in normalized ambient coords.

    draw(n, rng) must sample uniformly from a sample_dim-dimensional convex
    parameterization and return embedded ambient points; lipschitz_factor
    bounds the embedding's Lipschitz constant (1 for identity embeddings).
    contains tests ambient membership of the part.
    """

    draw: callable
    sample_dim: int
    contains: callable
    lipschitz_factor: float = 1.0


@dataclass
class RegionSpec:
    """A labeled region: `reach` regions produce the positive proposition,
    `avoid` regions the negation proposition, `full` both."""

    name: str
    mode: str  # reach | avoid | full
    parts: list  # [RegionSampler]; exactly one for reach/full
    negation_parts: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("reach", "avoid", "full"):
            raise ValueError(f"bad mode {self.mode}")
        if self.mode in ("reach", "full") and len(self.parts) != 1:
            raise ValueError("reach/full regions must be a single convex part")
        if self.mode in ("reach", "full") and not self.negation_parts:
            raise ValueError("reach/full regions need negation parts")


@dataclass
class LatentRegionPair:
    label: str
    under: ConvexPolygon | None  # hull of encoded region samples
    overs: list  # inflated hull per region part
    negation_overs: list  # inflated hull per complement part
    epsilon: float


def map_region(sampler: RegionSampler, encode, N: int, delta: float, L_h: float, rng):
    """Hull of N encoded samples plus its eps(N, delta) inflation."""
    pts = sampler.draw(N, rng)
    z = encode(pts)
    under = convex_hull(z)
    eps = eps_randup(N, delta, L_h * sampler.lipschitz_factor, sampler.sample_dim, z.shape[1])
    over = minkowski_expand(under, eps)
    return under, over, eps


def build_latent_domain(encode, domain_sampler: RegionSampler, N: int, delta: float,
                        L_h: float, rng):
    """Under-approximation hull of the encoded domain (the latent domain Z)."""
    pts = domain_sampler.draw(N, rng)
    z = encode(pts)
    hull = convex_hull(z)
    eps = eps_randup(N, delta, L_h * domain_sampler.lipschitz_factor,
                     domain_sampler.sample_dim, z.shape[1])
    return hull, eps


# ---------------------------------------------------------------------------
# Partition


@dataclass
class Partition:
    domain: ConvexPolygon  # Z
    los: np.ndarray  # (n, 2)
    his: np.ndarray  # (n, 2)
    boundary: np.ndarray  # (n,) bool; cell rect straddles Z's boundary

    @property
    def n_cells(self):
        return self.los.shape[0]

    def areas(self):
        return np.prod(self.his - self.los, axis=1)

    def clipped_areas(self):
        """Cell areas with boundary cells clipped to Z."""
        from .geometry import clip_polygon_to_rect, polygon_area

        out = self.areas().copy()
        for i in np.flatnonzero(self.boundary):
            v = clip_polygon_to_rect(self.domain, self.los[i], self.his[i])
            out[i] = polygon_area(v) if v.shape[0] >= 3 else 0.0
        return out

    def locate(self, z):
        """Cell index per point; -1 is the outside state q_u.

        Points in a boundary cell's rectangle but outside Z belong to q_u.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        inside = (z[:, None, :] >= self.los[None, :, :]) & (z[:, None, :] <= self.his[None, :, :])
        inside = inside.all(axis=2)
        idx = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
        bnd = idx >= 0
        bnd[bnd] = self.boundary[idx[bnd]]
        if bnd.any():
            in_z = polygon_contains(self.domain, z[bnd])
            sub = idx[bnd]
            sub[~in_z] = -1
            idx[bnd] = sub
        return idx

    def split_cells(self, ids):
        """Bisect each listed cell along its longest edge; drop children that
        fall fully outside Z; re-tag boundary flags. Returns new Partition."""
        ids = set(int(i) for i in ids)
        los, his, bnd = [], [], []
        for i in range(self.n_cells):
            lo, hi = self.los[i], self.his[i]
            if i not in ids:
                los.append(lo)
                his.append(hi)
                bnd.append(self.boundary[i])
                continue
            w = hi - lo
            ax = int(np.argmax(w))
            mid = 0.5 * (lo[ax] + hi[ax])
            for child_lo, child_hi in (
                (lo, np.where(np.arange(2) == ax, mid, hi)),
                (np.where(np.arange(2) == ax, mid, lo), hi),
            ):
                keep, is_bnd = _classify_rect(child_lo, child_hi, self.domain)
                if keep:
                    los.append(np.asarray(child_lo, dtype=float))
                    his.append(np.asarray(child_hi, dtype=float))
                    bnd.append(is_bnd)
        return Partition(self.domain, np.array(los), np.array(his), np.array(bnd, dtype=bool))


def _classify_rect(lo, hi, domain):
    if rect_inside_polygon(lo, hi, domain, tol=1e-12):
        return True, False
    if rect_intersects_polygon(lo, hi, domain):
        return True, True
    return False, None


def partition_domain(domain: ConvexPolygon, resolution) -> Partition:
    """Axis-aligned grid over Z's bounding box; outside cells discarded,
    straddling cells kept with a boundary tag."""
    rx, ry = int(resolution[0]), int(resolution[1])
    if rx < 1 or ry < 1:
        raise ValueError("resolution must be >= 1 per axis")
    lo, hi = domain.bbox()
    xs = np.linspace(lo[0], hi[0], rx + 1)
    ys = np.linspace(lo[1], hi[1], ry + 1)
    los, his, bnd = [], [], []
    for i in range(rx):
        for j in range(ry):
            clo = np.array([xs[i], ys[j]])
            chi = np.array([xs[i + 1], ys[j + 1]])
            keep, is_bnd = _classify_rect(clo, chi, domain)
            if keep:
                los.append(clo)
                his.append(chi)
                bnd.append(is_bnd)
    return Partition(domain, np.array(los), np.array(his), np.array(bnd, dtype=bool))


# ---------------------------------------------------------------------------
# Labeling


@dataclass
class LabelingMap:
    ap: list
    cell_labels: list  # frozenset per cell; q_u (index -1) is unlabeled
    region_pairs: list  # [LatentRegionPair] for reporting

    def labels_of(self, idx: int):
        if idx < 0:
            return frozenset()
        return self.cell_labels[idx]


def count_over_sets(regions) -> int:
    n = 0
    for spec in regions:
        if spec.mode in ("avoid", "full"):
            n += len(spec.parts)
        if spec.mode in ("reach", "full"):
            n += len(spec.negation_parts)
    return n


@dataclass
class LabelGeometry:
    """Latent geometry every labeling decision is made from."""

    ap: list
    modes: dict  # name -> mode
    unders: dict  # name -> hull (reach/full regions)
    part_overs: dict  # name -> [inflated hulls] (avoid/full regions)
    negation_overs: dict  # name -> [inflated hulls] (reach/full regions)
    pairs: list  # [LatentRegionPair]


def map_label_geometry(regions, encode, N: int, delta_total: float, L_h: float,
                       rng, domain_sampler: RegionSampler | None = None,
                       cover_check_n: int = 2000) -> LabelGeometry:
    """Map every region and complement part into the latent space.

    delta_total is split evenly (union bound) across every inflated hull the
    labels rely on. Raises IncompleteNegationCover if sampled domain points
    outside a reach region are not covered by its negation parts.
    """
    n_over = count_over_sets(regions)
    delta_each = delta_total / max(n_over, 1)
    geo = LabelGeometry(ap=[], modes={}, unders={}, part_overs={},
                        negation_overs={}, pairs=[])
    for spec in regions:
        geo.modes[spec.name] = spec.mode
        if spec.mode in ("reach", "full"):
            geo.ap.append(spec.name)
        if spec.mode in ("avoid", "full"):
            geo.ap.append(f"n_{spec.name}")

        part_unders, part_overs = [], []
        eps_used = 0.0
        if spec.mode in ("avoid", "full"):
            for part in spec.parts:
                u, o, eps = map_region(part, encode, N, delta_each, L_h, rng)
                part_unders.append(u)
                part_overs.append(o)
                eps_used = max(eps_used, eps)
            geo.part_overs[spec.name] = part_overs

        under = None
        negation_overs = []
        if spec.mode in ("reach", "full"):
            part = spec.parts[0]
            pts = part.draw(N, rng)
            under = convex_hull(encode(pts))
            for npart in spec.negation_parts:
                _, o, eps = map_region(npart, encode, N, delta_each, L_h, rng)
                negation_overs.append(o)
                eps_used = max(eps_used, eps)
            geo.unders[spec.name] = under
            geo.negation_overs[spec.name] = negation_overs
            if domain_sampler is not None and cover_check_n > 0:
                _check_negation_cover(spec, domain_sampler, cover_check_n, rng)

        geo.pairs.append(LatentRegionPair(
            label=spec.name,
            under=under if under is not None else (part_unders[0] if part_unders else None),
            overs=part_overs,
            negation_overs=negation_overs,
            epsilon=eps_used,
        ))
    return geo


def assign_labels(geo: LabelGeometry, partition: Partition) -> LabelingMap:
    """Conservative cell labeling from mapped geometry: positive labels need
    containment in the under set and disjointness from every complement
    over-approximation; negation labels need disjointness from the region's
    own over-approximations. Boundary cells never get positive labels."""
    cell_labels = []
    for i in range(partition.n_cells):
        lo, hi = partition.los[i], partition.his[i]
        labs = set()
        for name, under in geo.unders.items():
            if partition.boundary[i]:
                continue
            if not rect_inside_polygon(lo, hi, under):
                continue
            if any(rect_intersects_polygon(lo, hi, o) for o in geo.negation_overs[name]):
                continue
            labs.add(name)
        for name, overs in geo.part_overs.items():
            if not any(rect_intersects_polygon(lo, hi, o) for o in overs):
                labs.add(f"n_{name}")
        cell_labels.append(frozenset(labs))
    return LabelingMap(ap=list(geo.ap), cell_labels=cell_labels, region_pairs=geo.pairs)


def build_labels(regions, partition: Partition, encode, N: int, delta_total: float,
                 L_h: float, rng, domain_sampler: RegionSampler | None = None,
                 cover_check_n: int = 2000) -> LabelingMap:
    """map_label_geometry followed by assign_labels (one-shot convenience)."""
    geo = map_label_geometry(regions, encode, N, delta_total, L_h, rng,
                             domain_sampler, cover_check_n)
    return assign_labels(geo, partition)


def _check_negation_cover(spec: RegionSpec, domain_sampler: RegionSampler, n, rng):
    pts = domain_sampler.draw(n, rng)
    in_region = spec.parts[0].contains(pts)
    outside = pts[~in_region]
    if outside.shape[0] == 0:
        return
    covered = np.zeros(outside.shape[0], dtype=bool)
    for npart in spec.negation_parts:
        covered |= npart.contains(outside)
    if not covered.all():
        frac = 1.0 - covered.mean()
        raise IncompleteNegationCover(
            f"negation parts of {spec.name!r} miss {frac:.1%} of sampled complement points")
