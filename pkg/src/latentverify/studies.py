"""Case-study glue: region samplers, LTL formulas, runtime monitors, and
decode search spaces for each benchmark system (all in the normalized
coordinates the pipeline works in).

Region samplers draw uniformly from a convex box in the system's sampling
parameterization and embed onto the state manifold; their Lipschitz factor
combines the raw embedding bound with the parameter/ambient normalization
ratio so the inflation radius stays valid for the parameter dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decode import SearchSpace
from .ltl import parse, relabel_negations, to_nnf
from .regions import RegionSampler, RegionSpec
from .systems import SystemSpec, default_lidar_env, in_any_rect, make_system


def _param_scale(spec: SystemSpec) -> float:
    return float(np.linalg.norm((spec.param_hi - spec.param_lo) / 2.0))


def _project_params(spec: SystemSpec, x_norm):
    """Normalized ambient states -> raw sampling parameters."""
    x_raw = spec.denormalize(np.atleast_2d(x_norm))
    return x_raw[:, : spec.sample_dim]


def box_region_sampler(spec: SystemSpec, lo_raw, hi_raw) -> RegionSampler:
    """Uniform sampler of a raw-coordinate parameter box, embedded and
    normalized; membership tests the parameter projection of a state."""
    lo = np.asarray(lo_raw, dtype=float)
    hi = np.asarray(hi_raw, dtype=float)

    def draw(n, rng):
        params = rng.uniform(lo, hi, size=(n, spec.sample_dim))
        return spec.normalize(spec.embed_raw(params))

    def contains(x_norm):
        p = _project_params(spec, x_norm)
        return np.all((p >= lo - 1e-12) & (p <= hi + 1e-12), axis=1)

    factor = spec.embed_lipschitz * _param_scale(spec) / spec.scale
    return RegionSampler(draw=draw, sample_dim=spec.sample_dim, contains=contains,
                         lipschitz_factor=factor)


def domain_sampler_for(spec: SystemSpec) -> RegionSampler:
    def draw(n, rng):
        return spec.sample_states(n, rng)

    def contains(x_norm):
        return np.ones(np.atleast_2d(x_norm).shape[0], dtype=bool)

    factor = spec.embed_lipschitz * _param_scale(spec) / spec.scale
    return RegionSampler(draw=draw, sample_dim=spec.sample_dim, contains=contains,
                         lipschitz_factor=factor)


def complement_slabs(spec: SystemSpec, lo_raw, hi_raw):
    """Convex cover of (parameter box) minus (inner box): two slabs per axis."""
    lo = np.asarray(lo_raw, dtype=float)
    hi = np.asarray(hi_raw, dtype=float)
    slabs = []
    for d in range(spec.sample_dim):
        if lo[d] > spec.param_lo[d] + 1e-12:
            s_lo, s_hi = spec.param_lo.copy(), spec.param_hi.copy()
            s_hi[d] = lo[d]
            slabs.append(box_region_sampler(spec, s_lo, s_hi))
        if hi[d] < spec.param_hi[d] - 1e-12:
            s_lo, s_hi = spec.param_lo.copy(), spec.param_hi.copy()
            s_lo[d] = hi[d]
            slabs.append(box_region_sampler(spec, s_lo, s_hi))
    return slabs


@dataclass
class Study:
    name: str
    system: SystemSpec
    regions: list  # [RegionSpec]
    formula_text: str
    prop_mapping: dict  # region proposition -> negation proposition
    goal_boxes_raw: dict  # name -> (lo, hi) in parameter coordinates
    unsafe_rects_raw: list  # parameter-coordinate obstacle boxes
    horizon: int = 200
    reach_avoid: bool = True  # False: safety + multiple eventualities

    def phi_bar(self):
        return relabel_negations(to_nnf(parse(self.formula_text)), self.prop_mapping)

    def domain_sampler(self) -> RegionSampler:
        return domain_sampler_for(self.system)

    def search_space(self) -> SearchSpace:
        spec = self.system
        if spec.name == "Nonlinear3D":
            # identity embedding: search directly in normalized states
            return SearchSpace(lo=spec.normalize(spec.param_lo),
                               hi=spec.normalize(spec.param_hi))

        def embed(v):
            return spec.normalize(spec.embed_raw(v))

        def project(x_norm):
            return _project_params(spec, x_norm)[0]

        return SearchSpace(lo=spec.param_lo, hi=spec.param_hi,
                           embed=embed, project=project)

    # ------------------------------------------------------------------
    # runtime monitoring (raw parameter projections of normalized states)

    def in_domain(self, x_norm):
        """Valid-state test backing the outlier remap at monitoring time."""
        ok = self.system.in_domain(x_norm)
        if self.unsafe_rects_raw:
            p = _project_params(self.system, x_norm)
            ok &= ~in_any_rect(p, self.unsafe_rects_raw)
        return ok

    def goal_hit(self, x_norm, name):
        lo, hi = self.goal_boxes_raw[name]
        p = _project_params(self.system, x_norm)
        return np.all((p >= lo) & (p <= hi), axis=1)

    def unsafe(self, x_norm):
        bad = ~self.system.in_domain(x_norm)
        if self.unsafe_rects_raw:
            p = _project_params(self.system, x_norm)
            bad |= in_any_rect(p, self.unsafe_rects_raw)
        return bad

    def simulate(self, x0_norm, steps=None):
        """Trajectory of normalized states, shape (steps+1, k, n_x)."""
        steps = steps or self.horizon
        x = np.atleast_2d(np.asarray(x0_norm, dtype=float))
        out = [x]
        for _ in range(steps):
            x = self.system.step(x)
            out.append(x)
        return np.stack(out)

    def monitor_trace(self, traj):
        """Satisfaction of the study formula on one monitored trajectory.

        Reach-avoid: the goal must be hit before any unsafe visit within the
        horizon. Safety-plus-eventualities: no unsafe visit over the horizon
        and every goal visited.
        """
        traj = np.asarray(traj)
        unsafe = self.unsafe(traj)
        if self.reach_avoid:
            name = next(iter(self.goal_boxes_raw))
            goal = self.goal_hit(traj, name)
            hits = np.flatnonzero(goal)
            if hits.size == 0:
                return False
            k = hits[0]
            return not unsafe[:k].any()
        if unsafe.any():
            return False
        return all(self.goal_hit(traj, name).any() for name in self.goal_boxes_raw)


def _study_nonlinear3d(goal_half=0.2) -> Study:
    spec = make_system("Nonlinear3D")
    g = goal_half * np.ones(3)
    goal = box_region_sampler(spec, -g, g)
    regions = [
        RegionSpec(name="goal", mode="reach", parts=[goal],
                   negation_parts=complement_slabs(spec, -g, g)),
        RegionSpec(name="unsafe", mode="avoid", parts=[]),
    ]
    return Study(
        name="nonlinear3d", system=spec, regions=regions,
        formula_text="!unsafe U goal",
        prop_mapping={"unsafe": "n_unsafe", "goal": "n_goal"},
        goal_boxes_raw={"goal": (-g, g)},
        unsafe_rects_raw=[],
    )


def _study_nonlinear6d(goal_half=0.2, obstacle=True) -> Study:
    spec = make_system("Nonlinear6D")
    g = goal_half * np.ones(3)
    goal = box_region_sampler(spec, -g, g)
    regions = [RegionSpec(name="goal", mode="reach", parts=[goal],
                          negation_parts=complement_slabs(spec, -g, g))]
    rects = []
    if obstacle:
        o_lo = np.array([0.3, -0.7, -0.25])
        o_hi = np.array([0.6, -0.3, 0.25])
        rects = [(o_lo, o_hi)]
        regions.append(RegionSpec(name="unsafe", mode="avoid",
                                  parts=[box_region_sampler(spec, o_lo, o_hi)]))
    else:
        regions.append(RegionSpec(name="unsafe", mode="avoid", parts=[]))
    return Study(
        name="nonlinear6d", system=spec, regions=regions,
        formula_text="!unsafe U goal",
        prop_mapping={"unsafe": "n_unsafe", "goal": "n_goal"},
        goal_boxes_raw={"goal": (-g, g)},
        unsafe_rects_raw=rects,
    )


def _study_lidar(two_goals=False) -> Study:
    env = default_lidar_env(two_goals=two_goals)
    spec = make_system("Lidar26D", env=env)
    regions = []
    goal_boxes = {}
    names = ["goalA", "goalB"] if two_goals else ["goal"]
    for name, (center, radius) in zip(names, env.goals):
        lo, hi = center - radius, center + radius
        goal_boxes[name] = (lo, hi)
        regions.append(RegionSpec(name=name, mode="reach",
                                  parts=[box_region_sampler(spec, lo, hi)],
                                  negation_parts=complement_slabs(spec, lo, hi)))
    rects = [(np.asarray(r)[0], np.asarray(r)[1]) for r in env.obstacles]
    regions.append(RegionSpec(
        name="unsafe", mode="avoid",
        parts=[box_region_sampler(spec, r[0], r[1]) for r in rects]))
    if two_goals:
        formula = "G(!unsafe) & F(goalA) & F(goalB)"
        mapping = {"unsafe": "n_unsafe", "goalA": "n_goalA", "goalB": "n_goalB"}
    else:
        formula = "!unsafe U goal"
        mapping = {"unsafe": "n_unsafe", "goal": "n_goal"}
    return Study(
        name="lidar26d_twogoals" if two_goals else "lidar26d", system=spec,
        regions=regions, formula_text=formula, prop_mapping=mapping,
        goal_boxes_raw=goal_boxes, unsafe_rects_raw=rects,
        reach_avoid=not two_goals,
    )


def make_study(system_cfg: dict) -> Study:
    name = system_cfg.get("name", "Nonlinear3D")
    if name == "Nonlinear3D":
        return _study_nonlinear3d(goal_half=system_cfg.get("goal_half", 0.2))
    if name == "Nonlinear6D":
        return _study_nonlinear6d(goal_half=system_cfg.get("goal_half", 0.2),
                                  obstacle=system_cfg.get("obstacle", True))
    if name == "Lidar26D":
        return _study_lidar(two_goals=system_cfg.get("two_goals", False))
    raise ValueError(f"unknown system {name!r}")
