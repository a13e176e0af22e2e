"""Benchmark dynamical systems and i.i.d. dataset generation.

Three closed-loop systems are provided: a 3D nonlinear rotation/contraction,
its over-parameterized 6D lift (sin/cos observation terms), and a 26D
single-integrator whose state is (position, 24 lidar ranges) under a scripted
potential-field controller.

All downstream modules operate in normalized coordinates: the ambient domain
box is scaled (about its center) so it fits inside the unit ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import DomainError, InvalidFractions

THETA_GAIN = math.pi / 7.0
CONTRACTION = 0.7


def theta(a):
    """Rotation angle of the 3D benchmark at third coordinate a."""
    return THETA_GAIN * np.cos(a)


def step_3d(x):
    """One step of the 3D rotation/contraction benchmark (vectorized)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    th = theta(x[:, 2])
    c, s = np.cos(th), np.sin(th)
    out = np.empty_like(x)
    out[:, 0] = CONTRACTION * (x[:, 0] * c - x[:, 1] * s)
    out[:, 1] = CONTRACTION * (x[:, 0] * s + x[:, 1] * c)
    out[:, 2] = CONTRACTION * x[:, 2]
    return out[0] if single else out


def step_6d(x):
    """One step of the 6D lift; requires x[3] in [-1, 1] (arccos argument)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if np.any(np.abs(x[:, 3]) > 1.0 + 1e-12):
        raise DomainError("x[3] outside [-1, 1]")
    x3 = np.clip(x[:, 3], -1.0, 1.0)
    out = np.empty_like(x)
    out[:, 0] = CONTRACTION * (x[:, 0] * x[:, 4] - x[:, 1] * x[:, 5])
    out[:, 1] = CONTRACTION * (x[:, 0] * x[:, 5] + x[:, 1] * x[:, 4])
    out[:, 2] = CONTRACTION * x[:, 2]
    out[:, 3] = np.cos(CONTRACTION * x[:, 2])
    inner = THETA_GAIN * np.cos(CONTRACTION * np.arccos(x3))
    out[:, 4] = np.cos(inner)
    out[:, 5] = np.sin(inner)
    return out[0] if single else out


def lift_3d_to_6d(s):
    """Embed a 3D state onto the kinematic manifold of the 6D system."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    th = theta(s[:, 2])
    out = np.column_stack([s[:, 0], s[:, 1], s[:, 2], np.cos(s[:, 2]), np.cos(th), np.sin(th)])
    return out


# Jacobian column bound of the 6D lift w.r.t. its 3 free coordinates:
# sqrt(1 + 1 + (pi/7)^2) rounded up.
LIFT_6D_LIPSCHITZ = 1.5


# ---------------------------------------------------------------------------
# Lidar environment


@dataclass
class LidarEnv:
    """2D world for the 26D benchmark: axis-aligned rectangular obstacles,
    goal discs, a bounding box, and a 24-beam range sensor."""

    bounds: np.ndarray  # (2,2) [[xlo,ylo],[xhi,yhi]]
    obstacles: list = field(default_factory=list)  # list of (2,2) arrays
    goals: list = field(default_factory=list)  # list of (center(2,), radius)
    max_range: float = 5.0
    n_beams: int = 24
    dt: float = 0.1
    u_max: float = 1.0
    k_att: float = 2.0
    k_rep: float = 0.15
    d_safe: float = 0.6
    attract_goal: int = 0  # index of the goal the controller steers to

    def headings(self):
        k = np.arange(self.n_beams)
        return 2.0 * np.pi * k / self.n_beams


def _ray_rect_dist(pos, dirs, rect):
    """Distance along each ray to an axis-aligned rect; inf if missed.

    pos: (m,2), dirs: (n,2) unit vectors -> (m,n) distances.
    """
    lo, hi = rect[0], rect[1]
    m = pos.shape[0]
    n = dirs.shape[0]
    p = pos[:, None, :]  # (m,1,2)
    d = dirs[None, :, :]  # (1,n,2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None, None, :] - p) / d
        t2 = (hi[None, None, :] - p) / d
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    # rays parallel to an axis: slab degenerates to a containment test
    par = np.abs(d) < 1e-300
    inside = (p >= lo) & (p <= hi)
    tlo = np.where(par, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(par, np.where(inside, np.inf, -np.inf), thi)
    tmin = tlo.max(axis=2)
    tmax = thi.min(axis=2)
    hit = (tmax >= tmin) & (tmax >= 0.0)
    t = np.where(tmin >= 0.0, tmin, 0.0)  # starting inside -> range 0
    return np.where(hit, t, np.inf).reshape(m, n)


def raycast(pos, env: LidarEnv):
    """Ranges of all beams from pos (vectorized over a batch of positions).

    Beam k has heading 2*pi*k/n_beams; range is the distance to the nearest
    obstacle or the domain boundary, clamped to [0, max_range].
    """
    pos = np.asarray(pos, dtype=float)
    single = pos.ndim == 1
    pos = np.atleast_2d(pos)
    hd = env.headings()
    dirs = np.column_stack([np.cos(hd), np.sin(hd)])
    dist = np.full((pos.shape[0], env.n_beams), np.inf)
    for rect in env.obstacles:
        dist = np.minimum(dist, _ray_rect_dist(pos, dirs, np.asarray(rect, dtype=float)))
    # domain walls: exit distance of the bounding box
    lo, hi = env.bounds[0], env.bounds[1]
    p = pos[:, None, :]
    d = dirs[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None, None, :] - p) / d
        t2 = (hi[None, None, :] - p) / d
    texit = np.where(np.abs(d) < 1e-300, np.inf, np.maximum(t1, t2)).min(axis=2)
    dist = np.minimum(dist, np.maximum(texit, 0.0))
    ranges = np.clip(dist, 0.0, env.max_range)
    return ranges[0] if single else ranges


def controller(pos, ranges, env: LidarEnv):
    """Potential-field control: goal attraction + beam-wise repulsion."""
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    ranges = np.atleast_2d(np.asarray(ranges, dtype=float))
    goal = env.goals[env.attract_goal][0]
    u = env.k_att * (goal[None, :] - pos)
    hd = env.headings()
    dirs = np.column_stack([np.cos(hd), np.sin(hd)])
    rho = np.maximum(ranges, 0.05)
    mag = np.where(ranges < env.d_safe, env.k_rep * (1.0 / rho - 1.0 / env.d_safe), 0.0)
    u -= mag @ dirs
    nrm = np.linalg.norm(u, axis=1, keepdims=True)
    scale = np.where(nrm > env.u_max, env.u_max / np.maximum(nrm, 1e-300), 1.0)
    return u * scale


def step_lidar(x, env: LidarEnv):
    """One closed-loop step of the 26D system; positions clamp to bounds."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    pos, ranges = x[:, :2], x[:, 2:]
    u = controller(pos, ranges, env)
    new_pos = np.clip(pos + env.dt * u, env.bounds[0], env.bounds[1])
    new_ranges = raycast(new_pos, env)
    out = np.column_stack([new_pos, new_ranges])
    return out[0] if single else out


def embed_lidar(pos, env: LidarEnv):
    """Manifold embedding: position -> full 26D state."""
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    return np.column_stack([pos, raycast(pos, env)])


def in_any_rect(pos, rects):
    pos = np.atleast_2d(pos)
    hit = np.zeros(pos.shape[0], dtype=bool)
    for rect in rects:
        lo, hi = np.asarray(rect[0]), np.asarray(rect[1])
        hit |= np.all((pos >= lo) & (pos <= hi), axis=1)
    return hit


# ---------------------------------------------------------------------------
# System specs


@dataclass
class SystemSpec:
    """A benchmark system plus everything needed to sample and simulate it.

    Sampling is parameterized by ``sample_dim`` free coordinates (the full
    state for the 3D system, the 3 governing coordinates for the 6D lift,
    the 2D position for lidar); ``embed`` lifts parameters to ambient states.
    Normalization scales ambient coordinates by 1/scale about ``center`` so
    the ambient domain box fits in the unit ball.
    """

    name: str
    state_dim: int
    sample_dim: int
    box_lo: np.ndarray  # ambient box, raw coordinates
    box_hi: np.ndarray
    param_lo: np.ndarray  # sampling-parameter box, raw coordinates
    param_hi: np.ndarray
    embed_lipschitz: float = 1.0
    env: LidarEnv | None = None

    def __post_init__(self):
        half = (self.box_hi - self.box_lo) / 2.0
        self.center = (self.box_hi + self.box_lo) / 2.0
        self.scale = float(np.linalg.norm(half))

    # raw-coordinate operations -------------------------------------------
    def step_raw(self, x):
        if self.name == "Nonlinear3D":
            return step_3d(x)
        if self.name == "Nonlinear6D":
            return step_6d(x)
        return step_lidar(x, self.env)

    def embed_raw(self, params):
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if self.name == "Nonlinear3D":
            return params
        if self.name == "Nonlinear6D":
            return lift_3d_to_6d(params)
        return embed_lidar(params, self.env)

    # normalized-coordinate operations ------------------------------------
    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.scale + self.center

    def step(self, x):
        return self.normalize(self.step_raw(self.denormalize(x)))

    def sample_params_raw(self, n, rng, reject=None):
        """Uniform draw from the parameter box, with optional rejection."""
        out = np.empty((0, self.sample_dim))
        while out.shape[0] < n:
            cand = rng.uniform(self.param_lo, self.param_hi, size=(n, self.sample_dim))
            if reject is not None:
                cand = cand[~reject(cand)]
            out = np.vstack([out, cand])
        return out[:n]

    def sample_states(self, n, rng):
        """n i.i.d. states on the system's domain, normalized coordinates."""
        params = self.sample_params_raw(n, rng, reject=self._invalid_params)
        return self.normalize(self.embed_raw(params))

    def _invalid_params(self, params):
        # lidar robot positions inside an obstacle are not valid states
        if self.name == "Lidar26D" and self.env is not None and self.env.obstacles:
            return in_any_rect(params, self.env.obstacles)
        return np.zeros(params.shape[0], dtype=bool)

    def in_domain(self, x_norm):
        """Membership of normalized states in the ambient domain box."""
        x = self.denormalize(np.atleast_2d(x_norm))
        return np.all((x >= self.box_lo - 1e-9) & (x <= self.box_hi + 1e-9), axis=1)


def make_system(name, env=None) -> SystemSpec:
    if name == "Nonlinear3D":
        b = np.ones(3)
        return SystemSpec("Nonlinear3D", 3, 3, -b, b, -b, b)
    if name == "Nonlinear6D":
        b3 = np.ones(3)
        b6 = np.ones(6)
        return SystemSpec("Nonlinear6D", 6, 3, -b6, b6, -b3, b3,
                          embed_lipschitz=LIFT_6D_LIPSCHITZ)
    if name == "Lidar26D":
        if env is None:
            env = default_lidar_env()
        lo2, hi2 = env.bounds[0], env.bounds[1]
        box_lo = np.concatenate([lo2, np.zeros(env.n_beams)])
        box_hi = np.concatenate([hi2, np.full(env.n_beams, env.max_range)])
        return SystemSpec("Lidar26D", 2 + env.n_beams, 2, box_lo, box_hi,
                          lo2, hi2, embed_lipschitz=4.0, env=env)
    raise ValueError(f"unknown system {name!r}")


def default_lidar_env(two_goals=False) -> LidarEnv:
    """Documented default world: 10x10 box, one obstacle, one or two goals.

    The single-goal layout keeps a wide margin between the obstacle and the
    straight paths to the goal; the two-goal layout places goal A in the
    shadow cone of goal B so some (but not all) streamlines cross both.
    """
    bounds = np.array([[0.0, 0.0], [10.0, 10.0]])
    obstacle = np.array([[4.0, 6.5], [6.0, 8.5]])
    if two_goals:
        goals = [(np.array([3.5, 3.0]), 0.8), (np.array([7.0, 3.0]), 0.8)]
        return LidarEnv(bounds=bounds, obstacles=[obstacle], goals=goals, attract_goal=1)
    goals = [(np.array([7.5, 2.5]), 0.8)]
    return LidarEnv(bounds=bounds, obstacles=[obstacle], goals=goals, attract_goal=0)


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class Dataset:
    """Noise-free (x, f(x)) pairs in normalized coordinates."""

    x: np.ndarray
    x_plus: np.ndarray
    seed: int
    split: str = "Learning"

    def __len__(self):
        return self.x.shape[0]


def sample_dataset(spec: SystemSpec, n: int, seed: int) -> Dataset:
    """n i.i.d. pairs, x uniform on the normalized domain, x_plus = f(x)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = spec.sample_states(n, rng)
    return Dataset(x=x, x_plus=spec.step(x), seed=seed)


def split_dataset(d: Dataset, fractions) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint (Learning, Regression, Prediction) splits of floor(f*n) sizes."""
    fracs = tuple(float(f) for f in fractions)
    if len(fracs) != 3 or any(f <= 0 for f in fracs) or sum(fracs) > 1.0 + 1e-12:
        raise InvalidFractions(f"bad fractions {fractions}")
    n = len(d)
    sizes = [int(math.floor(f * n)) for f in fracs]
    names = ["Learning", "Regression", "Prediction"]
    out = []
    start = 0
    for sz, name in zip(sizes, names):
        sl = slice(start, start + sz)
        out.append(Dataset(x=d.x[sl], x_plus=d.x_plus[sl], seed=d.seed, split=name))
        start += sz
    return tuple(out)


def save_dataset_csv(d: Dataset, path):
    n_x = d.x.shape[1]
    header = ",".join([f"x_{i}" for i in range(n_x)] + [f"xp_{i}" for i in range(n_x)])
    rows = [header]
    for xi, xpi in zip(d.x, d.x_plus):
        rows.append(",".join(f"{v:.17g}" for v in np.concatenate([xi, xpi])))
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def load_dataset_csv(path, seed=0, split="Learning") -> Dataset:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    n_x = data.shape[1] // 2
    return Dataset(x=data[:, :n_x], x_plus=data[:, n_x:], seed=seed, split=split)
