import math

import numpy as np
import pytest

from latentverify import DomainError, InvalidFractions
from latentverify.systems import (
    LidarEnv,
    THETA_GAIN,
    controller,
    default_lidar_env,
    embed_lidar,
    lift_3d_to_6d,
    load_dataset_csv,
    make_system,
    raycast,
    sample_dataset,
    save_dataset_csv,
    split_dataset,
    step_3d,
    step_6d,
    step_lidar,
    theta,
)


def test_origin_is_fixed_point():
    assert np.allclose(step_3d(np.zeros(3)), np.zeros(3))


def test_theta_at_zero():
    assert theta(0.0) == pytest.approx(math.pi / 7.0)


def test_step_3d_hand_evaluated():
    # direct evaluation of the two-line formula at (1, 0, 0)
    th = (math.pi / 7.0) * math.cos(0.0)
    expected = np.array([0.7 * math.cos(th), 0.7 * math.sin(th), 0.0])
    assert np.allclose(step_3d(np.array([1.0, 0.0, 0.0])), expected, atol=1e-15)


def test_step_3d_contraction():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(1000, 3))
    y = step_3d(x)
    assert np.all(np.linalg.norm(y, axis=1) <= 0.7 * np.linalg.norm(x, axis=1) + 1e-12)


def test_step_6d_consistent_with_step_3d():
    rng = np.random.default_rng(1)
    s = rng.uniform(-1, 1, size=(200, 3))
    x6 = lift_3d_to_6d(s)
    out6 = step_6d(x6)
    out3 = step_3d(s)
    assert np.allclose(out6[:, :3], out3, atol=1e-9)


def test_step_6d_linear_third_row():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(50, 6))
    assert np.allclose(step_6d(x)[:, 2], 0.7 * x[:, 2])


def test_step_6d_domain_error():
    x = np.zeros(6)
    x[3] = 1.5
    with pytest.raises(DomainError):
        step_6d(x)


def test_obstacle_membership_6d():
    # the displayed obstacle box contains this point
    x = np.array([0.45, -0.5, 0.0])
    assert (0.3 <= x[0] <= 0.6) and (-0.7 <= x[1] <= -0.3) and (-0.25 <= x[2] <= 0.25)


# ---------------------------------------------------------------------------
# lidar


def _empty_env():
    return LidarEnv(bounds=np.array([[-20.0, -20.0], [20.0, 20.0]]))


def test_raycast_empty_env_max_range():
    env = _empty_env()
    r = raycast(np.zeros(2), env)
    assert r.shape == (24,)
    assert np.allclose(r, 5.0)


def test_raycast_wall_ahead():
    env = _empty_env()
    env.obstacles = [np.array([[1.0, -0.5], [2.0, 0.5]])]
    r = raycast(np.zeros(2), env)
    assert r[0] == pytest.approx(1.0, abs=1e-12)


def _raymarch_oracle(pos, env, step=1e-4):
    """Brute-force marching oracle for a single position."""
    out = np.empty(env.n_beams)
    from latentverify.systems import in_any_rect

    for k, hd in enumerate(env.headings()):
        d = np.array([math.cos(hd), math.sin(hd)])
        t = 0.0
        while t < env.max_range:
            p = pos + (t + step) * d
            if in_any_rect(p[None, :], env.obstacles)[0]:
                break
            if np.any(p < env.bounds[0]) or np.any(p > env.bounds[1]):
                break
            t += step
        out[k] = min(t, env.max_range)
    return out


def test_raycast_symmetric_layout_and_oracle():
    env = _empty_env()
    # layout symmetric about the x axis
    env.obstacles = [np.array([[1.5, -1.0], [2.5, 1.0]]), np.array([[-3.0, -0.8], [-2.0, 0.8]])]
    r = raycast(np.zeros(2), env)
    # beam k reflects to beam (24 - k) % 24 under y -> -y
    for k in range(24):
        assert r[k] == pytest.approx(r[(24 - k) % 24], abs=1e-9)
    oracle = _raymarch_oracle(np.zeros(2), env)
    assert np.allclose(r, oracle, atol=2e-4)


def test_raycast_ranges_bounded():
    env = default_lidar_env()
    rng = np.random.default_rng(3)
    pos = rng.uniform(env.bounds[0], env.bounds[1], size=(200, 2))
    r = raycast(pos, env)
    assert np.all(r >= 0.0) and np.all(r <= env.max_range)


def test_controller_quiet_at_goal():
    env = _empty_env()
    env.goals = [(np.array([0.0, 0.0]), 0.5)]
    x = np.concatenate([np.zeros(2), raycast(np.zeros(2), env)])
    out = step_lidar(x, env)
    assert np.allclose(out[:2], 0.0, atol=1e-6)


def test_step_lidar_ranges_definitional():
    env = default_lidar_env()
    x = embed_lidar(np.array([2.0, 2.0]), env)[0]
    out = step_lidar(x, env)
    assert np.allclose(out[2:], raycast(out[:2], env))


def test_controller_reaches_goal():
    env = _empty_env()
    env.goals = [(np.array([0.0, 0.0]), 0.5)]
    x = embed_lidar(np.array([2.0, 0.0]), env)[0]
    for _ in range(100):
        x = step_lidar(x, env)
    assert np.linalg.norm(x[:2]) < 0.2


# ---------------------------------------------------------------------------
# datasets


def test_dataset_reproducible():
    spec = make_system("Nonlinear3D")
    d1 = sample_dataset(spec, 100, seed=7)
    d2 = sample_dataset(spec, 100, seed=7)
    assert np.array_equal(d1.x, d2.x) and np.array_equal(d1.x_plus, d2.x_plus)


def test_dataset_in_unit_ball():
    for name in ("Nonlinear3D", "Nonlinear6D", "Lidar26D"):
        spec = make_system(name)
        d = sample_dataset(spec, 200, seed=1)
        assert np.all(np.linalg.norm(d.x, axis=1) <= 1.0 + 1e-12)


def test_dataset_pairs_exact():
    spec = make_system("Nonlinear3D")
    d = sample_dataset(spec, 64, seed=2)
    assert np.allclose(d.x_plus, spec.step(d.x), atol=0)


def test_split_sizes_and_disjoint():
    spec = make_system("Nonlinear3D")
    d = sample_dataset(spec, 1000, seed=3)
    a, b, c = split_dataset(d, (0.5, 0.4, 0.1))
    assert (len(a), len(b), len(c)) == (500, 400, 100)
    stacked = np.vstack([a.x, b.x, c.x])
    assert np.unique(stacked, axis=0).shape[0] == 1000


def test_split_desk_scale_sizes():
    spec = make_system("Nonlinear3D")
    d = sample_dataset(spec, 4500, seed=4)
    a, b, c = split_dataset(d, (4 / 9, 4 / 9, 1 / 9))
    assert (len(a), len(b), len(c)) == (2000, 2000, 500)


def test_split_invalid_fractions():
    spec = make_system("Nonlinear3D")
    d = sample_dataset(spec, 10, seed=5)
    with pytest.raises(InvalidFractions):
        split_dataset(d, (0.9, 0.5, 0.1))


def test_csv_round_trip(tmp_path):
    spec = make_system("Nonlinear3D")
    d = sample_dataset(spec, 20, seed=6)
    path = tmp_path / "d.csv"
    save_dataset_csv(d, path)
    header = path.read_text().splitlines()[0]
    assert header == "x_0,x_1,x_2,xp_0,xp_1,xp_2"
    loaded = load_dataset_csv(path)
    assert np.allclose(loaded.x, d.x, atol=0)
    assert np.allclose(loaded.x_plus, d.x_plus, atol=0)
