import numpy as np
import pytest

from latentverify.abstraction import (
    Nts,
    build_nts,
    nts_from_text,
    nts_to_text,
    refine,
)
from latentverify.geometry import convex_hull
from latentverify.gp import SeKernel, make_model, set_rkhs_constants
from latentverify.ltl import CheckResult, check, parse
from latentverify.regions import LabelingMap, partition_domain


def square_domain(side=1.0):
    s = side
    return convex_hull(np.array([[0, 0], [s, 0], [s, s], [0, s]], dtype=float))


def gp_on_map(fn, rng, m=80, jitter=1e-8, B=0.5, domain=(0.0, 1.0)):
    """Fit-free GP trained on z+ = fn(z) over the unit square, c ignored."""
    Z = rng.uniform(domain[0], domain[1], (m, 2))
    c = rng.uniform(0, 1, m)
    X = np.column_stack([Z, c])
    Y = fn(Z)
    kernels = [SeKernel(0.25, np.array([0.4, 0.4, 5.0])) for _ in range(2)]
    model = make_model(X, Y, kernels, jitter=jitter)
    set_rkhs_constants(model, B=[B, B])
    return model


def empty_labeling(part):
    return LabelingMap(ap=[], cell_labels=[frozenset()] * part.n_cells, region_pairs=[])


def test_identity_system_has_self_loops():
    rng = np.random.default_rng(0)
    model = gp_on_map(lambda z: z, rng, m=150)
    part = partition_domain(square_domain(), (3, 3))
    nts = build_nts(part, empty_labeling(part), model, n_u=2, grid=(3, 3, 2))
    for q in range(part.n_cells):
        assert nts.T[q, q], f"cell {q} lost its self-loop"


def test_qu_absorbing_row():
    rng = np.random.default_rng(1)
    model = gp_on_map(lambda z: z, rng)
    part = partition_domain(square_domain(), (2, 2))
    nts = build_nts(part, empty_labeling(part), model, n_u=2, grid=(2, 2, 2))
    qu = nts.q_u
    assert nts.T[qu, qu]
    assert nts.T[qu, :qu].sum() == 0


def test_constant_map_successors_tight():
    rng = np.random.default_rng(2)
    target = np.array([0.52, 0.52])
    model = gp_on_map(lambda z: np.tile(target, (len(z), 1)), rng, m=220, B=0.1)
    part = partition_domain(square_domain(), (4, 4))
    nts = build_nts(part, empty_labeling(part), model, n_u=2, grid=(3, 3, 2))
    # every cell's successors only around the target cell
    t_idx = part.locate(target[None, :])[0]
    for q in range(part.n_cells):
        succ = set(np.flatnonzero(nts.T[q, : part.n_cells]))
        assert t_idx in succ
        centers = 0.5 * (part.los + part.his)
        for s in succ:
            assert np.linalg.norm(centers[s] - target) <= 0.5, (q, s)


def test_every_state_has_successor():
    rng = np.random.default_rng(3)
    model = gp_on_map(lambda z: 0.5 + 0.4 * (z - 0.5), rng)
    part = partition_domain(square_domain(), (3, 3))
    nts = build_nts(part, empty_labeling(part), model, n_u=3, grid=(3, 3, 2))
    assert np.all(nts.T.sum(axis=1) >= 1)


def test_transition_soundness_sampling():
    rng = np.random.default_rng(4)
    fn = lambda z: 0.5 + 0.45 * (z - 0.5) + 0.03 * np.sin(8 * z)
    model = gp_on_map(fn, rng, m=250, B=1.0)
    part = partition_domain(square_domain(), (4, 4))
    nts = build_nts(part, empty_labeling(part), model, n_u=2, grid=(4, 4, 2))
    pts = rng.uniform(0, 1, (2000, 2))
    idx = part.locate(pts)
    nxt = part.locate(fn(pts))
    violations = 0
    for i in range(len(pts)):
        q = idx[i]
        if q < 0:
            continue
        s = nxt[i] if nxt[i] >= 0 else nts.q_u
        if not nts.T[q, s]:
            violations += 1
    assert violations == 0


def test_refine_empty_plan_when_no_unknown():
    part = partition_domain(square_domain(), (2, 2))
    T = np.eye(5, dtype=bool)
    nts = Nts(T=T, labels=[frozenset()] * 5, ap=[])
    res = CheckResult(frozenset(range(5)), frozenset(), frozenset())
    new_part, plan = refine(nts, res, part)
    assert plan.cells == []
    assert new_part is part


def test_refine_splits_frontier_cell():
    part = partition_domain(square_domain(), (2, 2))
    # 4 cells + q_u; cell 0 unknown with an edge to yes-cell 1
    T = np.zeros((5, 5), dtype=bool)
    T[0, 1] = True
    for i in range(1, 5):
        T[i, i] = True
    T[0, 0] = True
    nts = Nts(T=T, labels=[frozenset()] * 5, ap=[])
    res = CheckResult(frozenset({1}), frozenset(), frozenset({0, 2, 3, 4}))
    new_part, plan = refine(nts, res, part)
    assert plan.cells == [0]
    assert new_part.n_cells == 5  # one bisection adds one cell


def test_refine_never_splits_qu():
    part = partition_domain(square_domain(), (2, 2))
    T = np.zeros((5, 5), dtype=bool)
    for i in range(5):
        T[i, (i + 1) % 5] = True
    nts = Nts(T=T, labels=[frozenset()] * 5, ap=[])
    res = CheckResult(frozenset({0}), frozenset(), frozenset({1, 2, 3, 4}))
    _, plan = refine(nts, res, part)
    assert 4 not in plan.cells


def test_nts_text_round_trip():
    rng = np.random.default_rng(5)
    model = gp_on_map(lambda z: z, rng)
    part = partition_domain(square_domain(), (2, 2))
    lab = LabelingMap(ap=["goal"], cell_labels=[frozenset({"goal"})] + [frozenset()] * 3,
                      region_pairs=[])
    nts = build_nts(part, lab, model, n_u=2, grid=(2, 2, 2))
    text = nts_to_text(nts)
    back = nts_from_text(text)
    assert np.array_equal(back.T, nts.T)
    assert back.labels == nts.labels
    assert back.ap == nts.ap


def test_checker_integrates_with_built_nts():
    rng = np.random.default_rng(6)
    # strong contraction toward the center: everything should reach the
    # center cell eventually
    model = gp_on_map(lambda z: 0.5 + 0.25 * (z - 0.5), rng, m=300, B=0.3)
    part = partition_domain(square_domain(), (3, 3))
    labels = []
    centers = 0.5 * (part.los + part.his)
    for i in range(part.n_cells):
        labs = set()
        if np.all(np.abs(centers[i] - 0.5) < 0.2):
            labs.add("goal")
        labs.add("safe")
        labels.append(frozenset(labs))
    lab = LabelingMap(ap=["goal", "safe"], cell_labels=labels, region_pairs=[])
    nts = build_nts(part, lab, model, n_u=2, grid=(4, 4, 2))
    res = check(nts, parse("safe U goal"))
    center_cell = part.locate(np.array([[0.5, 0.5]]))[0]
    assert center_cell in res.q_yes
