"""LTL parsing, normal forms, Buchi translation, and three-valued checking.

`check` classifies every NTS state into Q_yes (all paths satisfy), Q_no
(all paths satisfy the negation), or Q_? via two emptiness checks of the
product with tableau-constructed Buchi automata. `brute_force_check` is an
independent testing oracle that enumerates bounded lasso paths and evaluates
the formula semantically on each ultimately-periodic trace.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import FormulaSyntaxError, TooLarge, UnknownProposition


class Formula:
    pass


@dataclass(frozen=True)
class TrueF(Formula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class FalseF(Formula):
    def __str__(self):
        return "false"


@dataclass(frozen=True)
class Prop(Formula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula

    def __str__(self):
        return f"!{self.sub}"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} | {self.right})"


@dataclass(frozen=True)
class Next(Formula):
    sub: Formula

    def __str__(self):
        return f"X {self.sub}"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} U {self.right})"


@dataclass(frozen=True)
class Release(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} R {self.right})"


@dataclass(frozen=True)
class Eventually(Formula):
    sub: Formula

    def __str__(self):
        return f"F {self.sub}"


@dataclass(frozen=True)
class Always(Formula):
    sub: Formula

    def __str__(self):
        return f"G {self.sub}"


# ---------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|([!&|()])|(\S))")
_UNARY = {"X": Next, "F": Eventually, "G": Always}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            break
        word, sym, bad = m.groups()
        tok_pos = m.start(1) if word else (m.start(2) if sym else m.start(3))
        if bad:
            raise FormulaSyntaxError(f"unexpected character {bad!r}", tok_pos)
        tokens.append((word or sym, tok_pos))
        pos = m.end()
    tokens.append((None, len(text)))  # end marker
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i][0]

    def pos(self):
        return self.tokens[self.i][1]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self):
        f = self.parse_or()
        if self.peek() is not None:
            raise FormulaSyntaxError(f"trailing input {self.peek()!r}", self.pos())
        return f

    def parse_or(self):
        f = self.parse_and()
        while self.peek() == "|":
            self.take()
            f = Or(f, self.parse_and())
        return f

    def parse_and(self):
        f = self.parse_until()
        while self.peek() == "&":
            self.take()
            f = And(f, self.parse_until())
        return f

    def parse_until(self):
        f = self.parse_unary()
        if self.peek() in ("U", "R"):
            op, _ = self.take()
            rhs = self.parse_until()  # right-associative
            return Until(f, rhs) if op == "U" else Release(f, rhs)
        return f

    def parse_unary(self):
        tok = self.peek()
        if tok == "!":
            self.take()
            return Not(self.parse_unary())
        if tok in _UNARY:
            self.take()
            return _UNARY[tok](self.parse_unary())
        return self.parse_atom()

    def parse_atom(self):
        tok, pos = self.take()
        if tok == "(":
            f = self.parse_or()
            close, cpos = self.take()
            if close != ")":
                raise FormulaSyntaxError("expected ')'", cpos)
            return f
        if tok is None:
            raise FormulaSyntaxError("unexpected end of input", pos)
        if tok == "true":
            return TrueF()
        if tok == "false":
            return FalseF()
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok) and tok not in ("U", "R"):
            return Prop(tok)
        raise FormulaSyntaxError(f"unexpected token {tok!r}", pos)


def parse(text: str) -> Formula:
    """Grammar: props, !, &, |, X, U, R, F, G, parentheses; unary binds
    tightest, then right-associative U/R, then &, then |."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Negation normal form


def to_nnf(f: Formula) -> Formula:
    if isinstance(f, (TrueF, FalseF, Prop)):
        return f
    if isinstance(f, And):
        return And(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Or):
        return Or(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Next):
        return Next(to_nnf(f.sub))
    if isinstance(f, Until):
        return Until(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Release):
        return Release(to_nnf(f.left), to_nnf(f.right))
    if isinstance(f, Eventually):
        return Eventually(to_nnf(f.sub))
    if isinstance(f, Always):
        return Always(to_nnf(f.sub))
    if isinstance(f, Not):
        g = f.sub
        if isinstance(g, Prop):
            return f
        if isinstance(g, TrueF):
            return FalseF()
        if isinstance(g, FalseF):
            return TrueF()
        if isinstance(g, Not):
            return to_nnf(g.sub)
        if isinstance(g, And):
            return Or(to_nnf(Not(g.left)), to_nnf(Not(g.right)))
        if isinstance(g, Or):
            return And(to_nnf(Not(g.left)), to_nnf(Not(g.right)))
        if isinstance(g, Next):
            return Next(to_nnf(Not(g.sub)))
        if isinstance(g, Until):
            return Release(to_nnf(Not(g.left)), to_nnf(Not(g.right)))
        if isinstance(g, Release):
            return Until(to_nnf(Not(g.left)), to_nnf(Not(g.right)))
        if isinstance(g, Eventually):
            return Always(to_nnf(Not(g.sub)))
        if isinstance(g, Always):
            return Eventually(to_nnf(Not(g.sub)))
    raise TypeError(f"unknown formula node {f!r}")


def is_nnf(f: Formula) -> bool:
    if isinstance(f, Not):
        return isinstance(f.sub, Prop)
    if isinstance(f, (TrueF, FalseF, Prop)):
        return True
    if isinstance(f, (Next, Eventually, Always)):
        return is_nnf(f.sub)
    return is_nnf(f.left) and is_nnf(f.right)


def relabel_negations(f: Formula, mapping: dict) -> Formula:
    """Replace every negated proposition !p with its negation proposition
    mapping[p]; requires NNF input; the result contains no negations."""
    def rec(g):
        if isinstance(g, Not):
            if not isinstance(g.sub, Prop):
                raise ValueError("relabeling requires NNF input")
            name = g.sub.name
            if name not in mapping:
                raise UnknownProposition(name)
            return Prop(mapping[name])
        if isinstance(g, (TrueF, FalseF)):
            return g
        if isinstance(g, Prop):
            return g
        if isinstance(g, Next):
            return Next(rec(g.sub))
        if isinstance(g, Eventually):
            return Eventually(rec(g.sub))
        if isinstance(g, Always):
            return Always(rec(g.sub))
        if isinstance(g, And):
            return And(rec(g.left), rec(g.right))
        if isinstance(g, Or):
            return Or(rec(g.left), rec(g.right))
        if isinstance(g, Until):
            return Until(rec(g.left), rec(g.right))
        if isinstance(g, Release):
            return Release(rec(g.left), rec(g.right))
        raise TypeError(f"unknown formula node {g!r}")

    return rec(f)


# ---------------------------------------------------------------------------
# Semantic evaluation on ultimately periodic (lasso) traces


def eval_lasso(f: Formula, trace, loop_start: int):
    """Truth value of f at position 0 of the trace u v^omega, where trace
    lists the label sets of u followed by v and loop_start = |u|.

    Until/Eventually are least fixpoints, Release/Always greatest fixpoints,
    iterated to stability over the lasso's finitely many positions.
    """
    n = len(trace)
    assert 0 <= loop_start < n
    succ = [i + 1 for i in range(n)]
    succ[n - 1] = loop_start

    def rec(g):
        if isinstance(g, TrueF):
            return [True] * n
        if isinstance(g, FalseF):
            return [False] * n
        if isinstance(g, Prop):
            return [g.name in trace[i] for i in range(n)]
        if isinstance(g, Not):
            return [not v for v in rec(g.sub)]
        if isinstance(g, And):
            a, b = rec(g.left), rec(g.right)
            return [x and y for x, y in zip(a, b)]
        if isinstance(g, Or):
            a, b = rec(g.left), rec(g.right)
            return [x or y for x, y in zip(a, b)]
        if isinstance(g, Next):
            v = rec(g.sub)
            return [v[succ[i]] for i in range(n)]
        if isinstance(g, (Until, Eventually)):
            if isinstance(g, Until):
                a, b = rec(g.left), rec(g.right)
            else:
                a, b = [True] * n, rec(g.sub)
            val = [False] * n
            for _ in range(n + 1):
                changed = False
                for i in reversed(range(n)):
                    nv = b[i] or (a[i] and val[succ[i]])
                    if nv != val[i]:
                        val[i] = nv
                        changed = True
                if not changed:
                    break
            return val
        if isinstance(g, (Release, Always)):
            if isinstance(g, Release):
                a, b = rec(g.left), rec(g.right)
            else:
                a, b = [False] * n, rec(g.sub)
            val = [True] * n
            for _ in range(n + 1):
                changed = False
                for i in reversed(range(n)):
                    nv = b[i] and (a[i] or val[succ[i]])
                    if nv != val[i]:
                        val[i] = nv
                        changed = True
                if not changed:
                    break
            return val
        raise TypeError(f"unknown formula node {g!r}")

    return rec(f)[0]


# ---------------------------------------------------------------------------
# Buchi automata (tableau construction)


@dataclass
class BuchiAutomaton:
    n_states: int
    initial: frozenset
    edges: list  # (src, pos frozenset, neg frozenset, dst)
    accepting: frozenset

    def succ_table(self):
        table = [[] for _ in range(self.n_states)]
        for src, pos, neg, dst in self.edges:
            table[src].append((pos, neg, dst))
        return table


def _desugar(f: Formula) -> Formula:
    """Rewrite F/G into U/R so the tableau has fewer cases."""
    if isinstance(f, (TrueF, FalseF, Prop)):
        return f
    if isinstance(f, Not):
        return Not(_desugar(f.sub))
    if isinstance(f, And):
        return And(_desugar(f.left), _desugar(f.right))
    if isinstance(f, Or):
        return Or(_desugar(f.left), _desugar(f.right))
    if isinstance(f, Next):
        return Next(_desugar(f.sub))
    if isinstance(f, Until):
        return Until(_desugar(f.left), _desugar(f.right))
    if isinstance(f, Release):
        return Release(_desugar(f.left), _desugar(f.right))
    if isinstance(f, Eventually):
        return Until(TrueF(), _desugar(f.sub))
    if isinstance(f, Always):
        return Release(FalseF(), _desugar(f.sub))
    raise TypeError(f"unknown formula node {f!r}")


def _neg_literal(lit):
    if isinstance(lit, Prop):
        return Not(lit)
    if isinstance(lit, Not):
        return lit.sub
    if isinstance(lit, TrueF):
        return FalseF()
    return TrueF()


def _simplify(f: Formula) -> Formula:
    """Bottom-up boolean simplification; leaves no true/false below the
    top level, which the tableau's acceptance bookkeeping relies on."""
    if isinstance(f, (TrueF, FalseF, Prop, Not)):
        return f
    if isinstance(f, And):
        l, r = _simplify(f.left), _simplify(f.right)
        if isinstance(l, FalseF) or isinstance(r, FalseF):
            return FalseF()
        if isinstance(l, TrueF):
            return r
        if isinstance(r, TrueF):
            return l
        return And(l, r)
    if isinstance(f, Or):
        l, r = _simplify(f.left), _simplify(f.right)
        if isinstance(l, TrueF) or isinstance(r, TrueF):
            return TrueF()
        if isinstance(l, FalseF):
            return r
        if isinstance(r, FalseF):
            return l
        return Or(l, r)
    if isinstance(f, Next):
        s = _simplify(f.sub)
        if isinstance(s, (TrueF, FalseF)):
            return s
        return Next(s)
    if isinstance(f, Until):
        l, r = _simplify(f.left), _simplify(f.right)
        if isinstance(r, (TrueF, FalseF)):
            return r
        if isinstance(l, FalseF):
            return r
        return Until(l, r)
    if isinstance(f, Release):
        l, r = _simplify(f.left), _simplify(f.right)
        if isinstance(r, (TrueF, FalseF)):
            return r
        if isinstance(l, TrueF):
            return r
        return Release(l, r)
    raise TypeError(f"unknown formula node {f!r}")


class _Node:
    __slots__ = ("nid", "incoming", "new", "old", "nxt")

    def __init__(self, nid, incoming, new, old, nxt):
        self.nid = nid
        self.incoming = set(incoming)
        self.new = set(new)
        self.old = set(old)
        self.nxt = set(nxt)


def ltl_to_buchi(f: Formula) -> BuchiAutomaton:
    """Tableau translation of an NNF formula (negations on propositions only)
    into a nondeterministic Buchi automaton; generalized acceptance sets (one
    per until subformula) are degeneralized with a counter."""
    f = _simplify(_desugar(to_nnf(f)))
    INIT = 0
    nodes = []
    next_id = [1]

    def fresh(incoming, new, old, nxt):
        n = _Node(next_id[0], incoming, new, old, nxt)
        next_id[0] += 1
        return n

    stack = [fresh({INIT}, {f}, set(), set())]
    while stack:
        q = stack.pop()
        if not q.new:
            twin = next((nd for nd in nodes if nd.old == q.old and nd.nxt == q.nxt), None)
            if twin is not None:
                twin.incoming |= q.incoming
                continue
            nodes.append(q)
            stack.append(fresh({q.nid}, set(q.nxt), set(), set()))
            continue
        eta = q.new.pop()
        if isinstance(eta, (TrueF, FalseF, Prop, Not)):
            if isinstance(eta, FalseF) or _neg_literal(eta) in q.old:
                continue  # contradictory node dies
            if not isinstance(eta, TrueF):  # simplification removed nested true
                q.old.add(eta)
            stack.append(q)
            continue
        if isinstance(eta, And):
            q.old.add(eta)
            q.new |= {eta.left, eta.right} - q.old
            stack.append(q)
            continue
        if isinstance(eta, Next):
            q.old.add(eta)
            q.nxt.add(eta.sub)
            stack.append(q)
            continue
        if isinstance(eta, (Or, Until, Release)):
            if isinstance(eta, Or):
                new1, nxt1, new2 = {eta.left}, set(), {eta.right}
            elif isinstance(eta, Until):
                new1, nxt1, new2 = {eta.left}, {eta}, {eta.right}
            else:  # Release
                new1, nxt1, new2 = {eta.right}, {eta}, {eta.left, eta.right}
            q1 = fresh(q.incoming, q.new | (new1 - q.old), q.old | {eta}, q.nxt | nxt1)
            q2 = fresh(q.incoming, q.new | (new2 - q.old), q.old | {eta}, q.nxt)
            stack.append(q2)
            stack.append(q1)
            continue
        raise TypeError(f"unexpected formula in tableau {eta!r}")

    untils = sorted({g for nd in nodes for g in nd.old if isinstance(g, Until)},
                    key=str)
    # generalized acceptance: per until, nodes that discharge it
    f_sets = []
    for u in untils:
        f_sets.append({nd.nid for nd in nodes if u not in nd.old or u.right in nd.old})

    # remap ids to 0..n (0 = init)
    id_map = {INIT: 0}
    for nd in nodes:
        id_map[nd.nid] = len(id_map)
    raw_edges = []
    for nd in nodes:
        pos = frozenset(g.name for g in nd.old if isinstance(g, Prop))
        neg = frozenset(g.sub.name for g in nd.old if isinstance(g, Not))
        for src in nd.incoming:
            if src in id_map:
                raw_edges.append((id_map[src], pos, neg, id_map[nd.nid]))
    n_raw = len(id_map)

    k = len(f_sets)
    if k == 0:
        return BuchiAutomaton(n_raw, frozenset([0]), raw_edges,
                              frozenset(range(n_raw)))
    fs = [frozenset(id_map[i] for i in s if i in id_map) for s in f_sets]
    # counter degeneralization: advance past F_i when leaving a state in F_i
    edges = []
    for src, pos, neg, dst in raw_edges:
        for i in range(k):
            j = (i + 1) % k if src in fs[i] else i
            edges.append((src * k + i, pos, neg, dst * k + j))
    accepting = frozenset(s * k for s in fs[0])
    initial = frozenset([0 * k + 0])
    return BuchiAutomaton(n_raw * k, initial, edges, accepting)


# ---------------------------------------------------------------------------
# Graph machinery: accepting-lasso detection via SCCs


def _tarjan_sccs(n_nodes, succ):
    index = [-1] * n_nodes
    low = [0] * n_nodes
    on_stack = [False] * n_nodes
    stack = []
    comps = []
    counter = [0]
    for root in range(n_nodes):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter[0]
                counter[0] += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            children = succ[v]
            for i in range(pi, len(children)):
                w = children[i]
                if index[w] == -1:
                    work[-1] = (v, i + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(comp)
    return comps


def _can_reach_accepting_cycle(n_nodes, succ, accepting_nodes):
    """Nodes from which some path reaches a cycle containing an accepting
    node (the emptiness core of Buchi product checking)."""
    comps = _tarjan_sccs(n_nodes, succ)
    comp_of = [0] * n_nodes
    for ci, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = ci
    good = [False] * len(comps)
    for ci, comp in enumerate(comps):
        members = set(comp)
        has_cycle = len(comp) > 1 or any(w in members for w in succ[comp[0]])
        if has_cycle and any(v in accepting_nodes for v in comp):
            good[ci] = True
    # reverse reachability to good SCCs
    pred = [[] for _ in range(n_nodes)]
    for v in range(n_nodes):
        for w in succ[v]:
            pred[w].append(v)
    result = [False] * n_nodes
    queue = [v for v in range(n_nodes) if good[comp_of[v]]]
    for v in queue:
        result[v] = True
    while queue:
        v = queue.pop()
        for u in pred[v]:
            if not result[u]:
                result[u] = True
                queue.append(u)
    return result


def automaton_accepts_lasso(aut: BuchiAutomaton, trace, loop_start: int) -> bool:
    """Does the automaton accept the ultimately periodic word trace[u v^w]?"""
    n = len(trace)
    succ_pos = [i + 1 for i in range(n)]
    succ_pos[n - 1] = loop_start
    table = aut.succ_table()
    n_nodes = n * aut.n_states
    succ = [[] for _ in range(n_nodes)]
    for i in range(n):
        letter = trace[i]
        for b in range(aut.n_states):
            lst = succ[i * aut.n_states + b]
            for pos, neg, dst in table[b]:
                if pos <= letter and not (neg & letter):
                    lst.append(succ_pos[i] * aut.n_states + dst)
    acc = {i * aut.n_states + b for i in range(n) for b in aut.accepting}
    reach = _can_reach_accepting_cycle(n_nodes, succ, acc)
    return any(reach[0 * aut.n_states + b] for b in aut.initial)


# ---------------------------------------------------------------------------
# Three-valued NTS checking


@dataclass
class CheckResult:
    q_yes: frozenset
    q_no: frozenset
    q_unknown: frozenset

    def classify(self, q):
        if q in self.q_yes:
            return "yes"
        if q in self.q_no:
            return "no"
        return "unknown"


def _exists_accepted_path(nts, aut: BuchiAutomaton):
    """Per NTS state: does some path's trace get accepted by the automaton?"""
    n_q = nts.n_states
    n_b = aut.n_states
    table = aut.succ_table()
    labels = [nts.labels[q] for q in range(n_q)]
    succ_q = nts.successor_lists()
    n_nodes = n_q * n_b
    succ = [[] for _ in range(n_nodes)]
    for q in range(n_q):
        letter = labels[q]
        moves = [[] for _ in range(n_b)]
        for b in range(n_b):
            for pos, neg, dst in table[b]:
                if pos <= letter and not (neg & letter):
                    moves[b].append(dst)
        for b in range(n_b):
            lst = succ[q * n_b + b]
            for qp in succ_q[q]:
                for bp in moves[b]:
                    lst.append(qp * n_b + bp)
    acc = {q * n_b + b for q in range(n_q) for b in aut.accepting}
    reach = _can_reach_accepting_cycle(n_nodes, succ, acc)
    return [any(reach[q * n_b + b] for b in aut.initial) for q in range(n_q)]


def check(nts, phi_bar: Formula) -> CheckResult:
    """Three-valued verification of a negation-free formula on an NTS."""
    aut_pos = ltl_to_buchi(phi_bar)
    aut_neg = ltl_to_buchi(to_nnf(Not(phi_bar)))
    sat_possible = _exists_accepted_path(nts, aut_pos)
    viol_possible = _exists_accepted_path(nts, aut_neg)
    yes, no, unk = set(), set(), set()
    for q in range(nts.n_states):
        if not viol_possible[q]:
            yes.add(q)
        elif not sat_possible[q]:
            no.add(q)
        else:
            unk.add(q)
    return CheckResult(frozenset(yes), frozenset(no), frozenset(unk))


def brute_force_check(nts, phi_bar: Formula, bound: int | None = None) -> CheckResult:
    """Oracle classification by enumerating all lasso paths with stem and
    loop at most `bound` (default |Q|) and evaluating the formula
    semantically on each. Correct for formulas whose satisfaction on the
    NTS is witnessed by lassos of this size."""
    n = nts.n_states
    if n > 8:
        raise TooLarge(f"{n} states exceeds the brute-force limit of 8")
    bound = bound or n
    succ_q = nts.successor_lists()
    labels = [nts.labels[q] for q in range(n)]
    cache = {}

    def lasso_value(path, j):
        trace = tuple(labels[p] for p in path)
        key = (trace, j)
        if key not in cache:
            cache[key] = eval_lasso(phi_bar, trace, j)
        return cache[key]

    yes, no, unk = set(), set(), set()
    for q0 in range(n):
        seen_sat = seen_viol = False
        path = [q0]

        def dfs():
            nonlocal seen_sat, seen_viol
            if seen_sat and seen_viol:
                return
            for s in succ_q[path[-1]]:
                for j, p in enumerate(path):
                    if p == s and j <= bound and len(path) - j <= bound:
                        if lasso_value(path, j):
                            seen_sat = True
                        else:
                            seen_viol = True
                        if seen_sat and seen_viol:
                            return
                if len(path) < 2 * bound:
                    path.append(s)
                    dfs()
                    path.pop()

        dfs()
        if not seen_viol:
            yes.add(q0)
        elif not seen_sat:
            no.add(q0)
        else:
            unk.add(q0)
    return CheckResult(frozenset(yes), frozenset(no), frozenset(unk))
