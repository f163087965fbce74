import math

import pytest

from conftest import random_simple_tree, random_tree
from treeminer.potential import (InvariantViolation, PotentialParams, even_split, fork_delta, forked,
                                 next_elongation_event, phi, potential, settle, stable, tension)
from treeminer.tree import DiscreteConfig, RootedTree, extend_config


def star(*lengths):
    t = RootedTree(0)
    for i, d in enumerate(lengths, 1):
        t.add_child(0, d, node=i)
    return t


def test_phi_values():
    p2 = PotentialParams.default(2)
    assert phi(p2, 0) == 0
    assert phi(p2, 2) == 100
    assert phi(PotentialParams.default(4), 4) == 400
    for k in range(2, 9):
        assert PotentialParams.default(k).phi(k) == 25 * k * k
        assert PotentialParams.default(k).bound_constant(k) == 1200 * k * k
    with pytest.raises(ValueError):
        phi(p2, -1)


def test_default_params_admissible():
    for k in range(2, 20):
        PotentialParams.default(k).validate(k)
    with pytest.raises(ValueError):
        PotentialParams(a=10.0, b=5.0).validate(4)


def test_potential_examples(rng):
    p = PotentialParams.default(4)
    assert potential(star(1, 1), {1: 2, 2: 2}, p) == 360
    assert potential(star(1, 1), {1: 0, 2: 0}, p) == 0
    for _ in range(10):
        t = random_tree(rng, 6)
        c = {l: rng.randint(0, 3) for l in t.leaves()}
        ext = extend_config(t, c)
        want = sum(d * (p.a * ext[u] + p.b * ext[u] ** 2) for u, d in t.length.items())
        assert potential(t, c, p) == pytest.approx(want)


def test_tension_examples(rng):
    p = PotentialParams.default(4)
    t = star(1, 1)
    assert tension(t, {1: 2, 2: 2}, 1, 1, p).tension == 0
    r = tension(t, {1: 2, 2: 2}, 1, 2, p)
    assert r.tension < 0 and r.slack == r.distance - r.tension
    for _ in range(50):
        t = random_simple_tree(rng, rng.randint(2, 6))
        k = rng.randint(2, 8)
        p = PotentialParams.default(k)
        L = t.leaves()
        x = {l: 0 for l in L}
        for _ in range(k):
            x[rng.choice(L)] += 1
        s = rng.choice([l for l in L if x[l] > 0])
        d = rng.choice(L)
        y = dict(x)
        y[s] -= 1
        y[d] += 1
        direct = potential(t, x, p) - potential(t, y, p)
        assert tension(t, x, s, d, p).tension == pytest.approx(direct, abs=1e-9 * max(1, abs(direct)))


def test_tension_needs_a_robot():
    with pytest.raises(ValueError):
        tension(star(1, 1), {1: 0, 2: 2}, 1, 2, PotentialParams.default(2))


def test_stable_examples():
    p = PotentialParams.default(4)
    t1 = star(1.0)
    assert stable(t1, {1: 4}, p)
    # tension of (4,0) -> (3,1) on unit leaves: 1*(phi(4)-phi(3)) - 1*phi(1) = 115 - 85 = 30 >= 2
    assert tension(star(1, 1), {1: 4, 2: 0}, 1, 2, p).tension == pytest.approx(30.0)
    assert not stable(star(1, 1), {1: 4, 2: 0}, p)


def test_settle_two_unit_leaves():
    p = PotentialParams.default(4)
    x, cost, moves = settle(star(1, 1), {1: 4, 2: 0}, p)
    assert x == {1: 2, 2: 2}
    assert cost == 4.0
    assert [m[2] for m in moves] == [2.0, 2.0]
    assert stable(star(1, 1), x, p)
    x2, c2, m2 = settle(star(1, 1), x, p)
    assert x2 == x and c2 == 0 and m2 == []


def test_settle_random_postcondition(rng):
    for _ in range(30):
        t = random_simple_tree(rng, rng.randint(2, 6))
        k = rng.randint(2, 8)
        p = PotentialParams.default(k)
        L = t.leaves()
        x = {l: 0 for l in L}
        x[rng.choice(L)] = k
        y, cost, moves = settle(t, x, p)
        assert stable(t, y, p)
        assert cost == pytest.approx(sum(m[2] for m in moves))
        # every executed move had tension >= distance when it fired
        cur = dict(x)
        for s, d, dist in moves:
            r = tension(t, cur, s, d, p)
            assert r.tension >= dist - 1e-9
            cur[s] -= 1
            cur[d] += 1


def test_elongation_event_hand_value():
    p = PotentialParams.default(4)
    # rate = phi(2) - phi(1) - 1 = 94, slack = 2 - (-10) = 12
    delta, dest = next_elongation_event(star(1, 1), {1: 2, 2: 2}, 1, p)
    assert dest == 2
    assert delta == pytest.approx(12 / 94)


def test_elongation_event_positive_after_move():
    p = PotentialParams.default(4)
    t = star(1, 1)
    x = {1: 2, 2: 2}
    delta, dest = next_elongation_event(t, x, 1, p)
    t.length[1] += delta
    x, _, moves = settle(t, x, p)
    assert len(moves) == 1
    # the former source now holds one robot; elongate the other leaf instead
    d2, _ = next_elongation_event(t, x, 2, p)
    assert d2 > 0


def fine_step_elongation(t, x, leaf, amount, p, h):
    """Time-stepped oracle: grow by h, then settle."""
    t = t.copy()
    x = dict(x)
    cost = 0.0
    grown = 0.0
    while grown < amount - 1e-12 and x[leaf] >= 2:
        s = min(h, amount - grown)
        t.length[leaf] += s
        cost += s * x[leaf]
        grown += s
        x, c, _ = settle(t, x, p)
        cost += c
    return x, cost


def test_event_driven_elongation_matches_fine_steps(rng):
    from treeminer.game import GameState, ctm_apply, Elongate
    checked = 0
    for _ in range(100):
        t = random_simple_tree(rng, rng.randint(2, 4), lo=0.5, hi=1.5)
        k = rng.randint(3, 6)
        p = PotentialParams.default(k)
        L = t.leaves()
        x = {l: 0 for l in L}
        x[L[0]] = k
        x, _, _ = settle(t, x, p)
        el = [l for l in L if x[l] >= 2]
        if not el or min(x.values()) < 1:
            continue
        leaf = el[0]
        st = GameState(t.copy(), DiscreteConfig(dict(x), k), p)
        ctm_apply(st, Elongate(leaf, 0.3))
        h = 1e-4
        fx, fcost = fine_step_elongation(t, x, leaf, 0.3, p, h)
        events = len(st.event_log[-1]["moves"])
        assert fx == st.x
        assert abs(fcost - st.cost) <= (events + 1) * k * h + 1e-9
        checked += 1
    assert checked >= 10


def test_even_split():
    assert even_split(4, 3) == [2, 1, 1]
    assert even_split(7, 2) == [4, 3]
    assert sum(even_split(11, 4)) == 11


def test_fork_delta_symmetric_is_one():
    t = star(1.0)
    p = PotentialParams.default(6)
    assert fork_delta(t, {1: 6}, 1, 3, p) == 1.0


def test_fork_delta_postcondition(rng):
    for _ in range(30):
        t = random_simple_tree(rng, rng.randint(1, 4))
        k = rng.randint(3, 8)
        p = PotentialParams.default(k)
        L = t.leaves()
        x = {l: 0 for l in L}
        x[L[0]] = k
        x, _, _ = settle(t, x, p)
        cand = [l for l in L if x[l] >= 3]
        if not cand:
            continue
        l = cand[0]
        m = rng.randint(2, x[l] - 1)
        d = fork_delta(t, x, l, m, p)
        assert 0 < d <= 1 and math.log2(d) == int(math.log2(d))
        t2, x2, kids = forked(t, x, l, m, d)
        assert stable(t2, x2, p)
        assert sorted(x2[c] for c in kids) == sorted(even_split(x[l], m))


def test_fork_delta_honours_guard():
    t = star(1.0)
    p = PotentialParams.default(6)
    calls = []

    def guard(tree, x, child_ids):
        calls.append(tree.length[child_ids[0]])
        return tree.length[child_ids[0]] <= 0.25

    assert fork_delta(t, {1: 6}, 1, 3, p, guard=guard) == 0.25
    assert calls[:3] == [1.0, 0.5, 0.25]


def test_fork_delta_gives_up_at_floor():
    t = star(1.0)
    p = PotentialParams.default(6)
    with pytest.raises(InvariantViolation):
        fork_delta(t, {1: 6}, 1, 3, p, guard=lambda *a: False)
