"""Quadratic leaf potential, pairwise tensions and the greedy player.

The player keeps the configuration stable: for every ordered pair of
leaves the potential gain of moving one robot stays strictly below the
distance it would travel. Moves are applied one robot at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .tree import DiscreteConfig, RootedTree, TreeError, extend_config

SLACK_TOL = 1e-9


def fires(tau: float, d: float, tol: float = SLACK_TOL) -> bool:
    """A move fires once its slack d - tau is at most tol (scaled down for d < 1)."""
    return tau - d >= -tol * min(1.0, d)


class InvariantViolation(RuntimeError):
    """An engine-side guarantee failed; carries the offending values."""


@dataclass(frozen=True)
class PotentialParams:
    a: float
    b: float
    epsilon: float = 0.5
    epsilon_prime: float = 0.5
    gamma: float = 48.0

    @classmethod
    def default(cls, k: int) -> "PotentialParams":
        return cls(a=20.0 * k, b=5.0)

    def admissible(self, k: int) -> bool:
        e, ep = self.epsilon, self.epsilon_prime
        return (2 * self.b * k <= ep * self.a + 1e-12
                and self.b * (2 - 2 * e - ep) >= 2 + ep - 1e-12)

    def validate(self, k: int) -> "PotentialParams":
        if self.a <= 0 or self.b <= 0:
            raise ValueError("phi needs a > 0 and b > 0")
        if not self.admissible(k):
            raise ValueError(f"(a={self.a}, b={self.b}) violates 2bk <= e'a or b(2-2e-e') >= 2+e' for k={k}")
        return self

    def phi(self, x: float) -> float:
        return self.a * x + self.b * x * x

    def dphi(self, x: float) -> float:
        return self.a + 2 * self.b * x

    def bound_constant(self, k: int) -> float:
        """gamma * phi(k); the per-unit-depth cost allowance."""
        return self.gamma * self.phi(k)


def phi(params: PotentialParams, x: float) -> float:
    if x < 0:
        raise ValueError(f"phi is defined on x >= 0, got {x}")
    return params.phi(x)


def _w(c):
    return c.weights if isinstance(c, DiscreteConfig) else c


def potential(tree: RootedTree, c, params: PotentialParams) -> float:
    """Sum over non-root nodes of d_u * phi(x_u)."""
    ext = extend_config(tree, c)
    a, b = params.a, params.b
    return sum(d * (a * ext[u] + b * ext[u] * ext[u]) for u, d in tree.length.items())


@dataclass(frozen=True)
class TensionReport:
    source: int
    dest: int
    tension: float
    distance: float

    @property
    def slack(self) -> float:
        return self.distance - self.tension


class _Frame:
    """Extended configuration plus root paths for one evaluation pass."""

    __slots__ = ("tree", "ext", "a", "b")

    def __init__(self, tree: RootedTree, x: dict, params: PotentialParams):
        self.tree = tree
        self.a, self.b = params.a, params.b
        ext = {}
        children = tree.children
        for u in tree.postorder():
            kids = children[u]
            ext[u] = sum(ext[c] for c in kids) if kids else x.get(u, 0)
        self.ext = ext

    def source_profile(self, src: int) -> dict[int, tuple[float, float]]:
        """For each ancestor A of src: (gain of removing one robot on src->A, length src->A)."""
        tree, ext, a, b = self.tree, self.ext, self.a, self.b
        prof = {src: (0.0, 0.0)}
        g = s = 0.0
        u = src
        root, parent, length = tree.root, tree.parent, tree.length
        while u != root:
            xu = ext[u]
            d = length[u]
            g += d * (a + b * (2 * xu - 1))
            s += d
            u = parent[u]
            prof[u] = (g, s)
        return prof

    def tension_from(self, prof: dict, dst: int) -> tuple[float, float]:
        """(tension, distance) of moving one robot from the profiled source to dst."""
        tree, ext, a, b = self.tree, self.ext, self.a, self.b
        parent, length = tree.parent, tree.length
        g = s = 0.0
        u = dst
        while u not in prof:
            xu = ext[u]
            d = length[u]
            g += d * (a + b * (2 * xu + 1))
            s += d
            u = parent[u]
        gs, ss = prof[u]
        return gs - g, ss + s


def tension(tree: RootedTree, c, src: int, dst: int, params: PotentialParams) -> TensionReport:
    """Potential decrease from moving one robot src -> dst, in closed form."""
    x = _w(c)
    if src not in tree or dst not in tree:
        raise TreeError(f"unknown leaf {src if src not in tree else dst}")
    if x.get(src, 0) < 1:
        raise ValueError(f"leaf {src} holds no robot")
    if src == dst:
        return TensionReport(src, dst, 0.0, 0.0)
    f = _Frame(tree, x, params)
    t, d = f.tension_from(f.source_profile(src), dst)
    return TensionReport(src, dst, t, d)


def max_violation(tree: RootedTree, x: dict, params: PotentialParams, sources=None,
                  tol: float = SLACK_TOL):
    """Pair maximising tension - distance + tol*min(1, distance) over leaves with a robot.

    A nonnegative result means that move fires. Returns (excess, src, dst);
    ties go to the smallest (src, dst).
    """
    f = _Frame(tree, x, params)
    leaves = tree.leaves()
    best = (-math.inf, None, None)
    for s in (sources if sources is not None else leaves):
        if x.get(s, 0) < 1:
            continue
        prof = f.source_profile(s)
        for t in leaves:
            if t == s:
                continue
            tau, d = f.tension_from(prof, t)
            ex = tau - d + tol * min(1.0, d)
            if best[1] is None or ex > best[0] + 1e-12 * abs(best[0]):
                best = (ex, s, t)
    return best


def stable(tree: RootedTree, c, params: PotentialParams, tol: float = SLACK_TOL) -> bool:
    """True iff every single-robot move has slack > tol*min(1, distance)."""
    ex, _, _ = max_violation(tree, _w(c), params, tol=tol)
    return ex < 0


def settle(tree: RootedTree, c, params: PotentialParams, budget: int | None = None, sources=None):
    """Apply the most violated single-robot move until the configuration is stable.

    ``sources`` restricts the leaves robots may leave; stability is then
    only established for moves out of those leaves. Returns (config,
    cost, moves). ``c`` is not modified.
    """
    x = dict(_w(c))
    k = sum(x.values())
    budget = budget if budget is not None else 10 * max(k, 1) * max(len(tree), 1)
    cost = 0.0
    moves = []
    while True:
        ex, s, t = max_violation(tree, x, params, sources)
        if s is None or ex < 0:
            break
        if len(moves) >= budget:
            raise InvariantViolation(f"settle exceeded its move budget of {budget}; check the (a, b) conditions")
        d = tree.distance(s, t)
        x[s] -= 1
        x[t] = x.get(t, 0) + 1
        cost += d
        moves.append((s, t, d))
    cfg = DiscreteConfig(x) if isinstance(c, DiscreteConfig) else x
    return cfg, cost, moves


def best_move_from(frame: "_Frame", src: int, leaves, tol: float = SLACK_TOL):
    """Most violated move out of ``src``: (excess, dest, distance).

    Excess is tension - distance + tol*min(1, distance); the move fires
    when it is nonnegative. Ties go to the smallest destination id.
    """
    prof = frame.source_profile(src)
    best, dest, dist = -math.inf, None, 0.0
    for t in leaves:
        if t == src:
            continue
        tau, d = frame.tension_from(prof, t)
        ex = tau - d + tol * min(1.0, d)
        if dest is None or ex > best + 1e-12 * abs(best):
            best, dest, dist = ex, t, d
    return best, dest, dist


def elongation_event(frame: "_Frame", leaf: int, xl: int, leaves, params: PotentialParams):
    rate = params.phi(xl) - params.phi(xl - 1) - 1.0
    prof = frame.source_profile(leaf)
    best, dest = math.inf, None
    for t in leaves:
        if t == leaf:
            continue
        tau, d = frame.tension_from(prof, t)
        delta = max(d - tau, 0.0) / rate
        if delta < best * (1 - 1e-12):
            best, dest = delta, t
    return best, dest


def next_elongation_event(tree: RootedTree, c, elongating: int, params: PotentialParams):
    """Elongation length after which some move out of ``elongating`` fires.

    While only d_l grows, the slack d(l, l') - tau(l -> l') of every
    destination shrinks at the constant rate phi(x_l) - phi(x_l - 1) - 1.
    Returns (delta, dest); (inf, None) when no other leaf exists.
    """
    x = _w(c)
    xl = x.get(elongating, 0)
    if xl < 2:
        raise ValueError(f"leaf {elongating} holds {xl} robot(s); elongation needs at least 2")
    return elongation_event(_Frame(tree, x, params), elongating, xl, tree.leaves(), params)


def even_split(total: int, m: int) -> list[int]:
    q, r = divmod(total, m)
    return [q + 1] * r + [q] * (m - r)


def forked(tree: RootedTree, x: dict, leaf: int, m: int, delta: float, child_ids=None):
    """Copy of (tree, x) after giving ``leaf`` m children at distance delta."""
    t = tree.copy()
    ids = list(child_ids) if child_ids is not None else [t.new_id() for _ in range(m)]
    y = dict(x)
    share = even_split(y.pop(leaf), m)
    for cid, s in zip(ids, share):
        t.add_child(leaf, delta, node=cid)
        y[cid] = s
    return t, y, ids


def fork_delta(tree: RootedTree, c, leaf: int, m: int, params: PotentialParams,
               guard=None, child_ids=None, floor: float | None = None) -> float:
    """Largest delta in {1, 1/2, 1/4, ...} making the even split stable.

    ``guard(tree_after, x_after)`` may veto a candidate delta, e.g. to
    enforce conditions on the optimal fractional configuration. The
    halving stops at ``floor``, by default 1e-12 times the shortest edge
    when that edge is below 1.
    """
    x = _w(c)
    xl = x.get(leaf, 0)
    if xl < 3 or not 2 <= m <= xl - 1:
        raise ValueError(f"fork of leaf {leaf} with {xl} robots into {m} children is not allowed")
    if child_ids is None:
        child_ids = [tree._next_id + i for i in range(m)]
    if floor is None:
        floor = 1e-12 * min([1.0, *tree.length.values()])
    delta = 1.0
    while delta >= floor:
        t, y, _ = forked(tree, x, leaf, m, delta, child_ids)
        if stable(t, y, params) and (guard is None or guard(t, y, child_ids)):
            return delta
        delta /= 2
    raise InvariantViolation(f"no stable fork length found for leaf {leaf} (m={m}) down to {floor}")
