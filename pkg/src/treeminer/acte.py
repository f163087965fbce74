"""Asynchronous collective exploration with locally-greedy robots.

Every robot has a target, an active leaf of the discrete mining game.
A granted robot takes a fresh edge when one leaves its node (lowest
child id first); otherwise its node is mined and the robot steps towards
its target. Mining a target plays one round of the discrete game, whose
shadow continuous player decides where the spare robots go.
"""

from __future__ import annotations

import bisect
import itertools
import math
import random
from dataclasses import dataclass, field

from .game import TmState, tm_step
from .potential import PotentialParams
from .tree import RootedTree, TreeError


class SchedulerExhausted(RuntimeError):
    pass


def roundrobin(k: int):
    return itertools.cycle(range(k))


def random_scheduler(k: int, seed: int = 0):
    rng = random.Random(seed)
    while True:
        yield rng.randrange(k)


def lopsided(k: int, seed: int = 0):
    """Robot i is granted with probability proportional to 2^-i."""
    rng = random.Random(seed)
    cum = list(itertools.accumulate(2.0 ** -i for i in range(k)))
    total = cum[-1]
    while True:
        yield min(bisect.bisect_right(cum, rng.random() * total), k - 1)


SCHEDULERS = {"roundrobin": lambda k, seed=0: roundrobin(k),
              "random": random_scheduler, "lopsided": lopsided}


def make_scheduler(name: str, k: int, seed: int = 0):
    try:
        return SCHEDULERS[name](k, seed)
    except KeyError:
        raise ValueError(f"unknown scheduler {name!r}; choose from {sorted(SCHEDULERS)}") from None


def acte_bound(n: int, k: int, D: int, params: PotentialParams | None = None) -> float:
    """2n + gamma*phi(k)*D, i.e. 2n + 1200 k^2 D at the default constants."""
    params = params or PotentialParams.default(k)
    return 2 * n + params.bound_constant(k) * D


class HiddenTree:
    """Array view of a unit-edge tree with Euler intervals for ancestry tests."""

    def __init__(self, tree: RootedTree):
        if tree.root != 0 or sorted(tree.parent) != list(range(len(tree))):
            tree = _relabel_dense(tree)
        n = len(tree)
        self.n = n
        self.parent = [-1] * n
        self.children = [list(tree.children[u]) for u in range(n)]
        self.depth = [0] * n
        self.tin = [0] * n
        self.tout = [0] * n
        order = tree.preorder()
        for u in order:
            if u != 0:
                self.parent[u] = tree.parent[u]
                self.depth[u] = self.depth[tree.parent[u]] + 1
        t = 0
        stack = [(0, False)]
        while stack:
            u, done = stack.pop()
            if done:
                self.tout[u] = t - 1
                continue
            self.tin[u] = t
            t += 1
            stack.append((u, True))
            for c in reversed(self.children[u]):
                stack.append((c, False))
        self.D = max(self.depth)

    def below(self, u: int, v: int) -> bool:
        """u is in the subtree of v (u == v allowed)."""
        return self.tin[v] <= self.tin[u] <= self.tout[v]

    def ancestor_at(self, u: int, depth: int) -> int:
        p = self.parent
        while self.depth[u] > depth:
            u = p[u]
        return u

    def lca(self, u: int, v: int) -> int:
        p, d = self.parent, self.depth
        while d[u] > d[v]:
            u = p[u]
        while d[v] > d[u]:
            v = p[v]
        while u != v:
            u, v = p[u], p[v]
        return u

    def distance(self, u: int, v: int) -> int:
        w = self.lca(u, v)
        return self.depth[u] + self.depth[v] - 2 * self.depth[w]

    def route(self, u: int, v: int) -> list:
        """Nodes visited walking from u to v (u excluded), reversed for popping."""
        w = self.lca(u, v)
        up = []
        x = u
        while x != w:
            x = self.parent[x]
            up.append(x)
        down = []
        x = v
        while x != w:
            down.append(x)
            x = self.parent[x]
        # pop() must yield the up-part first, then the down-part from w
        return down + up[::-1]


def _relabel_dense(tree: RootedTree) -> RootedTree:
    ids = {u: i for i, u in enumerate(tree.preorder())}
    t = RootedTree(0)
    for u in tree.preorder():
        if u != tree.root:
            t.add_child(ids[tree.parent[u]], 1.0, node=ids[u])
    return t


@dataclass
class ActeResult:
    n: int
    k: int
    D: int
    moves: int
    bound: float
    tm_cost: float
    ctm_cost: float
    tm_steps: int
    retarget_cost: int
    explored_at: int | None
    depth_at_explored: int | None
    finished: bool
    violations: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.moves <= self.bound and not self.violations


class ExplorationState:
    """Robots, targets and mining status over a hidden unit-edge tree."""

    def __init__(self, tree: RootedTree, k: int, params: PotentialParams | None = None,
                 record: bool = False, guard_forks: bool = True):
        if k < 1:
            raise ValueError("need at least one robot")
        if any(abs(d - 1.0) > 1e-12 for d in tree.length.values()):
            raise TreeError("exploration needs unit edge lengths")
        self.hidden = HiddenTree(tree)
        n = self.hidden.n
        self.k = k
        self.params = params or PotentialParams.default(max(k, 2))
        self.pos = [0] * k
        self.target = [0] * k
        self.routes = [[] for _ in range(k)]
        self.ptr = [0] * n
        self.mined = [False] * n
        self.explored_edges = 0
        self.moves = 0
        self.retarget_cost = 0
        self.done = False
        self.explored_at = None
        self.depth_at_explored = None
        self.record = record
        self.trace = []
        self.violations = []
        if n == 1:
            self.explored_at = 0
            self.depth_at_explored = 0
        self.tm = TmState.initial(max(k, 1), self.params, root=0, guard_forks=guard_forks)

    # -- one grant ------------------------------------------------------
    def step(self, r: int) -> None:
        if self.done:
            raise RuntimeError("exploration already finished")
        h = self.hidden
        v = self.pos[r]
        self.moves += 1
        kids = h.children[v]
        if self.ptr[v] < len(kids):
            c = kids[self.ptr[v]]
            self.ptr[v] += 1
            self.pos[r] = c
            self.explored_edges += 1
            if self.explored_edges == h.n - 1:
                self.explored_at = self.moves
                self.depth_at_explored = max(h.depth[p] for p in self.pos)
            if self.record:
                self.trace.append(("fresh", r, v, c))
            return
        self.mined[v] = True
        if v == self.target[r]:
            self._mine_target(v)
            if self.done:
                if self.record:
                    self.trace.append(("end", r, v))
                return
        t = self.target[r]
        if h.below(v, t) and v != t:
            nxt = h.parent[v]
        else:
            if not self.routes[r]:
                self.routes[r] = h.route(v, t)
            nxt = self.routes[r].pop()
        self.pos[r] = nxt
        if self.record:
            self.trace.append(("step", r, v, nxt))

    def _mine_target(self, l: int) -> None:
        h = self.hidden
        dl = h.depth[l]
        group = [r for r in range(self.k) if self.target[r] == l]
        inside = {}
        excess = []
        for r in group:
            p = self.pos[r]
            if p != l and h.below(p, l):
                inside[r] = h.ancestor_at(p, dl + 1)
            else:
                excess.append(r)
        children = sorted(set(inside.values()))
        if len(children) != len(inside):
            self.violations.append(("two robots share a child", l))
        rep = tm_step(self.tm, l, children)
        if self.record:
            self.trace.append(("tm", l, children, sorted(rep["gains"].items()), rep["cost_delta"]))
        if rep["finished"]:
            self.done = True
            return
        for r, c in inside.items():
            self.target[r] = c
            self.routes[r] = []
        slots = [g for g, cnt in sorted(rep["gains"].items()) for _ in range(cnt)]
        if len(slots) != len(excess):
            self.violations.append(("excess mismatch", l, len(slots), len(excess)))
        # nearest-first matching of spare robots to their new targets
        pairs = sorted((h.distance(self.pos[r], s), r, i) for r in excess for i, s in enumerate(slots))
        used_r, used_s = set(), set()
        for d, r, i in pairs:
            if r in used_r or i in used_s:
                continue
            used_r.add(r)
            used_s.add(i)
            s = slots[i]
            # extra walking caused by the change of target
            self.retarget_cost += max(0, d - h.distance(self.pos[r], l))
            self.target[r] = s
            self.routes[r] = []

    def result(self) -> ActeResult:
        h = self.hidden
        return ActeResult(h.n, self.k, h.D, self.moves, acte_bound(h.n, self.k, h.D, self.params),
                          self.tm.cost, self.tm.shadow.cost, self.tm.steps, self.retarget_cost,
                          self.explored_at, self.depth_at_explored, self.done,
                          self.violations + self.tm.violations, self.trace)


def acte_step(state: ExplorationState, robot: int) -> ExplorationState:
    state.step(robot)
    return state


def run_acte(tree: RootedTree, k: int, scheduler="roundrobin", seed: int = 0,
             params: PotentialParams | None = None, record: bool = False,
             stop_when_explored: bool = False, max_grants: int | None = None) -> ActeResult:
    """Explore ``tree`` with k robots until every node is mined.

    ``scheduler`` is a name from SCHEDULERS or an iterator of robot ids.
    """
    st = ExplorationState(tree, k, params, record)
    n = st.hidden.n
    if isinstance(scheduler, str):
        scheduler = make_scheduler(scheduler, k, seed)
    if max_grants is None:
        max_grants = 50 * (acte_bound(n, k, st.hidden.D, st.params) + k)
    step = st.step
    for r in scheduler:
        if st.done or (stop_when_explored and st.explored_at is not None):
            break
        if st.moves >= max_grants:
            raise SchedulerExhausted(f"no termination after {st.moves} grants")
        step(r)
    else:
        if not st.done:
            raise SchedulerExhausted(f"scheduler ran dry after {st.moves} grants")
    return st.result()
