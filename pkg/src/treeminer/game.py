"""Continuous and discrete tree-mining games.

The continuous game (CTM) is driven by the potential player: elongations
are decomposed at their firing events, forks use the halving length and
deletions evacuate the dead leaf one robot at a time.

The discrete game (TM) keeps a shadow CTM whose tree has the same nodes
as the simple discrete tree. Discrete edges have integer length; the
shadow may lag behind on leaves that hold a single miner.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Union

from .oracle import fork_guard
from .potential import (InvariantViolation, PotentialParams, _Frame, best_move_from,
                        elongation_event, even_split, fork_delta, potential, settle)
from .tree import DiscreteConfig, RootedTree, TreeError

LEN_TOL = 1e-9


class IllegalMove(ValueError):
    """The adversary broke a rule of the game."""


@dataclass(frozen=True)
class Elongate:
    leaf: int
    amount: float


@dataclass(frozen=True)
class Fork:
    leaf: int
    m: int
    child_ids: tuple | None = None


@dataclass(frozen=True)
class Delete:
    leaf: int


CtmMove = Union[Elongate, Fork, Delete]


@dataclass
class GameState:
    tree: RootedTree
    config: DiscreteConfig
    params: PotentialParams
    cost: float = 0.0
    clock: float = 0.0
    event_log: list = field(default_factory=list)
    guard_forks: bool = True
    snapshots: bool = False

    @classmethod
    def initial(cls, k: int, params: PotentialParams | None = None, length: float = 1.0,
                root: int = 0, leaf: int | None = None, **kw) -> "GameState":
        """One leaf at distance ``length`` below the root holding all k robots."""
        params = params or PotentialParams.default(k)
        params.validate(k)
        t = RootedTree(root)
        l = t.add_child(root, length, node=leaf)
        return cls(t, DiscreteConfig({l: k}, k), params, **kw)

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def x(self) -> dict:
        return self.config.weights

    def potential(self) -> float:
        return potential(self.tree, self.x, self.params)

    def shallowest_leaf_depth(self) -> float:
        return min(self.tree.root_distance(l) for l in self.tree.leaves())

    def snapshot(self) -> dict:
        return {"tree": self.tree.dumps(), "x": {str(l): v for l, v in sorted(self.x.items())},
                "cost": self.cost, "k": self.k}

    def _log(self, rec: dict) -> dict:
        rec["index"] = len(self.event_log)
        rec["cost"] = self.cost
        rec["clock"] = self.clock
        rec["potential_after"] = self.potential()
        if self.snapshots:
            rec["state"] = self.snapshot()
        self.event_log.append(rec)
        return rec


def _record_moves(x: dict, moves, origin=None):
    for s, t, d in moves:
        if origin is not None and s != origin:
            raise InvariantViolation(f"robot moved from {s}, expected every move to leave {origin}")
        x[s] -= 1
        x[t] = x.get(t, 0) + 1


def _elongate(state: GameState, leaf: int, amount: float, full_check: bool = True) -> dict:
    tree, x, params = state.tree, state.x, state.params
    if leaf not in tree or not tree.is_leaf(leaf):
        raise IllegalMove(f"elongate: {leaf} is not a leaf")
    if x.get(leaf, 0) < 2:
        raise IllegalMove(f"elongate: leaf {leaf} holds {x.get(leaf, 0)} robot(s); only leaves with more than one robot may be elongated")
    if amount < 0:
        raise IllegalMove("elongate: negative amount")
    remaining = float(amount)
    done = cost = 0.0
    moves = []
    stalls = 0
    leaves = tree.leaves()
    while remaining > 0 and x[leaf] >= 2:
        # lengths are read live, so one frame serves the whole event
        f = _Frame(tree, x, params)
        delta, dest = elongation_event(f, leaf, x[leaf], leaves, params)
        step = min(delta, remaining)
        tree.length[leaf] += step
        cost += step * x[leaf]
        state.clock += step
        done += step
        remaining -= step
        if delta <= step:
            # only moves out of the elongated leaf can fire here
            ex, t, d = best_move_from(f, leaf, leaves)
            if ex < 0:
                stalls += 1
                if stalls > 100:
                    raise InvariantViolation(f"elongation of {leaf} stalls at an event that never fires")
                continue
            x[leaf] -= 1
            x[t] = x.get(t, 0) + 1
            cost += d
            moves.append((leaf, t, d))
    extra = []
    if full_check:
        # nothing should fire here; extra moves are reported
        _, c2, extra = settle(tree, dict(x), params)
        _record_moves(x, extra)
        cost += c2
    state.cost += cost
    return {"event": "elongate", "leaf": leaf, "amount": done, "requested": float(amount),
            "cost_delta": cost, "moves": [list(m) for m in moves], "extra_moves": [list(m) for m in extra]}


def _fork(state: GameState, leaf: int, m: int, child_ids=None) -> dict:
    tree, x, params = state.tree, state.x, state.params
    if leaf not in tree or not tree.is_leaf(leaf):
        raise IllegalMove(f"fork: {leaf} is not a leaf")
    xl = x.get(leaf, 0)
    if xl < 3 or not 2 <= m <= xl - 1:
        raise IllegalMove(f"fork: leaf {leaf} with {xl} robots cannot get {m} children (needs x >= 3 and 2 <= m <= x-1)")
    if child_ids is None:
        child_ids = [tree._next_id + i for i in range(m)]
    child_ids = sorted(child_ids)
    if len(set(child_ids)) != m or any(c in tree for c in child_ids):
        raise IllegalMove(f"fork: child ids {child_ids} clash with existing nodes")
    guard = fork_guard(params, state.k, tree, leaf) if state.guard_forks else None
    delta = fork_delta(tree, x, leaf, m, params, guard=guard, child_ids=child_ids)
    share = even_split(x.pop(leaf), m)
    for cid, s in zip(child_ids, share):
        tree.add_child(leaf, delta, node=cid)
        x[cid] = s
    cost = delta * xl
    state.cost += cost
    return {"event": "fork", "leaf": leaf, "m": m, "children": child_ids, "delta": delta,
            "cost_delta": cost, "moves": []}


def evacuation(tree: RootedTree, x: dict, leaf: int, params: PotentialParams) -> list:
    """Greedy one-by-one evacuation of a dying leaf.

    Each robot goes where tension minus distance is largest, ties to the
    smallest leaf id.
    """
    x = dict(x)
    moves = []
    others = [l for l in tree.leaves() if l != leaf]
    while x.get(leaf, 0) > 0:
        f = _Frame(tree, x, params)
        prof = f.source_profile(leaf)
        best, dest, dist = -math.inf, None, 0.0
        for t in others:
            tau, d = f.tension_from(prof, t)
            if dest is None or tau - d > best + 1e-12 * abs(best):
                best, dest, dist = tau - d, t, d
        x[leaf] -= 1
        x[dest] = x.get(dest, 0) + 1
        moves.append((leaf, dest, dist))
    return moves


def remove_and_splice(tree: RootedTree, leaf: int):
    """Drop a leaf and merge a now-unary non-root parent into its child.

    Returns (spliced_parent, surviving_child) or (None, None).
    """
    p = tree.parent[leaf]
    tree.remove_leaf(leaf)
    if p != tree.root and len(tree.children[p]) == 1:
        return p, tree.splice_out(p)
    return None, None


def _delete(state: GameState, leaf: int) -> dict:
    tree, x, params = state.tree, state.x, state.params
    if leaf not in tree or not tree.is_leaf(leaf):
        raise IllegalMove(f"delete: {leaf} is not a leaf")
    if len(tree.leaves()) < 2:
        raise IllegalMove("delete: the last leaf cannot be killed")
    moves = evacuation(tree, x, leaf, params)
    _record_moves(x, moves, origin=leaf)
    cost = sum(m[2] for m in moves)
    x.pop(leaf)
    spliced, child = remove_and_splice(tree, leaf)
    # the evacuation should already be stable; anything else is reported
    _, c2, extra = settle(tree, dict(x), params)
    _record_moves(x, extra)
    cost += c2
    state.cost += cost
    return {"event": "delete", "leaf": leaf, "spliced": spliced, "cost_delta": cost,
            "moves": [list(m) for m in moves], "extra_moves": [list(m) for m in extra]}


def ctm_apply(state: GameState, move: CtmMove, params: PotentialParams | None = None) -> GameState:
    """Apply one adversary move and the player's response; mutates ``state``."""
    if params is not None and params != state.params:
        raise ValueError("params differ from the ones the state was built with")
    if isinstance(move, Elongate):
        rec = _elongate(state, move.leaf, move.amount)
    elif isinstance(move, Fork):
        rec = _fork(state, move.leaf, move.m, move.child_ids)
    elif isinstance(move, Delete):
        rec = _delete(state, move.leaf)
    else:
        raise IllegalMove(f"unknown move {move!r}")
    state._log(rec)
    return state


# ---------------------------------------------------------------- TM game


@dataclass
class TmState:
    """Discrete game with its shadow continuous game.

    ``full`` keeps every node ever created with unit edges (distances of
    the discrete game). ``simple`` is the pruned discrete tree whose edge
    lengths are the integer discrete lengths; it has the same node set
    as ``shadow.tree``.
    """

    full: RootedTree
    simple: RootedTree
    shadow: GameState
    cost: float = 0.0
    steps: int = 0
    finished: bool = False
    violations: list = field(default_factory=list)
    log: list = field(default_factory=list)

    @classmethod
    def initial(cls, k: int, params: PotentialParams | None = None, root: int = 0,
                guard_forks: bool = True) -> "TmState":
        """All k miners on ``root``, hung one unit below a virtual root -1."""
        shadow = GameState.initial(k, params, 1.0, root=-1, leaf=root, guard_forks=guard_forks)
        full = RootedTree(-1)
        full.add_child(-1, 1.0, node=root)
        return cls(full, full.copy(), shadow)

    @property
    def k(self) -> int:
        return self.shadow.k

    @property
    def miners(self) -> dict:
        return self.shadow.x

    @property
    def active_leaves(self) -> list:
        return [] if self.finished else self.simple.leaves()

    def depth(self) -> int:
        """Largest combinatorial depth reached, counting the virtual edge."""
        return int(round(self.full.depth()))

    def check_correspondence(self) -> list:
        """Problems with properties (a)-(d) between the discrete and shadow trees."""
        bad = []
        tc, td = self.shadow.tree, self.simple
        if set(tc.parent) != set(td.parent) or any(tc.parent[u] != td.parent[u] for u in td.parent):
            bad.append("(a) node or edge sets differ")
            return bad
        for u in td.length:
            dc, dd = tc.length[u], td.length[u]
            if td.is_leaf(u):
                if dc > dd + LEN_TOL:
                    bad.append(f"leaf {u}: shadow length {dc} exceeds discrete {dd}")
                elif dc < dd - LEN_TOL and self.miners.get(u, 0) != 1:
                    bad.append(f"(d) leaf {u} short with {self.miners.get(u, 0)} miners")
            elif abs(dc - dd) > LEN_TOL:
                bad.append(f"(c) internal {u}: {dc} vs {dd}")
        if sum(self.miners.values()) != self.k or min(self.miners.values()) < 1:
            bad.append("(b) miners do not form a configuration with x >= 1")
        if not td.is_simple():
            bad.append("discrete tree is not simple")
        return bad


def emulate_shadow_step(state: TmState, chosen: int, children: Iterable[int]):
    """Mirror one discrete step in the shadow and let it run until it settles.

    ``children`` are the new active leaves below ``chosen``, one miner
    each; the remaining miners of ``chosen`` are the excess. Returns
    ``(gains, ctm_cost_delta)`` where ``gains`` maps each leaf to the
    number of excess miners it receives.
    """
    sh = state.shadow
    x = sh.x
    children = sorted(children)
    m = len(children)
    xl = x[chosen]
    if m > xl - 1 and not (m == 0 and xl >= 1):
        raise IllegalMove(f"leaf {chosen} with {xl} miners cannot get {m} children")
    before = dict(x)
    pre = {l: v for l, v in before.items() if l != chosen}
    for c in children:
        pre[c] = 1
    c0 = sh.cost
    if m == 0:
        ctm_apply(sh, Delete(chosen))
        _, child = remove_and_splice(state.simple, chosen)
    elif m == 1:
        c = children[0]
        sh.tree.relabel(chosen, c)
        x[c] = x.pop(chosen)
        state.simple.relabel(chosen, c)
        state.simple.length[c] += 1.0
        sh._log({"event": "relabel", "leaf": chosen, "to": c, "cost_delta": 0.0, "moves": []})
    else:
        ctm_apply(sh, Fork(chosen, m, tuple(children)))
        for c in children:
            state.simple.add_child(chosen, 1.0, node=c)
    # elongate short leaves that hold spare miners
    guard = 0
    grown = set()
    while True:
        todo = [l for l in sh.tree.leaves()
                if x.get(l, 0) >= 2 and sh.tree.length[l] < state.simple.length[l] - LEN_TOL]
        if not todo:
            break
        guard += 1
        if guard > 10 ** 6:
            raise InvariantViolation("shadow elongation loop does not terminate")
        l = todo[0]
        grown.add(l)
        sh._log(_elongate(sh, l, state.simple.length[l] - sh.tree.length[l], full_check=False))
        if x.get(l, 0) >= 2:
            # guard against drift: pin the length exactly
            sh.tree.length[l] = state.simple.length[l]
    _, c2, extra = settle(sh.tree, dict(x), sh.params)
    if extra:
        _record_moves(x, extra)
        sh.cost += c2
        # an event landing exactly on the pinned length fires here, out of a
        # leaf that was just elongated; anything else breaks the elongation rule
        late = [m for m in extra if m[0] in grown]
        if late:
            sh._log({"event": "late-move", "leaf": late[0][0], "cost_delta": c2,
                     "moves": [list(m) for m in extra]})
        if len(late) < len(extra):
            state.violations.append(("unexpected moves after elongation", chosen, extra))
    gains = {}
    for l, v in x.items():
        g = v - pre.get(l, 0)
        if g < 0:
            raise InvariantViolation(f"leaf {l} lost {-g} miner(s) during a discrete step")
        if g:
            gains[l] = g
    if sum(gains.values()) != xl - m:
        raise InvariantViolation(f"excess miners not conserved: {gains} vs {xl - m}")
    return gains, sh.cost - c0


def tm_step(state: TmState, chosen: int, children: Iterable[int] | None = None):
    """One round of the discrete game; mutates ``state``.

    By default ``chosen`` receives x-1 fresh children. A smaller list of
    children is accepted (the exploration reduction produces those).
    Returns a report dict with the excess destinations and costs.
    """
    if state.finished:
        raise IllegalMove("the game is over")
    if chosen not in state.simple or not state.simple.is_leaf(chosen):
        raise IllegalMove(f"{chosen} is not an active leaf")
    xl = state.miners[chosen]
    if children is None:
        children = [state.full._next_id + i for i in range(xl - 1)]
    children = sorted(children)
    for c in children:
        if c not in state.full:
            state.full.add_child(chosen, 1.0, node=c)
    state.steps += 1
    if not children and len(state.simple.leaves()) == 1:
        state.finished = True
        rep = {"step": state.steps, "leaf": chosen, "children": [], "gains": {}, "cost_delta": 0.0,
               "ctm_cost_delta": 0.0, "finished": True}
        state.log.append(rep)
        return rep
    gains, ctm_delta = emulate_shadow_step(state, chosen, children)
    cost = sum(g * state.full.distance(chosen, l) for l, g in gains.items())
    state.cost += cost
    rep = {"step": state.steps, "leaf": chosen, "children": children, "gains": gains,
           "cost_delta": cost, "ctm_cost_delta": ctm_delta, "finished": False}
    if state.cost > state.shadow.cost + 1e-9 * max(1.0, state.shadow.cost):
        state.violations.append(("cost", state.steps, state.cost, state.shadow.cost))
    bad = state.check_correspondence()
    if bad:
        state.violations.append(("correspondence", state.steps, bad))
    state.log.append(rep)
    return rep


# ------------------------------------------------------------ adversaries


class NullAdversary:
    def __call__(self, state):
        return None


class RandomAdversary:
    """Random legal moves from a seeded generator.

    Leaves shorter than ``min_fork_length`` are never forked: repeated
    forks of fresh children shrink edges geometrically and soon leave
    double precision behind.
    """

    def __init__(self, seed: int = 0, max_amount: float = 1.5, p_delete: float = 0.2,
                 p_fork: float = 0.2, min_fork_length: float = 1e-3):
        self.rng = random.Random(seed)
        self.max_amount = max_amount
        self.p_delete, self.p_fork = p_delete, p_fork
        self.min_fork_length = min_fork_length

    def __call__(self, state: GameState):
        rng = self.rng
        x = state.x
        leaves = state.tree.leaves()
        el = [l for l in leaves if x[l] >= 2]
        fk = [l for l in leaves if x[l] >= 3 and state.tree.length[l] >= self.min_fork_length]
        r = rng.random()
        if len(leaves) > 1 and (r < self.p_delete or not el):
            return Delete(rng.choice(leaves))
        if fk and r < self.p_delete + self.p_fork:
            l = rng.choice(fk)
            return Fork(l, rng.randint(2, x[l] - 1))
        if el:
            return Elongate(rng.choice(el), rng.uniform(0.0, self.max_amount))
        return None


class DeepestAdversary:
    """Pushes the deepest leaf that still holds spare robots.

    Forks it into x-1 children when possible, else elongates it by
    ``amount``; when every leaf has one robot the shallowest leaf dies.
    """

    def __init__(self, amount: float = 1.0):
        self.amount = amount

    def __call__(self, state: GameState):
        x = state.x
        tree = state.tree
        leaves = tree.leaves()
        depth = {l: tree.root_distance(l) for l in leaves}
        el = [l for l in leaves if x[l] >= 2]
        if el:
            l = max(el, key=lambda u: (depth[u], -u))
            if x[l] >= 3:
                return Fork(l, x[l] - 1)
            return Elongate(l, self.amount)
        if len(leaves) > 1:
            return Delete(min(leaves, key=lambda u: (depth[u], u)))
        return None


def parse_script(text: str) -> list:
    """Moves from `E leaf amount`, `F leaf m`, `D leaf` or `T leaf` lines."""
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        p = line.split()
        try:
            if p[0] == "E" and len(p) == 3:
                out.append(Elongate(int(p[1]), float(p[2])))
            elif p[0] == "F" and len(p) == 3:
                out.append(Fork(int(p[1]), int(p[2])))
            elif p[0] == "D" and len(p) == 2:
                out.append(Delete(int(p[1])))
            elif p[0] == "T" and len(p) == 2:
                out.append(("T", int(p[1])))
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"script line {n}: cannot parse {line!r}") from None
    return out


class ScriptAdversary:
    def __init__(self, moves):
        self.moves = list(moves)
        self.i = 0

    def __call__(self, state):
        if self.i >= len(self.moves):
            return None
        mv = self.moves[self.i]
        self.i += 1
        return mv


@dataclass
class RunReport:
    events: int
    cost: float
    bound: float
    bound_ok: bool
    checks: list = field(default_factory=list)
    check_failures: int = 0
    error: str | None = None


def run_adversary(state: GameState, adversary: Callable, budget: int,
                  checker: Callable | None = None, stream=None):
    """Let ``adversary`` play up to ``budget`` moves.

    After each event the cost is compared with gamma*phi(k) times the
    depth of the shallowest leaf, and ``checker(state, index)`` runs if
    given. Returns (state, RunReport).
    """
    bound_ok = True
    failures = 0
    error = None
    checks = []
    bound = state.params.bound_constant(state.k) * state.shallowest_leaf_depth()
    if checker is not None:
        rec = checker(state, -1)
        failures += not rec["ok"]
    for _ in range(budget):
        mv = adversary(state)
        if mv is None:
            break
        try:
            ctm_apply(state, mv)
        except IllegalMove as e:
            error = str(e)
            break
        bound = state.params.bound_constant(state.k) * state.shallowest_leaf_depth()
        if state.cost > bound * (1 + 1e-9):
            bound_ok = False
        if stream is not None:
            stream.write(json.dumps(state.event_log[-1], sort_keys=True) + "\n")
        if checker is not None:
            rec = checker(state, len(state.event_log) - 1)
            failures += not rec["ok"]
    if checker is not None:
        checks = getattr(checker, "records", [])
    return state, RunReport(len(state.event_log), state.cost, bound, bound_ok, checks, failures, error)


class RandomTmAdversary:
    """Random discrete rounds: a random active leaf gets 0..x-1 children."""

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def __call__(self, state: TmState):
        leaves = state.active_leaves
        if not leaves:
            return None
        l = self.rng.choice(leaves)
        x = state.miners[l]
        lo = 1 if len(leaves) == 1 and x > 1 else 0
        return ("T", l, self.rng.randint(lo, x - 1))


class DeepestTmAdversary:
    """The deepest active leaf with spare miners gets x-1 children."""

    def __call__(self, state: TmState):
        leaves = state.active_leaves
        if not leaves:
            return None
        x = state.miners
        cand = [l for l in leaves if x[l] >= 2] or leaves
        l = max(cand, key=lambda u: (state.full.root_distance(u), -u))
        return ("T", l, x[l] - 1)


def run_tm(state: TmState, adversary: Callable, budget: int, stream=None) -> dict:
    """Play up to ``budget`` discrete rounds; ``adversary`` yields ("T", leaf[, m])."""
    error = None
    for _ in range(budget):
        mv = adversary(state)
        if mv is None or state.finished:
            break
        if not (isinstance(mv, tuple) and mv[0] == "T"):
            error = f"not a discrete move: {mv!r}"
            break
        leaf = mv[1]
        kids = None
        if len(mv) > 2:
            kids = [state.full._next_id + i for i in range(mv[2])]
        try:
            rep = tm_step(state, leaf, kids)
        except IllegalMove as e:
            error = str(e)
            break
        if stream is not None:
            rec = dict(rep, gains={str(u): g for u, g in sorted(rep["gains"].items())},
                       cost=state.cost, ctm_cost=state.shadow.cost)
            stream.write(json.dumps(rec, sort_keys=True) + "\n")
    return {"steps": state.steps, "cost": state.cost, "ctm_cost": state.shadow.cost,
            "finished": state.finished, "violations": len(state.violations), "error": error}
