"""Layered tree traversal driven by asynchronous exploration.

The layered tree is contracted along its length-0 edges and explored by
k robots, granting moves layer by layer until every robot stands on a
node of the next layer. The robots' empirical distribution per layer is a
fractional strategy; per-layer optimal couplings round it to a
randomized searcher.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from .acte import ExplorationState, SchedulerExhausted, acte_bound
from .potential import PotentialParams
from .tree import TOL, RootedTree, TreeError, ot_coupling


@dataclass
class LayeredTree:
    layers: list  # list of lists of node ids, layers[0] == [source]
    parent: dict  # child -> parent in the previous layer
    length: dict  # child -> nonnegative integer edge length
    target: int

    def __post_init__(self):
        self.validate()

    @property
    def source(self) -> int:
        return self.layers[0][0]

    @property
    def N(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> int:
        return max(len(l) for l in self.layers)

    @property
    def L(self) -> int:
        return sum(self.length.values())

    @property
    def D(self) -> int:
        d, v = 0, self.target
        while v != self.source:
            d += self.length[v]
            v = self.parent[v]
        return d

    def validate(self):
        if not self.layers or len(self.layers[0]) != 1:
            raise TreeError("the first layer must hold the source alone")
        seen = set(self.layers[0])
        for i in range(1, len(self.layers)):
            prev = set(self.layers[i - 1])
            for v in self.layers[i]:
                if v in seen:
                    raise TreeError(f"node {v} appears twice")
                seen.add(v)
                if self.parent.get(v) not in prev:
                    raise TreeError(f"node {v} in layer {i} needs a parent in layer {i - 1}")
                d = self.length.get(v)
                if d is None or d < 0 or int(d) != d:
                    raise TreeError(f"edge into {v} needs a nonnegative integer length, got {d!r}")
        if set(self.parent) != seen - set(self.layers[0]):
            raise TreeError("edges do not match the layers")
        if self.target not in self.layers[-1]:
            raise TreeError("target must lie in the last layer")

    def layer_of(self) -> dict:
        return {v: i for i, l in enumerate(self.layers) for v in l}

    # -- text format ----------------------------------------------------
    def dumps(self) -> str:
        out = [f"layers {self.N}"]
        for i, l in enumerate(self.layers):
            out.append(f"layer {i} " + " ".join(map(str, l)))
        for l in self.layers[1:]:
            for v in l:
                out.append(f"edge {self.parent[v]} {v} {int(self.length[v])}")
        out.append(f"target {self.target}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LayeredTree":
        layers, parent, length, target, count = {}, {}, {}, None, None
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].split()
            if not line:
                continue
            try:
                if line[0] == "layers":
                    count = int(line[1])
                elif line[0] == "layer":
                    layers[int(line[1])] = [int(v) for v in line[2:]]
                elif line[0] == "edge":
                    p, c, d = int(line[1]), int(line[2]), int(line[3])
                    parent[c], length[c] = p, d
                elif line[0] == "target":
                    target = int(line[1])
                else:
                    raise ValueError(f"unknown keyword {line[0]!r}")
            except (IndexError, ValueError) as e:
                raise TreeError(f"line {no}: {e}") from None
        if count is None or target is None:
            raise TreeError("missing 'layers' or 'target' line")
        if sorted(layers) != list(range(len(layers))) or len(layers) != count:
            raise TreeError(f"expected layers 0..{count - 1}")
        return cls([layers[i] for i in range(count)], parent, length, target)


def load_layered(path) -> LayeredTree:
    with open(path) as fh:
        return LayeredTree.loads(fh.read())


@dataclass
class FractionalPosition:
    layer: int
    distribution: dict

    def __post_init__(self):
        if abs(sum(self.distribution.values()) - 1.0) > 1e-9:
            raise ValueError("distribution must have mass 1")


# -- preprocessing ---------------------------------------------------------

def reduce_target(lt: LayeredTree) -> LayeredTree:
    """Append a layer holding only the target when the last layer has others."""
    if lt.layers[-1] == [lt.target]:
        return lt
    t = max(lt.parent.keys() | {lt.source}) + 1
    return LayeredTree(lt.layers + [[t]], {**lt.parent, t: lt.target}, {**lt.length, t: 0}, t)


def subdivide(lt: LayeredTree) -> LayeredTree:
    """Cut integer edges into 0/1 segments, inserting intermediate layers."""
    if all(d <= 1 for d in lt.length.values()):
        return lt
    nxt = max(lt.parent.keys() | {lt.source}) + 1
    layers = [list(lt.layers[0])]
    parent, length = {}, {}
    for i in range(1, lt.N):
        M = max([lt.length[v] for v in lt.layers[i]] + [1])
        tails = {v: lt.parent[v] for v in lt.layers[i]}
        for step in range(M - 1):
            lay = []
            for v in lt.layers[i]:
                u = nxt
                nxt += 1
                parent[u], length[u] = tails[v], int(step < lt.length[v])
                tails[v] = u
                lay.append(u)
            layers.append(lay)
        for v in lt.layers[i]:
            parent[v], length[v] = tails[v], int(M - 1 < lt.length[v])
        layers.append(list(lt.layers[i]))
    return LayeredTree(layers, parent, length, lt.target)


def contract_zero_edges(lt: LayeredTree) -> tuple[RootedTree, dict]:
    """Merge nodes joined by length-0 edges; the group top represents them.

    Returns the unit-edge tree with dense ids (parents before children) and
    the map from layered nodes to contracted ids.
    """
    if any(d not in (0, 1) for d in lt.length.values()):
        raise TreeError("contraction needs 0/1 lengths, subdivide first")
    dense = {lt.source: 0}
    mp = {lt.source: 0}
    t = RootedTree(0)
    for l in lt.layers[1:]:
        for v in l:
            pv = mp[lt.parent[v]]
            if lt.length[v] == 0:
                mp[v] = pv
            else:
                dense[v] = len(dense)
                mp[v] = t.add_child(pv, 1.0, node=dense[v])
    return t, mp


def tune_k(lt: LayeredTree) -> int:
    return max(2, math.isqrt(lt.width))


def ltt_bound(L: float, k: int, D: float, params: PotentialParams | None = None) -> float:
    """(2L + gamma*phi(k)*D)/k + 1."""
    params = params or PotentialParams.default(k)
    return (2 * L + params.bound_constant(k) * D) / k + 1


# -- fractional strategy ---------------------------------------------------

@dataclass
class LttResult:
    k: int
    w: int
    N: int
    L: int
    D: int
    cost: float  # sum of per-layer transport costs
    moves: int
    bound: float
    positions: list
    layer_ot: list
    window_moves: list
    violations: list = field(default_factory=list)
    _supports: list = field(default_factory=list, repr=False)
    _couplings: list = field(default_factory=list, repr=False)
    _hidden: object = field(default=None, repr=False)

    @property
    def moves_over_k(self) -> float:
        return self.moves / self.k

    @property
    def ok(self) -> bool:
        return self.cost <= self.bound and self.moves_over_k <= self.bound and not self.violations


def _support_coupling(h, p: dict, q: dict):
    """Optimal coupling of two measures on the hidden tree, solved on the
    subtree spanned by their supports."""
    nodes = set(p) | set(q)
    top = None
    for u in nodes:
        top = u if top is None else h.lca(top, u)
    sub = RootedTree(top)
    for u in sorted(nodes, key=h.depth.__getitem__):
        chain = []
        while u not in sub:
            chain.append(u)
            u = h.parent[u]
        for v in reversed(chain):
            sub.add_child(h.parent[v], 1.0, node=v)
    return ot_coupling(sub, p, q)


def fractional_traverse(lt: LayeredTree, k: int, params: PotentialParams | None = None,
                        max_grants: int | None = None) -> LttResult:
    if k < 2:
        raise ValueError("need k >= 2")
    params = params or PotentialParams.default(k)
    L, D, w = lt.L, lt.D, lt.width
    lt2 = subdivide(reduce_target(lt))
    tp, mp = contract_zero_edges(lt2)
    st = ExplorationState(tp, k, params)
    h = st.hidden
    if max_grants is None:
        max_grants = 50 * (acte_bound(len(tp), k, h.D, params) + k)

    def dist_of(i):
        counts = {}
        for p in st.pos:
            counts[p] = counts.get(p, 0) + 1
        return {u: c / k for u, c in sorted(counts.items())}

    first = {}
    supports = [dist_of(0)]
    positions = [FractionalPosition(0, {lt2.source: 1.0})]
    couplings, layer_ot, window_moves, violations = [], [], [], []
    for i in range(1, lt2.N):
        front = {mp[v] for v in lt2.layers[i]}
        m0 = st.moves
        while True:
            moved = False
            for r in range(k):
                if st.pos[r] not in front:
                    if st.moves >= max_grants:
                        raise SchedulerExhausted(f"layer {i} not reached after {st.moves} grants")
                    st.step(r)
                    moved = True
                    if st.done:
                        raise RuntimeError("exploration finished before the target layer")
            if not moved:
                break
        p = dist_of(i)
        cpl = _support_coupling(h, supports[-1], p)
        ot = sum(q * h.distance(s, t) for s, t, q in cpl)
        wm = st.moves - m0
        if ot > wm / k + 1e-9:
            violations.append(("transport exceeds window moves", i, ot, wm / k))
        supports.append(p)
        couplings.append(cpl)
        layer_ot.append(ot)
        window_moves.append(wm)
        for v in lt2.layers[i]:
            first.setdefault((i, mp[v]), v)
        positions.append(FractionalPosition(i, {first[(i, u)]: m for u, m in p.items()}))
    violations += st.violations + st.tm.violations
    return LttResult(k, w, lt.N, L, D, float(sum(layer_ot)), st.moves, ltt_bound(L, k, D, params),
                     positions, layer_ot, window_moves, violations, supports, couplings, h)


# -- rounding ----------------------------------------------------------------

def rounded_costs(res: LttResult, samples: int, seed: int = 0) -> np.ndarray:
    """Costs of ``samples`` searchers drawn from the per-layer couplings."""
    rng = np.random.default_rng(seed)
    h = res._hidden
    pos = np.zeros(samples, dtype=np.int64)
    cost = np.zeros(samples)
    for i, cpl in enumerate(res._couplings):
        prev = res._supports[i]
        rows = {}
        for s, t, q in cpl:
            rows.setdefault(s, ([], []))
            rows[s][0].append(t)
            rows[s][1].append(q)
        new = pos.copy()
        for s in np.unique(pos):
            s = int(s)
            if s not in rows:
                raise ValueError(f"searcher at {s} outside the coupling support")
            dests, qs = rows[s]
            mass = sum(qs)
            if abs(mass - prev.get(s, 0.0)) > 1e-9:
                raise ValueError(f"coupling mass mismatch at {s}: {mass} vs {prev.get(s, 0.0)}")
            idx = np.flatnonzero(pos == s)
            pick = rng.choice(len(dests), size=idx.size, p=np.asarray(qs) / mass)
            d = np.array([h.distance(s, t) for t in dests], dtype=float)
            cost[idx] += d[pick]
            new[idx] = np.asarray(dests)[pick]
        pos = new
    return cost


def rounded_traverse(lt: LayeredTree, k: int, seed: int = 0, params=None) -> float:
    """Length of one sampled searcher trajectory."""
    return float(rounded_costs(fractional_traverse(lt, k, params), 1, seed)[0])


def monte_carlo(res: LttResult, samples: int = 10000, seed: int = 0) -> dict:
    c = rounded_costs(res, samples, seed)
    se = float(c.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    mean = float(c.mean())
    return {"samples": samples, "mean": mean, "stderr": se, "fractional": res.cost,
            "within_3se": abs(mean - res.cost) <= 3 * se + TOL}


# -- baseline and generators -----------------------------------------------

def layered_dfs(lt: LayeredTree) -> int:
    """Cost of the online depth-first searcher.

    At each layer the searcher moves to the first node of the new layer
    that is not left of its position in depth-first order (children by id).
    """
    kids = {v: [] for l in lt.layers for v in l}
    for c, p in lt.parent.items():
        kids[p].append(c)
    pre, wdepth, layer = {}, {lt.source: 0}, lt.layer_of()
    stack = [lt.source]
    while stack:
        u = stack.pop()
        pre[u] = len(pre)
        for c in sorted(kids[u], reverse=True):
            wdepth[c] = wdepth[u] + lt.length[c]
            stack.append(c)

    def dist(u, v):
        a, b = u, v
        while layer[a] > layer[b]:
            a = lt.parent[a]
        while layer[b] > layer[a]:
            b = lt.parent[b]
        while a != b:
            a, b = lt.parent[a], lt.parent[b]
        return wdepth[u] + wdepth[v] - 2 * wdepth[a]

    cur, total = lt.source, 0
    for l in lt.layers[1:]:
        order = sorted(l, key=pre.__getitem__)
        ahead = [v for v in order if pre[v] >= pre[cur]]
        nxt = ahead[0] if ahead else order[0]
        total += dist(cur, nxt)
        cur = nxt
    if cur != lt.target:
        total += dist(cur, lt.target)
    return total


def gen_unit_layered(w: int, N: int, seed: int = 0) -> LayeredTree:
    """Source, N-1 layers of w nodes with uniform parents, then the target; D = N."""
    if w < 1 or N < 1:
        raise ValueError("need w, N >= 1")
    rng = random.Random(seed)
    layers, parent, length = [[0]], {}, {}
    nxt = 1
    for i in range(1, N):
        lay = list(range(nxt, nxt + w))
        nxt += w
        for v in lay:
            parent[v] = rng.choice(layers[-1])
            length[v] = 1
        layers.append(lay)
    parent[nxt], length[nxt] = rng.choice(layers[-1]), 1
    layers.append([nxt])
    return LayeredTree(layers, parent, length, nxt)


def gen_average_case(w: int, N: int, seed: int = 0) -> LayeredTree:
    """Source, N layers of w nodes with uniform parents and Bernoulli(1/2)
    lengths, then the target hung by a length-0 edge from a random node of
    the last layer."""
    if w < 1 or N < 1:
        raise ValueError("need w, N >= 1")
    rng = random.Random(seed)
    layers, parent, length = [[0]], {}, {}
    nxt = 1
    for i in range(N):
        lay = list(range(nxt, nxt + w))
        nxt += w
        for v in lay:
            parent[v] = rng.choice(layers[-1])
            length[v] = rng.getrandbits(1)
        layers.append(lay)
    parent[nxt], length[nxt] = rng.choice(layers[-1]), 0
    layers.append([nxt])
    return LayeredTree(layers, parent, length, nxt)
