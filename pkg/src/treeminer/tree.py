"""Rooted weighted trees, leaf configurations and transport on tree metrics.

Node ids are plain integers handed out by a per-tree counter and never
reused, so logs can keep referring to nodes after they were deleted.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

TOL = 1e-9


class TreeError(ValueError):
    pass


class RootedTree:
    """A rooted tree with positive edge lengths.

    ``length[u]`` is the length of the edge from ``u`` to its parent.
    Children lists are kept sorted by id.
    """

    def __init__(self, root: int = 0):
        self.root = root
        self.parent: dict[int, int | None] = {root: None}
        self.children: dict[int, list[int]] = {root: []}
        self.length: dict[int, float] = {}
        self._next_id = root + 1

    # -- construction -------------------------------------------------
    def add_child(self, parent: int, length: float = 1.0, node: int | None = None) -> int:
        if parent not in self.parent:
            raise TreeError(f"unknown node {parent}")
        if node is None:
            node = self._next_id
        elif node in self.parent:
            raise TreeError(f"node {node} already exists")
        if not length > 0:
            raise TreeError(f"edge length must be positive, got {length!r} for node {node}")
        self._next_id = max(self._next_id, node + 1)
        self.parent[node] = parent
        self.children[node] = []
        self.length[node] = float(length)
        kids = self.children[parent]
        kids.append(node)
        if len(kids) > 1 and kids[-2] > node:
            kids.sort()
        return node

    def new_id(self) -> int:
        node = self._next_id
        self._next_id += 1
        return node

    def reserve_ids(self, upto: int) -> None:
        self._next_id = max(self._next_id, upto)

    def copy(self) -> "RootedTree":
        t = RootedTree.__new__(RootedTree)
        t.root = self.root
        t.parent = dict(self.parent)
        t.children = {u: list(c) for u, c in self.children.items()}
        t.length = dict(self.length)
        t._next_id = self._next_id
        return t

    # -- queries ------------------------------------------------------
    def __contains__(self, u) -> bool:
        return u in self.parent

    def __len__(self) -> int:
        return len(self.parent)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.parent)

    def _check(self, u):
        if u not in self.parent:
            raise TreeError(f"unknown node {u}")

    def is_leaf(self, u: int) -> bool:
        return not self.children[u]

    def leaves(self) -> list[int]:
        """Sorted leaf ids. A childless root counts as a leaf."""
        return sorted(u for u, c in self.children.items() if not c)

    def path_to_root(self, u: int) -> list[int]:
        """Nodes from ``u`` up to the root, root excluded."""
        self._check(u)
        out = []
        parent = self.parent
        while u != self.root:
            out.append(u)
            u = parent[u]
        return out

    def root_distance(self, u: int) -> float:
        self._check(u)
        s = 0.0
        parent, length = self.parent, self.length
        while u != self.root:
            s += length[u]
            u = parent[u]
        return s

    def combinatorial_depth(self, u: int) -> int:
        return len(self.path_to_root(u))

    def depth(self) -> float:
        """Largest root-to-node distance."""
        dist = {self.root: 0.0}
        best = 0.0
        for u in self.preorder():
            if u != self.root:
                dist[u] = dist[self.parent[u]] + self.length[u]
                best = max(best, dist[u])
        return best

    def preorder(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            u = stack.pop()
            out.append(u)
            stack.extend(reversed(self.children[u]))
        return out

    def postorder(self) -> list[int]:
        return self.preorder()[::-1]

    def lca(self, u: int, v: int) -> int:
        self._check(u)
        self._check(v)
        seen = {u}
        a = u
        while a != self.root:
            a = self.parent[a]
            seen.add(a)
        b = v
        while b not in seen:
            b = self.parent[b]
        return b

    def distance(self, u: int, v: int) -> float:
        if u == v:
            self._check(u)
            return 0.0
        a = self.lca(u, v)
        return self._climb(u, a) + self._climb(v, a)

    def _climb(self, u: int, ancestor: int) -> float:
        s = 0.0
        while u != ancestor:
            s += self.length[u]
            u = self.parent[u]
        return s

    def is_simple(self) -> bool:
        return all(len(c) != 1 for u, c in self.children.items() if u != self.root)

    def leaf_below(self) -> dict[int, list[int]]:
        """For every node, the sorted leaves in its subtree."""
        below: dict[int, list[int]] = {}
        for u in self.postorder():
            kids = self.children[u]
            if not kids:
                below[u] = [u]
            else:
                acc = []
                for c in kids:
                    acc.extend(below[c])
                acc.sort()
                below[u] = acc
        return below

    # -- mutation -----------------------------------------------------
    def remove_leaf(self, u: int) -> None:
        self._check(u)
        if self.children[u]:
            raise TreeError(f"node {u} is not a leaf")
        if u == self.root:
            raise TreeError("cannot remove the root")
        p = self.parent.pop(u)
        del self.children[u]
        del self.length[u]
        self.children[p].remove(u)

    def splice_out(self, u: int) -> int:
        """Remove unary non-root node ``u``, merging its two edges.

        Returns the surviving child, whose edge length becomes
        ``length[u] + length[child]``.
        """
        kids = self.children[u]
        if u == self.root or len(kids) != 1:
            raise TreeError(f"node {u} is not a unary internal node")
        c = kids[0]
        p = self.parent[u]
        self.length[c] += self.length[u]
        self.parent[c] = p
        pk = self.children[p]
        pk[pk.index(u)] = c
        pk.sort()
        del self.parent[u], self.children[u], self.length[u]
        return c

    def relabel(self, old: int, new: int) -> None:
        if new in self.parent:
            raise TreeError(f"node {new} already exists")
        self._check(old)
        p = self.parent.pop(old)
        kids = self.children.pop(old)
        self.parent[new] = p
        self.children[new] = kids
        for c in kids:
            self.parent[c] = new
        if old == self.root:
            self.root = new
        else:
            self.length[new] = self.length.pop(old)
            pk = self.children[p]
            pk[pk.index(old)] = new
            pk.sort()
        self._next_id = max(self._next_id, new + 1)

    def normalize_simple(self) -> "RootedTree":
        """Copy of the tree with every unary non-root node spliced out."""
        t = self.copy()
        for u in t.postorder():
            if u != t.root and len(t.children[u]) == 1:
                t.splice_out(u)
        return t

    # -- text format --------------------------------------------------
    def dumps(self) -> str:
        lines = [f"tree {len(self)} {self.root}"]
        for u in self.preorder():
            if u != self.root:
                lines.append(f"{u} {self.parent[u]} {self.length[u]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RootedTree":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or rows[0][0] != "tree" or len(rows[0]) != 3:
            raise TreeError("expected header 'tree <n> <root_id>'")
        n, root = int(rows[0][1]), int(rows[0][2])
        edges = {}
        for row in rows[1:]:
            if len(row) != 3:
                raise TreeError(f"bad edge line: {' '.join(row)}")
            u, p, d = int(row[0]), int(row[1]), float(row[2])
            if u in edges or u == root:
                raise TreeError(f"node {u} listed twice")
            edges[u] = (p, d)
        if len(edges) + 1 != n:
            raise TreeError(f"header says {n} nodes, found {len(edges) + 1}")
        t = cls(root)
        pending = dict(edges)
        by_parent: dict[int, list[int]] = {}
        for u, (p, _) in pending.items():
            by_parent.setdefault(p, []).append(u)
        stack = [root]
        while stack:
            p = stack.pop()
            for u in sorted(by_parent.get(p, ())):
                t.add_child(p, pending.pop(u)[1], node=u)
                stack.append(u)
        if pending:
            raise TreeError(f"nodes not connected to the root: {sorted(pending)[:5]}")
        return t

    @classmethod
    def from_parents(cls, parents: Mapping[int, int], lengths: Mapping[int, float] | None = None,
                     root: int = 0) -> "RootedTree":
        lengths = lengths or {}
        text = [f"tree {len(parents) + 1} {root}"]
        text += [f"{u} {p} {lengths.get(u, 1.0)!r}" for u, p in parents.items()]
        return cls.loads("\n".join(text))

    def __repr__(self) -> str:
        return f"RootedTree(n={len(self)}, root={self.root}, leaves={len(self.leaves())})"


def load_tree(path) -> RootedTree:
    with open(path) as fh:
        return RootedTree.loads(fh.read())


# -- configurations ---------------------------------------------------


@dataclass
class DiscreteConfig:
    """Integer robot counts on the leaves."""

    weights: dict[int, int]
    k: int = field(default=-1)

    def __post_init__(self):
        self.weights = {int(u): int(v) for u, v in self.weights.items()}
        if self.k < 0:
            self.k = sum(self.weights.values())
        if any(v < 0 for v in self.weights.values()):
            raise TreeError("negative robot count")
        if sum(self.weights.values()) != self.k:
            raise TreeError(f"weights sum to {sum(self.weights.values())}, expected k={self.k}")

    def __getitem__(self, leaf):
        return self.weights.get(leaf, 0)


@dataclass
class FractionalConfig:
    """Nonnegative real weights on the leaves summing to ``k``."""

    weights: dict[int, float]
    k: float = field(default=-1.0)

    def __post_init__(self):
        self.weights = {int(u): float(v) for u, v in self.weights.items()}
        total = sum(self.weights.values())
        if self.k < 0:
            self.k = total
        if any(v < -TOL for v in self.weights.values()):
            raise TreeError("negative weight")
        if abs(total - self.k) > TOL * max(1.0, abs(self.k)):
            raise TreeError(f"weights sum to {total}, expected k={self.k}")

    def __getitem__(self, leaf):
        return self.weights.get(leaf, 0.0)


def _weights(c) -> Mapping[int, float]:
    return c.weights if isinstance(c, (DiscreteConfig, FractionalConfig)) else c


def extend_config(tree: RootedTree, c) -> dict[int, float]:
    """Extend leaf weights to every node by summing over descendant leaves."""
    w = _weights(c)
    leaves = tree.leaves()
    if set(w) - set(leaves) or any(v != 0 for u, v in w.items() if u not in tree):
        raise TreeError(f"config has entries off the leaf set: {sorted(set(w) - set(leaves))[:5]}")
    ext = {}
    for u in tree.postorder():
        kids = tree.children[u]
        ext[u] = sum(ext[c] for c in kids) if kids else w.get(u, 0)
    return ext


def ot_cost(tree: RootedTree, c1, c2) -> float:
    """Transport cost sum_u d_u |x_u - x'_u| between equal-mass configurations."""
    x, y = extend_config(tree, c1), extend_config(tree, c2)
    r = tree.root
    if abs(x[r] - y[r]) > TOL * max(1.0, abs(x[r])):
        raise TreeError(f"mass mismatch: {x[r]} vs {y[r]}")
    return sum(d * abs(x[u] - y[u]) for u, d in tree.length.items())


def ot_coupling(tree: RootedTree, c1, c2, tol: float = TOL) -> list[tuple[int, int, float]]:
    """Optimal coupling between two equal-mass measures on tree nodes.

    Supply and demand are matched inside each subtree before anything is
    passed to the parent, so no edge carries mass in both directions.
    Masses may sit on any node, not only leaves.
    """
    a, b = _weights(c1), _weights(c2)
    ma, mb = sum(a.values()), sum(b.values())
    if abs(ma - mb) > tol * max(1.0, abs(ma)):
        raise TreeError(f"mass mismatch: {ma} vs {mb}")
    plan: dict[tuple[int, int], float] = {}
    pending: dict[int, tuple[list, list]] = {}
    for u in tree.postorder():
        sup: list[list] = []
        dem: list[list] = []
        for c in tree.children[u]:
            s, d = pending.pop(c)
            sup.extend(s)
            dem.extend(d)
        net = a.get(u, 0.0) - b.get(u, 0.0)
        if a.get(u, 0.0) > 0 and b.get(u, 0.0) > 0:
            stay = min(a[u], b[u])
            if stay > tol:
                plan[(u, u)] = plan.get((u, u), 0.0) + stay
        if net > tol:
            sup.append([u, net])
        elif net < -tol:
            dem.append([u, -net])
        sup.sort()
        dem.sort()
        i = j = 0
        while i < len(sup) and j < len(dem):
            q = min(sup[i][1], dem[j][1])
            key = (sup[i][0], dem[j][0])
            plan[key] = plan.get(key, 0.0) + q
            sup[i][1] -= q
            dem[j][1] -= q
            if sup[i][1] <= tol:
                i += 1
            if dem[j][1] <= tol:
                j += 1
        pending[u] = (sup[i:], dem[j:])
    return sorted((s, t, q) for (s, t), q in plan.items() if q > tol)


def ot_plan(tree: RootedTree, c1, c2) -> list[tuple[int, int]]:
    """Unit moves (source leaf, destination leaf) realising ``ot_cost``."""
    a, b = _weights(c1), _weights(c2)
    if sum(a.values()) != sum(b.values()):
        raise TreeError(f"mass mismatch: {sum(a.values())} vs {sum(b.values())}")
    moves = []
    for s, t, q in ot_coupling(tree, a, b):
        if s != t:
            moves.extend([(s, t)] * int(round(q)))
    return moves


def plan_cost(tree: RootedTree, plan: Iterable[tuple[int, int]]) -> float:
    return sum(tree.distance(s, t) for s, t in plan)
