"""Synchronous exploration obtained from the asynchronous one.

Robots are granted moves cyclically, one per robot per round; once no
dangling edge is left every robot walks back to the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .acte import acte_bound, run_acte
from .potential import PotentialParams
from .tree import RootedTree


def cte_bound(n: int, k: int, D: int, params: PotentialParams | None = None) -> float:
    """(2n + gamma*phi(k)*D)/k + D + 1."""
    return acte_bound(n, k, D, params) / k + D + 1


@dataclass
class CteResult:
    n: int
    k: int
    D: int
    runtime: int
    grants: int
    return_rounds: int
    bound: float
    acte_moves: int | None = None

    @property
    def ok(self) -> bool:
        return self.runtime <= self.bound


def cte_from_acte(res, k: int | None = None) -> CteResult:
    """Rounds of the synchronous run embedded in a round-robin ACTE run."""
    k = k or res.k
    grants = res.explored_at or 0
    back = res.depth_at_explored or 0
    rt = math.ceil(grants / res.k) + back
    return CteResult(res.n, k, res.D, rt, grants, back, cte_bound(res.n, k, res.D),
                     res.moves if res.finished else None)


def run_cte(tree: RootedTree, k: int, params: PotentialParams | None = None,
            active: int | None = None) -> CteResult:
    """Runtime in rounds with k robots, of which ``active`` (default k) move.

    Idle robots stay at the root. The bound is evaluated with ``active``.
    """
    a = active or k
    res = run_acte(tree, a, "roundrobin", params=params, stop_when_explored=True)
    out = cte_from_acte(res, k)
    out.bound = cte_bound(res.n, a, res.D, params)
    return out


def dfs_baseline(tree: RootedTree, k: int = 1) -> int:
    """A single depth-first search walks every edge twice."""
    return 2 * (len(tree) - 1)


def competitive_ratio_experiment(trees, k: int):
    """Rows of n, D, k, runtime, bound, ratio with floor(sqrt k) active robots."""
    kk = max(1, math.isqrt(k))
    rows = []
    for t in trees:
        r = run_cte(t, k, active=kk)
        ratio = r.runtime / (r.n / k + r.D)
        rows.append({"n": r.n, "D": r.D, "k": k, "runtime": r.runtime, "bound": r.bound, "ratio": ratio})
    return rows
