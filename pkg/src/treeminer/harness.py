"""Instance generators, benchmark sweeps and trace re-verification."""

from __future__ import annotations

import csv
import io
import json
import math
import random
import time
from dataclasses import dataclass

from .acte import acte_bound, run_acte
from .cte import cte_bound, cte_from_acte
from .oracle import check_master_inequality, check_xy_bounds, solve_fractional
from .potential import PotentialParams
from .tree import RootedTree, TreeError

FAMILIES = ("path", "star", "broom", "binary", "randrec", "spider")


class InfeasibleShape(ValueError):
    pass


def feasible(family: str, n: int, D: int) -> bool:
    if n < 1 or D < 0:
        return False
    if n == 1:
        return True
    if D < 1:
        return False
    if family == "path":
        return n - 1 <= D
    if family == "broom":
        return n >= D + 1
    if family == "binary":
        return n <= 2 ** (D + 1) - 1
    return family in FAMILIES


def gen_tree(family: str, n: int, D: int, seed: int = 0) -> RootedTree:
    """Unit-edge tree with exactly n nodes and depth at most D."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if not feasible(family, n, D):
        raise InfeasibleShape(f"{family} with n={n} cannot have depth <= {D}")
    t = RootedTree(0)
    if n == 1:
        return t
    if family == "path":
        for i in range(1, n):
            t.add_child(i - 1)
    elif family == "star":
        for _ in range(1, n):
            t.add_child(0)
    elif family == "broom":
        # handle of D-1 edges, bristles at depth D
        u = 0
        for _ in range(D - 1):
            u = t.add_child(u)
        while len(t) < n:
            t.add_child(u)
    elif family == "binary":
        for i in range(1, n):
            t.add_child((i - 1) // 2)
    elif family == "randrec":
        rng = random.Random(seed)
        depth = [0]
        open_ = [0]
        for i in range(1, n):
            p = open_[rng.randrange(len(open_))]
            t.add_child(p, node=i)
            depth.append(depth[p] + 1)
            if depth[i] < D:
                open_.append(i)
    elif family == "spider":
        legs = math.ceil((n - 1) / D)
        left = n - 1
        for _ in range(legs):
            u = 0
            for _ in range(min(D, left)):
                u = t.add_child(u)
                left -= 1
    return t


def tree_depth(tree: RootedTree) -> int:
    return int(round(tree.depth()))


@dataclass
class SuiteConfig:
    families: tuple = FAMILIES
    ns: tuple = (100, 1000, 10000)
    Ds: tuple = (5, 20, 100)
    ks: tuple = (2, 4, 8)
    seeds: int = 10
    schedulers: tuple = ("roundrobin", "random", "lopsided")
    base_seed: int = 0

    def instances(self):
        """(family, n, D, seed) for every feasible shape; others are skipped."""
        for fam in self.families:
            for n in self.ns:
                for D in self.Ds:
                    if not feasible(fam, n, D):
                        continue
                    for s in range(self.seeds):
                        yield fam, n, D, self.base_seed + s


BENCH_COLUMNS = ["family", "n", "D", "k", "seed", "scheduler", "mode", "value", "bound", "margin", "wall"]


def bench_rows(cfg: SuiteConfig, timing: bool = False):
    """One row per ACTE run and one CTE row per round-robin run.

    The CTE row is read off the round-robin ACTE run: its synchronous
    rounds are the grants up to the last fresh edge, divided by k, plus
    the walk back to the root.
    """
    for fam, n, D, seed in cfg.instances():
        tree = gen_tree(fam, n, D, seed)
        d = tree_depth(tree)
        for k in cfg.ks:
            for sch in cfg.schedulers:
                t0 = time.perf_counter()
                try:
                    res = run_acte(tree, k, sch, seed=seed)
                except Exception as e:  # recorded, the sweep goes on
                    yield {"family": fam, "n": n, "D": d, "k": k, "seed": seed, "scheduler": sch,
                           "mode": "acte", "value": "", "bound": acte_bound(n, k, d), "margin": "",
                           "wall": "", "error": f"{type(e).__name__}: {e}"}
                    continue
                wall = time.perf_counter() - t0
                b = acte_bound(n, k, d)
                yield {"family": fam, "n": n, "D": d, "k": k, "seed": seed, "scheduler": sch,
                       "mode": "acte", "value": res.moves, "bound": b, "margin": b - res.moves,
                       "wall": f"{wall:.4f}" if timing else "", "violations": len(res.violations),
                       "tm_cost": res.tm_cost, "ctm_cost": res.ctm_cost}
                if sch == "roundrobin":
                    c = cte_from_acte(res)
                    yield {"family": fam, "n": n, "D": d, "k": k, "seed": seed, "scheduler": sch,
                           "mode": "cte", "value": c.runtime, "bound": c.bound, "margin": c.bound - c.runtime,
                           "wall": "", "embed_slack": math.ceil(res.moves / k) + d - c.runtime}


def write_csv(rows, stream) -> int:
    """Write bench rows; returns the number of rows with a negative margin or an error."""
    w = csv.DictWriter(stream, fieldnames=BENCH_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    bad = 0
    for r in rows:
        if r.get("error") or r["margin"] == "" or r["margin"] < 0:
            bad += 1
        w.writerow(r)
    return bad


def bench(cfg: SuiteConfig, timing: bool = False) -> tuple[str, int]:
    buf = io.StringIO()
    bad = write_csv(bench_rows(cfg, timing), buf)
    return buf.getvalue(), bad


@dataclass
class CheckReport:
    events: int
    ok: bool
    first_violation: int | None = None
    reason: str | None = None


def check_all(lines, params: PotentialParams | None = None) -> CheckReport:
    """Re-verify every snapshot in a JSONL trace.

    Each record carrying a ``state`` (tree text, leaf counts, cost) is
    checked for the master inequality, the x/y bounds, x >= 1 and a
    simple tree. Records without a state are skipped.
    """
    n = 0
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"line {i + 1}: malformed JSON ({e})") from None
        st = rec.get("state")
        if st is None:
            continue
        n += 1
        try:
            tree = RootedTree.loads(st["tree"])
            x = {int(l): int(v) for l, v in st["x"].items()}
            k = int(st.get("k", sum(x.values())))
            cost = float(st["cost"])
        except (KeyError, TypeError, ValueError, TreeError) as e:
            raise ValueError(f"line {i + 1}: malformed state ({e})") from None
        p = params or PotentialParams.default(k)
        idx = rec.get("index", i)
        if not tree.is_simple():
            return CheckReport(n, False, idx, "tree is not simple")
        if sorted(x) != tree.leaves() or sum(x.values()) != k:
            return CheckReport(n, False, idx, "configuration does not match the leaves")
        view = _View(tree, x, cost)
        y, _ = solve_fractional(tree, k, p)
        lhs, rhs, holds = check_master_inequality(view, p, y)
        if not holds:
            return CheckReport(n, False, idx, f"master inequality {lhs} > {rhs}")
        b = check_xy_bounds(view, p, y)
        if not b.ok:
            return CheckReport(n, False, idx, f"bounds: {b.violations[0]}")
    return CheckReport(n, True)


class _View:
    def __init__(self, tree, x, cost):
        self.tree, self.config, self.cost = tree, x, cost
