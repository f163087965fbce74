"""Optimal fractional configuration and the runtime invariant checks.

With quadratic phi the potential of a fractional leaf configuration is
the quadratic form  a * h.y + b * y'Sy  where S[i, j] is the root
distance of lca(leaf_i, leaf_j) and h = diag(S). S is ultrametric and
positive definite, so the minimiser over the simplex is unique.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .potential import PotentialParams, potential
from .tree import FractionalConfig, RootedTree, TreeError

KKT_TOL = 1e-8
MASTER_RTOL = 1e-6
BOUND_TOL = 1e-6


class SolverError(RuntimeError):
    pass


@dataclass
class KktCertificate:
    lambda_: float
    path_gradient: dict
    residual: float
    iterations: int = 0
    method: str = "active-set"


def shared_depth_matrix(tree: RootedTree, leaves=None) -> tuple[list[int], np.ndarray]:
    """S[i, j] = root distance of lca(leaf_i, leaf_j)."""
    leaves = list(tree.leaves() if leaves is None else leaves)
    idx = {l: i for i, l in enumerate(leaves)}
    n = len(leaves)
    S = np.zeros((n, n))
    below = {}
    rd = {tree.root: 0.0}
    for u in tree.preorder():
        if u != tree.root:
            rd[u] = rd[tree.parent[u]] + tree.length[u]
    for u in tree.postorder():
        kids = tree.children[u]
        if not kids:
            below[u] = [idx[u]] if u in idx else []
            continue
        groups = [below.pop(c) for c in kids]
        # pairs whose lca is u
        for gi in range(len(groups)):
            for gj in range(gi + 1, len(groups)):
                if groups[gi] and groups[gj]:
                    S[np.ix_(groups[gi], groups[gj])] = rd[u]
                    S[np.ix_(groups[gj], groups[gi])] = rd[u]
        below[u] = [i for g in groups for i in g]
    for l, i in idx.items():
        S[i, i] = rd[l]
    return leaves, S


def _kkt(g: np.ndarray, y: np.ndarray, k: float, support_tol: float = 1e-12):
    supp = y > support_tol * max(1.0, k)
    lam = float(np.mean(g[supp])) if supp.any() else float(g.min())
    scale = max(1.0, abs(lam))
    r = 0.0
    if supp.any():
        r = max(r, float(np.max(np.abs(g[supp] - lam))))
    r = max(r, float(np.max(np.maximum(lam - g, 0.0))))
    r = max(r, float(np.max(np.maximum(-y, 0.0))) * scale, abs(float(y.sum()) - k) * scale)
    return lam, r / scale


def _project_simplex(v: np.ndarray, k: float) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - k
    ind = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _active_set(S, c, k, y0, max_iter):
    """Primal active-set for min c.y + b y'Sy on {y >= 0, sum y = k}, with Q = 2bS folded into S."""
    n = len(c)
    y = y0.copy()
    P = y > 0
    for it in range(1, max_iter + 1):
        idx = np.nonzero(P)[0]
        m = len(idx)
        # stationarity on the support: Q_PP y_P + c_P = lam, sum y_P = k
        K = np.zeros((m + 1, m + 1))
        K[:m, :m] = S[np.ix_(idx, idx)]
        K[:m, m] = -1.0
        K[m, :m] = 1.0
        rhs = np.concatenate([-c[idx], [k]])
        sol = np.linalg.solve(K, rhs)
        z = np.zeros(n)
        z[idx] = sol[:m]
        if np.all(sol[:m] >= -1e-14 * max(1.0, k)):
            y = np.maximum(z, 0.0)
            g = S @ y + c
            lam = sol[m]
            off = np.nonzero(~P)[0]
            if len(off) == 0:
                return y, it
            j = off[np.argmin(g[off])]
            if g[j] >= lam - 1e-13 * max(1.0, abs(lam)):
                return y, it
            P[j] = True
            continue
        # step toward z until a support coordinate hits zero
        dirn = z - y
        neg = idx[dirn[idx] < 0]
        ratios = y[neg] / -dirn[neg]
        t = min(1.0, float(ratios.min()))
        y = y + t * dirn
        blocking = neg[ratios <= t + 1e-15]
        y[blocking] = 0.0
        P[blocking] = False
        y = np.maximum(y, 0.0)
        if not P.any():
            raise SolverError("active set emptied")
    raise SolverError("active-set iteration budget exhausted")


def _projected_gradient(S, c, k, y0, max_iter=20000):
    y = y0.copy()
    L = float(np.linalg.eigvalsh(S).max())
    for it in range(max_iter):
        g = S @ y + c
        ynew = _project_simplex(y - g / L, k)
        if np.max(np.abs(ynew - y)) < 1e-15 * max(1.0, k):
            return ynew, it
        y = ynew
    return y, max_iter


def solve_fractional(tree: RootedTree, k: float, params: PotentialParams, init=None,
                     max_iter: int = 1000):
    """Unique minimiser y of Psi(tree, .) over fractional configurations of mass k."""
    if k <= 0:
        raise ValueError("k must be positive")
    leaves, S = shared_depth_matrix(tree)
    n = len(leaves)
    if n == 1:
        y = {leaves[0]: float(k)}
        g = params.dphi(k) * S[0, 0]
        return FractionalConfig(y, k), KktCertificate(g, {leaves[0]: g}, 0.0, 0)
    # Shift by the depth of the common ancestor of all leaves and rescale.
    # On the simplex this only adds a constant to the objective and keeps
    # deep, tightly clustered leaves resolvable.
    s0 = float(S.min())
    scale = float(S.max()) - s0
    Sn = (S - s0) / scale
    h = np.diag(Sn).copy()
    Q = 2 * params.b * Sn
    c = params.a * h
    y0 = np.full(n, k / n) if init is None else np.array([init.get(l, 0.0) for l in leaves], float)
    method = "active-set"
    try:
        y, it = _active_set(Q, c, k, y0, max_iter)
        lam, res = _kkt(Q @ y + c, y, k)
    except (SolverError, np.linalg.LinAlgError):
        res = np.inf
    if not res <= KKT_TOL:
        # fall back, then polish from the recovered support
        method = "projected-gradient"
        yp, it = _projected_gradient(Q, c, k, y0)
        try:
            y2, it2 = _active_set(Q, c, k, yp, max_iter)
            it += it2
            if _kkt(Q @ y2 + c, y2, k)[1] < _kkt(Q @ yp + c, yp, k)[1]:
                yp = y2
        except (SolverError, np.linalg.LinAlgError):
            pass
        y = yp
        lam, res = _kkt(Q @ y + c, y, k)
        if not res <= KKT_TOL:
            raise SolverError(f"KKT residual {res:.3e} above {KKT_TOL} after {it} iterations")
    y = np.maximum(y, 0.0)
    y = y * (k / y.sum())
    # back to the unscaled gradient: scale * g' + 2b*s0*k + a*s0
    shift = 2 * params.b * s0 * k + params.a * s0
    g = scale * (Q @ y + c) + shift
    lam = scale * lam + shift
    cert = KktCertificate(lam, {l: float(g[i]) for i, l in enumerate(leaves)}, res, it, method)
    return FractionalConfig({l: float(y[i]) for i, l in enumerate(leaves)}, k), cert


@dataclass
class UltrametricHessian:
    leaves: list
    matrix: np.ndarray

    def is_ultrametric(self, tol: float = 1e-12) -> bool:
        H = self.matrix
        n = len(H)
        if not np.allclose(H, H.T):
            return False
        for j in range(n):
            # H[i,k] >= min(H[i,j], H[j,k]) for all i,k
            if np.any(H < np.minimum.outer(H[:, j], H[j, :]) - tol):
                return False
        return True


def hessian(tree: RootedTree, y, params: PotentialParams) -> UltrametricHessian:
    """Hessian of the potential in y; phi'' is the constant 2b."""
    leaves, S = shared_depth_matrix(tree)
    return UltrametricHessian(leaves, 2 * params.b * S)


@dataclass
class ProbeReport:
    applicable: bool
    ok: bool
    details: dict = field(default_factory=dict)


def ultrametric_inverse_probe(H, tol: float = 1e-9) -> ProbeReport:
    M = np.asarray(getattr(H, "matrix", H), float)
    inv = np.linalg.inv(M)
    n = len(M)
    diag = np.diag(inv)
    off = inv[~np.eye(n, dtype=bool)] if n > 1 else np.zeros(0)
    rows = inv.sum(axis=1)
    # scale-free tolerance so large path lengths do not hide sign errors
    s = max(1.0, float(np.abs(inv).max()))
    ok = bool(diag.min() >= -tol * s and (off.size == 0 or off.max() <= tol * s) and rows.min() >= -tol * s)
    return ProbeReport(True, ok, {"min_diag": float(diag.min()),
                                  "max_offdiag": float(off.max()) if off.size else 0.0,
                                  "min_rowsum": float(rows.min())})


def elongation_monotonicity_probe(tree: RootedTree, leaf: int, step: float, params: PotentialParams,
                                  k: float, tol: float = 1e-7) -> ProbeReport:
    y0, _ = solve_fractional(tree, k, params)
    if min(y0.weights.values()) <= 1e-9:
        return ProbeReport(False, True, {"reason": "base point on the simplex boundary"})
    t = tree.copy()
    t.length[leaf] += step
    y1, _ = solve_fractional(t, k, params, init=y0.weights)
    slope = (y1[leaf] - y0[leaf]) / step
    floor = -(1.0 / tree.length[leaf]) * (params.a + 2 * params.b * k) / (2 * params.b) - 1e-3
    others = {l: y1[l] - y0[l] for l in y0.weights if l != leaf}
    ok = y1[leaf] < y0[leaf] and all(v >= -tol for v in others.values()) and slope >= floor
    return ProbeReport(True, ok, {"slope": slope, "slope_floor": floor,
                                  "min_other_change": min(others.values(), default=0.0)})


def deletion_monotonicity_probe(tree: RootedTree, leaf: int, params: PotentialParams, k: float,
                                tol: float = 1e-7) -> ProbeReport:
    if len(tree.leaves()) < 2:
        return ProbeReport(False, True, {"reason": "nothing survives the deletion"})
    y0, _ = solve_fractional(tree, k, params)
    t = tree.copy()
    t.remove_leaf(leaf)
    t = t.normalize_simple()
    y1, _ = solve_fractional(t, k, params)
    ch = {l: y1[l] - y0[l] for l in y1.weights}
    return ProbeReport(True, all(v >= -tol for v in ch.values()), {"min_change": min(ch.values())})


def _state_parts(state):
    x = state.config.weights if hasattr(state.config, "weights") else state.config
    return state.tree, x, float(getattr(state, "cost", 0.0))


def check_master_inequality(state, params: PotentialParams, y=None):
    """(lhs, rhs, holds) for  Cost + Psi(x) <= gamma * Psi(y)."""
    tree, x, cost = _state_parts(state)
    k = sum(x.values())
    if y is None:
        y, _ = solve_fractional(tree, k, params)
    lhs = cost + potential(tree, x, params)
    rhs = params.gamma * potential(tree, y, params)
    return lhs, rhs, lhs <= rhs * (1 + MASTER_RTOL) + 1e-12


@dataclass
class BoundsReport:
    ok: bool
    max_x_minus_y: float
    min_y: float
    min_x: int
    violations: list


def check_xy_bounds(state, params: PotentialParams, y=None, tol: float = BOUND_TOL) -> BoundsReport:
    tree, x, _ = _state_parts(state)
    k = sum(x.values())
    if y is None:
        y, _ = solve_fractional(tree, k, params)
    eps = params.epsilon
    viol = []
    gap, ymin, xmin = -np.inf, np.inf, None
    for l in tree.leaves():
        xl, yl = x.get(l, 0), y[l]
        gap = max(gap, xl - yl)
        ymin = min(ymin, yl)
        xmin = xl if xmin is None else min(xmin, xl)
        if not xl < yl + 2 - eps + tol:
            viol.append(("x<y+2-eps", l, xl, yl))
        if yl < eps - tol:
            viol.append(("y>=eps", l, xl, yl))
        if xl < 1:
            viol.append(("x>=1", l, xl, yl))
    return BoundsReport(not viol, float(gap), float(ymin), xmin, viol)


class Checker:
    """Evaluates the master inequality and configuration bounds per event.

    Each record is appended to ``records`` and, if a stream is given,
    written to it as one JSON line.
    """

    def __init__(self, params: PotentialParams, stream=None):
        self.params = params
        self.stream = stream
        self.records = []
        self.failures = 0

    def __call__(self, state, event_index: int):
        x = state.config.weights
        y, cert = solve_fractional(state.tree, sum(x.values()), self.params)
        lhs, rhs, holds = check_master_inequality(state, self.params, y)
        b = check_xy_bounds(state, self.params, y)
        rec = {"event": event_index, "lhs": lhs, "rhs": rhs, "master_ok": holds,
               "bounds_ok": b.ok, "max_x_minus_y": b.max_x_minus_y, "min_y": b.min_y,
               "min_x": b.min_x, "simple": state.tree.is_simple(), "kkt": cert.residual}
        ok = holds and b.ok and rec["simple"]
        rec["ok"] = ok
        self.failures += not ok
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec


def fork_guard(params: PotentialParams, k: int, tree_before: RootedTree, leaf: int):
    """Veto fork lengths for which y'_l/m < eps or y'_l < y_l - 1/2."""
    y_before, _ = solve_fractional(tree_before, k, params)
    yl = y_before[leaf]

    def guard(tree_after, x_after, child_ids):
        y_after, _ = solve_fractional(tree_after, k, params)
        share = [y_after[c] for c in child_ids]
        total = sum(share)
        return min(share) >= params.epsilon - 1e-12 and total >= yl - 0.5 - 1e-12

    return guard

