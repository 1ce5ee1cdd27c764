"""Pareto-set co-optimization of predictability and specificity.

Solutions are refined by moving boundary nodes into a neighbouring cluster.
A move is kept when it beats the best mean ACF or the best mean specificity
seen so far; the working set holds only mutually non-dominated solutions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import acf_columns, acf_fast
from .partition import (
    ClusteringProblem,
    ClusterSolution,
    articulation_points,
    check_feasible,
    connected_components,
)

log = logging.getLogger(__name__)

DOMINANCE_TOL = 1e-12


class EmptyInitialSet(ValueError):
    pass


class IllegalMove(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    w: float = 0.7
    max_epochs: int = 10_000
    seed: int = 0
    max_area: float | None = None  # overrides the problem's cap when set
    tau_m: float = 50.0
    lag: int | None = None
    chain: bool = True  # later moves in an iteration start from the last accepted state

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must be in [0, 1]")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")


@dataclass(frozen=True, order=True)
class BoundaryMove:
    node: int
    target: int
    source: int
    via: int  # neighbour of node inside the target cluster


class State:
    """Assignment plus per-cluster sums so a move touches two columns only."""

    _uid = 0

    def __init__(self, problem: ClusteringProblem, assignment, M: int, _copy=None):
        self.problem = problem
        self.M = M
        State._uid += 1
        self.uid = State._uid
        if _copy is not None:
            src = _copy
            self.assign = src.assign.copy()
            self.S = src.S.copy()
            self.vs = src.vs.copy()
            self.ts = src.ts.copy()
            self.area = src.area.copy()
            self.size = src.size.copy()
            self.rho = src.rho.copy()
            self.spec = src.spec.copy()
            self.members = [set(m) for m in src.members]
            return
        a = np.asarray(assignment, dtype=np.int64).copy()
        self.assign = a
        self.S = np.zeros((problem.demand.shape[0], M))
        np.add.at(self.S.T, a, problem.demand.T)
        self.vs = np.bincount(a, weights=problem.vs, minlength=M)
        self.ts = np.bincount(a, weights=problem.ts, minlength=M)
        self.area = np.bincount(a, weights=problem.area, minlength=M)
        self.size = np.bincount(a, minlength=M)
        self.rho = acf_columns(self.S, problem.lag)
        self.spec = np.divide(self.vs, self.ts, out=np.zeros(M), where=self.ts > 0)
        self.members = [set() for _ in range(M)]
        for i, c in enumerate(a.tolist()):
            self.members[c].add(i)

    @property
    def f1(self) -> float:
        return float(self.rho.sum() / self.M)

    @property
    def f2(self) -> float:
        return float(self.spec.sum() / self.M)

    def key(self) -> bytes:
        return canonical_hash(self.assign)

    def copy(self) -> "State":
        return State(self.problem, None, self.M, _copy=self)

    def evaluate(self, mv: BoundaryMove) -> tuple[float, float, tuple]:
        """Objectives after ``mv`` without mutating the state."""
        p = self.problem
        u, a, b = mv.node, mv.source, mv.target
        du = p.demand[:, u]
        ra = acf_fast(self.S[:, a] - du, p.lag)
        rb = acf_fast(self.S[:, b] + du, p.lag)
        ta, tb = self.ts[a] - p.ts[u], self.ts[b] + p.ts[u]
        sa = (self.vs[a] - p.vs[u]) / ta if ta > 0 else 0.0
        sb = (self.vs[b] + p.vs[u]) / tb if tb > 0 else 0.0
        f1 = (self.rho.sum() - self.rho[a] - self.rho[b] + ra + rb) / self.M
        f2 = (self.spec.sum() - self.spec[a] - self.spec[b] + sa + sb) / self.M
        return float(f1), float(f2), (ra, rb, sa, sb)

    def apply(self, mv: BoundaryMove, cached=None) -> "State":
        p = self.problem
        u, a, b = mv.node, mv.source, mv.target
        if cached is None:
            cached = self.evaluate(mv)[2]
        ra, rb, sa, sb = cached
        x = self.copy()
        x.assign[u] = b
        du = p.demand[:, u]
        x.S[:, a] -= du
        x.S[:, b] += du
        for arr, val in ((x.vs, p.vs[u]), (x.ts, p.ts[u]), (x.area, p.area[u]), (x.size, 1)):
            arr[a] -= val
            arr[b] += val
        x.rho[a], x.rho[b] = ra, rb
        x.spec[a], x.spec[b] = sa, sb
        x.members[a].discard(u)
        x.members[b].add(u)
        return x

    def to_solution(self) -> ClusterSolution:
        return ClusterSolution(self.assign.copy(), self.M, self.f1, self.f2, True, [])


def canonical_hash(assignment) -> bytes:
    """Hash invariant to cluster relabeling (ids renumbered by first occurrence)."""
    relabel: dict = {}
    canon = [relabel.setdefault(int(c), len(relabel)) for c in assignment]
    return hashlib.sha1(np.asarray(canon, dtype=np.int64).tobytes()).digest()


class _CutCache:
    """Articulation points per cluster, recomputed when the cluster changes."""

    def __init__(self, adj):
        self.adj = adj
        self._cache: dict = {}

    def get(self, members: set) -> set:
        key = frozenset(members)
        hit = self._cache.get(key)
        if hit is None:
            if len(self._cache) > 4096:
                self._cache.clear()
            hit = articulation_points(self.adj, members)
            self._cache[key] = hit
        return hit


def _legal(state: State, mv: BoundaryMove, cuts: _CutCache, max_area: float) -> bool:
    u = mv.node
    a = int(state.assign[u])
    if a != mv.source or a == mv.target or state.assign[mv.via] != mv.target:
        return False
    if state.size[a] <= 1:
        return False
    if state.area[mv.target] + state.problem.area[u] > max_area * (1 + 1e-12):
        return False
    return u not in cuts.get(state.members[a])


def movable_boundary(state: State, cuts: _CutCache | None = None) -> list[BoundaryMove]:
    """Every legal boundary move, one per (node, target cluster), sorted by (node, target)."""
    p = state.problem
    cuts = cuts or _CutCache(p.adj)
    seen = set()
    out = []
    a = state.assign
    for u in range(p.n):
        cu = int(a[u])
        for v in p.adj[u].tolist():
            cv = int(a[v])
            if cv == cu or (u, cv) in seen:
                continue
            seen.add((u, cv))
            mv = BoundaryMove(u, cv, cu, v)
            if _legal(state, mv, cuts, p.max_area):
                out.append(mv)
    out.sort()
    return out


def apply_move(state: State, mv: BoundaryMove):
    """Apply a legal move; returns (new state, change in f1, change in f2)."""
    p = state.problem
    if not (0 <= mv.node < p.n) or int(state.assign[mv.node]) != mv.source:
        raise IllegalMove(f"node {mv.node} is not in cluster {mv.source}")
    if mv.via not in set(p.adj[mv.node].tolist()) or int(state.assign[mv.via]) != mv.target:
        raise IllegalMove(f"node {mv.node} has no edge into cluster {mv.target}")
    if not _legal(state, mv, _CutCache(p.adj), p.max_area):
        raise IllegalMove(f"moving {mv.node} to {mv.target} breaks a constraint")
    x = state.apply(mv)
    return x, x.f1 - state.f1, x.f2 - state.f2


def dominates(a: tuple[float, float], b: tuple[float, float], tol: float = DOMINANCE_TOL) -> bool:
    ge = a[0] >= b[0] - tol and a[1] >= b[1] - tol
    gt = a[0] > b[0] + tol or a[1] > b[1] + tol
    return ge and gt


def prune(states: list) -> list:
    """Drop dominated solutions and duplicate assignments, keeping insertion order."""
    seen = set()
    uniq = []
    for s in states:
        k = s.key()
        if k not in seen:
            seen.add(k)
            uniq.append(s)
    pts = [(s.f1, s.f2) for s in uniq]
    return [s for i, s in enumerate(uniq) if not any(dominates(pts[j], pts[i]) for j in range(len(uniq)) if j != i)]


@dataclass
class ParetoSet:
    solutions: list
    trace: list = field(default_factory=list)
    evaluations: int = 0
    iterations: int = 0
    stopped: str = ""

    def best_acf(self) -> ClusterSolution:
        return max(self.solutions, key=lambda s: s.f1)

    def best_specificity(self) -> ClusterSolution:
        return max(self.solutions, key=lambda s: s.f2)

    def points(self) -> list[tuple[float, float]]:
        return [(s.f1, s.f2) for s in self.solutions]


TRACE_HEADER = ["epoch", "selected", "pareto_size", "best_acf", "best_specificity"]


def co_optimize(initial, cfg: OptimizerConfig, problem: ClusteringProblem) -> ParetoSet:
    """Refine the initial solutions into a Pareto set of (mean ACF, mean specificity).

    Each outer iteration picks the best-ACF solution with probability w (else
    the best-specificity one), walks its boundary moves in (node, cluster)
    order, and appends every state that improves either running best. One
    evaluated move costs one epoch.
    """
    if cfg.max_area is not None and cfg.max_area != problem.max_area:
        problem = replace(problem, max_area=cfg.max_area)
    if cfg.lag is not None and cfg.lag != problem.lag:
        problem = replace(problem, lag=cfg.lag)
    Y = []
    for sol in initial:
        rep = check_feasible(sol.assignment, problem.adj, problem.area, problem.max_area, sol.M)
        if rep.ok:
            Y.append(State(problem, sol.assignment, sol.M))
    if not Y:
        raise EmptyInitialSet("no feasible initial solution")
    Y = prune(Y)
    # the running bests start at zero, not at the initial set's bests
    best_acf = 0.0
    best_spec = 0.0
    rng = np.random.default_rng(cfg.seed)
    cuts = _CutCache(problem.adj)
    eps = cfg.max_epochs
    evaluations = 0
    iterations = 0
    stale: set = set()
    trace = []
    stopped = "epochs"

    def pick(side):
        if side == "acf":
            return max(Y, key=lambda s: s.f1)  # max keeps the earliest on ties
        return max(Y, key=lambda s: s.f2)

    while eps > 0:
        sides = [s for s, on in (("acf", cfg.w > 0), ("specificity", cfg.w < 1)) if on]
        if all(pick(s).uid in stale for s in sides):
            stopped = "no_gain"
            break
        side = "acf" if rng.random() < cfg.w else "specificity"
        X = pick(side)
        if X.uid in stale:
            continue
        iterations += 1
        cur = X
        gained = 0
        for mv in movable_boundary(X, cuts):
            if eps <= 0:
                break
            if cur is not X and not _legal(cur, mv, cuts, problem.max_area):
                continue
            eps -= 1
            evaluations += 1
            f1, f2, cached = cur.evaluate(mv)
            if f1 > best_acf or f2 > best_spec:
                new = cur.apply(mv, cached)
                best_acf = max(best_acf, f1)
                best_spec = max(best_spec, f2)
                Y.append(new)
                if cfg.chain:
                    cur = new
                gained += 1
        if gained == 0:
            stale.add(X.uid)
        Y = prune(Y)
        trace.append((evaluations, side, len(Y), best_acf, best_spec))
    sols = [s.to_solution() for s in Y]
    return ParetoSet(sols, trace, evaluations, iterations, stopped)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for epoch, side, size, ba, bs in trace:
            w.writerow([epoch, side, size, repr(float(ba)), repr(float(bs))])


def pareto_records(pareto: ParetoSet, extra: dict | None = None) -> list[dict]:
    out = []
    for s in sorted(pareto.solutions, key=lambda s: (-s.f1, -s.f2)):
        rec = s.to_json()
        if extra:
            rec.update(extra)
        out.append(rec)
    return out


def write_pareto_json(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1, sort_keys=True)
        fh.write("\n")
