"""Cluster scale estimation and initial solvers for element clustering.

Nodes are indexed 0..n-1 and adjacency is a list of neighbour arrays.
Cluster ids run 0..M-1.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import acf_columns, acf_fast

log = logging.getLogger(__name__)


class InfeasibleM(ValueError):
    pass


class NoFeasibleScale(RuntimeError):
    pass


@dataclass
class ClusteringProblem:
    """Everything the solvers need about the movable (non-standalone) nodes."""

    adj: list
    demand: np.ndarray  # T x n
    vs: np.ndarray
    ts: np.ndarray
    area: np.ndarray
    max_area: float = 5.0
    lag: int = 24

    def __post_init__(self):
        self.adj = [np.asarray(sorted(set(int(v) for v in a)), dtype=np.int64) for a in self.adj]
        self.demand = np.asarray(self.demand, dtype=float)
        self.vs = np.asarray(self.vs, dtype=float)
        self.ts = np.asarray(self.ts, dtype=float)
        self.area = np.asarray(self.area, dtype=float)
        n = len(self.adj)
        if self.demand.shape[1] != n or len(self.vs) != n or len(self.ts) != n or len(self.area) != n:
            raise ValueError("problem arrays disagree on the node count")

    @property
    def n(self) -> int:
        return len(self.adj)

    @property
    def weights(self) -> np.ndarray:
        return self.demand.sum(axis=0)

    @classmethod
    def from_edges(cls, n, edges, demand, vs, ts, area, max_area=5.0, lag=24):
        return cls(adjacency_from_edges(n, edges), demand, vs, ts, area, max_area, lag)


@dataclass
class ClusterSolution:
    assignment: np.ndarray
    M: int
    f1: float | None = None
    f2: float | None = None
    feasible: bool | None = None
    violations: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)

    def clusters(self) -> list[list[int]]:
        out = [[] for _ in range(self.M)]
        for i, c in enumerate(self.assignment.tolist()):
            if 0 <= c < self.M:
                out[c].append(i)
        return out

    def to_json(self) -> dict:
        return {
            "M": int(self.M),
            "assignment": [int(c) for c in self.assignment],
            "f1": None if self.f1 is None else float(self.f1),
            "f2": None if self.f2 is None else float(self.f2),
            "feasible": bool(self.feasible) if self.feasible is not None else None,
            "violations": list(self.violations),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ClusterSolution":
        return cls(np.asarray(d["assignment"]), d["M"], d.get("f1"), d.get("f2"), d.get("feasible"), list(d.get("violations", [])))


@dataclass
class FeasibilityReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def adjacency_from_edges(n: int, edges) -> list:
    adj = [[] for _ in range(n)]
    for u, v in edges:
        if u == v:
            continue
        adj[u].append(v)
        adj[v].append(u)
    return [np.asarray(sorted(set(a)), dtype=np.int64) for a in adj]


def connected_components(adj, nodes=None) -> list[list[int]]:
    """Components of the subgraph induced by ``nodes`` (all nodes by default), sorted."""
    if nodes is None:
        members = None
        order = range(len(adj))
    else:
        members = set(nodes)
        order = sorted(members)
    seen = set()
    comps = []
    for s in order:
        if s in seen:
            continue
        seen.add(s)
        comp = [s]
        stack = [s]
        while stack:
            u = stack.pop()
            for v in adj[u].tolist() if hasattr(adj[u], "tolist") else adj[u]:
                if v in seen or (members is not None and v not in members):
                    continue
                seen.add(v)
                comp.append(v)
                stack.append(v)
        comps.append(sorted(comp))
    return comps


def articulation_points(adj, nodes) -> set:
    """Cut vertices of the subgraph induced by ``nodes`` (iterative Tarjan)."""
    members = set(nodes)
    disc: dict = {}
    low: dict = {}
    cut = set()
    t = 0
    for root in sorted(members):
        if root in disc:
            continue
        disc[root] = low[root] = t
        t += 1
        children = 0
        stack = [(root, -1, iter(adj[root].tolist()))]
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v in it:
                if v not in members:
                    continue
                if v not in disc:
                    disc[v] = low[v] = t
                    t += 1
                    if u == root:
                        children += 1
                    stack.append((v, u, iter(adj[v].tolist())))
                    advanced = True
                    break
                if v != parent:
                    low[u] = min(low[u], disc[v])
            if advanced:
                continue
            stack.pop()
            if stack:
                p = stack[-1][0]
                low[p] = min(low[p], low[u])
                if p != root and low[u] >= disc[p]:
                    cut.add(p)
        if children > 1:
            cut.add(root)
    return cut


def check_feasible(assignment, adj, areas, max_area: float, M: int) -> FeasibilityReport:
    """Total assignment, nonempty clusters, area cap and per-cluster connectivity."""
    a = np.asarray(assignment)
    n = len(adj)
    v = []
    if a.shape[0] != n:
        v.append(f"assignment covers {a.shape[0]} of {n} elements")
        return FeasibilityReport(v)
    bad = np.nonzero((a < 0) | (a >= M))[0]
    for i in bad.tolist():
        v.append(f"element {i} unassigned")
    members = [[] for _ in range(M)]
    for i, c in enumerate(a.tolist()):
        if 0 <= c < M:
            members[c].append(i)
    areas = np.asarray(areas, dtype=float)
    for c in range(M):
        if not members[c]:
            v.append(f"cluster {c} empty")
            continue
        tot = float(areas[members[c]].sum())
        if tot > max_area * (1 + 1e-12):
            v.append(f"cluster {c} area {tot:.6g} exceeds {max_area:.6g}")
        if len(connected_components(adj, members[c])) > 1:
            v.append(f"cluster {c} disconnected")
    return FeasibilityReport(v)


def check_solution(sol: ClusterSolution, problem: ClusteringProblem) -> FeasibilityReport:
    return check_feasible(sol.assignment, problem.adj, problem.area, problem.max_area, sol.M)


def evaluate_solution(problem: ClusteringProblem, assignment, M: int, **info) -> ClusterSolution:
    """Attach objectives and feasibility to an assignment."""
    a = np.asarray(assignment, dtype=np.int64)
    rep = check_feasible(a, problem.adj, problem.area, problem.max_area, M)
    f1 = f2 = None
    if (a >= 0).all() and (a < M).all():
        S = np.zeros((problem.demand.shape[0], M))
        np.add.at(S.T, a, problem.demand.T)
        f1 = float(np.mean(acf_columns(S, problem.lag)))
        vs = np.bincount(a, weights=problem.vs, minlength=M)
        ts = np.bincount(a, weights=problem.ts, minlength=M)
        spec = np.divide(vs, ts, out=np.zeros(M), where=ts > 0)
        f2 = float(np.mean(spec))
    return ClusterSolution(a, M, f1, f2, rep.ok, rep.violations, dict(info))


# --- connectivity repair ------------------------------------------------------


def repair(assignment, adj, M: int, weights=None, areas=None, max_area: float | None = None) -> np.ndarray:
    """Make every cluster connected and nonempty where the graph allows.

    Disconnected clusters keep their heaviest fragment; smaller fragments go
    to the adjacent cluster with the most spare area (ties to the lowest id),
    or to an empty cluster when nothing is adjacent. Empty clusters are then
    filled by splitting non-cut nodes off the largest clusters.
    """
    a = np.array(assignment, dtype=np.int64)
    n = len(adj)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    ar = np.zeros(n) if areas is None else np.asarray(areas, dtype=float)
    cap = math.inf if max_area is None else max_area

    for _ in range(n + 1):
        changed = False
        members = [[] for _ in range(M)]
        for i, c in enumerate(a.tolist()):
            members[c].append(i)
        area_sum = np.array([ar[m].sum() if m else 0.0 for m in members])
        for c in range(M):
            if not members[c]:
                continue
            frags = connected_components(adj, members[c])
            if len(frags) == 1:
                continue
            frags.sort(key=lambda f: (-float(w[f].sum()), f[0]))
            for frag in frags[1:]:
                fs = set(frag)
                nbr = sorted({int(a[v]) for u in frag for v in adj[u].tolist() if v not in fs and a[v] != c})
                if nbr:
                    target = min(nbr, key=lambda k: (-(cap - area_sum[k]), k))
                else:
                    empty = [k for k in range(M) if not members[k]]
                    if not empty:
                        continue
                    target = empty[0]
                    members[target] = list(frag)
                a[frag] = target
                fa = float(ar[frag].sum())
                area_sum[target] += fa
                area_sum[c] -= fa
                changed = True
            if changed:
                break
        if not changed:
            break

    members = [[] for _ in range(M)]
    for i, c in enumerate(a.tolist()):
        members[c].append(i)
    for c in range(M):
        if members[c]:
            continue
        donors = sorted((k for k in range(M) if len(members[k]) >= 2), key=lambda k: (-len(members[k]), k))
        for k in donors:
            cut = articulation_points(adj, members[k])
            movable = [u for u in members[k] if u not in cut]
            if movable:
                u = min(movable, key=lambda x: (w[x], x))
                a[u] = c
                members[k].remove(u)
                members[c] = [u]
                break
    return a


# --- D-Balance: multilevel weighted partition -----------------------------------


def _allocate_parts(comp_weights, comp_sizes, M: int) -> list[int]:
    """Parts per component minimising the largest mean part weight."""
    k = [1] * len(comp_weights)
    heap = [(-comp_weights[i], i) for i in range(len(k)) if comp_sizes[i] > 1]
    heapq.heapify(heap)
    for _ in range(M - len(k)):
        while heap:
            negload, i = heapq.heappop(heap)
            if k[i] < comp_sizes[i]:
                break
        else:
            raise InfeasibleM("more parts than nodes")
        k[i] += 1
        if k[i] < comp_sizes[i]:
            heapq.heappush(heap, (-comp_weights[i] / k[i], i))
    return k


class _Level:
    __slots__ = ("adj", "vw", "cmap")

    def __init__(self, adj, vw, cmap=None):
        self.adj = adj  # list of dict nbr -> edge weight
        self.vw = vw
        self.cmap = cmap


def _coarsen(level: _Level, rng, max_vw: float) -> _Level | None:
    n = len(level.vw)
    match = [-1] * n
    for u in rng.permutation(n).tolist():
        if match[u] != -1:
            continue
        best, key = -1, None
        for v, w in level.adj[u].items():
            if match[v] != -1 or level.vw[u] + level.vw[v] > max_vw:
                continue
            k = (w, -level.vw[v], -v)
            if key is None or k > key:
                best, key = v, k
        if best >= 0:
            match[u], match[best] = best, u
        else:
            match[u] = u
    cmap = [-1] * n
    nc = 0
    for u in range(n):
        if cmap[u] == -1:
            cmap[u] = nc
            cmap[match[u]] = nc
            nc += 1
    if nc > 0.95 * n:
        return None
    cvw = [0.0] * nc
    cadj = [dict() for _ in range(nc)]
    for u in range(n):
        cu = cmap[u]
        cvw[cu] += level.vw[u]
        for v, w in level.adj[u].items():
            cv = cmap[v]
            if cv != cu:
                cadj[cu][cv] = cadj[cu].get(cv, 0.0) + w
    coarse = _Level(cadj, cvw)
    level.cmap = cmap
    return coarse


class _Partition:
    """Mutable k-way partition with part weights and cut bookkeeping."""

    def __init__(self, adj, vw, part, k, max_w):
        self.adj = adj
        self.vw = vw
        self.part = list(part)
        self.k = k
        self.max_w = max_w
        self.pw = [0.0] * k
        self.members = [set() for _ in range(k)]
        for u, p in enumerate(self.part):
            self.pw[p] += vw[u]
            self.members[p].add(u)
        self._cut_cache: dict = {}

    def overflow(self) -> float:
        return sum(max(0.0, w - self.max_w) for w in self.pw)

    def cut(self) -> float:
        c = 0.0
        for u, nb in enumerate(self.adj):
            pu = self.part[u]
            for v, w in nb.items():
                if v > u and self.part[v] != pu:
                    c += w
        return c

    def score(self):
        return (round(self.overflow(), 9), round(max(self.pw), 9), self.cut())

    def cut_vertices(self, p: int) -> set:
        if p not in self._cut_cache:
            self._cut_cache[p] = _cut_vertices_dict(self.adj, self.members[p])
        return self._cut_cache[p]

    def move(self, u: int, b: int) -> None:
        a = self.part[u]
        self.part[u] = b
        self.pw[a] -= self.vw[u]
        self.pw[b] += self.vw[u]
        self.members[a].discard(u)
        self.members[b].add(u)
        self._cut_cache.pop(a, None)
        self._cut_cache.pop(b, None)

    def gain(self, u: int, b: int):
        """(overflow decrease, max-weight decrease, cut decrease) of moving u to b."""
        a = self.part[u]
        wu = self.vw[u]
        mw = self.max_w
        before = max(0.0, self.pw[a] - mw) + max(0.0, self.pw[b] - mw)
        after = max(0.0, self.pw[a] - wu - mw) + max(0.0, self.pw[b] + wu - mw)
        conn_a = conn_b = 0.0
        for v, w in self.adj[u].items():
            pv = self.part[v]
            if pv == a:
                conn_a += w
            elif pv == b:
                conn_b += w
        # local peak between the two parts as a balance tiebreak
        peak_before = max(self.pw[a], self.pw[b])
        peak_after = max(self.pw[a] - wu, self.pw[b] + wu)
        return (round(before - after, 9), round(peak_before - peak_after, 9), conn_b - conn_a)

    def candidates(self, u: int):
        a = self.part[u]
        if len(self.members[a]) <= 1 or u in self.cut_vertices(a):
            return []
        return sorted({self.part[v] for v in self.adj[u] if self.part[v] != a})


def _cut_vertices_dict(adj, nodes) -> set:
    members = nodes
    disc: dict = {}
    low: dict = {}
    cut = set()
    t = 0
    for root in sorted(members):
        if root in disc:
            continue
        disc[root] = low[root] = t
        t += 1
        children = 0
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v in it:
                if v not in members:
                    continue
                if v not in disc:
                    disc[v] = low[v] = t
                    t += 1
                    if u == root:
                        children += 1
                    stack.append((v, u, iter(adj[v])))
                    advanced = True
                    break
                if v != parent:
                    low[u] = min(low[u], disc[v])
            if advanced:
                continue
            stack.pop()
            if stack:
                p = stack[-1][0]
                low[p] = min(low[p], low[u])
                if p != root and low[u] >= disc[p]:
                    cut.add(p)
        if children > 1:
            cut.add(root)
    return cut


def _better(g) -> bool:
    return g[0] > 1e-9 or (g[0] > -1e-9 and (g[1] > 1e-9 or (g[1] > -1e-9 and g[2] > 1e-9)))


def _greedy_refine(P: _Partition, rng, passes: int = 8) -> None:
    for _ in range(passes):
        improved = False
        nodes = rng.permutation(len(P.part)).tolist()
        for u in nodes:
            best_b, best_g = None, None
            for b in P.candidates(u):
                g = P.gain(u, b)
                if _better(g) and (best_g is None or g > best_g):
                    best_b, best_g = b, g
            if best_b is not None:
                P.move(u, best_b)
                improved = True
        if not improved:
            break


def _fm_refine(P: _Partition, passes: int = 6) -> None:
    """Move sequences with hill-climbing and rollback to the best prefix."""
    n = len(P.part)
    for _ in range(passes):
        start = P.score()
        best_score = start
        best_len = 0
        history = []
        locked = set()
        for _step in range(n):
            best = None
            for u in range(n):
                if u in locked:
                    continue
                for b in P.candidates(u):
                    g = P.gain(u, b)
                    key = (g, -u, -b)
                    if best is None or key > best[0]:
                        best = (key, u, b)
            if best is None:
                break
            _, u, b = best
            history.append((u, P.part[u]))
            P.move(u, b)
            locked.add(u)
            s = P.score()
            if s < best_score:
                best_score = s
                best_len = len(history)
        for u, a in reversed(history[best_len:]):
            P.move(u, a)
        if not best_score < start:
            break


def _initial_partition(level: _Level, M: int, rng) -> list[int]:
    n = len(level.vw)
    adj = level.adj
    adj_l = [sorted(a) for a in adj]
    comps = connected_components([np.asarray(a, dtype=np.int64) for a in adj_l])
    cw = [sum(level.vw[u] for u in c) for c in comps]
    ks = _allocate_parts(cw, [len(c) for c in comps], M)
    part = [-1] * n
    next_id = 0
    for comp, k in zip(comps, ks):
        if k == 1:
            for u in comp:
                part[u] = next_id
            next_id += 1
            continue
        # spread seeds: random first, then farthest-by-hops
        seeds = [comp[int(rng.integers(len(comp)))]]
        dist = _bfs_hops(adj_l, seeds[0])
        for _ in range(k - 1):
            far = max(d for u, d in dist.items() if u not in seeds)
            pool = sorted(u for u, d in dist.items() if d == far and u not in seeds)
            s = pool[int(rng.integers(len(pool)))]
            seeds.append(s)
            ds = _bfs_hops(adj_l, s)
            dist = {u: min(dist[u], ds[u]) for u in dist}
        ids = list(range(next_id, next_id + k))
        pw = {}
        for pid, s in zip(ids, seeds):
            part[s] = pid
            pw[pid] = level.vw[s]
        active = set(ids)
        remaining = len(comp) - k
        while remaining and active:
            p = min(active, key=lambda q: (pw[q], q))
            best, bkey = -1, None
            for u in comp:
                if part[u] != p:
                    continue
                for v, w in adj[u].items():
                    if part[v] != -1:
                        continue
                    key = (w, -v)
                    if bkey is None or key > bkey:
                        best, bkey = v, key
            if best < 0:
                active.discard(p)
                continue
            part[best] = p
            pw[p] += level.vw[best]
            remaining -= 1
        next_id += k
    return part


def _bfs_hops(adj_l, s) -> dict:
    dist = {s: 0}
    frontier = [s]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj_l[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def d_balance(
    adj,
    weights,
    M: int,
    imbalance: float = 0.05,
    seed: int = 0,
    tries: int | None = None,
    areas=None,
    max_area: float | None = None,
) -> ClusterSolution:
    """Data-balanced connected M-way partition (multilevel).

    Coarsens by heavy-edge matching, grows an initial partition per
    connected component, then projects back refining boundary moves that
    reduce overweight parts first and edge cut second. Moves never split a
    part, so every part stays connected. Zero weights count as 1.
    """
    n = len(adj)
    if M < 1 or M > n:
        raise InfeasibleM(f"M={M} with {n} nodes")
    comps = connected_components(adj)
    if len(comps) > M:
        raise InfeasibleM(f"graph has {len(comps)} components, more than M={M}")
    vw = np.asarray(weights, dtype=float).copy()
    vw[vw <= 0] = 1.0
    total = float(vw.sum())
    max_w = (1 + imbalance) * total / M
    base = _Level([{int(v): 1.0 for v in adj[u]} for u in range(n)], vw.tolist())
    if tries is None:
        tries = 8 if n <= 100 else (3 if n <= 2000 else 2)
    rng_master = np.random.default_rng(seed)
    best = None
    for _ in range(tries):
        rng = np.random.default_rng(rng_master.integers(2**63))
        levels = [base]
        coarsen_to = max(40, 6 * M)
        while len(levels[-1].vw) > coarsen_to:
            c = _coarsen(levels[-1], rng, max_vw=max(max_w / 2, max(levels[-1].vw)))
            if c is None:
                break
            levels.append(c)
        part = _initial_partition(levels[-1], M, rng)
        for li in range(len(levels) - 1, -1, -1):
            lv = levels[li]
            P = _Partition(lv.adj, lv.vw, part, M, max_w)
            if len(lv.vw) <= 200:
                _fm_refine(P)
            _greedy_refine(P, rng)
            part = P.part
            if li > 0:
                cmap = levels[li - 1].cmap
                part = [part[cmap[u]] for u in range(len(cmap))]
        P = _Partition(base.adj, base.vw, part, M, max_w)
        sc = P.score()
        if best is None or sc < best[0]:
            best = (sc, list(part))
    assignment = repair(np.asarray(best[1]), adj, M, vw, areas, max_area)
    pw = np.bincount(assignment, weights=vw, minlength=M)
    info = {"imbalance": float(pw.max() / (total / M)), "solver": "d_balance"}
    return ClusterSolution(assignment, M, info=info)


# --- cluster scale estimation ------------------------------------------------


@dataclass
class ScaleEstimate:
    M: int
    solution: ClusterSolution
    fallback: bool = False
    trials: int = 0


def scale_search_start(total_area: float, max_area: float) -> int:
    """First trial M: one above the ceiling of total area over the cap."""
    return int(math.ceil(total_area / max_area - 1e-12)) + 1


def estimate_cluster_scale(
    adj,
    areas,
    max_area: float,
    fast_solver: Callable[[int], ClusterSolution],
    strict: bool = False,
) -> ScaleEstimate:
    """Smallest M (searched upward) whose fast solution is feasible.

    When nothing below N works the all-singletons solution is returned with
    ``fallback=True``, or NoFeasibleScale is raised if ``strict``.
    """
    areas = np.asarray(areas, dtype=float)
    total = float(areas.sum())
    if total <= 0:
        raise ValueError("total area must be positive")
    n = len(adj)
    start = scale_search_start(total, max_area)
    trials = 0
    for M in range(max(start, 1), n):
        trials += 1
        try:
            sol = fast_solver(M)
        except InfeasibleM:
            continue
        rep = check_feasible(sol.assignment, adj, areas, max_area, M)
        if rep.ok:
            sol.feasible = True
            sol.violations = []
            return ScaleEstimate(M, sol, False, trials)
    if strict:
        raise NoFeasibleScale(f"no feasible cluster scale in [{start}, {n})")
    log.warning("no feasible cluster scale in [%d, %d); falling back to singletons", start, n)
    single = ClusterSolution(np.arange(n), n, info={"solver": "singletons"})
    rep = check_feasible(single.assignment, adj, areas, max_area, n)
    single.feasible, single.violations = rep.ok, rep.violations
    return ScaleEstimate(n, single, True, trials)


# --- greedy growth -------------------------------------------------------------


def _seed_nodes(adj, M: int, rng) -> list[int]:
    """M random seeds, at least one per connected component when M allows."""
    n = len(adj)
    comps = connected_components(adj)
    seeds = []
    if M >= len(comps):
        for c in comps:
            seeds.append(c[int(rng.integers(len(c)))])
    rest = sorted(set(range(n)) - set(seeds))
    extra = rng.choice(len(rest), size=M - len(seeds), replace=False) if M > len(seeds) else []
    seeds += [rest[int(i)] for i in extra]
    return seeds


def greedy_grow(problem: ClusteringProblem, M: int, lam: float = 0.7, seed: int = 0) -> ClusterSolution:
    """Grow M seeded clusters by repeatedly appending the best-gain frontier node.

    gain = lam * (change in mean ACF) + (1 - lam) * (change in mean specificity),
    subject to the area cap. Nodes that cannot be appended are attached
    afterwards and reported as violations.
    """
    n = problem.n
    if M < 1 or M > n:
        raise InfeasibleM(f"M={M} with {n} nodes")
    rng = np.random.default_rng(seed)
    D = problem.demand
    k = problem.lag
    seeds = _seed_nodes(problem.adj, M, rng)
    a = np.full(n, -1, dtype=np.int64)
    S = np.zeros((D.shape[0], M))
    vs = np.zeros(M)
    ts = np.zeros(M)
    ar = np.zeros(M)
    for j, s in enumerate(seeds):
        a[s] = j
        S[:, j] = D[:, s]
        vs[j], ts[j], ar[j] = problem.vs[s], problem.ts[s], problem.area[s]
    rho = np.array([acf_fast(S[:, j], k) for j in range(M)])
    spec = np.divide(vs, ts, out=np.zeros(M), where=ts > 0)
    version = np.zeros(M, dtype=np.int64)

    def gain(v, j):
        r = acf_fast(S[:, j] + D[:, v], k)
        t = ts[j] + problem.ts[v]
        sp = (vs[j] + problem.vs[v]) / t if t > 0 else 0.0
        return lam * (r - rho[j]) / M + (1 - lam) * (sp - spec[j]) / M

    heap = []

    def push(v, j):
        if ar[j] + problem.area[v] <= problem.max_area * (1 + 1e-12):
            heapq.heappush(heap, (-gain(v, j), v, j, int(version[j])))

    for j, s in enumerate(seeds):
        for v in problem.adj[s].tolist():
            if a[v] == -1:
                push(v, j)
    while heap:
        ng, v, j, ver = heapq.heappop(heap)
        if a[v] != -1:
            continue
        if ver != version[j]:
            push(v, j)
            continue
        a[v] = j
        S[:, j] += D[:, v]
        vs[j] += problem.vs[v]
        ts[j] += problem.ts[v]
        ar[j] += problem.area[v]
        rho[j] = acf_fast(S[:, j], k)
        spec[j] = vs[j] / ts[j] if ts[j] > 0 else 0.0
        version[j] += 1
        for x in problem.adj[v].tolist():
            if a[x] == -1:
                push(x, j)

    violations = []
    left = np.nonzero(a == -1)[0].tolist()
    while left:
        progress = False
        for v in left:
            nbr = sorted({int(a[x]) for x in problem.adj[v].tolist() if a[x] != -1})
            if nbr:
                j = min(nbr, key=lambda c: (ar[c], c))
                a[v] = j
                ar[j] += problem.area[v]
                violations.append(f"node {v} attached over the area cap")
                progress = True
        left = [v for v in left if a[v] == -1]
        if not progress:
            for v in left:
                a[v] = 0
                violations.append(f"node {v} unreachable from any seed")
            left = []
    return ClusterSolution(a, M, violations=violations, info={"solver": "greedy", "seed": seed, "lambda": lam})


# --- fluid communities -----------------------------------------------------------


def fluid_grow(adj, M: int, seed: int = 0, max_sweeps: int = 100) -> ClusterSolution:
    """Fluid-communities propagation with M seeded communities.

    Each community holds total density 1 spread over its members; nodes
    adopt the community with the largest summed density among themselves
    and their neighbours. Nodes still unassigned after the sweeps join
    the nearest assigned community by BFS so the result is total.
    """
    n = len(adj)
    if M < 1 or M > n:
        raise InfeasibleM(f"M={M} with {n} nodes")
    rng = np.random.default_rng(seed)
    seeds = _seed_nodes(adj, M, rng)
    com = np.full(n, -1, dtype=np.int64)
    size = np.zeros(M, dtype=np.int64)
    for j, s in enumerate(seeds):
        com[s] = j
        size[j] = 1
    adj_l = [a.tolist() for a in adj]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        changed = False
        for u in rng.permutation(n).tolist():
            tally: dict = {}
            cu = int(com[u])
            if cu >= 0:
                tally[cu] = 1.0 / size[cu]
            for v in adj_l[u]:
                cv = int(com[v])
                if cv >= 0:
                    tally[cv] = tally.get(cv, 0.0) + 1.0 / size[cv]
            if not tally:
                continue
            top = max(tally.values())
            best = sorted(c for c, d in tally.items() if top - d < 1e-4)
            if cu in best:
                continue
            new = best[int(rng.integers(len(best)))]
            if cu >= 0:
                size[cu] -= 1
            com[u] = new
            size[new] += 1
            changed = True
        if not changed:
            converged = True
            break
    # attach stragglers breadth-first from assigned nodes
    frontier = sorted(np.nonzero(com >= 0)[0].tolist())
    while frontier and (com < 0).any():
        nxt = []
        for u in frontier:
            for v in adj_l[u]:
                if com[v] < 0:
                    com[v] = com[u]
                    nxt.append(v)
        frontier = sorted(nxt)
    com[com < 0] = 0
    info = {"solver": "fluid", "seed": seed, "converged": converged, "sweeps": sweeps}
    if not converged:
        log.info("fluid propagation did not converge in %d sweeps", max_sweeps)
    return ClusterSolution(com, M, info=info)
