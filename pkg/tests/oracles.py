"""Independent brute-force oracles used to pin expected values.

Everything here is deliberately naive (enumeration, BFS, permutations) and
shares no code with the library paths it checks.
"""

import itertools
import math

import numpy as np


def bfs_hop_distances(adjacency: np.ndarray, start: int) -> dict[int, int]:
    """Plain BFS hop distances from ``start`` over nonzero adjacency entries."""
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in range(adjacency.shape[0]):
                if adjacency[u, v] != 0 and v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def product_edges_bruteforce(a1: np.ndarray, a2: np.ndarray) -> dict[tuple, float]:
    """All product-graph edges by enumerating every pair combination."""
    n1, n2 = a1.shape[0], a2.shape[0]
    edges = {}
    for v in range(n1):
        for vp in range(n2):
            for u in range(n1):
                for up in range(n2):
                    w = a1[v, u] * a2[vp, up]
                    if w != 0 and (v, vp) < (u, up):
                        edges[((v, vp), (u, up))] = w
    return edges


def walk_kernel_bruteforce(product_adj: np.ndarray, s: np.ndarray, max_len: int,
                           start_rows=None) -> float:
    """Sum over all walks w0..wp (p = 0..max_len) of s[w0] * prod(weights) * s[wp].

    ``start_rows`` restricts w0 (anchored variant); None means all rows.
    """
    n = product_adj.shape[0]
    starts = range(n) if start_rows is None else start_rows
    total = 0.0
    for p in range(max_len + 1):
        for w0 in starts:
            stack = [(w0, 0, 1.0)]
            while stack:
                node, steps, weight = stack.pop()
                if steps == p:
                    total += s[w0] * weight * s[node]
                    continue
                for nxt in range(n):
                    w = product_adj[node, nxt]
                    if w != 0:
                        stack.append((nxt, steps + 1, weight * w))
    return total


def _map_cost(a1, f1, a2, f2, assignment, tol):
    """Edit cost of transforming graph 1 into graph 2 under a node map.

    ``assignment[u]`` is the image of node u or None (deletion). Unit costs;
    node substitution costs 1 unless the feature rows agree within ``tol``.
    """
    n1, n2 = a1.shape[0], a2.shape[0]
    mapped2 = {v: u for u, v in enumerate(assignment) if v is not None}
    cost = 0.0
    for u, v in enumerate(assignment):
        if v is None:
            cost += 1.0
        elif not np.allclose(f1[u], f2[v], atol=tol, rtol=0.0):
            cost += 1.0
    cost += float(n2 - len(mapped2))
    for i in range(n1):
        for j in range(i + 1, n1):
            if a1[i, j] != 0:
                vi, vj = assignment[i], assignment[j]
                if vi is None or vj is None or a2[vi, vj] == 0:
                    cost += 1.0
    for x in range(n2):
        for y in range(x + 1, n2):
            if a2[x, y] != 0:
                if x in mapped2 and y in mapped2:
                    if a1[mapped2[x], mapped2[y]] == 0:
                        cost += 1.0
                else:
                    cost += 1.0
    return cost


def ged_bruteforce(a1, f1, a2, f2, tol=1e-9) -> float:
    """Exhaustive minimum over every injective partial node assignment."""
    n1, n2 = a1.shape[0], a2.shape[0]
    best = math.inf

    def recurse(u, assignment, used):
        nonlocal best
        if u == n1:
            best = min(best, _map_cost(a1, f1, a2, f2, assignment, tol))
            return
        recurse(u + 1, assignment + [None], used)
        for v in range(n2):
            if v not in used:
                recurse(u + 1, assignment + [v], used | {v})

    recurse(0, [], set())
    return best


def shapley_permutation_oracle(value_fn, m: int) -> np.ndarray:
    """Shapley values as the average marginal contribution over all m! orders."""
    phi = np.zeros(m)
    perms = list(itertools.permutations(range(m)))
    for perm in perms:
        members = []
        prev = value_fn(frozenset())
        for player in perm:
            members.append(player)
            cur = value_fn(frozenset(members))
            phi[player] += cur - prev
            prev = cur
    return phi / len(perms)


def spearman_closed_form(x, y) -> float:
    """1 - 6*sum(d^2)/(n(n^2-1)) for vectors with distinct entries."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    rx = np.empty(n)
    rx[np.argsort(x)] = np.arange(1, n + 1)
    ry = np.empty(n)
    ry[np.argsort(y)] = np.arange(1, n + 1)
    d = rx - ry
    return 1.0 - 6.0 * float(d @ d) / (n * (n * n - 1))


def is_isomorphic_bruteforce(a1: np.ndarray, a2: np.ndarray) -> bool:
    """Unlabeled graph isomorphism by permutation search (tiny graphs only)."""
    n = a1.shape[0]
    if a2.shape[0] != n:
        return False
    b1 = (a1 != 0).astype(int)
    b2 = (a2 != 0).astype(int)
    if sorted(b1.sum(axis=0)) != sorted(b2.sum(axis=0)):
        return False
    for perm in itertools.permutations(range(n)):
        p = list(perm)
        if np.array_equal(b1[np.ix_(p, p)], b2):
            return True
    return False
