"""Allocation existence tests.

The efficient route reduces the question "can every unit place all of its
atoms into neighboring capacity?" to a max-flow problem on the aggregated
demand/capacity network.  Two independent oracles cross-validate it at
desk scale: exhaustive subset enumeration of the covering inequality, and
maximum matching on the expanded atom-level bipartite graph.

All arithmetic in this module is exact integer arithmetic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .topology import Instance, neighborhood_of_set

__all__ = [
    "AtomBipartite",
    "FeasibilityVerdict",
    "SizeLimitExceeded",
    "build_atom_bipartite",
    "check_feasible_exhaustive",
    "check_feasible_flow",
    "check_feasible_matching",
    "check_strict",
    "check_strict_exhaustive",
    "maximal_irreducible_subsets",
]

EXHAUSTIVE_MAX_UNITS = 25
IRREDUCIBLE_MAX_UNITS = 20
ATOM_GRAPH_MAX_NODES = 10_000


class SizeLimitExceeded(ValueError):
    """Instance too large for an exhaustive oracle; use the flow check."""


@dataclass(frozen=True)
class FeasibilityVerdict:
    """Outcome of a feasibility test.

    ``witness`` is present exactly when infeasible and is a set of units
    whose total demand exceeds (or, for strict checks, reaches) the total
    capacity of its joint neighborhood.
    """

    feasible: bool
    witness: tuple[int, ...] | None = None

    def __bool__(self) -> bool:
        return self.feasible


class _Dinic:
    """Max-flow with integer capacities (BFS levels + blocking DFS)."""

    def __init__(self, size: int) -> None:
        self.size = size
        self.adj: list[list[list[int]]] = [[] for _ in range(size)]  # [to, cap, rev]

    def add_edge(self, u: int, v: int, cap: int) -> None:
        self.adj[u].append([v, cap, len(self.adj[v])])
        self.adj[v].append([u, 0, len(self.adj[u]) - 1])

    def _bfs(self, s: int, t: int) -> bool:
        self.level = [-1] * self.size
        self.level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for edge in self.adj[u]:
                if edge[1] > 0 and self.level[edge[0]] < 0:
                    self.level[edge[0]] = self.level[u] + 1
                    queue.append(edge[0])
        return self.level[t] >= 0

    def _dfs(self, u: int, t: int, pushed: int) -> int:
        if u == t:
            return pushed
        while self.it[u] < len(self.adj[u]):
            edge = self.adj[u][self.it[u]]
            v = edge[0]
            if edge[1] > 0 and self.level[v] == self.level[u] + 1:
                flow = self._dfs(v, t, min(pushed, edge[1]))
                if flow > 0:
                    edge[1] -= flow
                    self.adj[v][edge[2]][1] += flow
                    return flow
            self.it[u] += 1
        return 0

    def max_flow(self, s: int, t: int) -> int:
        total = 0
        while self._bfs(s, t):
            self.it = [0] * self.size
            while True:
                flow = self._dfs(s, t, 1 << 62)
                if flow == 0:
                    break
                total += flow
        return total

    def reachable_from(self, s: int) -> set[int]:
        """Nodes reachable from s in the residual graph (source cut side)."""
        seen = {s}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for edge in self.adj[u]:
                if edge[1] > 0 and edge[0] not in seen:
                    seen.add(edge[0])
                    queue.append(edge[0])
        return seen


def check_feasible_flow(inst: Instance) -> FeasibilityVerdict:
    """Decide allocation existence by max-flow on the aggregated network.

    source -> unit x (capacity alpha_x) -> resource y for every edge
    (x, y) -> sink (capacity beta_y).  Feasible iff the max flow ships all
    demand.  On infeasibility the units on the source side of the min cut
    form a violating subset.
    """
    n = inst.n
    total = inst.total_alpha
    if total == 0:
        return FeasibilityVerdict(True)
    source, sink = 0, 2 * n + 1
    net = _Dinic(2 * n + 2)
    big = total + 1
    for x in range(n):
        if inst.alpha[x] > 0:
            net.add_edge(source, 1 + x, inst.alpha[x])
        for y in inst.topology.out_neighbors(x):
            net.add_edge(1 + x, 1 + n + y, big)
    for y in range(n):
        if inst.beta[y] > 0:
            net.add_edge(1 + n + y, sink, inst.beta[y])
    if net.max_flow(source, sink) == total:
        return FeasibilityVerdict(True)
    cut = net.reachable_from(source)
    witness = tuple(x for x in range(n) if 1 + x in cut)
    return FeasibilityVerdict(False, witness)


def check_feasible_exhaustive(inst: Instance) -> FeasibilityVerdict:
    """Test the covering inequality on every nonempty subset of units.

    Subsets are scanned in increasing bitmask order; the first violator is
    returned as the witness.  Guarded to n <= 25.
    """
    n = inst.n
    if n > EXHAUSTIVE_MAX_UNITS:
        raise SizeLimitExceeded(
            f"subset enumeration is limited to n <= {EXHAUSTIVE_MAX_UNITS} "
            f"(got n={n}); use check_feasible_flow"
        )
    nbr_mask = [0] * n
    for x in range(n):
        for y in inst.topology.out_neighbors(x):
            nbr_mask[x] |= 1 << y
    for mask in range(1, 1 << n):
        demand = 0
        cover = 0
        m = mask
        while m:
            low = m & -m
            i = low.bit_length() - 1
            demand += inst.alpha[i]
            cover |= nbr_mask[i]
            m ^= low
        capacity = 0
        while cover:
            low = cover & -cover
            capacity += inst.beta[low.bit_length() - 1]
            cover ^= low
        if demand > capacity:
            witness = tuple(i for i in range(n) if mask >> i & 1)
            return FeasibilityVerdict(False, witness)
    return FeasibilityVerdict(True)


def check_strict(inst: Instance) -> FeasibilityVerdict:
    """Strict covering condition: every nonempty subset's demand is
    strictly below its neighborhood capacity.

    Equivalent flow formulation: for each unit x, the instance with
    alpha_x bumped by one atom must remain feasible (every nonempty subset
    contains some unit, so the bump forces a strict margin there).
    """
    n = inst.n
    for x in range(n):
        bumped = list(inst.alpha)
        bumped[x] += 1
        probe = Instance(inst.topology, tuple(bumped), inst.beta, inst.reliability)
        verdict = check_feasible_flow(probe)
        if not verdict.feasible:
            return FeasibilityVerdict(False, verdict.witness)
    return FeasibilityVerdict(True)


def check_strict_exhaustive(inst: Instance) -> FeasibilityVerdict:
    """Exhaustive variant of the strict condition (witness has demand >= capacity)."""
    n = inst.n
    if n > EXHAUSTIVE_MAX_UNITS:
        raise SizeLimitExceeded(
            f"subset enumeration is limited to n <= {EXHAUSTIVE_MAX_UNITS} "
            f"(got n={n}); use check_strict"
        )
    nbr_mask = [0] * n
    for x in range(n):
        for y in inst.topology.out_neighbors(x):
            nbr_mask[x] |= 1 << y
    for mask in range(1, 1 << n):
        demand = 0
        cover = 0
        m = mask
        while m:
            low = m & -m
            demand += inst.alpha[low.bit_length() - 1]
            cover |= nbr_mask[low.bit_length() - 1]
            m ^= low
        capacity = 0
        while cover:
            low = cover & -cover
            capacity += inst.beta[low.bit_length() - 1]
            cover ^= low
        if demand >= capacity:
            witness = tuple(i for i in range(n) if mask >> i & 1)
            return FeasibilityVerdict(False, witness)
    return FeasibilityVerdict(True)


def _is_irreducible(members: list[int], nbr_mask: list[int]) -> bool:
    # A subset splits into two independent halves iff the graph "neighborhoods
    # overlap" on its members is disconnected.
    if len(members) <= 1:
        return True
    seen = {members[0]}
    stack = [members[0]]
    while stack:
        u = stack.pop()
        for v in members:
            if v not in seen and nbr_mask[u] & nbr_mask[v]:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(members)


def maximal_irreducible_subsets(inst: Instance) -> list[tuple[int, ...]]:
    """Enumerate the subsets it suffices to test the covering inequality on.

    A subset is irreducible when it cannot be split into two nonempty
    parts with disjoint neighborhoods, and maximal when every irreducible
    strict superset strictly grows its neighborhood.  Quantifying
    maximality over irreducible supersets (rather than all supersets)
    keeps the reduction sound when units with empty neighborhoods exist.
    Exhaustive; guarded to n <= 20 and intended for desk-scale checks.
    """
    n = inst.n
    if n > IRREDUCIBLE_MAX_UNITS:
        raise SizeLimitExceeded(
            f"maximal_irreducible_subsets is limited to n <= {IRREDUCIBLE_MAX_UNITS}"
        )
    nbr_mask = [0] * n
    for x in range(n):
        for y in inst.topology.out_neighbors(x):
            nbr_mask[x] |= 1 << y
    # Irreducible subsets grouped by their neighborhood mask.  An
    # irreducible superset can only share the neighborhood of a smaller
    # set within the same group, so maximality is decided group-wise.
    groups: dict[int, list[int]] = {}
    for mask in range(1, 1 << n):
        cover = 0
        members = []
        for i in range(n):
            if mask >> i & 1:
                cover |= nbr_mask[i]
                members.append(i)
        if _is_irreducible(members, nbr_mask):
            groups.setdefault(cover, []).append(mask)
    found: list[tuple[int, ...]] = []
    for masks in groups.values():
        for mask in masks:
            if any(other != mask and other & mask == mask for other in masks):
                continue
            found.append(tuple(i for i in range(n) if mask >> i & 1))
    found.sort(key=lambda d: (len(d), d))
    return found


@dataclass(frozen=True)
class AtomBipartite:
    """Atom-level bipartite graph: one left node per data atom, one right
    node per capacity slot, an edge whenever the owning units are linked.

    Adjacency is implicit: (x, a) -- (y, b) iff (x, y) is a topology edge.
    """

    inst: Instance
    a_nodes: tuple[tuple[int, int], ...]
    b_nodes: tuple[tuple[int, int], ...]


def build_atom_bipartite(inst: Instance) -> AtomBipartite:
    total = inst.total_alpha + inst.total_beta
    if total > ATOM_GRAPH_MAX_NODES:
        raise SizeLimitExceeded(
            f"atom bipartite graph would have {total} nodes "
            f"(limit {ATOM_GRAPH_MAX_NODES}); use check_feasible_flow"
        )
    a_nodes = tuple((x, a) for x in range(inst.n) for a in range(inst.alpha[x]))
    b_nodes = tuple((y, b) for y in range(inst.n) for b in range(inst.beta[y]))
    return AtomBipartite(inst, a_nodes, b_nodes)


def check_feasible_matching(inst: Instance) -> FeasibilityVerdict:
    """Independent oracle: maximum matching on the atom-level graph.

    Feasible iff some matching covers every atom.  When it does not, the
    units whose atoms are reachable from an unmatched atom by alternating
    paths form a violating subset.
    """
    bip = build_atom_bipartite(inst)
    n = inst.n
    # Slot ids grouped per resource.
    slot_start = [0] * (n + 1)
    for y in range(n):
        slot_start[y + 1] = slot_start[y] + inst.beta[y]
    num_slots = slot_start[n]
    slot_owner = [-1] * num_slots  # atom id occupying the slot
    atom_unit = [x for x, _ in bip.a_nodes]
    out = inst.topology.out_neighbors

    def augment(atom: int, visited: list[bool]) -> bool:
        x = atom_unit[atom]
        for y in out(x):
            for slot in range(slot_start[y], slot_start[y + 1]):
                if visited[slot]:
                    continue
                visited[slot] = True
                if slot_owner[slot] < 0 or augment(slot_owner[slot], visited):
                    slot_owner[slot] = atom
                    return True
        return False

    unmatched = []
    for atom in range(len(bip.a_nodes)):
        if not augment(atom, [False] * num_slots):
            unmatched.append(atom)
    if not unmatched:
        return FeasibilityVerdict(True)

    # Alternating-path reachability from every unmatched atom.
    matched_slot_of_atom: dict[int, list[int]] = {}
    for slot, owner in enumerate(slot_owner):
        if owner >= 0:
            matched_slot_of_atom.setdefault(owner, []).append(slot)
    reach_atoms = set(unmatched)
    queue = deque(unmatched)
    reach_slots: set[int] = set()
    while queue:
        atom = queue.popleft()
        x = atom_unit[atom]
        for y in out(x):
            for slot in range(slot_start[y], slot_start[y + 1]):
                if slot in reach_slots:
                    continue
                reach_slots.add(slot)
                owner = slot_owner[slot]
                if owner >= 0 and owner not in reach_atoms:
                    reach_atoms.add(owner)
                    queue.append(owner)
    witness = tuple(sorted({atom_unit[a] for a in reach_atoms}))
    return FeasibilityVerdict(False, witness)


def witness_violates(inst: Instance, witness: tuple[int, ...], strict: bool = False) -> bool:
    """Check that a reported witness actually breaks the covering inequality."""
    if not witness:
        return False
    demand = sum(inst.alpha[x] for x in witness)
    capacity = sum(inst.beta[y] for y in neighborhood_of_set(inst.topology, set(witness)))
    return demand >= capacity if strict else demand > capacity
