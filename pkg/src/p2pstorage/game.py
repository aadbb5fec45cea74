"""Game state and mathematics.

The allocation state is the integer matrix counting how many atoms each
unit keeps in each resource.  On top of it live the per-move utility, the
exact potential whose increments equal utility increments, the Gibbs
choice distribution used by the noisy best response, the Nash test, and
the combinatorial weight that appears in the stationary distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .topology import Instance

__all__ = [
    "ALLOCATION",
    "DISTRIBUTION",
    "AllocationState",
    "GameParams",
    "InvalidStateError",
    "Move",
    "NoAvailableResourceError",
    "RejectedMoveError",
    "UndefinedUtilityError",
    "available_resources",
    "gibbs_choice_distribution",
    "global_utility",
    "is_nash",
    "log_multinomial_weight",
    "multinomial_weight",
    "placement_utility",
    "potential",
    "state_from_snapshot",
    "state_to_snapshot",
    "utility",
]

ALLOCATION = "allocation"
DISTRIBUTION = "distribution"


class RejectedMoveError(ValueError):
    """Move would violate the state invariants; state left unchanged."""


class UndefinedUtilityError(ValueError):
    """Utility is not defined on a resource offering no space."""


class NoAvailableResourceError(ValueError):
    """No candidate resource has spare capacity."""


class InvalidStateError(ValueError):
    """Operation requires a full allocation state."""


@dataclass(frozen=True)
class GameParams:
    """Utility weights: congestion (k_c), aggregation (k_a), and the Gibbs
    inverse-noise parameter (gamma; math.inf selects pure best response)."""

    k_c: float
    k_a: float
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if self.k_c < 0 or self.k_a < 0:
            raise ValueError("k_c and k_a must be nonnegative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive (math.inf allowed)")


@dataclass(frozen=True)
class Move:
    """A single-atom action: place a new atom (allocation) or relocate one
    (distribution, with ``source`` set, possibly equal to ``dest``)."""

    kind: str
    unit: int
    source: int | None
    dest: int


class AllocationState:
    """Sparse atom-count matrix with cached row and column sums.

    ``counts[x]`` maps resource -> atoms of unit x stored there (nonzero
    entries only), ``placed[x]`` is unit x's row sum, ``load[y]`` is
    resource y's column sum.  Mutated only through apply_move (validated)
    or by the dynamics engine (pre-validated moves).
    """

    __slots__ = ("n", "counts", "placed", "load")

    def __init__(self, n: int, counts: list[dict[int, int]], placed: list[int], load: list[int]):
        self.n = n
        self.counts = counts
        self.placed = placed
        self.load = load

    @classmethod
    def zeros(cls, inst: Instance) -> "AllocationState":
        n = inst.n
        return cls(n, [dict() for _ in range(n)], [0] * n, [0] * n)

    @classmethod
    def from_entries(cls, inst: Instance, entries) -> "AllocationState":
        """Build and validate a state from (unit, resource, count) triples."""
        state = cls.zeros(inst)
        for x, y, c in entries:
            x, y, c = int(x), int(y), int(c)
            if c < 0:
                raise ValueError(f"negative count at ({x}, {y})")
            if c == 0:
                continue
            if y in state.counts[x]:
                raise ValueError(f"duplicate entry ({x}, {y})")
            state.counts[x][y] = c
            state.placed[x] += c
            state.load[y] += c
        state.validate(inst)
        return state

    def copy(self) -> "AllocationState":
        return AllocationState(
            self.n,
            [dict(row) for row in self.counts],
            list(self.placed),
            list(self.load),
        )

    def get(self, x: int, y: int) -> int:
        return self.counts[x].get(y, 0)

    def total_placed(self) -> int:
        return sum(self.placed)

    def is_full(self, inst: Instance) -> bool:
        return all(self.placed[x] == inst.alpha[x] for x in range(self.n))

    def key(self) -> tuple:
        """Canonical hashable form: sorted nonzero (x, y, count) triples."""
        items = []
        for x, row in enumerate(self.counts):
            for y, c in row.items():
                items.append((x, y, c))
        items.sort()
        return tuple(items)

    def matrix(self) -> list[list[int]]:
        full = [[0] * self.n for _ in range(self.n)]
        for x, row in enumerate(self.counts):
            for y, c in row.items():
                full[x][y] = c
        return full

    def validate(self, inst: Instance) -> None:
        """Recheck structural invariants and cache consistency."""
        if self.n != inst.n:
            raise InvalidStateError(f"state has n={self.n}, instance n={inst.n}")
        edges = inst.topology.edges
        load = [0] * self.n
        for x, row in enumerate(self.counts):
            row_sum = 0
            for y, c in row.items():
                if c <= 0:
                    raise InvalidStateError(f"nonpositive stored count at ({x}, {y})")
                if (x, y) not in edges:
                    raise InvalidStateError(f"atoms stored on the non-edge ({x}, {y})")
                row_sum += c
                load[y] += c
            if row_sum != self.placed[x]:
                raise InvalidStateError(f"stale row cache for unit {x}")
            if row_sum > inst.alpha[x]:
                raise InvalidStateError(f"unit {x} placed {row_sum} > alpha {inst.alpha[x]}")
        for y in range(self.n):
            if load[y] != self.load[y]:
                raise InvalidStateError(f"stale column cache for resource {y}")
            if load[y] > inst.beta[y]:
                raise InvalidStateError(f"resource {y} holds {load[y]} > beta {inst.beta[y]}")

    def apply_move(self, inst: Instance, move: Move) -> "AllocationState":
        """Apply a validated single-atom move in place; rejected moves leave
        the state untouched."""
        x, dest = move.unit, move.dest
        if not (0 <= x < self.n):
            raise RejectedMoveError(f"unit {x} out of range")
        if (x, dest) not in inst.topology.edges:
            raise RejectedMoveError(f"destination ({x}, {dest}) is not an edge")
        if move.kind == ALLOCATION:
            if move.source is not None:
                raise RejectedMoveError("allocation move cannot carry a source")
            if self.placed[x] >= inst.alpha[x]:
                raise RejectedMoveError(f"unit {x} already fully allocated")
            if self.load[dest] >= inst.beta[dest]:
                raise RejectedMoveError(f"resource {dest} is full")
            self.counts[x][dest] = self.counts[x].get(dest, 0) + 1
            self.placed[x] += 1
            self.load[dest] += 1
        elif move.kind == DISTRIBUTION:
            src = move.source
            if src is None:
                raise RejectedMoveError("distribution move needs a source")
            if self.counts[x].get(src, 0) <= 0:
                raise RejectedMoveError(f"unit {x} stores nothing in {src}")
            if dest != src and self.load[dest] >= inst.beta[dest]:
                raise RejectedMoveError(f"resource {dest} is full")
            if dest != src:
                row = self.counts[x]
                row[src] -= 1
                if row[src] == 0:
                    del row[src]
                row[dest] = row.get(dest, 0) + 1
                self.load[src] -= 1
                self.load[dest] += 1
        else:
            raise RejectedMoveError(f"unknown move kind {move.kind!r}")
        return self


def utility(inst: Instance, params: GameParams, state: AllocationState, x: int, y: int) -> float:
    """Value unit x derives from resource y: reliability, minus congestion
    proportional to the fill fraction, plus an aggregation bonus for atoms
    it already keeps there."""
    if (x, y) not in inst.topology.edges:
        raise ValueError(f"({x}, {y}) is not an edge")
    if inst.beta[y] == 0:
        raise UndefinedUtilityError(f"resource {y} offers no space")
    return (
        inst.reliability[y]
        - params.k_c * state.load[y] / inst.beta[y]
        + params.k_a * state.counts[x].get(y, 0)
    )


def potential(inst: Instance, params: GameParams, state: AllocationState) -> float:
    """Exact potential: any single-atom move changes it by exactly the
    mover's utility change (see the identity test in the suite)."""
    total = 0.0
    for y in range(inst.n):
        w = state.load[y]
        total += (w + 1) * inst.reliability[y]
        if w:
            total -= params.k_c * (w * (w + 1) / 2.0) / inst.beta[y]
    if params.k_a:
        triangular = 0
        for row in state.counts:
            for c in row.values():
                triangular += c * (c + 1)
        total += params.k_a * triangular / 2.0
    return total


def available_resources(inst: Instance, state: AllocationState, x: int) -> list[int]:
    """Out-neighbors of x with spare capacity, in ascending order."""
    load = state.load
    beta = inst.beta
    return [y for y in inst.topology.out_neighbors(x) if load[y] < beta[y]]


def placement_utility(
    inst: Instance,
    params: GameParams,
    state: AllocationState,
    x: int,
    y: int,
    source: int | None = None,
) -> float:
    """Utility of y evaluated at the hypothetical state where one atom of x
    lands on y (after first removing one from ``source`` if given)."""
    extra = 0 if y == source else 1
    return (
        inst.reliability[y]
        - params.k_c * (state.load[y] + extra) / inst.beta[y]
        + params.k_a * (state.counts[x].get(y, 0) + extra)
    )


def gibbs_choice_distribution(
    inst: Instance,
    params: GameParams,
    state: AllocationState,
    x: int,
    candidates,
    gamma: float | None = None,
) -> dict[int, float]:
    """Probability of each candidate resource under the noisy best response.

    Weights are exponential in gamma times the post-placement utility;
    gamma = math.inf returns the uniform distribution over the argmax set.
    """
    cands = sorted(candidates)
    if not cands:
        raise NoAvailableResourceError(f"unit {x} has no available resource")
    edges = inst.topology.edges
    for y in cands:
        if (x, y) not in edges:
            raise ValueError(f"candidate ({x}, {y}) is not an edge")
        if state.load[y] >= inst.beta[y]:
            raise ValueError(f"candidate resource {y} has no spare capacity")
    g = params.gamma if gamma is None else gamma
    utils = [placement_utility(inst, params, state, x, y) for y in cands]
    top = max(utils)
    if math.isinf(g):
        ties = [y for y, u in zip(cands, utils) if u == top]
        share = 1.0 / len(ties)
        return {y: (share if u == top else 0.0) for y, u in zip(cands, utils)}
    weights = [math.exp(g * (u - top)) for u in utils]
    norm = sum(weights)
    return {y: w / norm for y, w in zip(cands, weights)}


def is_nash(
    inst: Instance, params: GameParams, state: AllocationState, tol: float = 1e-9
) -> bool:
    """True iff no unit can strictly improve by relocating a single atom.

    Deviations are compared at the post-move state; requires a full
    allocation state.
    """
    if not state.is_full(inst):
        raise InvalidStateError("Nash test is defined on full allocation states")
    for x in range(inst.n):
        for y, c in state.counts[x].items():
            if c <= 0:
                continue
            current = utility(inst, params, state, x, y)
            for y2 in available_resources(inst, state, x):
                if placement_utility(inst, params, state, x, y2, source=y) > current + tol:
                    return False
            # Moving back onto y itself when y is at capacity is a no-op
            # and never improves; no extra case needed.
    return True


def global_utility(inst: Instance, params: GameParams, state: AllocationState) -> float:
    """Sum over stored atoms of the owner's utility for where they sit."""
    total = 0.0
    for x in range(inst.n):
        for y, c in state.counts[x].items():
            total += c * utility(inst, params, state, x, y)
    return total


def multinomial_weight(inst: Instance, state: AllocationState) -> int:
    """Number of atom-labelled allocations collapsing to this state:
    prod_x alpha_x! / prod_(x,y) W_xy!  (exact big integer)."""
    numerator = 1
    for a in inst.alpha:
        numerator *= math.factorial(a)
    denominator = 1
    for row in state.counts:
        for c in row.values():
            denominator *= math.factorial(c)
    return numerator // denominator


def log_multinomial_weight(inst: Instance, state: AllocationState) -> float:
    total = 0.0
    for a in inst.alpha:
        total += math.lgamma(a + 1)
    for row in state.counts:
        for c in row.values():
            total -= math.lgamma(c + 1)
    return total


def state_to_snapshot(inst: Instance, state: AllocationState) -> dict:
    """Serializable snapshot: nonzero entries plus the instance fingerprint."""
    entries = sorted([x, y, c] for x, row in enumerate(state.counts) for y, c in row.items())
    return {"fingerprint": inst.fingerprint(), "entries": entries}


def state_from_snapshot(
    inst: Instance, snapshot: dict, check_fingerprint: bool = True
) -> AllocationState:
    if check_fingerprint and snapshot.get("fingerprint") != inst.fingerprint():
        raise ValueError("snapshot fingerprint does not match the instance")
    return AllocationState.from_entries(inst, snapshot["entries"])
