"""The asynchronous storage dynamics.

At every discrete time step one unit wakes up (picked with probability
proportional to its demand), decides between placing a new atom and
relocating an old one, and samples the destination from the Gibbs choice
distribution.  Relocation first removes the atom, so the vacated resource
competes as a candidate; picking it again is a legal self-move that
leaves the state unchanged.

Runs are deterministic given (config, seed).  Blocked activations consume
their time step.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate

from .game import (
    ALLOCATION,
    DISTRIBUTION,
    AllocationState,
    GameParams,
    Move,
)
from .topology import Instance

__all__ = [
    "ALLOCATE_FIRST",
    "PROPORTIONAL",
    "VARIANTS",
    "DegenerateInstanceError",
    "GammaSchedule",
    "RunResult",
    "SimConfig",
    "activation_distribution",
    "allocation_move",
    "default_horizon",
    "distribution_move",
    "gamma_schedule_value",
    "move_kind_probabilities",
    "run",
    "state_stream",
    "step",
]

PROPORTIONAL = "proportional"
ALLOCATE_FIRST = "allocate-first"
VARIANTS = (PROPORTIONAL, ALLOCATE_FIRST)


class DegenerateInstanceError(ValueError):
    """No unit has anything to back up; the run is trivially complete."""


@dataclass(frozen=True)
class GammaSchedule:
    """Gibbs parameter schedule over simulation time.

    kinds: "fixed" (constant gamma0), "annealed" (gamma0 + t * increment,
    with increment defaulting to 1 / (100 * max reliability)), and
    "infinite" (pure best response throughout).
    """

    kind: str
    gamma0: float = 1.0
    increment: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "annealed", "infinite"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind != "infinite" and not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if self.increment is not None and self.increment < 0:
            raise ValueError("increment must be nonnegative")

    @classmethod
    def fixed(cls, gamma0: float) -> "GammaSchedule":
        return cls("fixed", gamma0)

    @classmethod
    def annealed(cls, gamma0: float = 1.0, increment: float | None = None) -> "GammaSchedule":
        return cls("annealed", gamma0, increment)

    @classmethod
    def infinite(cls) -> "GammaSchedule":
        return cls("infinite")

    def resolve_increment(self, lam_max: float) -> float:
        if self.increment is not None:
            return self.increment
        if lam_max <= 0:
            raise ValueError(
                "default annealing increment needs a positive max reliability; "
                "pass an explicit increment"
            )
        return 1.0 / (100.0 * lam_max)


def gamma_schedule_value(schedule: GammaSchedule, t: int, lam_max: float) -> float:
    """Gamma in force at step t."""
    if schedule.kind == "infinite":
        return math.inf
    if schedule.kind == "fixed":
        return schedule.gamma0
    return schedule.gamma0 + t * schedule.resolve_increment(lam_max)


def default_horizon(inst: Instance) -> int:
    """Standard time budget: up to two moves per data atom."""
    return 2 * inst.total_alpha


@dataclass(frozen=True, eq=False)
class SimConfig:
    instance: Instance
    params: GameParams
    schedule: GammaSchedule
    horizon: int
    seed: int = 0
    variant: str = PROPORTIONAL
    record_trace: bool = False
    initial_state: AllocationState | None = None

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass(eq=False)
class RunResult:
    final_state: AllocationState
    completed: bool
    steps_to_completion: int | None
    moves_per_unit: list[int]
    trace: list[tuple[int, Move]] | None = None


def activation_distribution(inst: Instance) -> list[float]:
    """P(unit x wakes up) proportional to its demand."""
    total = inst.total_alpha
    if total == 0:
        raise DegenerateInstanceError("all alpha are zero; nothing to allocate")
    return [a / total for a in inst.alpha]


def move_kind_probabilities(
    inst: Instance, state: AllocationState, x: int, variant: str
) -> tuple[float, float]:
    """(P_allocate, P_distribute) for an activated unit."""
    a = inst.alpha[x]
    if a <= 0:
        raise ValueError(f"unit {x} has no demand")
    placed = state.placed[x]
    if placed >= a:
        return (0.0, 1.0)
    if placed == 0:
        return (1.0, 0.0)
    if variant == ALLOCATE_FIRST:
        return (1.0, 0.0)
    if variant != PROPORTIONAL:
        raise ValueError(f"variant must be one of {VARIANTS}")
    return ((a - placed) / a, placed / a)


class _RunContext:
    """Per-run precomputed arrays for the hot stepping loop."""

    __slots__ = (
        "inst",
        "n",
        "alpha",
        "beta",
        "lam",
        "nbrs",
        "k_c",
        "k_a",
        "total_alpha",
        "cum_alpha",
        "allocate_first",
        "sched_kind",
        "gamma0",
        "increment",
    )

    def __init__(self, inst: Instance, params: GameParams, schedule: GammaSchedule, variant: str):
        self.inst = inst
        self.n = inst.n
        self.alpha = inst.alpha
        self.beta = inst.beta
        self.lam = inst.reliability
        self.nbrs = tuple(inst.topology.out_neighbors(x) for x in range(inst.n))
        self.k_c = params.k_c
        self.k_a = params.k_a
        self.total_alpha = inst.total_alpha
        self.cum_alpha = list(accumulate(inst.alpha))
        self.allocate_first = variant == ALLOCATE_FIRST
        self.sched_kind = schedule.kind
        self.gamma0 = schedule.gamma0
        if schedule.kind == "annealed":
            self.increment = schedule.resolve_increment(max(inst.reliability, default=0.0))
        else:
            self.increment = 0.0

    def gamma_at(self, t: int) -> float:
        if self.sched_kind == "fixed":
            return self.gamma0
        if self.sched_kind == "infinite":
            return math.inf
        return self.gamma0 + t * self.increment


def _pick_gibbs(rng, ctx: _RunContext, state: AllocationState, x: int, cands, gamma, source):
    """Sample the destination among candidate resources.

    Utilities are evaluated at the hypothetical post-placement state (the
    atom already removed from ``source`` for relocations).
    """
    lam, beta, k_c, k_a = ctx.lam, ctx.beta, ctx.k_c, ctx.k_a
    load = state.load
    row = state.counts[x]
    utils = []
    for y in cands:
        extra = 0 if y == source else 1
        utils.append(
            lam[y] - k_c * (load[y] + extra) / beta[y] + k_a * (row.get(y, 0) + extra)
        )
    top = max(utils)
    if gamma == math.inf:
        ties = [y for y, u in zip(cands, utils) if u == top]
        return ties[rng.randrange(len(ties))] if len(ties) > 1 else ties[0]
    weights = [math.exp(gamma * (u - top)) for u in utils]
    r = rng.random() * sum(weights)
    acc = 0.0
    for y, w in zip(cands, weights):
        acc += w
        if r < acc:
            return y
    return cands[-1]


def _sample_allocation(rng, ctx: _RunContext, state: AllocationState, x: int, gamma) -> Move | None:
    load = state.load
    beta = ctx.beta
    cands = [y for y in ctx.nbrs[x] if load[y] < beta[y]]
    if not cands:
        return None  # saturated unit: demand left but every neighbor full
    y = _pick_gibbs(rng, ctx, state, x, cands, gamma, None)
    return Move(ALLOCATION, x, None, y)


def _sample_distribution(rng, ctx: _RunContext, state: AllocationState, x: int, gamma) -> Move:
    row = state.counts[x]
    placed = state.placed[x]
    # Source resource, proportional to how many atoms sit there.
    r = rng.random() * placed
    acc = 0
    source = -1
    for y, c in sorted(row.items()):
        acc += c
        if r < acc:
            source = y
            break
    if source < 0:  # numerical edge of r == placed
        source = max(row)
    load = state.load
    beta = ctx.beta
    cands = [y for y in ctx.nbrs[x] if load[y] - (y == source) < beta[y]]
    dest = _pick_gibbs(rng, ctx, state, x, cands, gamma, source)
    return Move(DISTRIBUTION, x, source, dest)


def _apply(state: AllocationState, move: Move) -> None:
    # Fast path for engine-generated (already valid) moves.
    x = move.unit
    if move.kind == ALLOCATION:
        row = state.counts[x]
        row[move.dest] = row.get(move.dest, 0) + 1
        state.placed[x] += 1
        state.load[move.dest] += 1
    elif move.dest != move.source:
        row = state.counts[x]
        row[move.source] -= 1
        if row[move.source] == 0:
            del row[move.source]
        row[move.dest] = row.get(move.dest, 0) + 1
        state.load[move.source] -= 1
        state.load[move.dest] += 1


def _step(rng, ctx: _RunContext, state: AllocationState, t: int) -> Move | None:
    gamma = ctx.gamma_at(t)
    r = rng.random() * ctx.total_alpha
    x = bisect_right(ctx.cum_alpha, r)
    placed = state.placed[x]
    a = ctx.alpha[x]
    if placed >= a:
        allocate = False
    elif placed == 0 or ctx.allocate_first:
        allocate = True
    else:
        allocate = rng.random() * a < a - placed
    if allocate:
        move = _sample_allocation(rng, ctx, state, x, gamma)
    else:
        move = _sample_distribution(rng, ctx, state, x, gamma)
    if move is not None:
        _apply(state, move)
    return move


def allocation_move(
    rng: random.Random,
    inst: Instance,
    params: GameParams,
    state: AllocationState,
    x: int,
    gamma: float | None = None,
) -> Move | None:
    """Sample (without applying) an allocation move for unit x; None when
    every neighbor is full."""
    if state.placed[x] >= inst.alpha[x]:
        raise ValueError(f"unit {x} is fully allocated; allocation move is invalid")
    ctx = _RunContext(inst, params, GammaSchedule.fixed(params.gamma), PROPORTIONAL)
    g = params.gamma if gamma is None else gamma
    return _sample_allocation(rng, ctx, state, x, g)


def distribution_move(
    rng: random.Random,
    inst: Instance,
    params: GameParams,
    state: AllocationState,
    x: int,
    gamma: float | None = None,
) -> Move:
    """Sample (without applying) a relocation move for unit x."""
    if state.placed[x] <= 0:
        raise ValueError(f"unit {x} has nothing stored; distribution move is invalid")
    ctx = _RunContext(inst, params, GammaSchedule.fixed(params.gamma), PROPORTIONAL)
    g = params.gamma if gamma is None else gamma
    return _sample_distribution(rng, ctx, state, x, g)


def step(rng: random.Random, config: SimConfig, state: AllocationState, t: int) -> Move | None:
    """Execute one time step in place; returns the applied move, or None
    when the activated unit was blocked."""
    ctx = _RunContext(config.instance, config.params, config.schedule, config.variant)
    if ctx.total_alpha == 0:
        return None
    return _step(rng, ctx, state, t)


def _initial_state(config: SimConfig) -> AllocationState:
    if config.initial_state is None:
        return AllocationState.zeros(config.instance)
    state = config.initial_state.copy()
    state.validate(config.instance)
    return state


def run(config: SimConfig) -> RunResult:
    """Run the dynamics for the configured horizon.

    Move counters track data transfers: allocations and relocations that
    change the state.  Self-moves and blocked activations consume their
    step but do not count as moves.
    """
    inst = config.instance
    state = _initial_state(config)
    n = inst.n
    moves = [0] * n
    trace: list[tuple[int, Move]] | None = [] if config.record_trace else None
    if inst.total_alpha == 0:
        return RunResult(state, True, 0, moves, trace)
    ctx = _RunContext(inst, config.params, config.schedule, config.variant)
    rng = random.Random(config.seed)
    remaining = inst.total_alpha - state.total_placed()
    completed_at = 0 if remaining == 0 else None
    for t in range(config.horizon):
        move = _step(rng, ctx, state, t)
        if move is None:
            continue
        if move.kind == ALLOCATION:
            moves[move.unit] += 1
            remaining -= 1
            if remaining == 0 and completed_at is None:
                completed_at = t + 1
        elif move.dest != move.source:
            moves[move.unit] += 1
        if trace is not None:
            trace.append((t, move))
    return RunResult(state, remaining == 0, completed_at, moves, trace)


def state_stream(config: SimConfig):
    """Generator over (t, state, move) driving the same engine as run().

    The yielded state object is mutated in place each step; consumers must
    derive what they need (e.g. state.key()) before advancing.
    """
    inst = config.instance
    state = _initial_state(config)
    if inst.total_alpha == 0:
        return
    ctx = _RunContext(inst, config.params, config.schedule, config.variant)
    rng = random.Random(config.seed)
    for t in range(config.horizon):
        move = _step(rng, ctx, state, t)
        yield t, state, move
