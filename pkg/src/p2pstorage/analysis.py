"""Metrics and exact small-instance oracles.

The oracle side enumerates every full allocation state, builds the exact
one-step transition kernel of the relocation chain, and checks the
closed-form stationary law (combinatorial weight times the exponential of
the potential) against it: detailed balance pair by pair, stationarity
residual, support connectivity, and long-run occupancy.

The metrics side turns a finished run into the standard report: moves per
atom, satisfaction, per-class congestion, support-subgraph degrees, and
the global utility ratio.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, feasibility, game
from .game import AllocationState, GameParams
from .topology import Instance

__all__ = [
    "EmpiricalResult",
    "MetricsReport",
    "PartialRunError",
    "StateSpaceOracle",
    "StateSpaceTooLarge",
    "build_transition_matrix",
    "classes_by_reliability",
    "compute_metrics",
    "compute_rho",
    "detailed_balance_max_violation",
    "empirical_distribution",
    "enumerate_states",
    "greedy_utility_bound",
    "is_support_connected",
    "max_global_utility_bruteforce",
    "max_potential_bruteforce",
    "state_from_key",
    "stationarity_residual",
    "stationary_exact",
    "total_variation",
]

STATE_SPACE_LIMIT = 1_000_000


class StateSpaceTooLarge(ValueError):
    """Estimated number of full states exceeds the enumeration guard."""


class PartialRunError(ValueError):
    """Metrics requested on an incomplete run without the explicit opt-in."""


@dataclass(eq=False)
class StateSpaceOracle:
    """Exhaustive view of the full allocation states of one instance.

    ``states`` holds canonical state keys (sorted nonzero (x, y, count)
    triples); ``transition`` (filled by build_transition_matrix) holds one
    sparse row per state.
    """

    inst: Instance
    states: list[tuple]
    index: dict[tuple, int] = field(default_factory=dict)
    transition: list[dict[int, float]] | None = None
    gamma: float | None = None
    variant: str | None = None

    def __post_init__(self) -> None:
        if not self.index:
            self.index = {key: i for i, key in enumerate(self.states)}

    def __len__(self) -> int:
        return len(self.states)


def state_from_key(inst: Instance, key: tuple) -> AllocationState:
    return AllocationState.from_entries(inst, key)


def _estimate_states(inst: Instance) -> int:
    estimate = 1
    for x in range(inst.n):
        deg = len(inst.topology.out_neighbors(x))
        a = inst.alpha[x]
        if a == 0:
            continue
        if deg == 0:
            return 0
        estimate *= math.comb(a + deg - 1, deg - 1)
        if estimate > STATE_SPACE_LIMIT:
            return estimate
    return estimate


def enumerate_states(inst: Instance, limit: int = STATE_SPACE_LIMIT) -> StateSpaceOracle:
    """Exhaustively enumerate the full allocation states.

    The pre-check bounds the state count by the product of per-unit
    placement counts (capacities ignored), so it never underestimates.
    """
    estimate = _estimate_states(inst)
    if estimate > limit:
        raise StateSpaceTooLarge(
            f"state space estimate {estimate} exceeds the limit {limit}"
        )
    n = inst.n
    beta = inst.beta
    nbrs = [inst.topology.out_neighbors(x) for x in range(n)]
    load = [0] * n
    entries: list[tuple[int, int, int]] = []
    states: list[tuple] = []

    def place_unit(x: int) -> None:
        if x == n:
            states.append(tuple(sorted(entries)))
            return
        targets = nbrs[x]

        def place(i: int, left: int) -> None:
            if left == 0:
                place_unit(x + 1)
                return
            if i == len(targets):
                return
            y = targets[i]
            room = min(left, beta[y] - load[y])
            for c in range(room, -1, -1):
                if c:
                    load[y] += c
                    entries.append((x, y, c))
                place(i + 1, left - c)
                if c:
                    load[y] -= c
                    entries.pop()

        place(0, inst.alpha[x])

    place_unit(0)
    return StateSpaceOracle(inst, states)


def _decode(inst: Instance, key: tuple):
    # (row dicts, placed, load) without validation overhead
    n = inst.n
    counts: list[dict[int, int]] = [dict() for _ in range(n)]
    placed = [0] * n
    load = [0] * n
    for x, y, c in key:
        counts[x][y] = c
        placed[x] += c
        load[y] += c
    return counts, placed, load


def build_transition_matrix(
    oracle: StateSpaceOracle,
    params: GameParams,
    gamma: float,
    variant: str = dynamics.PROPORTIONAL,
) -> StateSpaceOracle:
    """Exact one-step kernel of the chain restricted to full states.

    On full states every activation is a relocation, so both move-kind
    variants induce the same kernel; self-moves and saturation contribute
    the diagonal.  Requires finite gamma.
    """
    if not math.isfinite(gamma):
        raise ValueError("transition matrix requires finite gamma")
    if variant not in dynamics.VARIANTS:
        raise ValueError(f"variant must be one of {dynamics.VARIANTS}")
    inst = oracle.inst
    n = inst.n
    total_alpha = inst.total_alpha
    if total_alpha == 0:
        oracle.transition = [{i: 1.0} for i in range(len(oracle.states))]
        oracle.gamma = gamma
        oracle.variant = variant
        return oracle
    lam = inst.reliability
    beta = inst.beta
    k_c, k_a = params.k_c, params.k_a
    nbrs = [inst.topology.out_neighbors(x) for x in range(n)]
    rows: list[dict[int, float]] = []
    for key in oracle.states:
        counts, placed, load = _decode(inst, key)
        row_probs: dict[int, float] = {}
        for x in range(n):
            a = inst.alpha[x]
            if a == 0:
                continue
            p_wake = a / total_alpha
            for source, c in counts[x].items():
                p_source = c / a
                utils = []
                cands = []
                for y in nbrs[x]:
                    if load[y] - (y == source) >= beta[y]:
                        continue
                    extra = 0 if y == source else 1
                    u = (
                        lam[y]
                        - k_c * (load[y] + extra) / beta[y]
                        + k_a * (counts[x].get(y, 0) + extra)
                    )
                    cands.append(y)
                    utils.append(u)
                top = max(utils)
                exps = [math.exp(gamma * (u - top)) for u in utils]
                norm = sum(exps)
                for y, w in zip(cands, exps):
                    p = p_wake * p_source * w / norm
                    if y == source:
                        j = oracle.index[key]
                    else:
                        moved = [
                            (xx, yy, cc)
                            for xx, yy, cc in key
                            if not (xx == x and yy in (source, y))
                        ]
                        new_src = c - 1
                        if new_src:
                            moved.append((x, source, new_src))
                        moved.append((x, y, counts[x].get(y, 0) + 1))
                        j = oracle.index[tuple(sorted(moved))]
                    row_probs[j] = row_probs.get(j, 0.0) + p
        rows.append(row_probs)
    oracle.transition = rows
    oracle.gamma = gamma
    oracle.variant = variant
    return oracle


def stationary_exact(
    oracle: StateSpaceOracle, params: GameParams, gamma: float
) -> np.ndarray:
    """Closed-form stationary law: combinatorial weight times exp(gamma *
    potential), normalized in log space.

    Warns when the strict covering condition fails (the chain may then be
    reducible and the law only stationary per component).
    """
    inst = oracle.inst
    if not feasibility.check_strict(inst).feasible:
        warnings.warn(
            "strict covering condition fails: ergodicity over the full state "
            "space is not guaranteed",
            stacklevel=2,
        )
    logs = np.empty(len(oracle.states))
    for i, key in enumerate(oracle.states):
        state = state_from_key(inst, key)
        logs[i] = game.log_multinomial_weight(inst, state) + gamma * game.potential(
            inst, params, state
        )
    logs -= logs.max()
    weights = np.exp(logs)
    return weights / weights.sum()


def stationarity_residual(oracle: StateSpaceOracle, mu: np.ndarray) -> float:
    """Max-norm of mu P - mu."""
    if oracle.transition is None:
        raise ValueError("build the transition matrix first")
    out = -mu.copy()
    for i, row in enumerate(oracle.transition):
        mi = mu[i]
        for j, p in row.items():
            out[j] += mi * p
    return float(np.abs(out).max())


def detailed_balance_max_violation(oracle: StateSpaceOracle, mu: np.ndarray) -> float:
    """Max over transition pairs of |mu_i P_ij - mu_j P_ji|."""
    if oracle.transition is None:
        raise ValueError("build the transition matrix first")
    worst = 0.0
    for i, row in enumerate(oracle.transition):
        for j, p in row.items():
            if j == i:
                continue
            back = oracle.transition[j].get(i, 0.0)
            gap = abs(mu[i] * p - mu[j] * back)
            if gap > worst:
                worst = gap
    return worst


def is_support_connected(oracle: StateSpaceOracle) -> bool:
    """Whether the transition support graph on full states is one component."""
    if oracle.transition is None:
        raise ValueError("build the transition matrix first")
    m = len(oracle.states)
    if m <= 1:
        return True
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in oracle.transition[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == m


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(eq=False)
class EmpiricalResult:
    frequencies: np.ndarray
    stationary: np.ndarray
    tv_distance: float
    steps: int


def empirical_distribution(
    oracle: StateSpaceOracle,
    params: GameParams,
    gamma: float,
    steps: int,
    burn_in: int = 0,
    seed: int = 0,
    variant: str = dynamics.PROPORTIONAL,
    completion_cap: int | None = None,
) -> EmpiricalResult:
    """Long-run occupancy of the real dynamics engine at fixed gamma,
    compared to the closed-form stationary law by total variation.

    The run starts empty, must complete within ``completion_cap`` steps
    (default 50 * total demand), then discards ``burn_in`` steps and
    counts the state after each of the next ``steps`` steps.
    """
    inst = oracle.inst
    if not math.isfinite(gamma):
        raise ValueError("empirical sampling requires finite gamma")
    cap = completion_cap if completion_cap is not None else 50 * inst.total_alpha
    config = dynamics.SimConfig(
        instance=inst,
        params=params,
        schedule=dynamics.GammaSchedule.fixed(gamma),
        horizon=cap + burn_in + steps,
        seed=seed,
        variant=variant,
    )
    mu = stationary_exact(oracle, params, gamma)
    counts = np.zeros(len(oracle.states))
    index = oracle.index
    total = inst.total_alpha
    phase_started = None
    recorded = 0
    stream = dynamics.state_stream(config)
    for t, state, _move in stream:
        if phase_started is None:
            if state.total_placed() == total:
                phase_started = t
            elif t >= cap:
                raise RuntimeError(f"dynamics did not complete within {cap} steps")
            continue
        if t < phase_started + burn_in:
            continue
        counts[index[state.key()]] += 1
        recorded += 1
        if recorded >= steps:
            break
    if recorded < steps:
        raise RuntimeError("horizon exhausted before collecting the requested samples")
    if np.any(counts == 0):
        warnings.warn(
            f"{int((counts == 0).sum())} of {len(counts)} states were never "
            "visited; sample may be too small",
            stacklevel=2,
        )
    freqs = counts / counts.sum()
    return EmpiricalResult(freqs, mu, total_variation(freqs, mu), recorded)


def max_potential_bruteforce(
    oracle: StateSpaceOracle, params: GameParams, tol: float = 1e-9
) -> tuple[float, list[tuple]]:
    """Exact maximum of the potential over full states, with argmax keys."""
    best = -math.inf
    values = []
    for key in oracle.states:
        v = game.potential(oracle.inst, params, state_from_key(oracle.inst, key))
        values.append(v)
        if v > best:
            best = v
    argmax = [key for key, v in zip(oracle.states, values) if v >= best - tol]
    return best, argmax


def max_global_utility_bruteforce(
    oracle: StateSpaceOracle, params: GameParams, tol: float = 1e-9
) -> tuple[float, list[tuple]]:
    """Exact maximum of the global utility over full states."""
    best = -math.inf
    values = []
    for key in oracle.states:
        v = game.global_utility(oracle.inst, params, state_from_key(oracle.inst, key))
        values.append(v)
        if v > best:
            best = v
    argmax = [key for key, v in zip(oracle.states, values) if v >= best - tol]
    return best, argmax


def greedy_utility_bound(inst: Instance, params: GameParams) -> float:
    """Upper bound on the best global utility, by greedy marginal filling.

    With k_a = 0 the global utility depends only on resource loads and the
    per-slot marginal gains decrease, so filling the best slots first
    solves the graph-relaxed problem exactly.  A k_a > 0 term is bounded
    by letting every unit stack all atoms in one resource.
    """
    total = inst.total_alpha
    if total == 0:
        return 0.0
    marginals: list[float] = []
    for y in range(inst.n):
        b = inst.beta[y]
        for s in range(1, b + 1):
            marginals.append(inst.reliability[y] - params.k_c * (2 * s - 1) / b)
    marginals.sort(reverse=True)
    if len(marginals) < total:
        # Not enough capacity anywhere; bound with what exists.
        bound = sum(marginals)
    else:
        bound = sum(marginals[:total])
    if params.k_a:
        for x in range(inst.n):
            a = inst.alpha[x]
            caps = [inst.beta[y] for y in inst.topology.out_neighbors(x)]
            if a and caps:
                bound += params.k_a * a * min(a, max(caps))
    return bound


def compute_rho(
    inst: Instance,
    params: GameParams,
    state: AllocationState,
    oracle: StateSpaceOracle | None = None,
) -> tuple[float | None, str]:
    """Global-utility ratio of a final state against the best achievable.

    With an oracle the maximum is exact; otherwise the greedy upper bound
    stands in and the ratio is tagged "surrogate" (it may exceed 1 when
    utilities are negative, and is conservative when positive).
    """
    value = game.global_utility(inst, params, state)
    if oracle is not None:
        best, _ = max_global_utility_bruteforce(oracle, params)
        tag = "exact"
    else:
        best = greedy_utility_bound(inst, params)
        tag = "surrogate"
    if best == 0.0:
        return (1.0, tag) if value == 0.0 else (None, tag)
    return value / best, tag


@dataclass(eq=False)
class MetricsReport:
    """Run summary indices; class-resolved entries follow the order of the
    partition handed to compute_metrics."""

    nu_moves: float
    lambda_mean: float
    lambda_var: float
    congestion_mean: tuple[float, ...]
    congestion_var: tuple[float, ...]
    d_out: float
    d_in: tuple[float, ...]
    rho: float | None = None
    rho_tag: str | None = None

    def to_row(self) -> dict:
        row: dict[str, float | str | None] = {
            "nu_moves": self.nu_moves,
            "lambda_mean": self.lambda_mean,
            "lambda_var": self.lambda_var,
        }
        for i, (mean, var) in enumerate(zip(self.congestion_mean, self.congestion_var), 1):
            row[f"c{i}_mean"] = mean
            row[f"c{i}_var"] = var
        row["d_out"] = self.d_out
        for i, value in enumerate(self.d_in, 1):
            row[f"d_in_{i}"] = value
        row["rho"] = self.rho
        row["rho_tag"] = self.rho_tag
        return row


def classes_by_reliability(inst: Instance) -> list[list[int]]:
    """Partition units into reliability classes, least reliable first."""
    levels = sorted(set(inst.reliability))
    return [[y for y in range(inst.n) if inst.reliability[y] == level] for level in levels]


def compute_metrics(
    inst: Instance,
    params: GameParams,
    result: dynamics.RunResult,
    class_partition: list[list[int]] | None = None,
    allow_partial: bool = False,
) -> MetricsReport:
    """All run indices from the final state and per-unit move counters.

    Units with zero demand are excluded from per-unit averages.  Class
    congestion is the fill fraction of the class's total capacity.
    """
    if not result.completed and not allow_partial:
        raise PartialRunError(
            "run did not complete; pass allow_partial=True to compute anyway"
        )
    if class_partition is None:
        class_partition = classes_by_reliability(inst)
    state = result.final_state
    lam = inst.reliability
    active = [x for x in range(inst.n) if inst.alpha[x] > 0]
    if active:
        nu = sum(result.moves_per_unit[x] / inst.alpha[x] for x in active) / len(active)
        satisfaction = [
            sum(c * lam[y] for y, c in state.counts[x].items()) / inst.alpha[x]
            for x in active
        ]
        lam_mean = sum(satisfaction) / len(active)
        lam_var = sum((s - lam_mean) ** 2 for s in satisfaction) / len(active)
    else:
        nu = 0.0
        lam_mean = 0.0
        lam_var = 0.0

    c_mean = []
    c_var = []
    d_in = []
    for members in class_partition:
        capacity = sum(inst.beta[y] for y in members)
        held = sum(state.load[y] for y in members)
        c_mean.append(held / capacity if capacity else 0.0)
        fills = [state.load[y] / inst.beta[y] for y in members if inst.beta[y] > 0]
        if fills:
            mean_fill = c_mean[-1]
            c_var.append(sum((f - mean_fill) ** 2 for f in fills) / len(fills))
        else:
            c_var.append(0.0)
        member_set = set(members)
        used_edges = sum(
            1 for x in range(inst.n) for y in state.counts[x] if y in member_set
        )
        d_in.append(used_edges / len(members) if members else 0.0)

    support_edges = sum(len(row) for row in state.counts)
    d_out = support_edges / inst.n

    return MetricsReport(
        nu_moves=nu,
        lambda_mean=lam_mean,
        lambda_var=lam_var,
        congestion_mean=tuple(c_mean),
        congestion_var=tuple(c_var),
        d_out=d_out,
        d_in=tuple(d_in),
    )
