"""Benchmark presets and their published reference values.

Four standard experiment families, all with capacity 50 per unit, two
equal reliability classes (0.5 / 0.8), congestion weight 1, and a horizon
of two steps per atom:

  table 1 - complete graph, n=50, demand 45, aggregation 0 / 0.25 / 0.45
  table 2 - random 10-regular graph, same demands and columns
  table 3 - random 10-regular graph, demands cycling 35/40/45/50/55
  table 4 - random 10-regular graph, aggregation 0.45, n = 50/100/1000

Schedules: congestion-only presets (k_a = 0) anneal the Gibbs parameter
to the cold regime, which crystallizes the capacity-forced optimum
(trusted resources saturate exactly).  Aggregation presets (k_a > 0)
run at bounded noise instead: annealing cold makes the aggregation bonus
compound during allocation and collapses each unit onto 2-3 piles,
far below the reference support degrees, while bounded gamma reproduces
the published structure (and bounded noise is also what a live deployment
would run to stay adaptive).

Reference numbers are single-run values and carry no variance; treat
comparisons as indicative bands, not exact targets.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dynamics import ALLOCATE_FIRST, GammaSchedule, SimConfig, default_horizon
from .game import GameParams
from .topology import Instance, build_complete, build_random_regular

__all__ = [
    "REFERENCE",
    "PresetRun",
    "benchmark_instance",
    "make_configs",
    "table_presets",
]

_CAPACITY = 50
_RELIABILITY_LOW = 0.5
_RELIABILITY_HIGH = 0.8
_REGULAR_DEGREE = 10
_GRAPH_SEED = 93
AGGREGATED_GAMMA = 1.1  # bounded noise level for the k_a > 0 presets

# Rows: metric name -> column label -> reference value.
REFERENCE: dict[int, dict] = {
    1: {
        "columns": ["k_a=0", "k_a=0.25", "k_a=0.45"],
        "metrics": {
            "nu_moves": [1.6271, 1.3068, 1.2548],
            "lambda_mean": [0.6667, 0.6592, 0.6593],
            "lambda_var": [6.4818e-4, 0.0119, 0.0122],
            "c1_mean": [0.8000, 0.8450, 0.8442],
            "c1_var": [9.5680e-4, 0.1149, 0.1195],
            "c2_mean": [1.0, 0.9550, 0.9558],
            "c2_var": [0.0, 0.0280, 0.0261],
            "d_out": [44.8460, 9.5420, 9.6720],
            "d_in_1": [43.9280, 9.1720, 9.1280],
            "d_in_2": [45.7640, 9.9120, 10.2160],
            "rho": [0.9787, 0.6812, 0.6796],
        },
    },
    2: {
        "columns": ["k_a=0", "k_a=0.25", "k_a=0.45"],
        "metrics": {
            "nu_moves": [1.4187, 1.2185, 1.1714],
            "lambda_mean": [0.6667, 0.6596, 0.6606],
            "lambda_var": [0.0019, 0.0136, 0.0143],
            "c1_mean": [0.8000, 0.8422, 0.8364],
            "c1_var": [0.0011, 0.1214, 0.1350],
            "c2_mean": [1.0, 0.9578, 0.9636],
            "c2_var": [0.0, 0.0261, 0.0251],
            "d_out": [9.9560, 6.2580, 6.3700],
            "d_in_1": [9.9240, 5.9400, 6.2520],
            "d_in_2": [9.9880, 6.5760, 6.4880],
            "rho": [0.9784, 0.8872, 0.9297],
        },
    },
    3: {
        "columns": ["mixed alpha"],
        "metrics": {
            "nu_moves": [1.1552],
            "lambda_mean": [0.6613],
            "lambda_var": [0.0138],
            "c1_mean": [0.8387],
            "c1_var": [0.1464],
            "c2_mean": [0.9613],
            "c2_var": [0.0328],
            "d_out": [6.4040],
            "d_in_1": [6.1200],
            "d_in_2": [6.6880],
        },
    },
    4: {
        "columns": ["n=50", "n=100", "n=1000"],
        "metrics": {
            "nu_moves": [1.1714, 1.1490, 1.1304],
            "lambda_mean": [0.6606, 0.6605, 0.6566],
            "lambda_var": [0.0143, 0.0146, 0.0114],
            "c1_mean": [0.8364, 0.8370, 0.8604],
            "c1_var": [0.1350, 0.1262, 0.1068],
            "c2_mean": [0.9636, 0.9630, 0.9396],
            "c2_var": [0.0251, 0.0183, 0.0616],
            "d_out": [6.3700, 6.2840, 6.1902],
            "d_in_1": [6.2520, 5.9380, 6.0004],
            "d_in_2": [6.4880, 6.6300, 6.3800],
        },
    },
}


@dataclass(frozen=True)
class PresetRun:
    """One benchmark column: an instance plus everything needed to run it."""

    table: int
    column: str
    instance: Instance
    params: GameParams
    replications: int
    seed: int


def _reliability_split(n: int) -> tuple[float, ...]:
    half = n // 2
    return tuple([_RELIABILITY_LOW] * half + [_RELIABILITY_HIGH] * (n - half))


def benchmark_instance(
    n: int,
    topology_kind: str,
    alpha_pattern: tuple[int, ...] = (45,),
) -> Instance:
    """Build a benchmark instance: demands cycle through alpha_pattern so
    each reliability class sees the same demand mix."""
    if topology_kind == "complete":
        topo = build_complete(n)
    elif topology_kind == "regular":
        topo = build_random_regular(n, _REGULAR_DEGREE, seed=_GRAPH_SEED + n)
    else:
        raise ValueError(f"unknown topology kind {topology_kind!r}")
    alpha = tuple(alpha_pattern[x % len(alpha_pattern)] for x in range(n))
    beta = tuple([_CAPACITY] * n)
    return Instance(topo, alpha, beta, _reliability_split(n))


def table_presets(table: int, replications: int | None = None, seed: int | None = None):
    """The preset runs of one benchmark table."""
    base_seed = 1000 * table if seed is None else seed
    if table == 1:
        inst = benchmark_instance(50, "complete")
        cols = [("k_a=0", 0.0), ("k_a=0.25", 0.25), ("k_a=0.45", 0.45)]
        reps = [replications or 25] * 3
        runs = [
            PresetRun(1, label, inst, GameParams(k_c=1.0, k_a=ka), r, base_seed)
            for (label, ka), r in zip(cols, reps)
        ]
    elif table == 2:
        inst = benchmark_instance(50, "regular")
        cols = [("k_a=0", 0.0), ("k_a=0.25", 0.25), ("k_a=0.45", 0.45)]
        reps = [replications or 25] * 3
        runs = [
            PresetRun(2, label, inst, GameParams(k_c=1.0, k_a=ka), r, base_seed)
            for (label, ka), r in zip(cols, reps)
        ]
    elif table == 3:
        inst = benchmark_instance(50, "regular", alpha_pattern=(35, 40, 45, 50, 55))
        runs = [
            PresetRun(
                3, "mixed alpha", inst, GameParams(k_c=1.0, k_a=0.45), replications or 25, base_seed
            )
        ]
    elif table == 4:
        sizes = [(50, 25), (100, 10), (1000, 1)]
        runs = [
            PresetRun(
                4,
                f"n={n}",
                benchmark_instance(n, "regular"),
                GameParams(k_c=1.0, k_a=0.45),
                replications or default_reps,
                base_seed,
            )
            for n, default_reps in sizes
        ]
    else:
        raise ValueError("table must be 1, 2, 3, or 4")
    return runs


def preset_schedule(params: GameParams) -> GammaSchedule:
    """Cold-annealed for congestion-only presets, bounded for aggregation."""
    if params.k_a > 0:
        return GammaSchedule.fixed(AGGREGATED_GAMMA)
    return GammaSchedule.annealed(1.0)


def make_configs(preset: PresetRun) -> list[SimConfig]:
    """Seeded replication configs for one preset column."""
    inst = preset.instance
    schedule = preset_schedule(preset.params)
    return [
        SimConfig(
            instance=inst,
            params=preset.params,
            schedule=schedule,
            horizon=default_horizon(inst),
            seed=preset.seed + r,
            variant=ALLOCATE_FIRST,
        )
        for r in range(preset.replications)
    ]
