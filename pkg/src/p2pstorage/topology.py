"""Unit network model: storage topologies, problem instances, instance files.

Every unit plays a double role.  As a user it must back up ``alpha`` data
atoms into its out-neighbors; as a resource it offers ``beta`` atom slots
to its in-neighbors and carries a ``reliability`` score that enters the
storage utility.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass

__all__ = [
    "GenerationFailed",
    "Instance",
    "Topology",
    "build_complete",
    "build_line",
    "build_random_regular",
    "instance_from_dict",
    "instance_to_dict",
    "load_instance",
    "neighborhood_of_set",
    "save_instance",
]


class GenerationFailed(RuntimeError):
    """Random graph construction exhausted its retry budget."""


@dataclass(frozen=True)
class Topology:
    """Directed graph on units 0..n-1; an edge (x, y) lets x store atoms in y.

    Self-loops are rejected: a unit never backs its data up onto itself.
    Adjacency is precomputed once; instances are immutable and safe to
    share between concurrent runs.
    """

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"need at least one unit, got n={self.n}")
        edges = frozenset((int(x), int(y)) for x, y in self.edges)
        object.__setattr__(self, "edges", edges)
        out: list[list[int]] = [[] for _ in range(self.n)]
        inn: list[list[int]] = [[] for _ in range(self.n)]
        for x, y in edges:
            if not (0 <= x < self.n and 0 <= y < self.n):
                raise ValueError(f"edge ({x}, {y}) out of range for n={self.n}")
            if x == y:
                raise ValueError(f"self-loop ({x}, {y}) is not allowed")
            out[x].append(y)
            inn[y].append(x)
        object.__setattr__(self, "_out", tuple(tuple(sorted(v)) for v in out))
        object.__setattr__(self, "_in", tuple(tuple(sorted(v)) for v in inn))

    def out_neighbors(self, x: int) -> tuple[int, ...]:
        """Resources unit x may store into."""
        return self._out[x]

    def in_neighbors(self, y: int) -> tuple[int, ...]:
        """Units that may store into resource y."""
        return self._in[y]

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": sorted([x, y] for x, y in self.edges)}


def build_complete(n: int) -> Topology:
    """Complete directed graph: every ordered pair (x, y), x != y."""
    if n < 1:
        raise ValueError(f"complete graph needs n >= 1, got {n}")
    edges = frozenset((x, y) for x in range(n) for y in range(n) if x != y)
    return Topology(n, edges)


def build_line(n: int) -> Topology:
    """Bidirectional chain 0 - 1 - ... - (n-1)."""
    if n < 2:
        raise ValueError(f"line graph needs n >= 2, got {n}")
    edges = set()
    for i in range(n - 1):
        edges.add((i, i + 1))
        edges.add((i + 1, i))
    return Topology(n, frozenset(edges))


def _try_pairing(n: int, d: int, rng: random.Random) -> set[tuple[int, int]] | None:
    # Stub-pairing with rematching of clashing stubs (adapted from the
    # classic NetworkX routine).  Returns None when stuck.
    edges: set[tuple[int, int]] = set()
    stubs = list(range(n)) * d

    def suitable(potential: dict[int, int]) -> bool:
        if not potential:
            return True
        nodes = list(potential)
        for i, s1 in enumerate(nodes):
            for s2 in nodes[: i + 1]:
                if s1 == s2:
                    continue
                a, b = (s2, s1) if s1 > s2 else (s1, s2)
                if (a, b) not in edges:
                    return True
        return False

    while stubs:
        potential: dict[int, int] = {}
        rng.shuffle(stubs)
        it = iter(stubs)
        for s1, s2 in zip(it, it):
            if s1 > s2:
                s1, s2 = s2, s1
            if s1 != s2 and (s1, s2) not in edges:
                edges.add((s1, s2))
            else:
                potential[s1] = potential.get(s1, 0) + 1
                potential[s2] = potential.get(s2, 0) + 1
        if not suitable(potential):
            return None
        stubs = [node for node, count in potential.items() for _ in range(count)]
    return edges


def build_random_regular(n: int, d: int, seed: int, max_retries: int = 100) -> Topology:
    """Random d-regular graph stored as symmetric directed edge pairs.

    Deterministic for a fixed seed.  Requires n*d even and d < n.
    """
    if n < 1:
        raise ValueError(f"need at least one unit, got n={n}")
    if d < 0 or d >= n:
        raise ValueError(f"degree must satisfy 0 <= d < n, got d={d}, n={n}")
    if (n * d) % 2 != 0:
        raise ValueError(f"n*d must be even, got n={n}, d={d}")
    rng = random.Random(seed)
    for _ in range(max_retries):
        pairs = _try_pairing(n, d, rng)
        if pairs is None:
            continue
        edges = set()
        for x, y in pairs:
            edges.add((x, y))
            edges.add((y, x))
        return Topology(n, frozenset(edges))
    raise GenerationFailed(
        f"no simple {d}-regular graph on {n} nodes found in {max_retries} attempts"
    )


def neighborhood_of_set(topology: Topology, units: set[int]) -> set[int]:
    """Union of the out-neighborhoods of a set of units."""
    result: set[int] = set()
    for x in units:
        result.update(topology.out_neighbors(x))
    return result


@dataclass(frozen=True)
class Instance:
    """A storage allocation problem: topology plus per-unit demand,
    capacity, and reliability vectors.

    ``alpha[x]`` atoms must be backed up by unit x, ``beta[y]`` atom slots
    are offered by resource y, ``reliability[y]`` is its quality score.
    """

    topology: Topology
    alpha: tuple[int, ...]
    beta: tuple[int, ...]
    reliability: tuple[float, ...]

    def __post_init__(self) -> None:
        n = self.topology.n
        alpha = tuple(int(a) for a in self.alpha)
        beta = tuple(int(b) for b in self.beta)
        reliability = tuple(float(r) for r in self.reliability)
        for name, vec in (("alpha", alpha), ("beta", beta), ("reliability", reliability)):
            if len(vec) != n:
                raise ValueError(f"{name} must have length n={n}, got {len(vec)}")
            if any(v < 0 for v in vec):
                raise ValueError(f"{name} entries must be nonnegative")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "reliability", reliability)

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def total_alpha(self) -> int:
        return sum(self.alpha)

    @property
    def total_beta(self) -> int:
        return sum(self.beta)

    def fingerprint(self) -> str:
        """Stable short hash of the canonical serialized form."""
        blob = json.dumps(instance_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_INSTANCE_KEYS = {"n", "edges", "generator", "alpha", "beta", "lambda"}
_GENERATOR_KEYS = {"kind", "n", "d", "seed"}


def _broadcast(value, n: int, name: str, cast) -> tuple:
    if isinstance(value, (int, float)):
        return tuple(cast(value) for _ in range(n))
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ValueError(f"'{name}' must have {n} entries, got {len(value)}")
        return tuple(cast(v) for v in value)
    raise ValueError(f"'{name}' must be a number or an array")


def instance_from_dict(data: dict) -> Instance:
    """Parse the instance file schema (see README).  Rejects unknown keys."""
    if not isinstance(data, dict):
        raise ValueError("instance document must be a mapping")
    unknown = set(data) - _INSTANCE_KEYS
    if unknown:
        raise ValueError(f"unknown instance keys: {sorted(unknown)}")
    if ("generator" in data) == ("edges" in data):
        raise ValueError("exactly one of 'edges' or 'generator' is required")

    if "generator" in data:
        gen = data["generator"]
        if not isinstance(gen, dict):
            raise ValueError("'generator' must be a mapping")
        bad = set(gen) - _GENERATOR_KEYS
        if bad:
            raise ValueError(f"unknown generator keys: {sorted(bad)}")
        kind = gen.get("kind")
        gn = gen.get("n")
        if not isinstance(gn, int):
            raise ValueError("generator 'n' must be an integer")
        if kind == "complete":
            topology = build_complete(gn)
        elif kind == "line":
            topology = build_line(gn)
        elif kind == "random_regular":
            if "d" not in gen or "seed" not in gen:
                raise ValueError("random_regular generator needs 'd' and 'seed'")
            topology = build_random_regular(gn, int(gen["d"]), int(gen["seed"]))
        else:
            raise ValueError(f"unknown generator kind: {kind!r}")
        if "n" in data and data["n"] != topology.n:
            raise ValueError("'n' disagrees with generator 'n'")
    else:
        if "n" not in data:
            raise ValueError("'n' is required with an explicit edge list")
        n = data["n"]
        if not isinstance(n, int):
            raise ValueError("'n' must be an integer")
        edges = data["edges"]
        if not isinstance(edges, list):
            raise ValueError("'edges' must be an array of [x, y] pairs")
        pairs = set()
        for item in edges:
            if not (isinstance(item, (list, tuple)) and len(item) == 2):
                raise ValueError(f"bad edge entry: {item!r}")
            pairs.add((int(item[0]), int(item[1])))
        topology = Topology(n, frozenset(pairs))

    n = topology.n
    for key in ("alpha", "beta", "lambda"):
        if key not in data:
            raise ValueError(f"missing required key '{key}'")
    alpha = _broadcast(data["alpha"], n, "alpha", int)
    beta = _broadcast(data["beta"], n, "beta", int)
    reliability = _broadcast(data["lambda"], n, "lambda", float)
    return Instance(topology, alpha, beta, reliability)


def instance_to_dict(inst: Instance) -> dict:
    doc = inst.topology.to_dict()
    doc["alpha"] = list(inst.alpha)
    doc["beta"] = list(inst.beta)
    doc["lambda"] = list(inst.reliability)
    return doc


def load_instance(path) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return instance_from_dict(data)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def save_instance(inst: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2, sort_keys=True)
        fh.write("\n")
