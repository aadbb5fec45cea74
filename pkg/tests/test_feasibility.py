import itertools
import random

import pytest

from p2pstorage.feasibility import (
    SizeLimitExceeded,
    build_atom_bipartite,
    check_feasible_exhaustive,
    check_feasible_flow,
    check_feasible_matching,
    check_strict,
    check_strict_exhaustive,
    maximal_irreducible_subsets,
    witness_violates,
)
from p2pstorage.topology import (
    Instance,
    Topology,
    build_complete,
    build_line,
    build_random_regular,
    neighborhood_of_set,
)


def make(topo, alpha, beta):
    return Instance(topo, alpha, beta, tuple(1.0 for _ in range(topo.n)))


def random_instance(rng, max_n=8, max_atoms=5):
    n = rng.randint(1, max_n)
    edges = {
        (x, y) for x in range(n) for y in range(n) if x != y and rng.random() < rng.uniform(0.1, 0.9)
    }
    topo = Topology(n, frozenset(edges))
    alpha = tuple(rng.randint(0, max_atoms) for _ in range(n))
    beta = tuple(rng.randint(0, max_atoms) for _ in range(n))
    return make(topo, alpha, beta)


def test_flow_complete_unit_demands():
    inst = make(build_complete(3), (1, 1, 1), (1, 1, 1))
    assert check_feasible_flow(inst).feasible


def test_flow_complete_overloaded():
    inst = make(build_complete(3), (2, 1, 1), (1, 1, 1))
    verdict = check_feasible_flow(inst)
    assert not verdict.feasible
    # total demand 4 > total capacity 3, and the full set is the only violator
    assert verdict.witness == (0, 1, 2)
    assert witness_violates(inst, verdict.witness)


def test_flow_line_unit_demands():
    # oracle: all 15 nonempty subsets satisfy the covering inequality
    inst = make(build_line(4), (1, 1, 1, 1), (1, 1, 1, 1))
    topo = inst.topology
    for size in range(1, 5):
        for subset in itertools.combinations(range(4), size):
            cover = neighborhood_of_set(topo, set(subset))
            assert sum(inst.alpha[x] for x in subset) <= sum(inst.beta[y] for y in cover)
    assert check_feasible_flow(inst).feasible


def test_flow_zero_demand_is_feasible():
    inst = make(build_complete(3), (0, 0, 0), (0, 0, 0))
    assert check_feasible_flow(inst).feasible


def test_exhaustive_agrees_with_flow_on_random_instances():
    rng = random.Random(123)
    for _ in range(300):
        inst = random_instance(rng)
        flow = check_feasible_flow(inst)
        exhaustive = check_feasible_exhaustive(inst)
        assert flow.feasible == exhaustive.feasible
        if not flow.feasible:
            assert witness_violates(inst, flow.witness)
            assert witness_violates(inst, exhaustive.witness)


def test_exhaustive_large_benchmark_instance_guard():
    inst = make(build_complete(50), tuple([45] * 50), tuple([50] * 50))
    with pytest.raises(SizeLimitExceeded):
        check_feasible_exhaustive(inst)
    # flow route scales; strictness holds in this setting
    assert check_feasible_flow(inst).feasible
    assert check_strict(inst).feasible


def test_exhaustive_isolated_unit():
    inst = make(Topology(1, frozenset()), (1,), (1,))
    verdict = check_feasible_exhaustive(inst)
    assert not verdict.feasible
    assert verdict.witness == (0,)


def test_strict_holds():
    inst = make(build_complete(3), (1, 1, 1), (2, 2, 2))
    assert check_strict(inst).feasible
    assert check_strict_exhaustive(inst).feasible


def test_strict_fails_at_equality():
    inst = make(build_complete(3), (1, 1, 1), (1, 1, 1))
    verdict = check_strict(inst)
    assert not verdict.feasible
    assert witness_violates(inst, verdict.witness, strict=True)
    assert not check_strict_exhaustive(inst).feasible


def test_strict_fails_for_isolated_zero_demand_unit():
    # the singleton {2} gives 0 < 0, which is false
    topo = Topology(3, frozenset({(0, 1), (1, 0), (0, 2), (1, 2)}))
    inst = make(topo, (1, 1, 0), (2, 2, 2))
    assert not check_strict(inst).feasible
    assert not check_strict_exhaustive(inst).feasible


def test_strict_agrees_with_exhaustive_and_implies_feasible():
    rng = random.Random(321)
    strict_seen = 0
    for _ in range(200):
        inst = random_instance(rng, max_n=6)
        s_flow = check_strict(inst)
        s_exh = check_strict_exhaustive(inst)
        assert s_flow.feasible == s_exh.feasible
        if s_flow.feasible:
            strict_seen += 1
            assert check_feasible_flow(inst).feasible
        else:
            assert witness_violates(inst, s_flow.witness, strict=True)
    assert strict_seen > 10


def _brute_force_maximal_irreducible(inst):
    """Definition checked literally: irreducibility against every
    2-partition, maximality against every irreducible strict superset."""
    topo = inst.topology
    n = inst.n

    def is_irreducible(d):
        members = sorted(d)
        for split in range(1, 2 ** (len(members) - 1)):
            part1 = {m for i, m in enumerate(members) if split >> i & 1}
            part2 = d - part1
            if not part1 or not part2:
                continue
            if not (neighborhood_of_set(topo, part1) & neighborhood_of_set(topo, part2)):
                return False
        return True

    irreducibles = []
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            if is_irreducible(set(subset)):
                irreducibles.append(set(subset))

    out = []
    for d in irreducibles:
        nd = neighborhood_of_set(topo, d)
        maximal = all(
            neighborhood_of_set(topo, other) != nd
            for other in irreducibles
            if other > d
        )
        if maximal:
            out.append(tuple(sorted(d)))
    return sorted(out, key=lambda t: (len(t), t))


def test_maximal_irreducible_complete_four():
    inst = make(build_complete(4), (1, 1, 1, 1), (1, 1, 1, 1))
    result = maximal_irreducible_subsets(inst)
    assert result == [(0,), (1,), (2,), (3,), (0, 1, 2, 3)]


def test_maximal_irreducible_line_four():
    inst = make(build_line(4), (1, 1, 1, 1), (1, 1, 1, 1))
    result = maximal_irreducible_subsets(inst)
    # all members have the alternating form {i, i+2, ...}
    for subset in result:
        steps = {b - a for a, b in zip(subset, subset[1:])}
        assert steps <= {2}
    assert result == _brute_force_maximal_irreducible(inst)


def test_maximal_irreducible_single_unit():
    inst = make(Topology(1, frozenset()), (0,), (0,))
    assert maximal_irreducible_subsets(inst) == [(0,)]


def test_maximal_irreducible_matches_brute_force_random():
    rng = random.Random(77)
    for _ in range(30):
        inst = random_instance(rng, max_n=6)
        assert maximal_irreducible_subsets(inst) == _brute_force_maximal_irreducible(inst)


def test_covering_condition_restricted_to_maximal_irreducible():
    # testing the inequality only on maximal irreducible subsets is
    # equivalent to testing it on all subsets
    rng = random.Random(404)
    for _ in range(120):
        inst = random_instance(rng, max_n=6)
        topo = inst.topology
        restricted_ok = all(
            sum(inst.alpha[x] for x in d)
            <= sum(inst.beta[y] for y in neighborhood_of_set(topo, set(d)))
            for d in maximal_irreducible_subsets(inst)
        )
        assert restricted_ok == check_feasible_exhaustive(inst).feasible


def test_atom_bipartite_structure():
    inst = make(build_line(2), (1, 0), (0, 1))
    bip = build_atom_bipartite(inst)
    assert bip.a_nodes == ((0, 0),)
    assert bip.b_nodes == ((1, 0),)
    assert check_feasible_matching(inst).feasible


def test_atom_bipartite_guard():
    inst = make(build_complete(100), tuple([60] * 100), tuple([60] * 100))
    with pytest.raises(SizeLimitExceeded):
        build_atom_bipartite(inst)


def test_matching_counts_uncovered_atoms():
    inst = make(build_complete(3), (2, 1, 1), (1, 1, 1))
    verdict = check_feasible_matching(inst)
    assert not verdict.feasible
    assert witness_violates(inst, verdict.witness)


def test_matching_agrees_with_flow_on_random_instances():
    rng = random.Random(2024)
    for _ in range(300):
        inst = random_instance(rng, max_n=6, max_atoms=4)
        flow = check_feasible_flow(inst)
        matching = check_feasible_matching(inst)
        assert flow.feasible == matching.feasible
        if not matching.feasible:
            assert witness_violates(inst, matching.witness)


def test_regular_constant_demand_rule():
    # on a d-regular graph with constant demand a and capacity b,
    # an allocation exists exactly when a <= b
    rng = random.Random(5150)
    for _ in range(60):
        n = rng.randint(4, 12)
        d = rng.randint(1, n - 1)
        if (n * d) % 2:
            continue
        topo = build_random_regular(n, d, seed=rng.randint(0, 10**6))
        a = rng.randint(0, 6)
        b = rng.randint(0, 6)
        inst = make(topo, tuple([a] * n), tuple([b] * n))
        assert check_feasible_flow(inst).feasible == (a <= b)
