import json

import numpy as np
import pytest

from contractbid.errors import ConfigurationError, ParameterError
from contractbid.scenario import table_contracts
from contractbid.targeting import (Contract, active_contracts, active_types, contracts_from_records,
                                   contracts_to_records, decompose, load_contracts)


def check_partition(contracts, d):
    """Element-wise checks of the decomposition identities."""
    for j in range(d.n_types):
        for k in range(j + 1, d.n_types):
            assert not d.types[j] & d.types[k]
    assert set().union(*d.types) == set().union(*(c.targeting for c in contracts))
    for i, c in enumerate(contracts):
        assert set().union(*(d.types[j] for j in d.A[i])) == c.targeting
    for i in range(len(contracts)):
        for j in range(d.n_types):
            assert (j in d.A[i]) == (i in d.B[j])
    sigs = [frozenset(b) for b in d.B]
    assert len(set(sigs)) == len(sigs)
    for j, b in enumerate(d.B):
        assert d.type_deadline[j] == max(contracts[i].deadline for i in b)
        # every atom of a type is targeted by exactly the contracts in B_j
        for a in d.types[j]:
            assert {i for i, c in enumerate(contracts) if a in c.targeting} == set(b)


def test_single_contract():
    c = [Contract("x", 5, 10, {"a", "b"})]
    d = decompose(c)
    assert d.n_types == 1
    assert d.types[0] == {"a", "b"}
    assert d.A == (frozenset({0}),) and d.B == (frozenset({0}),)


def test_three_set_venn_example():
    # S1, S2, S3 with all overlaps present and no atom exclusive to S2
    S1 = {"r1", "r3", "r4", "r6"}
    S2 = {"r3", "r5", "r6"}
    S3 = {"r2", "r4", "r5", "r6"}
    cs = [Contract(str(i + 1), 10 + i, 5, s) for i, s in enumerate((S1, S2, S3))]
    d = decompose(cs)
    assert d.n_types == 6
    one_based_A2 = {j + 1 for j in d.A[1]}
    assert one_based_A2 == {3, 5, 6}
    assert {i + 1 for i in d.B[0]} == {1}
    assert {i + 1 for i in d.B[5]} == {1, 2, 3}
    check_partition(cs, d)


def test_random_partitions(rng):
    omega = [f"w{k}" for k in range(10)]
    for _ in range(200):
        n = int(rng.integers(1, 6))
        cs = []
        for i in range(n):
            k = int(rng.integers(1, 11))
            cs.append(Contract(str(i), float(rng.integers(1, 50)), 1.0,
                               set(rng.choice(omega, k, replace=False))))
        check_partition(cs, decompose(cs))


def test_empty_contract_list():
    with pytest.raises(ParameterError):
        decompose([])


@pytest.mark.parametrize("T,C,S", [(0, 1, {"a"}), (1, 0.5, {"a"}), (1, 1, set())])
def test_contract_validation(T, C, S):
    with pytest.raises(ParameterError):
        Contract("c", T, C, S)


def test_active_sets():
    cs = table_contracts()
    d = decompose(cs)
    assert active_contracts(cs, 0.0) == set(range(6))
    assert active_types(d, 0.0) == set(range(d.n_types))
    T = max(c.deadline for c in cs)
    assert active_contracts(cs, T) == set() and active_types(d, T) == set()
    assert {i + 1 for i in active_contracts(cs, 50.0)} == {4, 5, 6}
    prev = d.n_types
    for t in np.linspace(0, T, 200):
        act = active_types(d, t)
        ci = active_contracts(cs, t)
        assert len(act) <= prev
        prev = len(act)
        for j in range(d.n_types):
            assert (j in act) == bool(d.B[j] & ci)


def test_table_decomposition():
    cs = table_contracts()
    d = decompose(cs)
    assert d.n_types == 5
    assert sorted(min(t) for t in d.types) == ["0", "1", "2", "3", "4"]
    check_partition(cs, d)


def test_contract_file_round_trip(tmp_path):
    cs = table_contracts()
    p = tmp_path / "contracts.json"
    p.write_text(json.dumps(contracts_to_records(cs)))
    back = load_contracts(p)
    assert back == cs


def test_contract_records_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        contracts_from_records([{"id": 1, "deadline_hours": 3}])
    rec = {"id": 1, "deadline_hours": 3, "requirement": 5, "targeting": ["a"]}
    with pytest.raises(ConfigurationError):
        contracts_from_records([rec, rec])
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_contracts(p)
