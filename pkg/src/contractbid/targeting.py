"""Contracts and the decomposition of overlapping targeting sets into item types."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ConfigurationError, ParameterError


@dataclass(frozen=True)
class Contract:
    """Deliver ``requirement`` items from ``targeting`` before ``deadline`` (hours)."""

    id: str
    deadline: float
    requirement: float
    targeting: frozenset

    def __post_init__(self):
        if not self.deadline > 0:
            raise ParameterError(f"contract {self.id}: deadline must be positive")
        if not self.requirement >= 1:
            raise ParameterError(f"contract {self.id}: requirement must be >= 1")
        tg = frozenset(str(a) for a in self.targeting)
        if not tg:
            raise ParameterError(f"contract {self.id}: targeting set is empty")
        object.__setattr__(self, "targeting", tg)
        object.__setattr__(self, "id", str(self.id))

    def with_requirement(self, requirement: float) -> "Contract":
        return Contract(self.id, self.deadline, requirement, self.targeting)


@dataclass(frozen=True)
class Decomposition:
    """Minimal partition of the targeted atoms.

    ``types[j]`` is the atom set ``R_j``; ``A[i]`` the types targeted by contract
    ``i``; ``B[j]`` the contracts targeting type ``j``; ``type_deadline[j]`` the
    last deadline among ``B[j]``. Indices are 0-based.
    """

    types: tuple
    A: tuple
    B: tuple
    type_deadline: tuple

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_contracts(self) -> int:
        return len(self.A)


def decompose(contracts: Sequence[Contract]) -> Decomposition:
    """Group atoms by the set of contracts that target them.

    Each distinct membership signature becomes one type, so no two types share a
    contract set and the number of types is minimal. Types are ordered by
    signature size, then lexicographically.
    """
    if not contracts:
        raise ParameterError("need at least one contract")
    cells: dict[tuple, set] = {}
    atoms = set().union(*(c.targeting for c in contracts))
    for a in atoms:
        sig = tuple(i for i, c in enumerate(contracts) if a in c.targeting)
        cells.setdefault(sig, set()).add(a)
    sigs = sorted(cells, key=lambda s: (len(s), s))
    types = tuple(frozenset(cells[s]) for s in sigs)
    B = tuple(frozenset(s) for s in sigs)
    A = tuple(frozenset(j for j, s in enumerate(sigs) if i in s) for i in range(len(contracts)))
    T = tuple(max(contracts[i].deadline for i in s) for s in sigs)
    return Decomposition(types, A, B, T)


def active_contracts(contracts: Sequence[Contract], t: float) -> set:
    """Indices of contracts with ``t < T_i``."""
    return {i for i, c in enumerate(contracts) if t < c.deadline}


def active_types(d: Decomposition, t: float) -> set:
    """Indices of types with ``t < T^j``."""
    return {j for j, T in enumerate(d.type_deadline) if t < T}


def load_contracts(path) -> list[Contract]:
    """Read ``[{id, deadline_hours, requirement, targeting: [atom, ...]}, ...]``."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON ({e})") from None
    return contracts_from_records(doc)


def contracts_from_records(records: Iterable[dict]) -> list[Contract]:
    out = []
    try:
        for r in records:
            out.append(Contract(r["id"], float(r["deadline_hours"]),
                                float(r["requirement"]), frozenset(r["targeting"])))
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"bad contract record: {e}") from None
    if len({c.id for c in out}) != len(out):
        raise ConfigurationError("contract ids must be unique")
    return out


def contracts_to_records(contracts: Sequence[Contract]) -> list[dict]:
    return [{"id": c.id, "deadline_hours": c.deadline, "requirement": c.requirement,
             "targeting": sorted(c.targeting)} for c in contracts]
