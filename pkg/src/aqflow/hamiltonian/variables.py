"""Binary variable identities and the index registry shared by a problem."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Iterator


class VarKind(str, enum.Enum):
    MU_UP = "mu+"
    MU_DOWN = "mu-"
    OMEGA_UP = "om+"
    OMEGA_DOWN = "om-"
    PG_BIT = "pg"
    QG_BIT = "qg"
    SLACK = "slack"
    AUX = "aux"


@dataclass(frozen=True, order=True)
class BinaryVarId:
    """Identity of one binary decision variable.

    ``bus`` is the 1-based bus index for voltage and generation bits, ``bit``
    the binary position for expanded quantities, ``constraint`` names the
    inequality a slack bit belongs to, and ``pair`` holds the registry
    indices of the two variables whose product an auxiliary stands for.
    """

    kind: VarKind
    bus: int = 0
    bit: int = 0
    constraint: str = ""
    pair: tuple[int, int] = (0, 0)

    @property
    def tag(self) -> str:
        k = self.kind
        if k in (VarKind.MU_UP, VarKind.MU_DOWN, VarKind.OMEGA_UP, VarKind.OMEGA_DOWN):
            return f"{k.value}[{self.bus}]"
        if k in (VarKind.PG_BIT, VarKind.QG_BIT):
            return f"{k.value}[{self.bus},{self.bit}]"
        if k is VarKind.SLACK:
            return f"slack[{self.constraint},{self.bit}]"
        return f"aux[{self.pair[0]},{self.pair[1]}]"

    @classmethod
    def parse(cls, tag: str) -> "BinaryVarId":
        m = re.fullmatch(r"(mu\+|mu-|om\+|om-|pg|qg|slack|aux)\[(.*)\]", tag)
        if not m:
            raise ValueError(f"unrecognised variable tag {tag!r}")
        kind = VarKind(m.group(1))
        body = m.group(2)
        if kind is VarKind.SLACK:
            name, _, bit = body.rpartition(",")
            return cls(kind, constraint=name, bit=int(bit))
        parts = [int(p) for p in body.split(",")]
        if kind is VarKind.AUX:
            return cls(kind, pair=(parts[0], parts[1]))
        if kind in (VarKind.PG_BIT, VarKind.QG_BIT):
            return cls(kind, bus=parts[0], bit=parts[1])
        return cls(kind, bus=parts[0])

    def __str__(self) -> str:
        return self.tag


def mu_up(bus: int) -> BinaryVarId:
    return BinaryVarId(VarKind.MU_UP, bus)


def mu_down(bus: int) -> BinaryVarId:
    return BinaryVarId(VarKind.MU_DOWN, bus)


def omega_up(bus: int) -> BinaryVarId:
    return BinaryVarId(VarKind.OMEGA_UP, bus)


def omega_down(bus: int) -> BinaryVarId:
    return BinaryVarId(VarKind.OMEGA_DOWN, bus)


def pg_bit(bus: int, k: int) -> BinaryVarId:
    return BinaryVarId(VarKind.PG_BIT, bus, k)


def qg_bit(bus: int, k: int) -> BinaryVarId:
    return BinaryVarId(VarKind.QG_BIT, bus, k)


def slack_bit(constraint: str, k: int) -> BinaryVarId:
    return BinaryVarId(VarKind.SLACK, bit=k, constraint=constraint)


def aux(i: int, j: int) -> BinaryVarId:
    return BinaryVarId(VarKind.AUX, pair=(min(i, j), max(i, j)))


class Registry:
    """Append-only mapping between variable ids and 0-based indices."""

    def __init__(self, ids: Iterable[BinaryVarId] = ()):
        self._ids: list[BinaryVarId] = []
        self._index: dict[BinaryVarId, int] = {}
        for vid in ids:
            self.add(vid)

    def add(self, vid: BinaryVarId) -> int:
        if vid in self._index:
            raise ValueError(f"duplicate variable {vid.tag}")
        if vid.kind is VarKind.AUX:
            for p in vid.pair:
                if not 0 <= p < len(self._ids) or self._ids[p].kind is VarKind.AUX:
                    raise ValueError(f"auxiliary {vid.tag} must reference two non-auxiliary variables")
        self._index[vid] = len(self._ids)
        self._ids.append(vid)
        return self._index[vid]

    def get_or_add(self, vid: BinaryVarId) -> int:
        idx = self._index.get(vid)
        return self.add(vid) if idx is None else idx

    def index(self, vid: BinaryVarId) -> int:
        return self._index[vid]

    def __contains__(self, vid: BinaryVarId) -> bool:
        return vid in self._index

    def __getitem__(self, i: int) -> BinaryVarId:
        return self._ids[i]

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self) -> Iterator[BinaryVarId]:
        return iter(self._ids)

    def copy(self) -> "Registry":
        return Registry(self._ids)

    def tags(self) -> list[str]:
        return [vid.tag for vid in self._ids]

    def indices(self, kind: VarKind) -> list[int]:
        return [i for i, vid in enumerate(self._ids) if vid.kind is kind]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Registry) and self._ids == other._ids

    def __repr__(self) -> str:
        return f"Registry({len(self)} variables)"
