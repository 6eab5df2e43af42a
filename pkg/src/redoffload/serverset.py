"""Nonempty subsets of edge servers, encoded as bitmasks.

Server ids are 1-based; bit ``n-1`` of the mask marks server ``n``. The
Q-network output index for a set is ``mask - 1``, so the action space of an
``N``-server system is ``0 .. 2**N - 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ContractViolationError


@dataclass(frozen=True, order=True)
class ServerSet:
    mask: int
    n_servers: int

    def __post_init__(self):
        if self.n_servers < 1:
            raise ContractViolationError("n_servers must be >= 1")
        if self.mask <= 0:
            raise ContractViolationError("server set must be nonempty")
        if self.mask >> self.n_servers:
            raise ContractViolationError(
                f"mask {self.mask:#b} has bits above server {self.n_servers}"
            )

    @classmethod
    def of(cls, members: Iterable[int], n_servers: int) -> "ServerSet":
        mask = 0
        for m in members:
            if not 1 <= m <= n_servers:
                raise ContractViolationError(f"server id {m} outside 1..{n_servers}")
            mask |= 1 << (m - 1)
        return cls(mask, n_servers)

    @classmethod
    def full(cls, n_servers: int) -> "ServerSet":
        return cls((1 << n_servers) - 1, n_servers)

    @classmethod
    def from_action(cls, index: int, n_servers: int) -> "ServerSet":
        return cls(index + 1, n_servers)

    @property
    def action(self) -> int:
        return self.mask - 1

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in range(self.n_servers) if self.mask >> n & 1)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __contains__(self, server_id: int) -> bool:
        return 1 <= server_id <= self.n_servers and bool(self.mask >> (server_id - 1) & 1)

    def __iter__(self):
        return iter(self.members)

    def __str__(self) -> str:
        return "{" + ",".join(map(str, self.members)) + "}"


def n_actions(n_servers: int) -> int:
    return (1 << n_servers) - 1


def set_sizes(n_servers: int) -> list[int]:
    """Cardinality of every action index, in index order."""
    return [bin(m).count("1") for m in range(1, 1 << n_servers)]
