from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True, order=True, slots=True)
class StreamId:
    """Downlink stream d to destination i, relayed through j (j == i: direct)."""

    dest: int
    relay: int
    stream: int = 1

    def __post_init__(self):
        if self.stream not in (1, 2):
            raise ValueError(f"stream index must be 1 or 2, got {self.stream}")
        if self.dest == self.relay and self.stream == 2:
            raise ValueError("a self pair carries a single stream")
        if self.dest < 0 or self.relay < 0:
            raise ValueError("user indices are non-negative")

    @property
    def is_self(self) -> bool:
        return self.dest == self.relay

    @property
    def pair(self) -> tuple[int, int]:
        return (self.dest, self.relay)

    def as_list(self) -> list[int]:
        return [self.dest, self.relay, self.stream]


ScheduleSet = tuple[StreamId, ...]


def make_set(streams: Iterable[StreamId]) -> ScheduleSet:
    """Canonical (sorted, de-duplicated) schedule set."""
    return tuple(sorted(set(streams)))


def parse_set(raw: Sequence[Sequence[int]]) -> ScheduleSet:
    return make_set(StreamId(int(i), int(j), int(d)) for i, j, d in raw)


def relay_users(s: ScheduleSet) -> set[int]:
    """Users acting as relay in s (the set s_2)."""
    return {x.relay for x in s if not x.is_self}


def cooperative_pairs(s: ScheduleSet) -> set[tuple[int, int]]:
    """Ordered pairs (i, j), i != j, with at least one scheduled stream."""
    return {x.pair for x in s if not x.is_self}


def is_compatible(s: ScheduleSet, candidate: StreamId, multi_relay: bool = False) -> bool:
    """Whether candidate may join s.

    Without multi_relay a destination is served through one partner only
    (its own pair or a single relay).
    """
    if candidate in s:
        return False
    if multi_relay:
        return True
    for x in s:
        if x.dest == candidate.dest and x.relay != candidate.relay:
            return False
    return True
