"""AP-side base <-> re-randomized address table."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .core import OrderingError, Ptk, derive_rerand_mac, salted
from .frames import Frame, MacAddress

DEFAULT_CAPACITY = 512


class TableError(RuntimeError):
    pass


class CapacityExceeded(TableError):
    pass


class DuplicateBase(TableError):
    pass


class DerivedAddressCollision(TableError):
    pass


@dataclass
class StationRecord:
    base: MacAddress
    rerand: MacAddress
    ptk: Ptk
    u: int
    last_seen: float = 0
    connected: bool = True
    salted: bool = False
    prev: Optional[MacAddress] = None


class MacTable:
    """Two keys per station, base and current re-randomized address, both
    resolving to the same record."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY,
                 derive: Callable[[MacAddress, Ptk, int], MacAddress] = derive_rerand_mac):
        self.capacity = capacity
        self.current_u: Optional[int] = None
        self._derive = derive
        self._entries: dict[MacAddress, StationRecord] = {}
        self._records: dict[MacAddress, StationRecord] = {}   # base -> record
        self._retired: dict[MacAddress, StationRecord] = {}
        self.stale_rx = 0
        self.anomalous_rx = 0

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, addr) -> bool:
        return addr in self._entries

    @property
    def key_count(self) -> int:
        return len(self._entries)

    def keys(self) -> list[MacAddress]:
        return list(self._entries)

    def records(self) -> list[StationRecord]:
        return list(self._records.values())

    def lookup(self, addr) -> Optional[StationRecord]:
        return self._entries.get(addr)

    def by_base(self, base) -> Optional[StationRecord]:
        return self._records.get(base)

    def _free(self, addr, owner: Optional[MacAddress] = None) -> bool:
        rec = self._entries.get(addr)
        return rec is None or rec.base == owner

    def _derive_free(self, base, ptk, u, taken: set) -> tuple[MacAddress, bool]:
        for salt in (False, True):
            mac = self._derive(base, ptk, salted(u) if salt else u)
            if mac != base and mac not in taken and self._free(mac, base):
                return mac, salt
        raise DerivedAddressCollision(f"derived address for {base} collides after salted retry")

    def insert_station(self, base, ptk: Ptk, u: int, now: float = 0) -> StationRecord:
        base = MacAddress(base)
        if base in self._records:
            raise DuplicateBase(str(base))
        if len(self._records) >= self.capacity:
            raise CapacityExceeded(f"table holds at most {self.capacity} stations")
        if base in self._entries:
            raise DerivedAddressCollision(f"base {base} equals a live re-randomized address")
        rerand, salt = self._derive_free(base, ptk, u, set())
        rec = StationRecord(base, rerand, ptk, u, now, True, salt)
        self._records[base] = rec
        self._entries[base] = rec
        self._entries[rerand] = rec
        return rec

    def remove(self, base) -> Optional[StationRecord]:
        rec = self._records.pop(base, None)
        if rec is not None:
            del self._entries[rec.base]
            del self._entries[rec.rerand]
            if rec.prev is not None:
                self._retired.pop(rec.prev, None)
        return rec

    def classify(self, addr) -> str:
        """'rerand', 'base', 'stale' or 'unknown'."""
        rec = self._entries.get(addr)
        if rec is not None:
            return "base" if addr == rec.base else "rerand"
        return "stale" if addr in self._retired else "unknown"

    def rotate_all(self, u: int) -> None:
        if self.current_u is not None and u <= self.current_u:
            raise OrderingError(f"interval {u} does not follow {self.current_u}")
        # compute everything first so a collision leaves the table untouched
        taken: set = set(self._records)
        fresh = []
        for rec in self._records.values():
            mac, salt = self._derive_free(rec.base, rec.ptk, u, taken)
            taken.add(mac)
            fresh.append((rec, mac, salt))
        self._retired = {}
        for rec, _, _ in fresh:
            del self._entries[rec.rerand]
            self._retired[rec.rerand] = rec
        for rec, mac, salt in fresh:
            rec.prev = rec.rerand
            rec.rerand, rec.u, rec.salted = mac, u, salt
            self._entries[mac] = rec
        self.current_u = u

    def rotate_station(self, base, u: int) -> StationRecord:
        """Rotate a single station (unsynchronized schedules)."""
        rec = self._records[base]
        if u <= rec.u:
            raise OrderingError(f"interval {u} does not follow {rec.u} for {base}")
        mac, salt = self._derive_free(rec.base, rec.ptk, u, set())
        del self._entries[rec.rerand]
        if rec.prev is not None:
            self._retired.pop(rec.prev, None)
        self._retired[rec.rerand] = rec
        rec.prev = rec.rerand
        rec.rerand, rec.u, rec.salted = mac, u, salt
        self._entries[mac] = rec
        return rec

    def tx_convert(self, frame: Frame) -> Frame:
        rec = self._records.get(frame.addr1)
        if rec is None:
            return frame
        return frame.evolve(addr1=rec.rerand)

    def rx_convert(self, frame: Frame, now: float = 0) -> Frame:
        ta = frame.addr2
        rec = self._entries.get(ta)
        if rec is None:
            if ta in self._retired:
                self.stale_rx += 1
            return frame
        if ta == rec.base:
            self.anomalous_rx += 1
            return frame
        rec.last_seen = now
        return frame.evolve(addr2=rec.base)

    def touch(self, base, now: float) -> None:
        rec = self._records.get(base)
        if rec is not None:
            rec.last_seen = now

    def expire_inactive(self, now: float, timeout: float = math.inf) -> int:
        idle = [r.base for r in self._records.values() if now - r.last_seen > timeout]
        for base in idle:
            self.remove(base)
        return len(idle)

    def dump(self) -> str:
        return "\n".join(
            f"base={r.base.hex()} rerand={r.rerand.hex()} last_seen={r.last_seen}"
            for r in self._records.values())
