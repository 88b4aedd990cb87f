"""Eavesdroppers that try to link a station's successive on-air addresses.

Every linker is a batch function over header observations. None of them
sees payload bytes or key material (except the explicit WPA2 linker, which
is handed keys on purpose).
"""

from __future__ import annotations

import bisect
import json
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .core import Ptk, derive_rerand_mac
from .frames import (BROADCAST, MAX_SN, Frame, FrameError, FrameType, MacAddress,
                     decode_frame)
from .nodes import ACK_TIMEOUT_US, Node, SIFS_US

MAX_PN = 1 << 48


@dataclass(frozen=True)
class Observation:
    t: int
    ftype: FrameType
    addr1: MacAddress
    addr2: Optional[MacAddress]
    addr3: Optional[MacAddress]
    sn: int
    pn: Optional[int]
    length: int

    @classmethod
    def from_frame(cls, frame: Frame, t: int, length: int) -> "Observation":
        pn = frame.pn if frame.ftype is FrameType.DATA else None
        return cls(t, frame.ftype, frame.addr1, frame.addr2, frame.addr3, frame.sn, pn, length)


def observe(data: bytes, t: int) -> Optional[Observation]:
    """Monitor-mode capture: frames failing the FCS are discarded."""
    try:
        frame = decode_frame(data)
    except FrameError:
        return None
    return Observation.from_frame(frame, t, len(data))


def observations_from_log(lines: Iterable[str]) -> list[Observation]:
    """Rebuild observations from a frame log using only the on-air bytes."""
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if rec.get("lost"):
            continue
        obs = observe(bytes.fromhex(rec["hex"]), rec["t"])
        if obs is not None:
            out.append(obs)
    return out


class Sniffer:
    """Passive monitor attached to the medium."""

    def __init__(self, ignore: Iterable[MacAddress] = ()):
        self.ignore = set(ignore)
        self.observations: list[Observation] = []

    def on_air(self, data: bytes, t: int, frame: Optional[Frame]) -> None:
        if frame is None:
            return
        if frame.addr1 in self.ignore or frame.addr2 in self.ignore:
            return
        self.observations.append(Observation.from_frame(frame, t, len(data)))


@dataclass
class LinkageHypothesis:
    successor: dict = field(default_factory=dict)
    confidence: dict = field(default_factory=dict)

    def link(self, old, new, confidence: float) -> None:
        self.successor[old] = new
        self.confidence[old] = confidence


@dataclass
class AnonymityReport:
    boundary: Optional[int]
    sizes: dict = field(default_factory=dict)
    accuracies: dict = field(default_factory=dict)
    pruned: dict = field(default_factory=dict)

    @property
    def min_size(self) -> int:
        return min(self.sizes.values(), default=0)


@dataclass
class _Presence:
    first: int
    last: int
    first_sn: Optional[int] = None
    last_sn: Optional[int] = None
    first_pn: Optional[int] = None
    last_pn: Optional[int] = None


def infrastructure(observations: Iterable[Observation]) -> set:
    """Addresses the adversary attributes to the AP: every BSSID it saw."""
    return {o.addr3 for o in observations if o.addr3 is not None}


def presence(observations: list[Observation]) -> dict:
    """First/last sighting of each station address, plus the SN and PN at
    both ends of its uplink data stream."""
    infra = infrastructure(observations) | {BROADCAST}
    seen: dict = {}
    for o in observations:
        for addr in (o.addr1, o.addr2):
            if addr is None or addr in infra:
                continue
            p = seen.get(addr)
            if p is None:
                p = seen[addr] = _Presence(o.t, o.t)
            else:
                p.last = o.t
        if o.ftype is FrameType.DATA and o.addr2 is not None and o.addr2 not in infra:
            p = seen[o.addr2]
            if p.first_sn is None:
                p.first_sn, p.first_pn = o.sn, o.pn
            p.last_sn, p.last_pn = o.sn, o.pn
    return seen


def _order(pres: dict) -> list:
    return sorted(pres, key=lambda a: (pres[a].last, bytes(a)))


def candidate_sets(observations: list[Observation], window_us: int,
                   pres: Optional[dict] = None) -> dict:
    """For each address, the addresses first seen within ``window_us`` after
    it was last seen."""
    pres = presence(observations) if pres is None else pres
    by_first = sorted(pres, key=lambda a: (pres[a].first, bytes(a)))
    firsts = [pres[a].first for a in by_first]
    out = {}
    for x in _order(pres):
        last = pres[x].last
        lo = bisect.bisect_right(firsts, last)
        hi = bisect.bisect_right(firsts, last + window_us)
        out[x] = by_first[lo:hi]
    return out


def _link(pres: dict, cands: dict, evidence, rng: random.Random) -> LinkageHypothesis:
    hyp = LinkageHypothesis()
    used = set()
    pairs = []
    for x, ys in cands.items():
        for y in ys:
            if y == x:
                continue
            if evidence(pres[x], pres[y]):
                pairs.append((pres[y].first - pres[x].last, rng.random(), x, y))
    pairs.sort(key=lambda p: (p[0], p[1]))
    for _, _, x, y in pairs:
        if x in hyp.successor or y in used:
            continue
        hyp.link(x, y, 1.0)
        used.add(y)
    # no usable evidence left: uniform guess among the remaining candidates,
    # visiting the old addresses in random order
    rest = [x for x in cands if x not in hyp.successor]
    rng.shuffle(rest)
    for x in rest:
        ys = cands[x]
        free = [y for y in ys if y not in used and y != x]
        if not free:
            continue
        y = free[rng.randrange(len(free))]
        hyp.link(x, y, 1.0 / len(free))
        used.add(y)
    return hyp


def link_timing(observations: list[Observation], window_us: int,
                rng: Optional[random.Random] = None) -> LinkageHypothesis:
    """Link a vanished address to the address that appears right after it."""
    pres = presence(observations)
    cands = candidate_sets(observations, window_us, pres)
    return _link(pres, cands, lambda x, y: True, rng or random.Random(0))


def link_sn(observations: list[Observation], window_us: int,
            rng: Optional[random.Random] = None) -> LinkageHypothesis:
    pres = presence(observations)
    cands = candidate_sets(observations, window_us, pres)

    def continues(x: _Presence, y: _Presence) -> bool:
        return (x.last_sn is not None and y.first_sn is not None
                and y.first_sn == (x.last_sn + 1) % MAX_SN)
    return _link(pres, cands, continues, rng or random.Random(0))


def link_pn(observations: list[Observation], window_us: int,
            rng: Optional[random.Random] = None) -> LinkageHypothesis:
    pres = presence(observations)
    cands = candidate_sets(observations, window_us, pres)

    def continues(x: _Presence, y: _Presence) -> bool:
        return (x.last_pn is not None and y.first_pn is not None
                and y.first_pn == (x.last_pn + 1) % MAX_PN)
    return _link(pres, cands, continues, rng or random.Random(0))


def nonce_collision_prune(observations: list[Observation], hypothesis: LinkageHypothesis,
                          window_us: int) -> AnonymityReport:
    """Drop old/new pairs that share a PN value.

    A station never repeats its own nonce, so two addresses that used the
    same PN belong to different stations. Under random nonce resets this
    shrinks the candidate sets; under controlled resets nothing is pruned.
    """
    pres = presence(observations)
    cands = candidate_sets(observations, window_us, pres)
    infra = infrastructure(observations)
    pns: dict = {}
    for o in observations:
        if o.ftype is FrameType.DATA and o.addr2 is not None and o.addr2 not in infra:
            pns.setdefault(o.addr2, set()).add(o.pn)
    report = AnonymityReport(None)
    for x, ys in cands.items():
        keep, gone = [], []
        for y in ys:
            (gone if pns.get(x, set()) & pns.get(y, set()) else keep).append(y)
        report.sizes[x] = len(keep)
        if gone:
            report.pruned[x] = gone
            if hypothesis.successor.get(x) in gone:
                del hypothesis.successor[x]
                hypothesis.confidence.pop(x, None)
    return report


def link_derivation(observations: list[Observation], keys: Iterable[tuple],
                    T: int, start_epoch: int = 0) -> LinkageHypothesis:
    """WPA2 caveat: an eavesdropper holding (base, PTK) pairs recomputes every
    re-randomized address and links them outright."""
    keys = list(keys)
    pres = presence(observations)
    owner: dict = {}
    for addr in _order(pres):
        u = (start_epoch * 1_000_000 + pres[addr].first) // (T * 1_000_000)
        for base, ptk in keys:
            if addr == base or any(derive_rerand_mac(base, ptk, v) == addr
                                   for v in (u - 1, u, u + 1)):
                owner[addr] = base
                break
    hyp = LinkageHypothesis()
    previous: dict = {}
    for addr in sorted(owner, key=lambda a: (pres[a].first, bytes(a))):
        base = owner[addr]
        if base in previous:
            hyp.link(previous[base], addr, 1.0)
        previous[base] = addr
    return hyp


@dataclass(frozen=True)
class TruthLink:
    boundary: int
    t: int
    station: int
    old: MacAddress
    new: MacAddress


@dataclass
class LinkScore:
    accuracy: float
    per_boundary: dict
    stderr: float

    @property
    def boundaries(self) -> int:
        return len(self.per_boundary)


def score_linkage(truth: list[TruthLink], hypothesis: LinkageHypothesis) -> LinkScore:
    if not truth:
        return LinkScore(0.0, {}, 0.0)
    hits: dict = {}
    for link in truth:
        ok = hypothesis.successor.get(link.old) == link.new
        hits.setdefault(link.boundary, []).append(1.0 if ok else 0.0)
    per = {b: sum(v) / len(v) for b, v in hits.items()}
    acc = sum(sum(v) for v in hits.values()) / len(truth)
    se = statistics.stdev(per.values()) / math.sqrt(len(per)) if len(per) > 1 else 0.0
    return LinkScore(acc, per, se)


def anonymity_reports(truth: list[TruthLink], observations: list[Observation],
                      window_us: int, sizes: Optional[dict] = None) -> list[AnonymityReport]:
    """Per-boundary candidate-set sizes for the addresses that changed there."""
    if sizes is None:
        sizes = {x: len(ys) for x, ys in candidate_sets(observations, window_us).items()}
    reports: dict = {}
    for link in truth:
        rep = reports.setdefault(link.boundary, AnonymityReport(link.boundary))
        rep.sizes[link.old] = sizes.get(link.old, 0)
    return [reports[b] for b in sorted(reports)]


@dataclass
class ProbeResult:
    target: MacAddress
    t: int
    acked: bool = False


class ProbeInjector(Node):
    """Active adversary: injects data frames at harvested addresses and
    watches for the hardware ACK that would betray the target."""

    name = "adversary"

    def __init__(self, sim, mac: MacAddress, bssid: MacAddress):
        super().__init__(sim, mac)
        self.bssid = MacAddress(bssid)
        self.probes: list[ProbeResult] = []
        self._pending: Optional[tuple] = None
        self._sn = 0

    def inject_probe(self, target, t: int) -> ProbeResult:
        result = ProbeResult(MacAddress(target), t)
        frame = Frame(FrameType.DATA, result.target, self.mac, self.bssid, sn=self._sn,
                      pn=self._sn, payload=b"probe")
        self._sn = (self._sn + 1) % MAX_SN
        end = self.sim.transmit(self, frame, t)
        deadline = end + SIFS_US + ACK_TIMEOUT_US
        self._pending = (result, deadline)
        self.probes.append(result)
        return result

    def on_air_receive(self, data: bytes, t: int, frame: Optional[Frame] = None) -> None:
        if frame is None or frame.ftype is not FrameType.ACK or frame.addr1 != self.mac:
            return
        if self._pending is not None:
            result, deadline = self._pending
            if t <= deadline:
                result.acked = True
            self._pending = None
