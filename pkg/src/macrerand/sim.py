"""Deterministic discrete-event simulation of one AP and its stations.

Time is integer microseconds from the start of the run; the wall clock seen
by the nodes is ``start_epoch + t``. Events at equal times fire by
(priority, insertion order), so a fixed seed replays byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import heapq
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

from . import adversary as adv
from .core import (NonceMode, ParameterError, RerandParams, choose_pn_split,
                   wrap_interval)
from .frames import BROADCAST, Frame, FrameError, FrameType, MacAddress, decode_frame, encode_frame
from .nodes import (PRIO_ROTATE, PRIO_RX, PRIO_TRAFFIC, ApNode, AssocState, KeyOracle,
                    Mode, Msdu, StationNode, msdu_payload, payload_msdu_id)

log = logging.getLogger(__name__)

US = 1_000_000
PREAMBLE_US = 20
DATA_OVERHEAD = 36          # header + CCMP + FCS around the payload
AP_MAC = MacAddress("00:0f:ac:00:00:01")
ADVERSARY_MAC = MacAddress("02:ad:00:00:00:01")


class Clock:
    def __init__(self, start_epoch: int, T: int):
        self.epoch_us = start_epoch * US
        self.T_us = T * US

    def u_at(self, t: int, phase_us: int = 0) -> int:
        return (self.epoch_us + t + phase_us) // self.T_us

    def next_boundary(self, t: int, phase_us: int = 0) -> int:
        """First rotation instant strictly after ``t``."""
        return (self.u_at(t, phase_us) + 1) * self.T_us - self.epoch_us - phase_us


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, t: int, prio: int, fn: Callable, args: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, prio, self._seq, fn, args))

    def pop(self):
        return heapq.heappop(self._heap)

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


# -- configuration --------------------------------------------------------

class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingKey(ConfigError):
    pass


class BadValue(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class InvalidSplit(ConfigError):
    pass


ADVERSARIES = ("timing", "sn", "pn", "nonce_prune", "wpa2")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _adversaries(text: str) -> tuple:
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    if names == ("none",):
        return ()
    for n in names:
        if n not in ADVERSARIES:
            raise ValueError(n)
    return names


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(text)
        return text
    return parse


@dataclass
class ScenarioConfig:
    T: int
    seed: int
    n_stations: int = 5
    mode: Mode = Mode.SYNC
    nonce_mode: NonceMode = NonceMode.CONTROLLED
    h: Optional[int] = None
    l: Optional[int] = None
    bitrate: int = 54_000_000          # PHY rate, bps
    frame_len: int = 1500              # bytes on air per data frame
    duration: float = 600.0            # seconds
    rate: float = 10.0                 # uplink frames/s per station
    downlink_rate: float = 0.0         # AP frames/s per station
    traffic: str = "poisson"
    traffic_stop: Optional[float] = None
    rts_threshold: int = 2347
    inactivity_timeout: float = 300.0
    no_sn_reset: bool = False
    no_pn_reset: bool = False
    adversary: tuple = ("timing", "sn", "pn")
    window: Optional[float] = None     # linker window, seconds; default T/2
    clock_skew_ms: tuple = ()
    start_epoch: int = 1_700_000_000
    loss: float = 0.0
    capacity: int = 512
    probes: int = 0
    probe_target: str = "base"

    def __post_init__(self):
        if self.T < 1:
            raise BadValue("T must be >= 1")
        if self.h is not None or self.l is not None:
            h = self.h if self.h is not None else 48 - self.l
            l = self.l if self.l is not None else 48 - self.h
            if h + l != 48 or not 1 <= h <= 47:
                raise InvalidSplit(f"h + l must equal 48 with 1 <= h <= 47 (h={h}, l={l})")
            self.h, self.l = h, l
        if self.n_stations < 0 or self.duration < 0 or self.rate < 0 or self.downlink_rate < 0:
            raise BadValue("counts, rates and duration must be non-negative")
        if not 0 <= self.loss < 1:
            raise BadValue("loss must lie in [0, 1)")

    @property
    def params(self) -> RerandParams:
        if self.h is not None:
            return RerandParams(self.T, self.h, self.l)
        return choose_pn_split(self.bitrate, self.T, self.frame_len * 8)

    @property
    def window_us(self) -> int:
        w = self.window if self.window is not None else self.T / 2
        return int(w * US)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


_PARSERS = {
    "n_stations": int, "T": int, "seed": int, "h": int, "l": int,
    "mode": Mode, "nonce_mode": NonceMode,
    "bitrate": lambda s: int(float(s)), "frame_len": int, "duration": float,
    "rate": float, "downlink_rate": float, "traffic": _choice("poisson", "constant"),
    "traffic_stop": float, "rts_threshold": int, "inactivity_timeout": float,
    "no_sn_reset": _bool, "no_pn_reset": _bool, "adversary": _adversaries,
    "window": float, "clock_skew_ms": _floats, "start_epoch": int, "loss": float,
    "capacity": int, "probes": int, "probe_target": _choice("base", "live", "random"),
}
_REQUIRED = ("T", "seed")


def parse_config(text: str) -> ScenarioConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(f"expected key = value, got {line!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        parser = _PARSERS.get(key)
        if parser is None:
            raise UnknownKey(f"unknown key {key!r}", lineno)
        try:
            values[key] = parser(value)
        except ValueError:
            raise BadValue(f"bad value for {key}: {value!r}", lineno) from None
    h, l = values.get("h"), values.get("l")
    if h is not None and l is not None and h + l != 48:
        raise InvalidSplit(f"h + l must equal 48, got {h} + {l}")
    for key in _REQUIRED:
        if key not in values:
            raise MissingKey(f"missing required key {key!r}")
    return ScenarioConfig(**values)


# -- traffic --------------------------------------------------------------

def traffic_times(kind: str, rate: float, start: int, stop: int,
                  rng: random.Random) -> Iterator[int]:
    """Arrival instants (us) of one station's frames in [start, stop)."""
    if rate <= 0:
        return
    if kind == "constant":
        period = max(1, round(US / rate))
        t = start + rng.randrange(period)
        while t < stop:
            yield t
            t += period
        return
    t = start
    while True:
        t += max(1, round(rng.expovariate(rate) * US))
        if t >= stop:
            return
        yield t


def traffic_generate(station: StationNode, config: ScenarioConfig, rng: random.Random,
                     start: int = 0) -> Iterator[int]:
    stop = int((config.traffic_stop if config.traffic_stop is not None else config.duration) * US)
    return traffic_times(config.traffic, config.rate, start, stop, rng)


# -- metrics --------------------------------------------------------------

@dataclass
class MetricsRow:
    interval: int
    frames_sent: int = 0
    frames_delivered: int = 0
    frames_dropped: int = 0
    frames_retried: int = 0
    acks: int = 0
    rotations: int = 0
    acc_timing: Optional[float] = None
    acc_sn: Optional[float] = None
    acc_pn: Optional[float] = None
    anonymity_set: Optional[int] = None
    nonce_reuse: int = 0


METRICS_COLUMNS = [f.name for f in dataclasses.fields(MetricsRow)]


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in rows:
        w.writerow(["" if v is None else (f"{v:.4f}" if isinstance(v, float) else v)
                    for v in dataclasses.astuple(r)])
    return buf.getvalue()


_PENDING, _DELIVERED, _FAILED = 0, 1, 2


@dataclass
class RunResult:
    config: ScenarioConfig
    rows: list
    summary: dict
    truth: list
    observations: list
    deliveries: list
    frame_digest: Optional[str]    # None when the frame log was not kept
    scores: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    frame_lines: Optional[list] = None
    sim: Optional["Simulation"] = None


class Simulation:
    def __init__(self, config: ScenarioConfig, frame_sink=None, keep_frames: bool = False,
                 observe: Optional[bool] = None, record_deliveries: bool = True):
        self.config = config
        self.clock = Clock(config.start_epoch, config.T)
        self.T_us = self.clock.T_us
        self.end_us = int(round(config.duration * US))
        self.queue = EventQueue()
        self.bitrate = config.bitrate
        self._airtime: dict = {}
        self.params = config.params
        self._seed = config.seed
        self._channel_rng = self.rng("channel")
        self.oracle = KeyOracle(self.rng("keys"))

        self.frame_sink = frame_sink
        self.frame_lines: Optional[list] = [] if keep_frames else None
        self._log_frames = frame_sink is not None or keep_frames
        self._digest = hashlib.sha256()
        self.record_deliveries = record_deliveries
        self.deliveries: list = []
        self.truth_raw: list = []
        self._owner: dict = {}

        if observe is None:
            observe = bool(config.adversary) or config.probes > 0
        self.sniffer = adv.Sniffer(ignore=[ADVERSARY_MAC]) if observe else None

        self._msdu_u: list = []
        self._msdu_state = bytearray()
        self._retried: dict = {}
        self._acks: dict = {}
        self._rotations: dict = {}
        self._reuse: dict = {}
        self._pn_seen: dict = {}
        self.first_reuse_t: Optional[int] = None
        self.expired = 0
        self._current_t = 0

        reset_sn = not config.no_sn_reset
        reset_pn = not config.no_pn_reset
        self.ap = ApNode(self, AP_MAC, config.mode, self.params, config.nonce_mode,
                         capacity=config.capacity, reset_sn=reset_sn, reset_pn=reset_pn,
                         inactivity_timeout=config.inactivity_timeout, rng=self.rng("ap"))
        self.stations: list[StationNode] = []
        n = config.n_stations
        for i in range(n):
            skew = config.clock_skew_ms[i] if i < len(config.clock_skew_ms) else 0.0
            phase = (i * self.T_us) // n if config.mode is Mode.UNSYNC else 0
            sta = StationNode(self, i, AP_MAC, config.mode, self.params, config.nonce_mode,
                              rng=self.rng(f"sta{i}"), rts_threshold=config.rts_threshold,
                              skew_us=int(round(skew * 1000)), phase_us=phase,
                              reset_sn=reset_sn, reset_pn=reset_pn)
            self.stations.append(sta)
        self.injector = adv.ProbeInjector(self, ADVERSARY_MAC, AP_MAC)
        self.nodes = [self.ap, *self.stations, self.injector]
        self._traffic_started: set = set()

    def rng(self, label: str) -> random.Random:
        return random.Random(f"{self._seed}:{label}")

    # -- kernel -----------------------------------------------------------
    def schedule(self, t: int, prio: int, fn: Callable, *args) -> None:
        q = self.queue
        q._seq += 1
        heapq.heappush(q._heap, (t, prio, q._seq, fn, args))

    def airtime(self, nbytes: int) -> int:
        us = self._airtime.get(nbytes)
        if us is None:
            us = self._airtime[nbytes] = PREAMBLE_US + -(-nbytes * 8 * US // self.bitrate)
        return us

    # -- medium -----------------------------------------------------------
    def transmit(self, node, frame: Frame, t: int) -> int:
        data = encode_frame(frame)
        end = t + self.airtime(len(data))
        if frame.ftype is FrameType.ACK:
            u = self.clock.u_at(t)
            self._acks[u] = self._acks.get(u, 0) + 1
        lost = bool(self.config.loss) and frame.ftype is FrameType.DATA \
            and self._channel_rng.random() < self.config.loss
        if self._log_frames:
            self._log(t, data, frame, node, lost)
        if lost:
            corrupt = bytearray(data)
            corrupt[self._channel_rng.randrange(len(data))] ^= 0x01
            # the monitor fails the FCS check as well and keeps nothing
            self.schedule(end, PRIO_RX, self._arrive_corrupt, node, bytes(corrupt), end)
        else:
            if self.sniffer is not None:
                self.sniffer.on_air(data, t, frame)
            self.schedule(end, PRIO_RX, self._arrive, node, data, frame, end)
        return end

    def _arrive(self, sender, data: bytes, frame: Frame, t: int) -> None:
        # unaltered bytes decode back to the sender's frame, so skip the parse
        ra = frame.addr1
        bcast = ra == BROADCAST
        for node in self.nodes:
            if node is not sender and (bcast or ra in node.accepted_ra):
                node.on_air_receive(data, t, frame)

    def _arrive_corrupt(self, sender, data: bytes, t: int) -> None:
        for node in self.nodes:
            if node is not sender:
                node.on_air_receive(data, t, None)

    def _log(self, t: int, data: bytes, frame: Frame, node, lost: bool = False) -> None:
        rec = {
            "t": t, "hex": data.hex(), "type": frame.ftype.name,
            "addr1": str(frame.addr1),
            "addr2": None if frame.addr2 is None else str(frame.addr2),
            "addr3": None if frame.addr3 is None else str(frame.addr3),
            "sn": frame.sn, "pn": frame.pn if frame.ftype is FrameType.DATA else None,
            "sta": self.truth_owner_frame(frame, node),
        }
        if lost:
            rec["lost"] = True     # corrupted on the channel
        line = json.dumps(rec, separators=(",", ":")) + "\n"
        self._digest.update(line.encode())
        if self.frame_sink is not None:
            self.frame_sink.write(line)
        if self.frame_lines is not None:
            self.frame_lines.append(line)

    # -- ground truth (sidecar only) -------------------------------------
    def register_address(self, sta: StationNode, addr: MacAddress) -> None:
        self._owner[addr] = sta.sta_id

    def truth_owner_frame(self, frame: Frame, node) -> Optional[int]:
        if isinstance(node, StationNode):
            return node.sta_id
        return self._owner.get(frame.addr1)

    def record_rotation(self, sta: StationNode, old: MacAddress, new: MacAddress, t: int) -> None:
        self._owner[new] = sta.sta_id
        nominal = t - sta.skew_us
        self.truth_raw.append((nominal, t, sta.sta_id, old, new))
        u = self.clock.u_at(nominal)
        self._rotations[u] = self._rotations.get(u, 0) + 1

    def on_associated(self, sta: StationNode, t: int) -> None:
        self._owner[sta.base_mac] = sta.sta_id
        self._owner[sta.on_air_mac] = sta.sta_id
        if sta.sta_id not in self._traffic_started:
            self._traffic_started.add(sta.sta_id)
            self._start_traffic(sta, t)

    def note_expired(self, ap, base, t: int) -> None:
        self.expired += 1

    # -- traffic and accounting ------------------------------------------
    def _start_traffic(self, sta: StationNode, t: int) -> None:
        cfg = self.config
        up = traffic_generate(sta, cfg, self.rng(f"traffic-up{sta.sta_id}"), t)
        self._next_arrival(up, sta, True)
        if cfg.downlink_rate > 0:
            stop = int((cfg.traffic_stop if cfg.traffic_stop is not None else cfg.duration) * US)
            down = traffic_times(cfg.traffic, cfg.downlink_rate, t, stop,
                                 self.rng(f"traffic-down{sta.sta_id}"))
            self._next_arrival(down, sta, False)

    def _next_arrival(self, times: Iterator[int], sta: StationNode, uplink: bool) -> None:
        t = next(times, None)
        if t is not None and t < self.end_us:
            self.schedule(t, PRIO_TRAFFIC, self._arrival, times, sta, uplink, t)

    def _arrival(self, times, sta: StationNode, uplink: bool, t: int) -> None:
        if sta.assoc_state is not AssocState.DEPARTED:
            self.submit(sta, uplink, t)
            self._next_arrival(times, sta, uplink)

    def submit(self, sta: StationNode, uplink: bool, t: int) -> Msdu:
        msdu_id = len(self._msdu_u)
        self._msdu_u.append(self.clock.u_at(t))
        self._msdu_state.append(_PENDING)
        size = max(8, self.config.frame_len - DATA_OVERHEAD)
        payload = msdu_payload(msdu_id, size)
        if uplink:
            msdu = Msdu(msdu_id, sta.base_mac, AP_MAC, payload, t)
            sta.enqueue(msdu, t)
        else:
            msdu = Msdu(msdu_id, AP_MAC, sta.base_mac, payload, t)
            self.ap.enqueue(msdu, t)
        return msdu

    def deliver_up(self, node, src: MacAddress, dst: MacAddress, payload: bytes, t: int) -> None:
        msdu_id = payload_msdu_id(payload)
        if msdu_id is None or msdu_id >= len(self._msdu_state):
            return
        state = self._msdu_state[msdu_id]
        if state & _DELIVERED:
            return
        self._msdu_state[msdu_id] = state | _DELIVERED
        if self.record_deliveries:
            self.deliveries.append((t, node.name, src, dst, msdu_id))

    def exchange_done(self, node, msdu: Msdu, ok: bool, t: int) -> None:
        if not ok:
            self._msdu_state[msdu.id] |= _FAILED

    def note_retry(self, node, t: int) -> None:
        u = self.clock.u_at(t)
        self._retried[u] = self._retried.get(u, 0) + 1

    def note_pn(self, ptk, direction: str, pn: int, node) -> None:
        key = (ptk.secret, direction)
        seen = self._pn_seen.get(key)
        if seen is None:
            seen = self._pn_seen[key] = set()
        if pn in seen:
            t = self._current_t
            u = self.clock.u_at(t)
            self._reuse[u] = self._reuse.get(u, 0) + 1
            if self.first_reuse_t is None:
                self.first_reuse_t = t
        else:
            seen.add(pn)

    # -- probes ------------------------------------------------------------
    def _schedule_probes(self) -> None:
        cfg = self.config
        if cfg.probes <= 0 or not self.stations:
            return
        first = self.T_us if self.end_us > 2 * self.T_us else self.end_us // 4
        span = self.end_us - first
        for k in range(cfg.probes):
            t = first + (2 * k + 1) * span // (2 * cfg.probes)
            # keep probes clear of rotation instants
            if self.clock.next_boundary(t) - t < 20_000:
                t -= 20_000
            if t - (self.clock.next_boundary(t) - self.T_us) < 20_000:
                t += 20_000
            self.schedule(t, PRIO_TRAFFIC, self._probe, t)

    def _probe(self, t: int) -> None:
        target = self.probe_target(self.config.probe_target)
        if target is not None:
            self.injector.inject_probe(target, t)

    def probe_target(self, kind: str) -> Optional[MacAddress]:
        if kind == "base":
            # harvested from a handshake the sniffer saw
            for o in self.sniffer.observations if self.sniffer else ():
                if o.ftype is FrameType.ASSOC_REQ:
                    return o.addr2
            return None
        if kind == "live":
            # assumes the adversary somehow knows the current address
            return self.stations[0].on_air_mac
        return MacAddress.random(self._channel_rng)

    # -- driver -------------------------------------------------------------
    def start(self) -> None:
        self.ap.start(0)
        for i, sta in enumerate(self.stations):
            t = 1000 + 5000 * i
            if t < self.end_us:
                self.schedule(t, PRIO_TRAFFIC, sta.associate, t)
        self._schedule_probes()

    def execute(self) -> None:
        """Run the event loop until the configured duration."""
        end = self.end_us
        heap = self.queue._heap
        pop = heapq.heappop
        while heap and heap[0][0] < end:
            t, _, _, fn, args = pop(heap)
            self._current_t = t
            fn(*args)

    # -- results ------------------------------------------------------------
    def truth(self) -> list:
        times = sorted({r[0] for r in self.truth_raw})
        index = {t: k for k, t in enumerate(times)}
        return [adv.TruthLink(index[nom], t, sta, old, new)
                for nom, t, sta, old, new in self.truth_raw]

    def drop_causes(self) -> dict:
        causes: dict = {}
        for node in self.nodes:
            for k, v in node.drops.items():
                causes[k] = causes.get(k, 0) + v
        return dict(sorted(causes.items()))


def _linker(name: str):
    return {"timing": adv.link_timing, "sn": adv.link_sn, "pn": adv.link_pn}[name]


def evaluate(sim: Simulation) -> tuple[dict, list]:
    """Run the configured linkers over the capture and score them."""
    cfg = sim.config
    truth = sim.truth()
    scores: dict = {}
    if sim.sniffer is None or not cfg.adversary:
        return scores, []
    obs = sim.sniffer.observations
    window = cfg.window_us
    pres = adv.presence(obs)
    sizes = {x: len(ys) for x, ys in adv.candidate_sets(obs, window, pres).items()}
    for name in cfg.adversary:
        rng = random.Random(f"{cfg.seed}:linker-{name}")
        if name in ("timing", "sn", "pn"):
            hyp = _linker(name)(obs, window, rng)
        elif name == "nonce_prune":
            hyp = adv.link_pn(obs, window, rng)
            report = adv.nonce_collision_prune(obs, hyp, window)
            sizes = report.sizes
        else:
            # WPA2 caveat: the eavesdropper holds every (base, PTK) pair
            keys = [(base, ptk) for (_, base), ptk in sim.oracle.items()]
            hyp = adv.link_derivation(obs, keys, cfg.T, cfg.start_epoch)
        scores[name] = adv.score_linkage(truth, hyp)
    reports = adv.anonymity_reports(truth, obs, window, sizes)
    for rep in reports:
        for name, score in scores.items():
            if rep.boundary in score.per_boundary:
                rep.accuracies[name] = score.per_boundary[rep.boundary]
    return scores, reports


def _rows(sim: Simulation, reports: list) -> list:
    if sim.end_us <= 0:
        return []
    u0, u1 = sim.clock.u_at(0), sim.clock.u_at(sim.end_us - 1)
    rows = {u: MetricsRow(u) for u in range(u0, u1 + 1)}
    for i, u in enumerate(sim._msdu_u):
        row = rows[u]
        row.frames_sent += 1
        if sim._msdu_state[i] & _DELIVERED:
            row.frames_delivered += 1
        else:
            row.frames_dropped += 1
    for attr, counts in (("frames_retried", sim._retried), ("acks", sim._acks),
                         ("rotations", sim._rotations), ("nonce_reuse", sim._reuse)):
        for u, n in counts.items():
            if u in rows:
                setattr(rows[u], attr, getattr(rows[u], attr) + n)
    boundary_u = {}
    for link in sim.truth():
        boundary_u.setdefault(link.boundary, sim.clock.u_at(link.t - sim.stations[link.station].skew_us))
    for rep in reports:
        row = rows.get(boundary_u.get(rep.boundary))
        if row is None:
            continue
        row.anonymity_set = rep.min_size if row.anonymity_set is None \
            else min(row.anonymity_set, rep.min_size)
        for name, col in (("timing", "acc_timing"), ("sn", "acc_sn"), ("pn", "acc_pn")):
            if name in rep.accuracies:
                setattr(row, col, rep.accuracies[name])
    return [rows[u] for u in sorted(rows)]


def _summary(sim: Simulation, scores: dict) -> dict:
    states = sim._msdu_state
    delivered = sum(1 for s in states if s & _DELIVERED)
    failed = sum(1 for s in states if not s & _DELIVERED and s & _FAILED)
    unfinished = sum(1 for s in states if s == _PENDING)
    causes = sim.drop_causes()
    mismatch = sum(causes.get(k, 0) for k in ("stale_address", "base_address_rx",
                                                "unknown_source"))
    return {
        "frames_sent": len(states),
        "frames_delivered": delivered,
        "frames_dropped": failed + unfinished,
        "dropped_retry_limit": failed,
        "dropped_unfinished": unfinished,
        "rx_drops": causes,
        "address_mismatch_drops": mismatch,
        "rotations": sum(sim._rotations.values()),
        "boundaries": len({r[0] for r in sim.truth_raw}),
        "nonce_reuse": sum(sim._reuse.values()),
        "first_reuse_us": sim.first_reuse_t,
        "expired": sim.expired,
        "h": sim.params.h, "l": sim.params.l,
        "wrap_interval_s": wrap_interval(sim.params),
        "linkers": {k: {"accuracy": round(v.accuracy, 6), "stderr": round(v.stderr, 6),
                        "boundaries": v.boundaries} for k, v in scores.items()},
        "frame_log_sha256": sim._digest.hexdigest() if sim._log_frames else None,
    }


def run_scenario(config: ScenarioConfig, out_dir=None, keep_frames: bool = False,
                 observe: Optional[bool] = None,
                 setup: Optional[Callable[[Simulation], None]] = None) -> RunResult:
    """Simulate ``config.duration`` seconds; optionally write the frame log,
    ground truth, deliveries and metrics CSV to ``out_dir``."""
    out = Path(out_dir) if out_dir is not None else None
    sink = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        sink = open(out / "frames.jsonl", "w")
    try:
        sim = Simulation(config, frame_sink=sink, keep_frames=keep_frames, observe=observe)
        sim.start()
        if setup is not None:
            setup(sim)
        sim.execute()
    finally:
        if sink is not None:
            sink.close()
    scores, reports = evaluate(sim)
    rows = _rows(sim, reports)
    summary = _summary(sim, scores)
    result = RunResult(config, rows, summary, sim.truth(),
                       sim.sniffer.observations if sim.sniffer else [],
                       sim.deliveries,
                       sim._digest.hexdigest() if sim._log_frames else None, scores, reports,
                       list(sim.injector.probes), sim.frame_lines, sim)
    if out is not None:
        _write_outputs(out, result)
    return result


def _write_outputs(out: Path, result: RunResult) -> None:
    cfg = result.config
    (out / "metrics.csv").write_text(metrics_csv(result.rows))
    with open(out / "truth.jsonl", "w") as f:
        f.write(json.dumps({"T": cfg.T, "start_epoch": cfg.start_epoch,
                            "window_s": cfg.window_us / US}) + "\n")
        for link in result.truth:
            f.write(json.dumps({"boundary": link.boundary, "t": link.t, "sta": link.station,
                                "old": str(link.old), "new": str(link.new)}) + "\n")
    with open(out / "deliveries.jsonl", "w") as f:
        for t, node, src, dst, msdu in result.deliveries:
            f.write(json.dumps({"t": t, "node": node, "src": str(src), "dst": str(dst),
                                "msdu": msdu}) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")


def load_truth(lines) -> tuple[dict, list]:
    meta: dict = {}
    links = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if "boundary" not in rec:
            meta = rec
            continue
        links.append(adv.TruthLink(rec["boundary"], rec["t"], rec["sta"],
                                   MacAddress(rec["old"]), MacAddress(rec["new"])))
    return meta, links


# -- nonce wrap table -------------------------------------------------------

DEFAULT_T_LADDER = (1, 10, 30, 60, 300, 600, 1800, 3600, 7200, 21600, 43200, 86400)


def emit_wrap_table(frame_len: int, bitrate: int, T_list) -> str:
    """CSV of (T, l, h, wrap_seconds, wrap_days); ``frame_len`` in bits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T", "l", "h", "wrap_seconds", "wrap_days"])
    for T in T_list:
        p = choose_pn_split(bitrate, T, frame_len)
        secs = wrap_interval(p)
        w.writerow([T, p.l, p.h, secs, f"{secs / 86400:.2f}"])
    return buf.getvalue()
