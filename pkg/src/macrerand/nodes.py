"""Station and AP state machines driven by the simulator event loop.

Nodes never call each other. They hand frames to ``sim.transmit`` and react
to bytes arriving through ``on_air_receive``. Timers go through
``sim.schedule``.
"""

from __future__ import annotations

import enum
import random
import struct
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .core import NonceMode, NonceState, RerandContext, RerandParams, SnState, Ptk
from .frames import (BROADCAST, Frame, FrameError, FrameType, MacAddress,
                     decode_frame)
from .mactable import MacTable

SIFS_US = 10
ACK_TIMEOUT_US = 1000
RETRY_LIMIT = 4
HANDSHAKE_GAP_US = 200
DEFAULT_RTS_THRESHOLD = 2347

PRIO_ROTATE = 0
PRIO_RX = 1
PRIO_TX = 2
PRIO_TRAFFIC = 3

_ACK_LEN = 14
_CTS_LEN = 14
_RTS_LEN = 20


class Mode(enum.Enum):
    OFF = "off"
    PER_CONNECTION = "per_connection"
    UNSYNC = "unsync"
    SYNC = "sync"

    @property
    def runtime(self) -> bool:
        return self is Mode.SYNC or self is Mode.UNSYNC


class AssocState(enum.Enum):
    IDLE = "idle"
    ASSOCIATING = "associating"
    ASSOCIATED = "associated"
    DEPARTED = "departed"


class KeyOracle:
    """Stands in for the SAE handshake: issues a fresh PTK per association
    and hands it only to the two parties."""

    def __init__(self, rng: random.Random):
        self._rng = rng
        self._keys: dict[tuple, Ptk] = {}

    def issue(self, ap: MacAddress, base: MacAddress) -> Ptk:
        ptk = Ptk.random(self._rng)
        self._keys[(ap, base)] = ptk
        return ptk

    def lookup(self, ap: MacAddress, base: MacAddress) -> Ptk:
        return self._keys[(ap, base)]

    def items(self):
        return list(self._keys.items())


@dataclass
class Msdu:
    id: int
    src: MacAddress
    dst: MacAddress
    payload: bytes
    t: int


_PAD: dict = {}


def msdu_payload(msdu_id: int, size: int) -> bytes:
    """Frame body: the MSDU id, big-endian, zero-padded to ``size``."""
    pad = _PAD.get(size)
    if pad is None:
        pad = _PAD[size] = bytes(max(0, size - 8))
    return struct.pack(">Q", msdu_id) + pad


def payload_msdu_id(payload: bytes) -> Optional[int]:
    if len(payload) < 8:
        return None
    return struct.unpack_from(">Q", payload)[0]


class Node:
    """Radio with a hardware address filter and a stop-and-wait transmitter."""

    name = "node"

    def __init__(self, sim, mac: MacAddress):
        self.sim = sim
        self.mac = MacAddress(mac)
        self.accepted_ra: set = {self.mac}
        self.rts_threshold = DEFAULT_RTS_THRESHOLD
        self.queue: deque = deque()
        self.drops: dict[str, int] = {}
        self._busy = False
        self._deferred = False
        self._token = 0
        self._attempts = 0
        self._frame: Optional[Frame] = None
        self._frame_epoch = None
        self._awaiting: Optional[FrameType] = None
        self._last_sn: dict = {}

    # -- receive ----------------------------------------------------------
    def _drop(self, cause: str) -> None:
        self.drops[cause] = self.drops.get(cause, 0) + 1

    def on_air_receive(self, data: bytes, t: int, frame: Optional[Frame] = None) -> None:
        if frame is None:
            try:
                frame = decode_frame(data)
            except FrameError:
                self._drop("fcs")
                return
        ra = frame.addr1
        if ra not in self.accepted_ra:
            if ra == BROADCAST and not frame.ftype.is_control:
                self.deliver(frame, t)
            return
        ft = frame.ftype
        if ft is FrameType.ACK:
            if self._awaiting is FrameType.ACK:
                self._on_ack(t)
        elif ft is FrameType.CTS:
            if self._awaiting is FrameType.CTS:
                self._on_cts(t)
        elif ft is FrameType.RTS:
            self.sim.schedule(t + SIFS_US, PRIO_TX, self.sim.transmit, self,
                              Frame(FrameType.CTS, frame.addr2), t + SIFS_US)
        else:
            self.sim.schedule(t + SIFS_US, PRIO_TX, self.sim.transmit, self,
                              Frame(FrameType.ACK, frame.addr2), t + SIFS_US)
            if self._duplicate(frame):
                self._drop("duplicate")
                return
            self.deliver(frame, t)

    def _duplicate(self, frame: Frame) -> bool:
        key = frame.addr2
        if self._last_sn.get(key) == frame.sn and frame.ftype is FrameType.DATA:
            return True
        self._last_sn[key] = frame.sn
        return False

    def deliver(self, frame: Frame, t: int) -> None:
        pass

    # -- transmit ---------------------------------------------------------
    def enqueue(self, msdu: Msdu, t: int) -> None:
        self.queue.append(msdu)
        if not self._busy and not self._deferred:
            self.kick(t)

    def ready(self) -> bool:
        return True

    def next_boundary(self, msdu: Msdu, t: int) -> float:
        return float("inf")

    def build_data(self, msdu: Msdu) -> tuple[Frame, object]:
        raise NotImplementedError

    def on_air_frame(self, frame: Frame) -> Frame:
        """Last-moment header conversion before the FCS is computed."""
        return frame

    def frame_epoch(self, msdu: Msdu):
        return None

    def kick(self, t: int) -> None:
        self._deferred = False
        if self._busy or not self.queue or not self.ready():
            return
        msdu = self.queue[0]
        air = self.sim.airtime
        size = len(msdu.payload) + 36
        use_rts = size > self.rts_threshold
        dur = air(size) + SIFS_US + air(_ACK_LEN)
        if use_rts:
            dur += air(_RTS_LEN) + air(_CTS_LEN) + 2 * SIFS_US
        nb = self.next_boundary(msdu, t)
        if dur < self.sim.T_us and t + dur > nb:
            # never straddle an address change with one exchange
            self._deferred = True
            self.sim.schedule(int(nb), PRIO_TX, self.kick, int(nb))
            return
        self._busy = True
        self._attempts = 0
        self._frame = None
        self._start_attempt(t, use_rts)

    def _start_attempt(self, t: int, use_rts: bool) -> None:
        msdu = self.queue[0]
        epoch = self.frame_epoch(msdu)
        if self._frame is None or epoch != self._frame_epoch:
            self._frame, self._frame_epoch = self.build_data(msdu)
        if use_rts:
            rts = self.on_air_frame(Frame(FrameType.RTS, self._frame.addr1, self._frame.addr2))
            end = self.sim.transmit(self, rts, t)
            self._await(FrameType.CTS, end)
        else:
            self._send_data(self._token, t)

    def _send_data(self, token: int, t: int) -> None:
        if token != self._token:
            return
        frame = self.on_air_frame(self._frame)
        end = self.sim.transmit(self, frame, t)
        self._await(FrameType.ACK, end)

    def _await(self, what: FrameType, end: int) -> None:
        self._token += 1
        self._awaiting = what
        self.sim.schedule(end + ACK_TIMEOUT_US, PRIO_TX, self._timeout, self._token,
                          end + ACK_TIMEOUT_US)

    def _on_cts(self, t: int) -> None:
        self._awaiting = None
        self._token += 1
        self.sim.schedule(t + SIFS_US, PRIO_TX, self._send_data, self._token, t + SIFS_US)

    def _on_ack(self, t: int) -> None:
        self._awaiting = None
        self._token += 1
        msdu = self.queue.popleft()
        self._busy = False
        self.sim.exchange_done(self, msdu, True, t)
        if self.queue:
            self.sim.schedule(t, PRIO_TX, self.kick, t)

    def _timeout(self, token: int, t: int) -> None:
        if token != self._token:
            return
        self._awaiting = None
        self._attempts += 1
        if self._attempts > RETRY_LIMIT:
            msdu = self.queue.popleft()
            self._busy = False
            self.sim.exchange_done(self, msdu, False, t)
            if self.queue:
                self.kick(t)
            return
        self.sim.note_retry(self, t)
        size = len(self.queue[0].payload) + 36
        self._start_attempt(t, size > self.rts_threshold)

    def abandon_queue(self) -> list:
        dropped = list(self.queue)
        self.queue.clear()
        self._busy = False
        self._awaiting = None
        self._token += 1
        return dropped


class StationNode(Node):
    name = "sta"

    def __init__(self, sim, sta_id: int, ap_mac: MacAddress, mode: Mode,
                 params: RerandParams, nonce_mode: NonceMode = NonceMode.CONTROLLED,
                 rng: Optional[random.Random] = None, rts_threshold: int = DEFAULT_RTS_THRESHOLD,
                 skew_us: int = 0, phase_us: int = 0, reset_sn: bool = True,
                 reset_pn: bool = True):
        self.rng = rng or random.Random(sta_id)
        super().__init__(sim, MacAddress.random(self.rng))
        self.sta_id = sta_id
        self.ap_mac = MacAddress(ap_mac)
        self.mode = mode
        self.params = params
        self.nonce_mode = nonce_mode
        self.rts_threshold = rts_threshold
        self.skew_us = skew_us
        self.phase_us = phase_us
        self.reset_sn = reset_sn
        self.reset_pn = reset_pn
        self.base_mac: MacAddress = self.mac
        self.ctx: Optional[RerandContext] = None
        self.assoc_state = AssocState.IDLE
        self.epoch = 0
        self._mgmt_sn = SnState()
        self._tick_pending = False
        self.accepted_ra = {self.base_mac}

    @property
    def on_air_mac(self) -> MacAddress:
        if self.mode.runtime and self.ctx is not None and self.ctx.current_mac is not None:
            return self.ctx.current_mac
        return self.base_mac

    def local_interval(self, t: int) -> int:
        return self.sim.clock.u_at(t - self.skew_us, self.phase_us)

    def _next_rotation(self, t: int) -> int:
        return self.sim.clock.next_boundary(t - self.skew_us, self.phase_us) + self.skew_us

    # -- association ------------------------------------------------------
    def associate(self, t: int) -> None:
        if self.assoc_state in (AssocState.ASSOCIATING, AssocState.ASSOCIATED):
            raise RuntimeError(f"station {self.sta_id} is already {self.assoc_state.value}")
        if self.mode is not Mode.OFF:
            # fresh base address per connection
            self.base_mac = MacAddress.random(self.rng)
        self.ctx = None
        self.accepted_ra = {self.base_mac}
        self.sim.register_address(self, self.base_mac)
        self.assoc_state = AssocState.ASSOCIATING
        self._mgmt_sn.reset()
        base, ap = self.base_mac, self.ap_mac
        auth = Frame(FrameType.AUTH, ap, base, ap, sn=self._mgmt_sn.next())
        req = Frame(FrameType.ASSOC_REQ, ap, base, ap, sn=self._mgmt_sn.next(),
                    payload=struct.pack(">Q", self.phase_us))
        self.sim.transmit(self, auth, t)
        self.sim.schedule(t + HANDSHAKE_GAP_US, PRIO_TX, self.sim.transmit, self, req,
                          t + HANDSHAKE_GAP_US)

    def _complete_association(self, t: int, salted: bool) -> None:
        ptk = self.sim.oracle.lookup(self.ap_mac, self.base_mac)
        seed = self.rng.getrandbits(64)
        ctx = RerandContext.create(self.base_mac, ptk, self.params, self.nonce_mode, seed)
        ctx.rotate(self.local_interval(t), salt=salted)
        self.ctx = ctx
        self.epoch += 1
        self.assoc_state = AssocState.ASSOCIATED
        self.accepted_ra = {self.on_air_mac}
        self._last_sn.clear()
        self.sim.on_associated(self, t)
        if self.mode is not Mode.OFF and not self._tick_pending:
            self._tick_pending = True
            nb = self._next_rotation(t)
            self.sim.schedule(nb, PRIO_ROTATE, self.rotation_tick, nb)
        if self.queue and not self._busy:
            self.sim.schedule(t, PRIO_TX, self.kick, t)

    def disconnect(self, t: int, silent: bool = True) -> list:
        if self.assoc_state is not AssocState.ASSOCIATED:
            raise RuntimeError(f"station {self.sta_id} is not associated")
        if not silent:
            ap = self.ap_mac
            self.sim.transmit(self, Frame(FrameType.DISASSOC, ap, self.on_air_mac, ap,
                                          sn=self.ctx.next_sn()), t)
        self.assoc_state = AssocState.DEPARTED
        self.accepted_ra = set()
        return self.abandon_queue()

    # -- rotation ---------------------------------------------------------
    def rotation_tick(self, t: int) -> None:
        self._tick_pending = False
        if self.assoc_state is not AssocState.ASSOCIATED:
            return
        self._tick_pending = True
        nb = self._next_rotation(t)
        self.sim.schedule(nb, PRIO_ROTATE, self.rotation_tick, nb)
        if self.mode is Mode.PER_CONNECTION:
            self._reconnect(t)
            return
        if not self.mode.runtime:
            return
        u = self.local_interval(t)
        if u <= self.ctx.current_u:
            return
        old = self.ctx.current_mac
        new = self.ctx.rotate(u, reset_sn=self.reset_sn, reset_nonce=self.reset_pn)
        self.accepted_ra = {new}
        self.epoch += 1
        # the AP restarts its SN too; stale entries would flag fresh frames
        self._last_sn.clear()
        self.sim.record_rotation(self, old, new, t)

    def _reconnect(self, t: int) -> None:
        old = self.base_mac
        ap = self.ap_mac
        self.sim.transmit(self, Frame(FrameType.DISASSOC, ap, old, ap, sn=self.ctx.next_sn()), t)
        self.assoc_state = AssocState.IDLE
        self.epoch += 1
        # the in-flight exchange, if any, restarts after re-association
        self._token += 1
        self._awaiting = None
        self._busy = False
        self._frame = None
        self.associate(t + HANDSHAKE_GAP_US)
        self.sim.record_rotation(self, old, self.base_mac, t)

    # -- data path --------------------------------------------------------
    def ready(self) -> bool:
        return self.assoc_state is AssocState.ASSOCIATED

    def next_boundary(self, msdu, t):
        if self.mode is Mode.OFF:
            return float("inf")
        return self._next_rotation(t)

    def frame_epoch(self, msdu):
        return self.epoch

    def build_data(self, msdu: Msdu):
        ctx = self.ctx
        sn = ctx.next_sn()
        pn = ctx.next_pn()
        self.sim.note_pn(ctx.ptk, "up", pn, self)
        frame = Frame(FrameType.DATA, self.ap_mac, self.base_mac, self.ap_mac,
                      sn=sn, pn=pn, payload=msdu.payload)
        return frame, self.epoch

    def on_air_frame(self, frame: Frame) -> Frame:
        # SA/TA conversion right before the FCS is computed
        if frame.addr2 == self.base_mac and self.mode.runtime:
            return frame.evolve(addr2=self.ctx.current_mac)
        return frame

    def deliver(self, frame: Frame, t: int) -> None:
        ft = frame.ftype
        if ft is FrameType.ASSOC_RESP:
            if self.assoc_state is AssocState.ASSOCIATING and frame.addr2 == self.ap_mac:
                self._complete_association(t, frame.payload[:1] == b"\x01")
            return
        if ft is not FrameType.DATA:
            return
        if frame.addr2 != self.ap_mac:
            self._drop("foreign")
            return
        # the stack only ever sees the base address
        self.sim.deliver_up(self, frame.addr2, self.base_mac, frame.payload, t)


@dataclass
class _TxState:
    sn: SnState
    nonce: NonceState
    phase_us: int
    epoch: int = 0


class ApNode(Node):
    name = "ap"

    def __init__(self, sim, mac: MacAddress, mode: Mode, params: RerandParams,
                 nonce_mode: NonceMode = NonceMode.CONTROLLED, capacity: int = 512,
                 reset_sn: bool = True, reset_pn: bool = True,
                 inactivity_timeout: float = float("inf"), rng: Optional[random.Random] = None):
        super().__init__(sim, mac)
        self.mode = mode
        self.params = params
        self.nonce_mode = nonce_mode
        self.table = MacTable(capacity)
        self.tx: dict[MacAddress, _TxState] = {}
        self.reset_sn = reset_sn
        self.reset_pn = reset_pn
        self.inactivity_timeout = inactivity_timeout
        self.rng = rng or random.Random(0)
        self._mgmt_sn = SnState()

    def start(self, t: int) -> None:
        if self.mode is Mode.SYNC:
            nb = self.sim.clock.next_boundary(t - 1)
            self.sim.schedule(nb, PRIO_ROTATE, self.rotation_tick, nb)
        if self.inactivity_timeout != float("inf"):
            self.sim.schedule(t + 1_000_000, PRIO_ROTATE, self._expire, t + 1_000_000)

    def _expire(self, t: int) -> None:
        limit = self.inactivity_timeout * 1_000_000
        for rec in self.table.records():
            if t - rec.last_seen > limit:
                self.table.remove(rec.base)
                self.tx.pop(rec.base, None)
                self.sim.note_expired(self, rec.base, t)
        self.sim.schedule(t + 1_000_000, PRIO_ROTATE, self._expire, t + 1_000_000)

    # -- association ------------------------------------------------------
    def admit(self, base: MacAddress, phase_us: int, t: int):
        """AP half of the handshake: key, table entry, per-station Tx state."""
        ptk = self.sim.oracle.issue(self.mac, base)
        u = self.sim.clock.u_at(t, phase_us)
        rec = self.table.insert_station(base, ptk, u, now=t)
        nonce = NonceState(self.nonce_mode, self.params, self.rng.getrandbits(64))
        nonce.reset(u)
        self.tx[base] = _TxState(SnState(), nonce, phase_us)
        if self.mode is Mode.UNSYNC:
            nb = self.sim.clock.next_boundary(t, phase_us)
            self.sim.schedule(nb, PRIO_ROTATE, self._station_tick, base, nb)
        return rec

    def deliver(self, frame: Frame, t: int) -> None:
        ft = frame.ftype
        if ft is FrameType.DATA:
            self._rx_data(frame, t)
        elif ft is FrameType.ASSOC_REQ:
            base = frame.addr2
            phase = struct.unpack(">Q", frame.payload[:8])[0] if len(frame.payload) >= 8 else 0
            rec = self.admit(base, phase, t)
            resp = Frame(FrameType.ASSOC_RESP, base, self.mac, self.mac, sn=self._mgmt_sn.next(),
                         payload=b"\x01" if rec.salted else b"\x00")
            when = t + 2 * SIFS_US + self.sim.airtime(_ACK_LEN)
            # handshake frames go out unconverted
            self.sim.schedule(when, PRIO_TX, self.sim.transmit, self, resp, when)
        elif ft is FrameType.DISASSOC:
            base = self._resolve(frame.addr2)
            if base is not None:
                self.table.remove(base)
                self.tx.pop(base, None)

    def _resolve(self, ta) -> Optional[MacAddress]:
        rec = self.table.lookup(ta)
        return rec.base if rec is not None else None

    def _rx_data(self, frame: Frame, t: int) -> None:
        if self.mode.runtime:
            kind = self.table.classify(frame.addr2)
            if kind != "rerand":
                self._drop({"base": "base_address_rx", "stale": "stale_address",
                            "unknown": "unknown_source"}[kind])
                self.table.rx_convert(frame, t)
                return
            frame = self.table.rx_convert(frame, t)
        else:
            if self.table.by_base(frame.addr2) is None:
                self._drop("unknown_source")
                return
            self.table.touch(frame.addr2, t)
        self.sim.deliver_up(self, frame.addr2, self.mac, frame.payload, t)

    # -- rotation ---------------------------------------------------------
    def _reset_tx(self, st: _TxState, u: int) -> None:
        if self.reset_sn:
            st.sn.reset()
        if self.reset_pn:
            st.nonce.reset(u)
        st.epoch += 1

    def rotation_tick(self, t: int) -> None:
        nb = self.sim.clock.next_boundary(t)
        self.sim.schedule(nb, PRIO_ROTATE, self.rotation_tick, nb)
        if self.mode is not Mode.SYNC:
            return
        u = self.sim.clock.u_at(t)
        if self.table.current_u is not None and u <= self.table.current_u:
            return
        self.table.rotate_all(u)
        for st in self.tx.values():
            self._reset_tx(st, u)

    def _station_tick(self, base: MacAddress, t: int) -> None:
        st = self.tx.get(base)
        if st is None or self.table.by_base(base) is None:
            return
        u = self.sim.clock.u_at(t, st.phase_us)
        if u > self.table.by_base(base).u:
            self.table.rotate_station(base, u)
            self._reset_tx(st, u)
        nb = self.sim.clock.next_boundary(t, st.phase_us)
        self.sim.schedule(nb, PRIO_ROTATE, self._station_tick, base, nb)

    # -- downlink ---------------------------------------------------------
    def ready(self) -> bool:
        return True

    def next_boundary(self, msdu, t):
        st = self.tx.get(msdu.dst)
        if st is None or not self.mode.runtime:
            return float("inf")
        return self.sim.clock.next_boundary(t, st.phase_us)

    def frame_epoch(self, msdu):
        st = self.tx.get(msdu.dst)
        return None if st is None else st.epoch

    def build_data(self, msdu: Msdu):
        st = self.tx.get(msdu.dst)
        if st is None:
            frame = Frame(FrameType.DATA, msdu.dst, self.mac, self.mac, payload=msdu.payload)
            return frame, None
        pn = st.nonce.next()
        rec = self.table.by_base(msdu.dst)
        self.sim.note_pn(rec.ptk, "down", pn, self)
        frame = Frame(FrameType.DATA, msdu.dst, self.mac, self.mac, sn=st.sn.next(), pn=pn,
                      payload=msdu.payload)
        return frame, st.epoch

    def on_air_frame(self, frame: Frame) -> Frame:
        if self.mode.runtime:
            return self.table.tx_convert(frame)
        return frame
