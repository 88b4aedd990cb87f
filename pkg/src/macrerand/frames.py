"""Simplified 802.11 frames as exchanged over the simulated air.

Layout (all multi-octet integers little-endian)::

    FC(2) Duration(2) Addr1(6)                         Ack, Cts
    FC(2) Duration(2) Addr1(6) Addr2(6)                Rts
    FC(2) Duration(2) Addr1 Addr2 Addr3 SeqCtl(2)      management
    ... SeqCtl(2) CCMP(8)                              Data
    ... payload FCS(4)

The FCS is always computed last, over the final header octets.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

MAX_SN = 1 << 12
MAX_FRAG = 1 << 4
MAX_PN = 1 << 48

_HDR = struct.Struct("<BBH6s")       # fc, flags, duration, addr1
_SEQ = struct.Struct("<H")
_FCS = struct.Struct("<I")
_EXT_IV = 0x20


class FrameError(ValueError):
    pass


class EncodeError(FrameError):
    def __init__(self, field_name: str, value):
        super().__init__(f"field {field_name!r} out of range: {value!r}")
        self.field = field_name


class TruncatedFrame(FrameError):
    pass


class BadFcs(FrameError):
    pass


class UnknownType(FrameError):
    pass


class MalformedFrame(FrameError):
    pass


class MacAddress(bytes):
    """Six-octet link-layer address.

    Subclasses ``bytes`` so addresses hash and compare at bytes speed and can
    be used directly as table keys.
    """

    def __new__(cls, value):
        if isinstance(value, MacAddress):
            return value
        if isinstance(value, str):
            text = value.replace(":", "").replace("-", "")
            value = bytes.fromhex(text)
        value = bytes(value)
        if len(value) != 6:
            raise ValueError(f"MAC address needs 6 octets, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def random(cls, rng) -> "MacAddress":
        """Random locally administered unicast address drawn from ``rng``."""
        octets = bytearray(rng.getrandbits(48).to_bytes(6, "big"))
        octets[0] = (octets[0] & 0xFE) | 0x02
        return cls(octets)

    @property
    def is_broadcast(self) -> bool:
        return self == BROADCAST

    @property
    def is_multicast(self) -> bool:
        return bool(self[0] & 0x01)

    @property
    def is_local(self) -> bool:
        return bool(self[0] & 0x02)

    @property
    def is_randomized(self) -> bool:
        """Unicast with the locally-administered bit set."""
        return (self[0] & 0x03) == 0x02

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self)

    def __repr__(self) -> str:
        return f"MacAddress('{self}')"


BROADCAST = MacAddress(b"\xff" * 6)


class FrameType(enum.Enum):
    ASSOC_REQ = 0x00
    ASSOC_RESP = 0x10
    BEACON = 0x80
    DISASSOC = 0xA0
    AUTH = 0xB0
    DEAUTH = 0xC0
    DATA = 0x08
    RTS = 0xB4
    CTS = 0xC4
    ACK = 0xD4

    @property
    def is_control(self) -> bool:
        return self._value_ in _CONTROL_VALUES

    @property
    def is_management(self) -> bool:
        return self in _MANAGEMENT


_CONTROL = frozenset({FrameType.ACK, FrameType.CTS, FrameType.RTS})
_MANAGEMENT = frozenset({
    FrameType.ASSOC_REQ, FrameType.ASSOC_RESP, FrameType.BEACON,
    FrameType.DISASSOC, FrameType.AUTH, FrameType.DEAUTH,
})
_CONTROL_VALUES = frozenset(t.value for t in _CONTROL)
_BY_VALUE = {t.value: t for t in FrameType}

# on-air length of each type with an empty payload, FCS included
MIN_LENGTH = {t: 28 for t in _MANAGEMENT}
MIN_LENGTH.update({FrameType.ACK: 14, FrameType.CTS: 14, FrameType.RTS: 20,
                   FrameType.DATA: 36})


@dataclass(frozen=True)
class Frame:
    ftype: FrameType
    addr1: MacAddress
    addr2: Optional[MacAddress] = None
    addr3: Optional[MacAddress] = None
    duration: int = 0
    sn: int = 0
    frag: int = 0
    pn: int = 0
    key_id: int = 0
    payload: bytes = b""
    # populated by decode_frame; ignored by encode_frame and by equality
    fcs: Optional[int] = field(default=None, compare=False)

    @property
    def ta(self) -> Optional[MacAddress]:
        return self.addr2

    @property
    def ra(self) -> MacAddress:
        return self.addr1

    def evolve(self, **changes) -> "Frame":
        """Cheaper ``dataclasses.replace``; drops any carried FCS."""
        new = object.__new__(Frame)
        d = new.__dict__
        d.update(self.__dict__)
        d.update(changes)
        d["fcs"] = None
        return new

    def addresses(self) -> tuple:
        return tuple(a for a in (self.addr1, self.addr2, self.addr3) if a is not None)


def compute_fcs(data: bytes) -> int:
    """IEEE CRC-32 (reflected 0x04C11DB7, init and final XOR 0xFFFFFFFF)."""
    return zlib.crc32(data) & 0xFFFFFFFF


def pack_seq_ctl(sn: int, frag: int) -> int:
    return (sn << 4) | frag


def unpack_seq_ctl(value: int) -> tuple[int, int]:
    return value >> 4, value & 0x0F


def pack_ccmp(pn: int, key_id: int = 0) -> bytes:
    p = pn.to_bytes(6, "little")
    return bytes((p[0], p[1], 0x00, _EXT_IV | (key_id << 6), p[2], p[3], p[4], p[5]))


def unpack_ccmp(hdr: bytes) -> tuple[int, int]:
    if hdr[2] != 0 or hdr[3] & 0x3F != _EXT_IV:
        raise MalformedFrame("CCMP header reserved bits set or ExtIV missing")
    pn = int.from_bytes(bytes((hdr[0], hdr[1], hdr[4], hdr[5], hdr[6], hdr[7])), "little")
    return pn, hdr[3] >> 6


def _check(frame: Frame) -> None:
    ft = frame.ftype
    if not 0 <= frame.duration < 1 << 16:
        raise EncodeError("duration", frame.duration)
    if not 0 <= frame.sn < MAX_SN:
        raise EncodeError("sn", frame.sn)
    if not 0 <= frame.frag < MAX_FRAG:
        raise EncodeError("frag", frame.frag)
    if not 0 <= frame.pn < MAX_PN:
        raise EncodeError("pn", frame.pn)
    if not 0 <= frame.key_id < 4:
        raise EncodeError("key_id", frame.key_id)
    if ft.is_control:
        if frame.payload:
            raise EncodeError("payload", "control frames carry no body")
        if ft is FrameType.RTS and frame.addr2 is None:
            raise EncodeError("addr2", None)
        return
    if frame.addr2 is None:
        raise EncodeError("addr2", None)
    if frame.addr3 is None:
        raise EncodeError("addr3", None)


def encode_frame(frame: Frame) -> bytes:
    _check(frame)
    ft = frame.ftype
    out = bytearray(_HDR.pack(ft.value, 0, frame.duration, frame.addr1))
    if ft is FrameType.RTS:
        out += frame.addr2
    elif not ft.is_control:
        out += frame.addr2
        out += frame.addr3
        out += _SEQ.pack(pack_seq_ctl(frame.sn, frame.frag))
        if ft is FrameType.DATA:
            out += pack_ccmp(frame.pn, frame.key_id)
        out += frame.payload
    out += _FCS.pack(compute_fcs(out))
    return bytes(out)


def decode_frame(data: bytes) -> Frame:
    if len(data) < MIN_LENGTH[FrameType.ACK]:
        raise TruncatedFrame(f"{len(data)} octets is below any frame minimum")
    body, (fcs,) = data[:-4], _FCS.unpack_from(data, len(data) - 4)
    if compute_fcs(body) != fcs:
        raise BadFcs(f"FCS mismatch (carried {fcs:#010x})")
    fc, flags, duration, a1 = _HDR.unpack_from(body)
    ft = _BY_VALUE.get(fc)
    if ft is None:
        raise UnknownType(f"frame control {fc:#04x}")
    if flags:
        raise MalformedFrame(f"unsupported flags {flags:#04x}")
    if len(data) < MIN_LENGTH[ft]:
        raise TruncatedFrame(f"{ft.name} needs {MIN_LENGTH[ft]} octets, got {len(data)}")
    addr1 = MacAddress(a1)
    if ft is FrameType.ACK or ft is FrameType.CTS:
        if len(data) != MIN_LENGTH[ft]:
            raise MalformedFrame(f"{ft.name} with trailing octets")
        return Frame(ft, addr1, duration=duration, fcs=fcs)
    if ft is FrameType.RTS:
        if len(data) != MIN_LENGTH[ft]:
            raise MalformedFrame("RTS with trailing octets")
        return Frame(ft, addr1, MacAddress(body[10:16]), duration=duration, fcs=fcs)
    addr2 = MacAddress(body[10:16])
    addr3 = MacAddress(body[16:22])
    sn, frag = unpack_seq_ctl(_SEQ.unpack_from(body, 22)[0])
    pn = key_id = 0
    pos = 24
    if ft is FrameType.DATA:
        pn, key_id = unpack_ccmp(body[24:32])
        pos = 32
    return Frame(ft, addr1, addr2, addr3, duration=duration, sn=sn, frag=frag,
                 pn=pn, key_id=key_id, payload=bytes(body[pos:]), fcs=fcs)
