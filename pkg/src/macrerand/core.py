"""Per-interval address derivation and the SN / PN reset machinery."""

from __future__ import annotations

import enum
import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

from .frames import MAX_PN, MAX_SN, MacAddress

PN_BITS = 48
SALT_BIT = 1 << 63


class ParameterError(ValueError):
    pass


class SizingError(ParameterError):
    pass


class OrderingError(RuntimeError):
    pass


class NonceSpaceExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class Ptk:
    secret: bytes

    def __post_init__(self):
        if len(self.secret) != 32:
            raise ParameterError("PTK must be 32 octets")

    @classmethod
    def random(cls, rng: random.Random) -> "Ptk":
        return cls(rng.getrandbits(256).to_bytes(32, "big"))

    def __repr__(self) -> str:
        return "Ptk(<secret>)"


@dataclass(frozen=True)
class RerandParams:
    T: int
    h: int
    l: int

    def __post_init__(self):
        if self.T < 1:
            raise ParameterError(f"T must be >= 1 s, got {self.T}")
        if self.h + self.l != PN_BITS:
            raise ParameterError(f"h + l must be 48, got {self.h} + {self.l}")
        if not 1 <= self.h <= 47:
            raise ParameterError(f"h must lie in [1, 47], got {self.h}")


def interval_index(t_epoch, T) -> int:
    if T <= 0:
        raise ParameterError("T must be positive")
    return int(t_epoch // T)


def derive_rerand_mac(base: MacAddress, ptk: Ptk, u: int) -> MacAddress:
    """SHA-256(base || PTK || u as 8-octet big-endian), first six octets,
    forced unicast and locally administered."""
    digest = hashlib.sha256(bytes(base) + ptk.secret + u.to_bytes(8, "big")).digest()
    octets = bytearray(digest[:6])
    octets[0] = (octets[0] & 0xFE) | 0x02
    return MacAddress(octets)


def salted(u: int) -> int:
    """Interval index used for the single retry after an address collision."""
    return u ^ SALT_BIT


def frames_per_interval(bitrate: int, T: int, frame_len: int) -> int:
    return -(-(bitrate * T) // frame_len)


def choose_pn_split(bitrate: int, T: int, frame_len: int) -> RerandParams:
    """Smallest PN-L width whose space covers every frame one interval can
    carry at ``bitrate`` (``frame_len`` in bits). Integer-only."""
    if bitrate <= 0 or T <= 0 or frame_len <= 0:
        raise ParameterError("bitrate, T and frame_len must be positive")
    count = frames_per_interval(bitrate, T, frame_len)
    l = max(1, (count - 1).bit_length())
    if l >= PN_BITS:
        raise SizingError(f"{count} frames per interval exceed the nonce space")
    return RerandParams(T, PN_BITS - l, l)


def wrap_interval(params: RerandParams) -> int:
    return (1 << params.h) * params.T


class NonceMode(enum.Enum):
    CONTROLLED = "controlled"
    RANDOM = "random"
    NAIVE_ZERO = "naive_zero"


@dataclass
class SnState:
    next_sn: int = 0

    def next(self) -> int:
        sn = self.next_sn
        self.next_sn = (sn + 1) % MAX_SN
        return sn

    def reset(self) -> None:
        self.next_sn = 0


@dataclass
class NonceState:
    """PN counter for one transmitter under one PTK.

    In controlled mode the PN is ``pn_high << l | pn_low``. The other modes
    keep the whole 48-bit counter in ``pn_low``.
    """

    mode: NonceMode
    params: RerandParams
    rng_seed: int = 0
    pn_high: int = 0
    pn_low: int = 0
    avoid_reuse: bool = False
    primed: bool = False
    _used: list = field(default_factory=list, repr=False)

    def reset(self, u: int) -> None:
        if self.mode is NonceMode.CONTROLLED:
            self.pn_high = u % (1 << self.params.h)
            self.pn_low = 0
        elif self.mode is NonceMode.RANDOM:
            self.pn_high = 0
            self.pn_low = self._draw(u)
        else:
            self.pn_high = 0
            self.pn_low = 0
        self.primed = True

    def _draw(self, u: int) -> int:
        rng = random.Random(f"{self.rng_seed}:{u}")
        span = 1 << self.params.l
        while True:
            start = rng.getrandbits(PN_BITS)
            # redraw when the coming interval could walk into a range this
            # station already used
            if not self.avoid_reuse or not any(
                    start < end and s < start + span for s, end in self._used):
                break
        if self.avoid_reuse:
            self._used.append((start, start + span))
        return start

    def next(self) -> int:
        if not self.primed:
            raise RuntimeError("nonce state used before its first reset")
        if self.mode is NonceMode.CONTROLLED:
            if self.pn_low >= 1 << self.params.l:
                raise NonceSpaceExhausted(
                    f"PN-L exhausted after {self.pn_low} frames (l={self.params.l})")
            pn = (self.pn_high << self.params.l) | self.pn_low
            self.pn_low += 1
            return pn
        pn = self.pn_low
        self.pn_low = (pn + 1) % MAX_PN
        return pn


@dataclass
class RerandContext:
    """Station-side state for one association."""

    base_mac: MacAddress
    ptk: Ptk
    params: RerandParams
    nonce: NonceState
    sn: SnState = field(default_factory=SnState)
    current_u: Optional[int] = None
    current_mac: Optional[MacAddress] = None
    salted: bool = False

    @classmethod
    def create(cls, base_mac, ptk, params, mode=NonceMode.CONTROLLED, rng_seed=0):
        return cls(MacAddress(base_mac), ptk, params, NonceState(mode, params, rng_seed))

    def rotate(self, u: int, *, reset_sn: bool = True, reset_nonce: bool = True,
               salt: bool = False) -> MacAddress:
        """Move to interval ``u``; address, SN and PN change together."""
        if self.current_u is not None and u <= self.current_u:
            raise OrderingError(f"interval {u} does not follow {self.current_u}")
        mac = derive_rerand_mac(self.base_mac, self.ptk, salted(u) if salt else u)
        if reset_sn:
            self.sn.reset()
        if reset_nonce or not self.nonce.primed:
            self.nonce.reset(u)
        self.current_u = u
        self.current_mac = mac
        self.salted = salt
        return mac

    def next_sn(self) -> int:
        return self.sn.next()

    def next_pn(self) -> int:
        return self.nonce.next()
