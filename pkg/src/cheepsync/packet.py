"""Bit-exact codec for the CheepSync non-connectable advertising frame.

Frame layout (32 octets total, nRF Enhanced ShockBurst constrained):

    offset  size  field
    0       1     preamble 0xAA
    1       4     access address 0x8E89BED6 (little-endian on the wire)
    5       1     header: PDU type 0b0010 in the low nibble, RFU/TxAdd/RxAdd 0
    6       1     header: payload length in the low 6 bits (22 here)
    7       6     AdvA, device address least-significant octet first
    13      3     AD: [0x02, 0x01, flags]
    16      7     AD: [0x06, 0x08, name x 5]          (shortened local name)
    23      6     AD: [0x05, 0xFF, counter LE x 3, prev_tx_delay]
    29      3     CRC-24 over the PDU (offsets 5..28)

The counter is a 24-bit interval count, little-endian; prev_tx_delay is the
measured send+access+transmission delay of the previous packet in whole
microseconds, saturating at 255.  The codec operates on the de-whitened
link-layer view: on-air whitening is not applied, so captures from a real
sniffer must be de-whitened before comparison.  No manufacturer company
identifier is emitted (the field is fully consumed by counter + delay).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from cheepsync import _core

PREAMBLE = 0xAA
ACCESS_ADDRESS = 0x8E89BED6
ACCESS_ADDRESS_WIRE = bytes.fromhex("d6be898e")
PDU_TYPE_ADV_NONCONN_IND = 0b0010
AD_TYPE_FLAGS = 0x01
AD_TYPE_SHORT_NAME = 0x08
AD_TYPE_MANUFACTURER = 0xFF
DEFAULT_FLAGS = 0x06  # LE General Discoverable + BR/EDR Not Supported

COUNTER_BITS = 24
MAX_COUNTER = (1 << COUNTER_BITS) - 1
NAME_LEN = 5
ADV_DATA_LEN = 16
PAYLOAD_LEN = 6 + ADV_DATA_LEN  # AdvA + AdvData = 22
FRAME_OCTETS = 1 + 4 + 2 + PAYLOAD_LEN + 3  # 32

MIN_PDU_LEN = 2
MAX_PDU_LEN = 32


class FrameError(ValueError):
    """Base class for codec errors."""


class InvalidPduLength(FrameError):
    pass


class BadPreamble(FrameError):
    pass


class BadAccessAddress(FrameError):
    pass


class UnsupportedPduType(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class ChecksumMismatch(FrameError):
    pass


class MalformedAdStructure(FrameError):
    pass


class MissingManufacturerData(FrameError):
    pass


class MissingMandatoryAd(FrameError):
    pass


def crc24(pdu: bytes) -> bytes:
    """CRC-24 of a PDU, as the 3 octets appended to the frame.

    Polynomial x^24+x^10+x^9+x^6+x^4+x^3+x+1, register seeded with 0x555555,
    data clocked in LSB-first per octet.  The output octets follow the
    advertising-channel transmission order: each register octet (bits 23..16,
    15..8, 7..0) is emitted bit-reversed.
    """
    if not MIN_PDU_LEN <= len(pdu) <= MAX_PDU_LEN:
        raise InvalidPduLength(f"PDU must be {MIN_PDU_LEN}-{MAX_PDU_LEN} octets, got {len(pdu)}")
    reg = _core.crc24_register(bytes(pdu))
    rev = _core.REV8
    return bytes((rev[(reg >> 16) & 0xFF], rev[(reg >> 8) & 0xFF], rev[reg & 0xFF]))


def crc24_verify(pdu: bytes, crc: bytes) -> bool:
    return crc24(pdu) == bytes(crc)


@dataclass
class AdvertisementPayload:
    """The CheepSync application payload carried in the AD structures."""

    ts_counter: int
    prev_tx_delay: int = 0
    short_name: str = "CHEEP"
    flags: int = DEFAULT_FLAGS

    def __post_init__(self) -> None:
        if not 0 <= self.ts_counter <= MAX_COUNTER:
            raise ValueError(f"ts_counter must fit 24 bits, got {self.ts_counter}")
        if not 0 <= self.prev_tx_delay <= 255:
            raise ValueError(f"prev_tx_delay must fit 8 bits, got {self.prev_tx_delay}")
        if len(self.short_name) != NAME_LEN or not all(
            0x20 <= ord(c) <= 0x7E for c in self.short_name
        ):
            raise ValueError("short_name must be exactly 5 printable ASCII characters")
        if not 0 <= self.flags <= 255:
            raise ValueError(f"flags must fit 8 bits, got {self.flags}")


@dataclass
class AdvertisingFrame:
    """A decoded ADV_NONCONN_IND frame (CRC already verified)."""

    preamble: int
    access_address: int
    pdu_type: int
    tx_add: int
    rx_add: int
    length: int
    adv_a: bytes  # canonical order, most-significant octet first
    ad_structures: list = field(default_factory=list)  # [(ad_type, data), ...]
    crc: bytes = b"\x00\x00\x00"


def build_frame(payload: AdvertisementPayload, adv_a: bytes) -> bytes:
    """Assemble the full frame for a payload and 6-octet device address."""
    adv_a = bytes(adv_a)
    if len(adv_a) != 6:
        raise ValueError(f"adv_a must be 6 octets, got {len(adv_a)}")
    pdu = bytearray()
    pdu.append(PDU_TYPE_ADV_NONCONN_IND)  # RFU/TxAdd/RxAdd zero
    pdu.append(PAYLOAD_LEN)
    pdu += adv_a[::-1]
    pdu += bytes((0x02, AD_TYPE_FLAGS, payload.flags))
    pdu += bytes((0x06, AD_TYPE_SHORT_NAME)) + payload.short_name.encode("ascii")
    pdu += bytes((0x05, AD_TYPE_MANUFACTURER))
    pdu += payload.ts_counter.to_bytes(3, "little")
    pdu.append(payload.prev_tx_delay)
    frame = bytearray((PREAMBLE,))
    frame += ACCESS_ADDRESS_WIRE
    frame += pdu
    frame += crc24(bytes(pdu))
    return bytes(frame)


def parse_frame(data: bytes) -> AdvertisingFrame:
    """Decode and CRC-check a frame; every malformed input raises a typed error."""
    data = bytes(data)
    if len(data) < 1 or data[0] != PREAMBLE:
        raise BadPreamble("frame does not start with 0xAA")
    if len(data) < 5 or data[1:5] != ACCESS_ADDRESS_WIRE:
        raise BadAccessAddress("access address is not 0x8E89BED6")
    if len(data) < 7:
        raise LengthMismatch("frame truncated before the PDU header")
    hdr0, hdr1 = data[5], data[6]
    pdu_type = hdr0 & 0x0F
    if pdu_type != PDU_TYPE_ADV_NONCONN_IND:
        raise UnsupportedPduType(f"PDU type {pdu_type:#06b} is not ADV_NONCONN_IND")
    length = hdr1 & 0x3F
    if length > MAX_PDU_LEN - 2:
        raise LengthMismatch(f"payload length {length} exceeds the 32-octet PDU limit")
    if len(data) != 7 + length + 3:
        raise LengthMismatch(
            f"length field says {length} payload octets, frame has {len(data) - 10}"
        )
    pdu = data[5 : 7 + length]
    crc = data[7 + length :]
    if crc24(pdu) != crc:
        raise ChecksumMismatch("CRC-24 check failed")
    if length < 6:
        raise MalformedAdStructure("payload too short for AdvA")
    adv_a = data[7:13][::-1]
    adv_data = data[13 : 7 + length]
    ads = []
    i = 0
    while i < len(adv_data):
        ad_len = adv_data[i]
        if ad_len == 0:
            # non-significant part: trailing zero padding is tolerated
            if any(adv_data[i:]):
                raise MalformedAdStructure("zero-length AD followed by non-zero octets")
            break
        if i + 1 + ad_len > len(adv_data):
            raise MalformedAdStructure("AD structure overruns AdvData")
        ads.append((adv_data[i + 1], adv_data[i + 2 : i + 1 + ad_len]))
        i += 1 + ad_len
    return AdvertisingFrame(
        preamble=data[0],
        access_address=ACCESS_ADDRESS,
        pdu_type=pdu_type,
        tx_add=(hdr0 >> 6) & 1,
        rx_add=(hdr0 >> 7) & 1,
        length=length,
        adv_a=adv_a,
        ad_structures=ads,
        crc=crc,
    )


def extract_payload(frame: AdvertisingFrame) -> AdvertisementPayload:
    """Recover the CheepSync payload from a decoded frame.

    A manufacturer AD of 4 data octets carries the full 24-bit counter plus
    the delay octet; 3 data octets (Table-style length 4) leaves the delay
    absent and is reported as missing manufacturer data.
    """
    flags = None
    name = None
    counter = None
    delay = None
    for ad_type, data in frame.ad_structures:
        if ad_type == AD_TYPE_FLAGS and flags is None and len(data) >= 1:
            flags = data[0]
        elif ad_type == AD_TYPE_SHORT_NAME and name is None:
            name = data
        elif ad_type == AD_TYPE_MANUFACTURER and counter is None:
            if len(data) == 4:
                counter = int.from_bytes(data[:3], "little")
                delay = data[3]
            elif len(data) == 3:
                counter = int.from_bytes(data, "little")
    if counter is None or delay is None:
        raise MissingManufacturerData("no complete counter+delay manufacturer AD")
    if flags is None:
        raise MissingMandatoryAd("flags AD absent")
    if name is None:
        raise MissingMandatoryAd("shortened local name AD absent")
    if len(name) != NAME_LEN or not all(0x20 <= c <= 0x7E for c in name):
        raise MissingMandatoryAd("short name is not 5 printable ASCII octets")
    return AdvertisementPayload(
        ts_counter=counter,
        prev_tx_delay=delay,
        short_name=name.decode("ascii"),
        flags=flags,
    )


def frame_to_hex(frame: bytes) -> str:
    """Lowercase hex, two digits per octet, no separators (the CLI format)."""
    return bytes(frame).hex()


def frame_from_hex(text: str) -> bytes:
    text = text.strip()
    if len(text) % 2:
        raise ValueError("hex string must have an even number of digits")
    return bytes.fromhex(text)
