"""Controller-side sampling and framing path.

The mux walks the ten channels at 5 kHz, so ten consecutive slots make one
500 Hz frame.  Frames travel as fixed 30-byte packets:

    0xB5 0x01 | seq u16 LE | timestamp_us u32 LE | 10 x count u16 LE | CRC-16 LE

The CRC is CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final
xor) over all preceding bytes.  The decoder scans for the magic pair,
validates, and resynchronizes one byte at a time after corruption.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .frames import ADC_MAX, ADC_REF_V, N_CHANNELS, RawFrame

MAGIC = b"\xb5\x01"
PACKET_SIZE = 30
SLOTS_PER_FRAME = N_CHANNELS

_HEADER = struct.Struct("<2sHI")
_COUNTS = struct.Struct("<10H")
_CRC = struct.Struct("<H")


class FramingError(ValueError):
    pass


def quantize(volts) -> np.ndarray:
    """12-bit ADC counts at the 3.3 V reference; clamps at the rails."""
    v = np.asarray(volts, dtype=float)
    counts = np.floor(v / ADC_REF_V * ADC_MAX + 0.5).astype(np.int64)
    return np.clip(counts, 0, ADC_MAX)


def dequantize(counts) -> np.ndarray:
    return np.asarray(counts, dtype=float) * (ADC_REF_V / ADC_MAX)


def frames_from_slots(
    slot_voltages: np.ndarray,
    slot_rate_hz: float = 5000.0,
    start_seq: int = 0,
    start_timestamp_us: int = 0,
) -> list[RawFrame]:
    """Frame a raw slot stream: exactly floor(len/10) frames come out.

    Slot s belongs to channel ``s % 10``; a frame's timestamp is its first
    slot's time.  Leftover slots (an incomplete trailing frame) are dropped.
    """
    slots = np.asarray(slot_voltages, dtype=float)
    n_frames = len(slots) // SLOTS_PER_FRAME
    counts = quantize(slots[: n_frames * SLOTS_PER_FRAME]).reshape(n_frames, SLOTS_PER_FRAME)
    frame_period_us = SLOTS_PER_FRAME * 1_000_000.0 / slot_rate_hz
    return [
        RawFrame(
            seq=(start_seq + i) & 0xFFFF,
            timestamp_us=int(start_timestamp_us + round(i * frame_period_us)),
            channels=tuple(int(c) for c in counts[i]),
        )
        for i in range(n_frames)
    ]


def crc16_ccitt_false(data: bytes, crc: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE; check value over b"123456789" is 0x29B1."""
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def encode_frame(frame: RawFrame) -> bytes:
    body = _HEADER.pack(MAGIC, frame.seq, frame.timestamp_us & 0xFFFFFFFF)
    body += _COUNTS.pack(*frame.channels)
    return body + _CRC.pack(crc16_ccitt_false(body))


def decode_frame(buf: bytes) -> RawFrame:
    """Strict single-packet decode; raises on anything malformed."""
    if len(buf) < PACKET_SIZE:
        raise FramingError(f"need {PACKET_SIZE} bytes, got {len(buf)}")
    packet = bytes(buf[:PACKET_SIZE])
    if packet[:2] != MAGIC:
        raise FramingError("bad magic")
    (expected,) = _CRC.unpack(packet[-2:])
    if crc16_ccitt_false(packet[:-2]) != expected:
        raise FramingError("CRC mismatch")
    _, seq, timestamp = _HEADER.unpack(packet[:8])
    counts = _COUNTS.unpack(packet[8:-2])
    if any(c > ADC_MAX for c in counts):
        raise FramingError("count outside 12-bit range")
    return RawFrame(seq=seq, timestamp_us=timestamp, channels=counts)


@dataclass
class StreamDecoder:
    """Incremental packet scanner with resynchronization.

    Feed arbitrary byte chunks; intact packets come out in order.  A failed
    CRC drops the candidate, advances one byte past its magic and rescans,
    so garbage between packets only costs the bytes it occupies.
    """

    crc_errors: int = 0
    bytes_skipped: int = 0
    seq_gaps: int = 0
    _buf: bytearray = field(default_factory=bytearray)
    _last_seq: int | None = None

    def feed(self, chunk: bytes) -> list[RawFrame]:
        self._buf.extend(chunk)
        frames: list[RawFrame] = []
        while True:
            start = self._buf.find(MAGIC)
            if start < 0:
                # keep a possible split first magic byte
                keep = 1 if self._buf[-1:] == MAGIC[:1] else 0
                self.bytes_skipped += len(self._buf) - keep
                del self._buf[: len(self._buf) - keep]
                return frames
            if start > 0:
                self.bytes_skipped += start
                del self._buf[:start]
            if len(self._buf) < PACKET_SIZE:
                return frames
            try:
                frame = decode_frame(bytes(self._buf[:PACKET_SIZE]))
            except FramingError:
                self.crc_errors += 1
                self.bytes_skipped += 1
                del self._buf[:1]
                continue
            del self._buf[:PACKET_SIZE]
            if self._last_seq is not None:
                expected = (self._last_seq + 1) & 0xFFFF
                if frame.seq != expected:
                    self.seq_gaps += 1
            self._last_seq = frame.seq
            frames.append(frame)


class DropOldestQueue:
    """Bounded frame queue between producer and consumer threads.

    When full, the oldest entry is discarded and counted; whole items only,
    so consumers never see a torn frame.
    """

    def __init__(self, maxlen: int = 1024):
        import collections
        import threading

        self._deque = collections.deque(maxlen=maxlen)
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self.dropped = 0
        self._closed = False

    def put(self, item) -> None:
        with self._ready:
            if len(self._deque) == self._deque.maxlen:
                self.dropped += 1
            self._deque.append(item)
            self._ready.notify()

    def get(self, timeout: float | None = None):
        with self._ready:
            if not self._deque and not self._closed:
                self._ready.wait(timeout)
            if self._deque:
                return self._deque.popleft()
            return None

    def close(self) -> None:
        with self._ready:
            self._closed = True
            self._ready.notify_all()
