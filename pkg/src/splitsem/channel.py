"""Bit transport: frame layout, binary symmetric channel, QPSK SNR axis.

Frame wire format (all multi-byte fields big-endian):

    offset 0   version          u8   (currently 1)
    offset 1   split index s    u8
    offset 2   bits/element q   u8
    offset 3   mask_id          u16
    offset 5   payload_bit_len  u32
    offset 9   payload          ceil(payload_bit_len / 8) bytes

Payload bits are element-major, MSB first within each q-bit word, and
zero-padded to the byte boundary.  The header is delivered out of band
(error-free): the decoder cannot even parse the payload without s, q,
and the mask, so a reliably delivered control channel is assumed.

BSC randomness is counter-based so corruption is reproducible from
``(seed, frame_index)`` alone: bit j of frame i flips iff the j-th
64-bit output word of Philox4x64-10 with key ``(seed, 0)`` and counter
``(0, 0, 0, i)`` is below ``floor(ber * 2**64)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import BandwidthExceededError, FrameFormatError

FRAME_VERSION = 1
_HEADER = struct.Struct(">BBBHI")
HEADER_BYTES = _HEADER.size


@dataclass
class ChannelSpec:
    ber: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ber <= 0.5:
            raise ValueError(f"ber must be in [0, 0.5], got {self.ber}")


@dataclass
class BitFrame:
    split: int
    bits_per_element: int
    mask_id: int
    payload_bit_len: int
    payload: bytes
    version: int = FRAME_VERSION

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            self.version,
            self.split,
            self.bits_per_element,
            self.mask_id,
            self.payload_bit_len,
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "BitFrame":
        if len(buf) < HEADER_BYTES:
            raise FrameFormatError(f"frame shorter than header: {len(buf)} bytes")
        version, split, q, mask, bit_len = _HEADER.unpack_from(buf)
        payload = buf[HEADER_BYTES:]
        frame = cls(
            split=split,
            bits_per_element=q,
            mask_id=mask,
            payload_bit_len=bit_len,
            payload=payload,
            version=version,
        )
        _validate(frame)
        return frame


def _validate(frame: BitFrame) -> None:
    if frame.version != FRAME_VERSION:
        raise FrameFormatError(f"unknown frame version {frame.version}")
    expected = (frame.payload_bit_len + 7) // 8
    if len(frame.payload) != expected:
        raise FrameFormatError(
            f"payload is {len(frame.payload)} bytes, expected {expected} "
            f"for {frame.payload_bit_len} bits"
        )


def pack(
    words: np.ndarray,
    split: int,
    mask_id: int = 0,
    b_max: int | None = None,
) -> BitFrame:
    """Frame a (n, q) array of bit words.

    Raises BandwidthExceededError when a bit budget is given and the
    payload would overflow it.
    """
    words = np.asarray(words, dtype=np.uint8)
    if words.ndim != 2:
        raise FrameFormatError(f"expected (n, q) bit words, got shape {words.shape}")
    n, q = words.shape
    bit_len = n * q
    if b_max is not None and bit_len > b_max:
        raise BandwidthExceededError(f"payload {bit_len} bits exceeds B_max={b_max}")
    payload = np.packbits(words.ravel()).tobytes() if bit_len else b""
    return BitFrame(
        split=split,
        bits_per_element=q,
        mask_id=mask_id,
        payload_bit_len=bit_len,
        payload=payload,
    )


def unpack(frame: BitFrame) -> np.ndarray:
    """Recover the (n, q) bit words; padding bits are ignored."""
    _validate(frame)
    q = frame.bits_per_element
    if q < 1:
        raise FrameFormatError(f"invalid bits/element {q}")
    if frame.payload_bit_len % q:
        raise FrameFormatError(
            f"payload of {frame.payload_bit_len} bits is not a multiple of q={q}"
        )
    if frame.payload_bit_len == 0:
        return np.zeros((0, q), dtype=np.uint8)
    bits = np.unpackbits(np.frombuffer(frame.payload, dtype=np.uint8))
    return bits[: frame.payload_bit_len].reshape(-1, q)


def flip_threshold(ber: float) -> int:
    """Integer flip threshold: a 64-bit word below it marks a flipped bit."""
    return int(ber * 2.0**64)


def flip_mask(ber: float, seed: int, frame_indices: np.ndarray, nbits: int):
    """(frames, nbits) uint8 flip indicators from the Philox stream."""
    words = _kernels.philox_words(seed, np.asarray(frame_indices), nbits)
    return (words < np.uint64(flip_threshold(ber))).astype(np.uint8)


def bsc_transmit(frame: BitFrame, ch: ChannelSpec, frame_index: int = 0) -> BitFrame:
    """Flip each payload bit independently with probability ber.

    Header fields ride out of band and are never corrupted.  Padding
    bits stay zero so repeated transmission is layout-stable.
    """
    _validate(frame)
    nbits = frame.payload_bit_len
    if nbits == 0 or ch.ber == 0.0:
        return replace(frame)
    bits = np.unpackbits(np.frombuffer(frame.payload, dtype=np.uint8))
    flips = flip_mask(ch.ber, ch.seed, np.array([frame_index]), nbits)[0]
    bits[:nbits] ^= flips
    return replace(frame, payload=np.packbits(bits).tobytes())


def qfunc(x: float) -> float:
    """Gaussian tail probability Q(x) = erfc(x / sqrt(2)) / 2."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def qfunc_inv(p: float) -> float:
    """Invert the Gaussian tail by bisection to 1e-12 on the argument."""
    if not 0.0 < p < 0.5:
        raise ValueError(f"Q-inverse defined on (0, 0.5), got {p}")
    lo, hi = 0.0, 40.0
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if qfunc(mid) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ber_to_snr_db(ber: float) -> float:
    """QPSK-over-AWGN equivalent SNR for a target bit error rate.

    Per-bit QPSK error is Q(sqrt(2 * snr)), so snr = Q^{-1}(ber)^2 / 2.
    """
    if not 0.0 < ber < 0.5:
        raise ValueError(f"ber must be in (0, 0.5), got {ber}")
    x = qfunc_inv(ber)
    return 10.0 * math.log10(x * x / 2.0)


def snr_db_to_ber(snr_db: float) -> float:
    """Inverse of ber_to_snr_db."""
    snr = 10.0 ** (snr_db / 10.0)
    return qfunc(math.sqrt(2.0 * snr))
