"""Lossless range coding over quantized CDF tables, plus channel skipping.

The coder keeps a 64-bit (low, range) state and renormalizes byte-wise until
range >= 2**32, so every coded symbol sees at least 16 bits of headroom above
the 16-bit frequency totals.  Carries never propagate into emitted bytes:
when the pending top byte is still ambiguous, the range is clamped to the
nearest boundary instead (the classic carry-free trade, costing a fraction of
a bit on rare occasions).  finish() flushes the full 64-bit low, so a stream
costs at most 8 bytes over its quantized entropy and the decoder consumes
exactly the bytes the encoder produced.
"""

from __future__ import annotations

import numpy as np

from .errors import CodingError, InternalError
from .gaussian import CDF_PRECISION, CDF_TOTAL, QuantizedCdf
from .tensors import Tensor

_STATE_MASK = (1 << 64) - 1
_LOW56_MASK = (1 << 56) - 1
_MIN_RANGE = 1 << 32


class RangeEncoder:
    """Streaming encoder; single-owner, call finish() exactly once."""

    def __init__(self):
        self._low = 0
        self._rng = 1 << 64
        self._buf = bytearray()
        self._finished = False

    def encode(self, symbol: int, cdf: QuantizedCdf) -> None:
        if not cdf.contains(symbol):
            raise CodingError(
                f"symbol {symbol} outside alphabet [{cdf.q_min}, {cdf.q_max}]"
            )
        i = symbol - cdf.q_min
        self.encode_freq(int(cdf.cum[i]), int(cdf.cum[i + 1]))

    def encode_freq(self, cum_lo: int, cum_hi: int) -> None:
        """Encode one symbol given its cumulative bounds out of CDF_TOTAL."""
        if self._finished:
            raise CodingError("encoder already finished")
        r = self._rng >> CDF_PRECISION
        self._low += r * cum_lo
        if cum_hi == CDF_TOTAL:
            self._rng -= r * cum_lo
        else:
            self._rng = r * (cum_hi - cum_lo)
        low, rng = self._low, self._rng
        while rng < _MIN_RANGE:
            if (low ^ (low + rng)) >> 56:
                # Top byte still ambiguous with a small range: clamp the
                # interval to the boundary so the byte is decided.
                rng = (((low >> 56) + 1) << 56) - low
            self._buf.append(low >> 56)
            low = (low & _LOW56_MASK) << 8
            rng <<= 8
        self._low, self._rng = low, rng

    def finish(self) -> bytes:
        """Flush the 64-bit low and return the complete stream."""
        if self._finished:
            raise CodingError("encoder already finished")
        self._finished = True
        self._buf.extend(self._low.to_bytes(8, "big"))
        return bytes(self._buf)


class RangeDecoder:
    """Mirror of RangeEncoder over an input byte buffer."""

    def __init__(self, data: bytes):
        if len(data) < 8:
            raise CodingError(f"stream of {len(data)} bytes is shorter than the coder flush")
        self._data = data
        self._pos = 8
        self._code = int.from_bytes(data[:8], "big")
        self._low = 0
        self._rng = 1 << 64

    def decode(self, cdf: QuantizedCdf) -> int:
        return cdf.q_min + self.decode_freq(cdf.cum)

    def decode_freq(self, cum: np.ndarray) -> int:
        """Decode one symbol index from its cumulative-frequency row."""
        r = self._rng >> CDF_PRECISION
        dv = (self._code - self._low) // r
        if dv >= CDF_TOTAL:
            dv = CDF_TOTAL - 1
        i = int(np.searchsorted(cum, dv, side="right")) - 1
        cum_lo = int(cum[i])
        cum_hi = int(cum[i + 1])
        self._low += r * cum_lo
        if cum_hi == CDF_TOTAL:
            self._rng -= r * cum_lo
        else:
            self._rng = r * (cum_hi - cum_lo)
        low, rng, code = self._low, self._rng, self._code
        data, pos = self._data, self._pos
        while rng < _MIN_RANGE:
            if (low ^ (low + rng)) >> 56:
                rng = (((low >> 56) + 1) << 56) - low
            if pos >= len(data):
                raise CodingError("stream exhausted mid-symbol (truncated or corrupt)")
            code = ((code & _LOW56_MASK) << 8) | data[pos]
            pos += 1
            low = (low & _LOW56_MASK) << 8
            rng <<= 8
        self._low, self._rng, self._code, self._pos = low, rng, code, pos
        return i

    @property
    def consumed(self) -> int:
        return self._pos

    def verify_flush(self) -> None:
        """Check the stream tail against the encoder's flushed state.

        After the final symbol the sliding window holds the last 8 stream
        bytes, which a well-formed encoder filled with its final low; the
        decoder's own low tracked the same state, so any corruption of the
        flush bytes shows up as a mismatch.
        """
        if self._pos != len(self._data):
            raise CodingError(
                f"stream has {len(self._data) - self._pos} unconsumed bytes at flush check"
            )
        if self._code != self._low:
            raise CodingError("stream flush does not match the decoded state (corrupt tail)")


def encode_symbol(enc: RangeEncoder, symbol: int, cdf: QuantizedCdf) -> None:
    """Encode one symbol; see RangeEncoder.encode."""
    enc.encode(symbol, cdf)


def decode_symbol(dec: RangeDecoder, cdf: QuantizedCdf) -> int:
    """Decode one symbol; see RangeDecoder.decode."""
    return dec.decode(cdf)


class ChannelFlags:
    """One bit per latent channel: 1 iff the channel holds any non-zero value."""

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 1 or bits.size == 0:
            raise ValueError(f"flags must be a non-empty 1-D bit vector, got shape {bits.shape}")
        self.bits = bits

    @property
    def channels(self) -> int:
        return self.bits.size

    @property
    def byte_length(self) -> int:
        return -(-self.bits.size // 8)

    def nonzero_channels(self) -> np.ndarray:
        return np.nonzero(self.bits)[0]

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, channels: int) -> "ChannelFlags":
        expected = -(-channels // 8)
        if len(data) != expected:
            raise CodingError(f"flags need {expected} bytes for {channels} channels, got {len(data)}")
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        if np.any(bits[channels:]):
            raise CodingError("padding bits in the channel flags must be zero")
        return cls(bits[:channels].astype(bool))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ChannelFlags) and np.array_equal(self.bits, other.bits)


def compute_flags(latents: Tensor) -> ChannelFlags:
    """Flags for the selective codec: flag[i] = 1 iff channel i is not all-zero."""
    return ChannelFlags(np.any(latents.data != 0, axis=(0, 1)))


def selective_encode(latents: Tensor, flags: ChannelFlags | None, provider) -> bytes:
    """Encode latents in (h, w, channel) order, skipping all-zero channels.

    provider(data, r, c) must return a CdfBatch whose rows cover the coded
    channels (ascending channel index) and may only depend on data strictly
    before (r, c) in raster order.  flags=None codes every channel.  Returns
    the payload bytes (flags are serialized by the container, not here).
    """
    data = latents.data
    h, w, c = data.shape
    if flags is None:
        sel = np.arange(c)
    else:
        if flags.channels != c:
            raise ValueError(f"flags cover {flags.channels} channels, latents have {c}")
        if flags != compute_flags(latents):
            raise InternalError("channel flags do not match latent content")
        sel = flags.nonzero_channels()
    enc = RangeEncoder()
    if sel.size:
        for r in range(h):
            for col in range(w):
                batch = provider(data, r, col)
                rows = batch.rows
                q_min, q_max = batch.q_min, batch.q_max
                vals = data[r, col, sel]
                for j in range(sel.size):
                    s = int(vals[j])
                    if not (q_min <= s <= q_max):
                        raise CodingError(f"symbol {s} outside alphabet [{q_min}, {q_max}]")
                    row = rows[j]
                    i = s - q_min
                    enc.encode_freq(int(row[i]), int(row[i + 1]))
    return enc.finish()


def selective_decode(
    payload: bytes,
    flags: ChannelFlags | None,
    provider,
    height: int,
    width: int,
    channels: int,
) -> Tensor:
    """Inverse of selective_encode; skipped channels come back as zeros.

    The provider sees the partially decoded buffer, which holds exactly the
    already-decoded raster prefix, so a causal provider reproduces the
    encoder's tables symbol for symbol.
    """
    out = np.zeros((height, width, channels), dtype=np.float32)
    if flags is None:
        sel = np.arange(channels)
    else:
        if flags.channels != channels:
            raise ValueError(f"flags cover {flags.channels} channels, expected {channels}")
        sel = flags.nonzero_channels()
    dec = RangeDecoder(payload)
    if sel.size:
        for r in range(height):
            for col in range(width):
                batch = provider(out, r, col)
                rows = batch.rows
                q_min = batch.q_min
                for j in range(sel.size):
                    idx = dec.decode_freq(rows[j])
                    out[r, col, sel[j]] = q_min + idx
    if dec.consumed != len(payload):
        raise CodingError(
            f"stream declared {len(payload)} bytes but decoding consumed {dec.consumed}"
        )
    dec.verify_flush()
    return Tensor(out)
