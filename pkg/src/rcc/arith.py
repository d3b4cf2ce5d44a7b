"""Integer arithmetic coder and pmf quantizer.

32-bit low/high range registers, 16-bit probability precision (all coding
tables sum to exactly 2**16), underflow handled by pending-bit counting.
Termination emits the pending bits plus one disambiguating bit; the decoder
pads with zero bits past the end of the stream, so the per-message overhead
is at most two bits over the ideal codelength of the quantized model.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import CorruptStream, TooManySymbols

PRECISION_BITS = 16
TOTAL = 1 << PRECISION_BITS
MAX_SYMBOLS = 1 << 12

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_MASK = _FULL - 1
_HALF = _FULL >> 1
_QUARTER = _FULL >> 2


class BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nacc = 0
        self.bits_written = 0

    def write(self, bit):
        self._acc = (self._acc << 1) | bit
        self._nacc += 1
        self.bits_written += 1
        if self._nacc == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._nacc = 0

    def getvalue(self):
        """Byte string with the final partial byte zero-padded."""
        out = bytearray(self._bytes)
        if self._nacc:
            out.append(self._acc << (8 - self._nacc))
        return bytes(out)


class BitReader:
    def __init__(self, data):
        self._data = data
        self._pos = 0

    def read(self):
        """Next bit; zero once past the end of the data."""
        byte, off = divmod(self._pos, 8)
        self._pos += 1
        if byte >= len(self._data):
            return 0
        return (self._data[byte] >> (7 - off)) & 1


@dataclass(frozen=True)
class QuantizedPmf:
    """Integer symbol counts summing to exactly 2**16, every count >= 1."""

    counts: tuple
    cum: tuple          # len(counts)+1, strictly increasing, cum[-1] == TOTAL


def quantize_pmf(pmf):
    """Largest-remainder quantization to 2**16 total with a floor of one
    count per symbol (one count is reserved per symbol up front, the rest
    apportioned by largest remainder; ties broken by lower index)."""
    p = np.asarray(pmf, dtype=float)
    if p.ndim != 1 or len(p) < 1:
        raise ValueError("pmf must be a non-empty vector")
    if len(p) > MAX_SYMBOLS:
        raise TooManySymbols(f"{len(p)} symbols exceeds {MAX_SYMBOLS}")
    if abs(p.sum() - 1.0) > 1e-9 or (p < -1e-12).any():
        raise ValueError("pmf must be nonnegative and sum to 1 within 1e-9")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    budget = TOTAL - len(p)
    target = p * budget
    base = np.floor(target).astype(np.int64)
    leftover = budget - int(base.sum())
    if leftover:
        frac = target - base
        order = np.lexsort((np.arange(len(p)), -frac))
        base[order[:leftover]] += 1
    counts = base + 1
    cum = np.concatenate([[0], np.cumsum(counts)])
    return QuantizedPmf(tuple(int(c) for c in counts), tuple(int(c) for c in cum))


class ArithmeticEncoder:
    def __init__(self, writer=None):
        self.writer = writer if writer is not None else BitWriter()
        self._low = 0
        self._high = _MASK
        self._pending = 0
        self.ideal_bits = 0.0      # sum of -log2(count/TOTAL) over coded symbols

    def _emit(self, bit):
        self.writer.write(bit)
        other = bit ^ 1
        for _ in range(self._pending):
            self.writer.write(other)
        self._pending = 0

    def encode(self, qpmf, symbol):
        span = self._high - self._low + 1
        lo_c, hi_c = qpmf.cum[symbol], qpmf.cum[symbol + 1]
        self._high = self._low + (span * hi_c) // TOTAL - 1
        self._low = self._low + (span * lo_c) // TOTAL
        self.ideal_bits += -np.log2((hi_c - lo_c) / TOTAL)
        while True:
            if self._high < _HALF:
                self._emit(0)
            elif self._low >= _HALF:
                self._emit(1)
                self._low -= _HALF
                self._high -= _HALF
            elif self._low >= _QUARTER and self._high < 3 * _QUARTER:
                self._pending += 1
                self._low -= _QUARTER
                self._high -= _QUARTER
            else:
                break
            self._low <<= 1
            self._high = (self._high << 1) | 1

    def finish(self):
        """Flush; returns the padded byte string (bit count on the writer)."""
        self._pending += 1
        self._emit(0 if self._low < _QUARTER else 1)
        return self.writer.getvalue()


class ArithmeticDecoder:
    def __init__(self, data):
        self.reader = BitReader(data)
        self._low = 0
        self._high = _MASK
        self._code = 0
        for _ in range(_STATE_BITS):
            self._code = (self._code << 1) | self.reader.read()

    def decode(self, qpmf):
        span = self._high - self._low + 1
        value = ((self._code - self._low + 1) * TOTAL - 1) // span
        if not 0 <= value < TOTAL:
            raise CorruptStream("decoder value outside probability range")
        symbol = bisect_right(qpmf.cum, value) - 1
        if symbol >= len(qpmf.counts):
            raise CorruptStream("decoded symbol index out of range")
        lo_c, hi_c = qpmf.cum[symbol], qpmf.cum[symbol + 1]
        self._high = self._low + (span * hi_c) // TOTAL - 1
        self._low = self._low + (span * lo_c) // TOTAL
        while True:
            if self._high < _HALF:
                pass
            elif self._low >= _HALF:
                self._low -= _HALF
                self._high -= _HALF
                self._code -= _HALF
            elif self._low >= _QUARTER and self._high < 3 * _QUARTER:
                self._low -= _QUARTER
                self._high -= _QUARTER
                self._code -= _QUARTER
            else:
                break
            self._low <<= 1
            self._high = (self._high << 1) | 1
            self._code = (self._code << 1) | self.reader.read()
        return symbol
