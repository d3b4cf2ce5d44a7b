"""Two-stage lossless coder for cutset layouts.

Lines (the cutset rows) are arithmetic-coded under the fitted reduced block
model; strips are coded under the true model conditioned on the already
coded line rows just above and below.  Every coding distribution is an
exact chain conditional, factorized pixel-by-pixel inside each column so
each coder step has alphabet q.

The container holds a self-describing header (family statistic tables, the
global parameters, the fitted line parameters) followed by one
length-prefixed payload per block: all k+1 lines top to bottom, then the k
strips top to bottom.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import chains
from .arith import ArithmeticDecoder, ArithmeticEncoder, quantize_pmf
from .errors import CorruptStream, LayoutMismatch, NoValidTiling
from .gibbs import model_hash
from .model import (BlockParams, Configuration, GridModel, LatticeShape,
                    ParameterField, PairwiseFamily, build_layout, restrict)

MAGIC = b"RCC1"
VERSION = 1


# --- pixelwise block coding ---------------------------------------------------

def _digit_steps(cond, q, b, symbols=None, decoder=None, encoder=None):
    """Chain-rule a supernode conditional into b q-ary coder steps.

    `cond` is the (q**b,) probability vector over supernode states, digit 0
    most significant.  Exactly one of (symbols+encoder) or decoder is given.
    """
    cur = np.asarray(cond, dtype=float).reshape((q,) * b)
    out = np.empty(b, dtype=np.int64)
    for d in range(b):
        marg = cur.sum(axis=tuple(range(1, cur.ndim))) if cur.ndim > 1 else cur
        qp = quantize_pmf(marg / marg.sum())
        if decoder is None:
            sym = int(symbols[d])
            encoder.encode(qp, sym)
        else:
            sym = decoder.decode(qp)
        out[d] = sym
        cur = cur[sym]
    return out


def _encode_block(chain, posterior, pixels):
    """Arithmetic-code one block along its column chain.

    `pixels` is the (b, T) block; returns (payload bytes, bits, ideal bits).
    """
    q = chain.model.family.q
    b, T = pixels.shape
    if T != chain.length or chain.digits.shape[1] != b:
        raise LayoutMismatch("block shape does not match its coding chain")
    enc = ArithmeticEncoder()
    prefix = []
    for t in range(T):
        cond = posterior.sequential_conditional(prefix, t)
        _digit_steps(cond, q, b, symbols=pixels[:, t], encoder=enc)
        prefix.append(chains.pack_state(pixels[:, t], q))
    data = enc.finish()
    return data, enc.writer.bits_written, enc.ideal_bits


def _decode_block(chain, posterior, payload):
    """Inverse of _encode_block; returns the (b, T) pixel block."""
    q = chain.model.family.q
    b = chain.digits.shape[1]
    T = chain.length
    dec = ArithmeticDecoder(payload)
    pixels = np.empty((b, T), dtype=np.int64)
    prefix = []
    for t in range(T):
        cond = posterior.sequential_conditional(prefix, t)
        pixels[:, t] = _digit_steps(cond, q, b, decoder=dec)
        prefix.append(chains.pack_state(pixels[:, t], q))
    return pixels


class LineCodec:
    """Coder for one line block under the fitted reduced model theta_star.

    The chain and its messages depend only on theta_star, so one instance
    serves every line of every image with the same fit.
    """

    def __init__(self, family, theta_star, cap=None):
        self.model = GridModel(family, theta_star.shape, theta_star)
        self.chain = chains.column_chain(self.model, cap=cap)
        self.posterior = chains.marginals(self.chain)

    def encode(self, pixels):
        return _encode_block(self.chain, self.posterior, np.asarray(pixels))

    def decode(self, payload):
        return _decode_block(self.chain, self.posterior, payload)


def encode_line(pixels, family, theta_star, cap=None):
    """One-shot line payload; see LineCodec for the reusable form."""
    return LineCodec(family, theta_star, cap=cap).encode(pixels)


def decode_line(payload, family, theta_star, cap=None):
    return LineCodec(family, theta_star, cap=cap).decode(payload)


def _strip_chain(model, lo, hi, above_row, below_row, cap=None):
    """Column chain of p(strip rows [lo,hi) | clamped rows lo-1 and hi)."""
    if not (1 <= lo < hi <= model.shape.rows - 1):
        raise LayoutMismatch("strip must have one model row on each side")
    boundary = chains.ClampedBoundary(
        above_symbols=np.asarray(above_row, dtype=np.int64),
        above_theta=model.params.edge_v[lo - 1],
        below_symbols=np.asarray(below_row, dtype=np.int64),
        below_theta=model.params.edge_v[hi - 1],
    )
    return chains.column_chain(restrict(model, lo, hi), boundary=boundary, cap=cap)


def encode_strip(pixels, above_row, below_row, model, row_range, cap=None):
    """Payload for strip rows [lo, hi) given the adjacent coded line rows."""
    lo, hi = row_range
    chain = _strip_chain(model, lo, hi, above_row, below_row, cap=cap)
    return _encode_block(chain, chains.marginals(chain), np.asarray(pixels))


def decode_strip(payload, above_row, below_row, model, row_range, cap=None):
    lo, hi = row_range
    chain = _strip_chain(model, lo, hi, above_row, below_row, cap=cap)
    return _decode_block(chain, chains.marginals(chain), payload)


# --- container ------------------------------------------------------------------

@dataclass
class BlockStats:
    kind: str                 # "line" | "strip"
    row_range: tuple
    bits: int
    ideal_bits: float


@dataclass
class RccBitstream:
    """Parsed container: header model description plus raw block payloads."""

    family: PairwiseFamily
    theta: ParameterField
    theta_star: BlockParams
    shape: LatticeShape
    n_L: int
    n_S: int
    payloads: list
    block_stats: list = field(default_factory=list)   # encoder side only

    @property
    def layout(self):
        return build_layout(self.shape.rows, self.n_L, self.n_S)

    @property
    def payload_bits(self):
        """Coded bits of the payloads (excluding header and length prefixes)."""
        if self.block_stats:
            return sum(s.bits for s in self.block_stats)
        return 8 * sum(len(p) for p in self.payloads)

    @property
    def rate_bits_per_pixel(self):
        return self.payload_bits / (self.shape.rows * self.shape.cols)

    def to_bytes(self):
        return serialize(self)


def _pack_f64(arr):
    a = np.asarray(arr, dtype=float).ravel()
    return struct.pack(">I", len(a)) + struct.pack(f">{len(a)}d", *a)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptStream("truncated stream")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u32(self):
        return struct.unpack(">I", self.take(4))[0]

    def f64_array(self):
        n = self.u32()
        return np.array(struct.unpack(f">{n}d", self.take(8 * n)))


def serialize(stream):
    """Container bytes: magic, version, sizes, model tables, checksum, payloads."""
    M, N = stream.shape
    fam, th, ts = stream.family, stream.theta, stream.theta_star
    tables = b"".join(_pack_f64(a) for a in (
        fam.node_stat, fam.edge_stat_h, fam.edge_stat_v,
        th.node, th.edge_h, th.edge_v,
        ts.node, ts.edge_h, ts.edge_v))
    head = MAGIC + struct.pack(">BB", VERSION, fam.q)
    head += struct.pack(">IIII", M, N, stream.n_L, stream.n_S)
    head += tables
    head += bytes.fromhex(model_hash(fam, th))
    head += hashlib.sha256(tables).digest()[:8]
    body = b"".join(struct.pack(">I", len(p)) + p for p in stream.payloads)
    return head + body


def deserialize(data):
    """Parse container bytes back into an RccBitstream (no payload decoding)."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptStream("bad magic")
    version, q = r.u8(), r.u8()
    if version != VERSION:
        raise CorruptStream(f"unsupported container version {version}")
    M, N, n_L, n_S = (r.u32() for _ in range(4))
    tab_start = r.pos
    node_stat, eh, ev = r.f64_array(), r.f64_array(), r.f64_array()
    th_n, th_h, th_v = r.f64_array(), r.f64_array(), r.f64_array()
    ts_n, ts_h, ts_v = r.f64_array(), r.f64_array(), r.f64_array()
    tables = data[tab_start:r.pos]
    r.take(8)                                     # provenance hash, informational
    if r.take(8) != hashlib.sha256(tables).digest()[:8]:
        raise CorruptStream("header table checksum mismatch")
    try:
        family = PairwiseFamily(q, node_stat, eh.reshape(q, q), ev.reshape(q, q))
        theta = ParameterField(th_n, th_h, th_v)
        theta_star = BlockParams(ts_n.reshape(n_L, N), ts_h.reshape(n_L, N - 1),
                                 ts_v.reshape(n_L - 1, N))
        layout = build_layout(M, n_L, n_S)
    except (ValueError, NoValidTiling) as exc:
        raise CorruptStream(f"inconsistent header tables: {exc}") from exc
    payloads = []
    for _ in range(2 * layout.k + 1):
        payloads.append(bytes(r.take(r.u32())))
    if r.pos != len(data):
        raise CorruptStream("trailing bytes after final payload")
    return RccBitstream(family, theta, theta_star, LatticeShape(M, N),
                        n_L, n_S, payloads)


def encode_image(config, layout, family, theta, theta_star, cap=None):
    """Full two-stage encoding of one image; returns an RccBitstream.

    Lines are coded first (they need no side information), then each strip
    conditioned on the line rows adjacent to it.
    """
    M, N = config.shape
    if layout.rows != M:
        raise LayoutMismatch(f"layout covers {layout.rows} rows, image has {M}")
    if theta_star.shape != (layout.n_L, N):
        raise LayoutMismatch("fitted parameter block does not match (n_L, N)")
    config.validate(family)
    model = GridModel.from_row_invariant(family, config.shape, theta)
    pix = config.pixels

    line_codec = LineCodec(family, theta_star, cap=cap)
    payloads, stats = [], []
    for lo, hi in layout.line_row_ranges:
        data, bits, ideal = line_codec.encode(pix[lo:hi])
        payloads.append(data)
        stats.append(BlockStats("line", (lo, hi), bits, ideal))
    for lo, hi in layout.strip_row_ranges:
        data, bits, ideal = encode_strip(pix[lo:hi], pix[lo - 1], pix[hi],
                                         model, (lo, hi), cap=cap)
        payloads.append(data)
        stats.append(BlockStats("strip", (lo, hi), bits, ideal))
    return RccBitstream(family, theta, theta_star, config.shape,
                        layout.n_L, layout.n_S, payloads, stats)


def decode_image(stream, cap=None):
    """Exact inverse of encode_image; accepts an RccBitstream or raw bytes."""
    if isinstance(stream, (bytes, bytearray)):
        stream = deserialize(bytes(stream))
    layout = stream.layout
    M, N = stream.shape
    model = GridModel.from_row_invariant(stream.family, stream.shape, stream.theta)
    pix = np.empty((M, N), dtype=np.int64)

    line_codec = LineCodec(stream.family, stream.theta_star, cap=cap)
    k1 = len(layout.line_row_ranges)
    for (lo, hi), payload in zip(layout.line_row_ranges, stream.payloads[:k1]):
        pix[lo:hi] = line_codec.decode(payload)
    for (lo, hi), payload in zip(layout.strip_row_ranges, stream.payloads[k1:]):
        pix[lo:hi] = decode_strip(payload, pix[lo - 1], pix[hi],
                                  model, (lo, hi), cap=cap)
    return Configuration(stream.shape, pix)
