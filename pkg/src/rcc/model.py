"""Lattices, pairwise exponential families, parameters, and cutset layouts.

A model lives on an M x N 4-neighbor rectangular lattice (no wrap-around).
Symbols are integers 0..q-1.  All inner products, serialization, and
gradients use one fixed component ordering:

    node components in raster order (m*n of them),
    then horizontal-edge components in raster order (m*(n-1)),
    then vertical-edge components in raster order ((m-1)*n).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NoValidTiling


class LatticeShape(NamedTuple):
    rows: int
    cols: int


def component_counts(rows, cols):
    """(node, h-edge, v-edge) component counts for a rows x cols block."""
    return rows * cols, rows * (cols - 1), (rows - 1) * cols


@dataclass(frozen=True)
class PairwiseFamily:
    """Alphabet plus node/edge statistic tables of a pairwise family.

    node_stat has shape (q,); edge_stat_h and edge_stat_v have shape (q, q)
    with the first index the left/top endpoint.
    """

    q: int
    node_stat: np.ndarray
    edge_stat_h: np.ndarray
    edge_stat_v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "node_stat", np.asarray(self.node_stat, dtype=float))
        object.__setattr__(self, "edge_stat_h", np.asarray(self.edge_stat_h, dtype=float))
        object.__setattr__(self, "edge_stat_v", np.asarray(self.edge_stat_v, dtype=float))
        if self.q < 1:
            raise ValueError("alphabet size must be positive")
        if self.node_stat.shape != (self.q,):
            raise ValueError("node_stat must have shape (q,)")
        for tab in (self.edge_stat_h, self.edge_stat_v):
            if tab.shape != (self.q, self.q):
                raise ValueError("edge statistic tables must have shape (q, q)")
        if not (np.isfinite(self.node_stat).all()
                and np.isfinite(self.edge_stat_h).all()
                and np.isfinite(self.edge_stat_v).all()):
            raise ValueError("statistic tables must be finite")

    @classmethod
    def ising(cls):
        """Spin family with symbols {0 -> -1, 1 -> +1}, t_i(x)=x, t_ij=x_i*x_j."""
        spins = np.array([-1.0, 1.0])
        prod = np.outer(spins, spins)
        return cls(2, spins, prod, prod)

    def is_minimal(self):
        """True if no affine combination of the statistic is constant.

        Checked by the rank of the design table of all 2x2 block
        configurations (the smallest block containing every component kind),
        augmented with a constant column.
        """
        m, n = 2, 2
        configs = np.stack(np.meshgrid(*([np.arange(self.q)] * (m * n)),
                                       indexing="ij"), axis=-1).reshape(-1, m, n)
        rows = np.stack([statistic(Configuration(LatticeShape(m, n), c), self)
                         for c in configs])
        ncomp = rows.shape[1]
        design = np.hstack([rows, np.ones((rows.shape[0], 1))])
        return np.linalg.matrix_rank(design) == ncomp + 1

    def moment_bounds(self, rows, cols):
        """Per-component convex-hull bounds (lo, hi) in the fixed ordering."""
        nn, nh, nv = component_counts(rows, cols)
        lo = np.concatenate([
            np.full(nn, self.node_stat.min()),
            np.full(nh, self.edge_stat_h.min()),
            np.full(nv, self.edge_stat_v.min()),
        ])
        hi = np.concatenate([
            np.full(nn, self.node_stat.max()),
            np.full(nh, self.edge_stat_h.max()),
            np.full(nv, self.edge_stat_v.max()),
        ])
        return lo, hi

    def uniform_moment(self, rows, cols):
        """Moment vector of the theta=0 model (table means per component)."""
        nn, nh, nv = component_counts(rows, cols)
        return np.concatenate([
            np.full(nn, self.node_stat.mean()),
            np.full(nh, self.edge_stat_h.mean()),
            np.full(nv, self.edge_stat_v.mean()),
        ])


@dataclass(frozen=True)
class ParameterField:
    """Row-invariant exponential parameters of the global lattice model.

    One value per row for node and horizontal-edge components, one value per
    row gap for vertical-edge components; no column dimension exists.
    """

    node: np.ndarray
    edge_h: np.ndarray
    edge_v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "node", np.asarray(self.node, dtype=float))
        object.__setattr__(self, "edge_h", np.asarray(self.edge_h, dtype=float))
        object.__setattr__(self, "edge_v", np.asarray(self.edge_v, dtype=float))
        M = self.node.shape[0]
        if self.edge_h.shape != (M,) or self.edge_v.shape != (M - 1,):
            raise ValueError("row counts of parameter arrays are inconsistent")
        for arr in (self.node, self.edge_h, self.edge_v):
            if not np.isfinite(arr).all():
                raise ValueError("parameters must be finite")

    @classmethod
    def homogeneous(cls, rows, theta_node, theta_edge):
        return cls(np.full(rows, float(theta_node)),
                   np.full(rows, float(theta_edge)),
                   np.full(rows - 1, float(theta_edge)))

    def expand(self, shape):
        """Broadcast to per-node/per-edge BlockParams on the given shape."""
        M, N = shape
        if self.node.shape[0] != M:
            raise ValueError("parameter field rows do not match shape")
        return BlockParams(
            np.repeat(self.node[:, None], N, axis=1),
            np.repeat(self.edge_h[:, None], N - 1, axis=1),
            np.repeat(self.edge_v[:, None], N, axis=1),
        )


@dataclass(frozen=True)
class BlockParams:
    """Free per-node/per-edge parameters on a rows x cols block.

    Used for fitted reduced-model parameters, which in general are not
    row-invariant, and as the expanded form of a ParameterField.
    """

    node: np.ndarray
    edge_h: np.ndarray
    edge_v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "node", np.asarray(self.node, dtype=float))
        object.__setattr__(self, "edge_h", np.asarray(self.edge_h, dtype=float))
        object.__setattr__(self, "edge_v", np.asarray(self.edge_v, dtype=float))
        m, n = self.node.shape
        if self.edge_h.shape != (m, max(n - 1, 0)) or self.edge_v.shape != (max(m - 1, 0), n):
            raise ValueError("edge parameter shapes inconsistent with node shape")
        for arr in (self.node, self.edge_h, self.edge_v):
            if not np.isfinite(arr).all():
                raise ValueError("parameters must be finite")

    @property
    def shape(self):
        return LatticeShape(*self.node.shape)

    def pack(self):
        """Flatten into the fixed component ordering."""
        return np.concatenate([self.node.ravel(), self.edge_h.ravel(),
                               self.edge_v.ravel()])

    @classmethod
    def unpack(cls, flat, rows, cols):
        nn, nh, nv = component_counts(rows, cols)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (nn + nh + nv,):
            raise ValueError("flat vector has wrong length")
        return cls(flat[:nn].reshape(rows, cols),
                   flat[nn:nn + nh].reshape(rows, cols - 1),
                   flat[nn + nh:].reshape(rows - 1, cols))

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols - 1)),
                   np.zeros((rows - 1, cols)))


@dataclass(frozen=True)
class Configuration:
    """An M x N array of symbols."""

    shape: LatticeShape
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shape", LatticeShape(*self.shape))
        pix = np.asarray(self.pixels, dtype=np.int64)
        object.__setattr__(self, "pixels", pix)
        if pix.shape != tuple(self.shape):
            raise ValueError("pixel array does not match shape")
        if pix.min(initial=0) < 0:
            raise ValueError("negative symbol")

    def validate(self, family):
        if self.pixels.size and self.pixels.max() >= family.q:
            raise ValueError("symbol out of range for family alphabet")


@dataclass(frozen=True)
class GridModel:
    """A pairwise MRF on a rectangular block: family + per-component parameters."""

    family: PairwiseFamily
    shape: LatticeShape
    params: BlockParams

    def __post_init__(self):
        object.__setattr__(self, "shape", LatticeShape(*self.shape))
        if self.params.shape != self.shape:
            raise ValueError("parameter block does not match shape")

    @classmethod
    def from_row_invariant(cls, family, shape, field):
        shape = LatticeShape(*shape)
        return cls(family, shape, field.expand(shape))

    @classmethod
    def ising(cls, rows, cols, theta_edge, theta_node=0.0):
        fam = PairwiseFamily.ising()
        field = ParameterField.homogeneous(rows, theta_node, theta_edge)
        return cls.from_row_invariant(fam, LatticeShape(rows, cols), field)

    def transpose(self):
        """The same distribution with rows and columns exchanged.

        A horizontal edge (left, right) becomes a vertical edge (top, bottom)
        with the same endpoint order, so the tables swap roles untransposed.
        """
        fam = PairwiseFamily(self.family.q, self.family.node_stat,
                             self.family.edge_stat_v, self.family.edge_stat_h)
        params = BlockParams(self.params.node.T, self.params.edge_v.T,
                             self.params.edge_h.T)
        return GridModel(fam, LatticeShape(self.shape.cols, self.shape.rows), params)

    def score(self, config):
        """<theta, t(x)> in nats, summed in fixed raster order."""
        return float(np.dot(self.params.pack(), statistic(config, self.family)))


def statistic(config, family):
    """t(x): the per-component statistic vector in the fixed ordering."""
    config.validate(family)
    pix = config.pixels
    node = family.node_stat[pix]
    h = family.edge_stat_h[pix[:, :-1], pix[:, 1:]]
    v = family.edge_stat_v[pix[:-1, :], pix[1:, :]]
    return np.concatenate([node.ravel(), h.ravel(), v.ravel()])


def restrict(model, row_lo, row_hi):
    """Induced-subgraph model on rows [row_lo, row_hi).

    Keeps edges interior to the block; vertical edges to the outside are
    dropped (they re-enter only through boundary clamping in the chain
    engine).
    """
    M, N = model.shape
    if not (0 <= row_lo < row_hi <= M):
        raise ValueError("block rows out of range")
    p = model.params
    params = BlockParams(p.node[row_lo:row_hi],
                         p.edge_h[row_lo:row_hi],
                         p.edge_v[row_lo:row_hi - 1])
    return GridModel(model.family, LatticeShape(row_hi - row_lo, N), params)


@dataclass(frozen=True)
class CutsetLayout:
    """Alternating line/strip tiling of M rows: line, strip, ..., strip, line."""

    n_L: int
    n_S: int
    k: int
    line_row_ranges: tuple
    strip_row_ranges: tuple

    @property
    def rows(self):
        return (self.k + 1) * self.n_L + self.k * self.n_S

    @property
    def cutset_rows(self):
        return (self.k + 1) * self.n_L


def build_layout(M, n_L, n_S):
    """The unique alternating tiling of M rows, or NoValidTiling."""
    if min(M, n_L, n_S) < 1:
        raise ValueError("M, n_L, n_S must be positive")
    k, rem = divmod(M - n_L, n_L + n_S)
    if rem != 0 or k < 1:
        raise NoValidTiling(
            f"no integer k >= 1 solves {M} = (k+1)*{n_L} + k*{n_S}")
    lines, strips = [], []
    r = 0
    for i in range(k):
        lines.append((r, r + n_L))
        r += n_L
        strips.append((r, r + n_S))
        r += n_S
    lines.append((r, r + n_L))
    return CutsetLayout(n_L, n_S, k, tuple(lines), tuple(strips))


# --- plain-text external formats -------------------------------------------

def save_raster(path, config, q):
    """Write 'RCCIMG q M N' followed by M rows of space-separated symbols."""
    M, N = config.shape
    with open(path, "w") as f:
        f.write(f"RCCIMG {q} {M} {N}\n")
        for row in config.pixels:
            f.write(" ".join(str(int(v)) for v in row) + "\n")


def load_raster(path):
    """Read a raster file; returns (Configuration, q)."""
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 4 or header[0] != "RCCIMG":
            raise ValueError(f"{path}: not an RCCIMG raster file")
        q, M, N = (int(v) for v in header[1:])
        pix = np.array([[int(v) for v in f.readline().split()] for _ in range(M)])
    if pix.shape != (M, N) or pix.min() < 0 or pix.max() >= q:
        raise ValueError(f"{path}: raster body inconsistent with header")
    return Configuration(LatticeShape(M, N), pix), q


def _fmt_array(arr):
    return ",".join(repr(float(v)) for v in np.asarray(arr).ravel())


def save_model_params(path, model_or_field, family, rows=None):
    """Write a key=value parameter file for a row-invariant model."""
    field = model_or_field
    lines = [
        f"q={family.q}",
        f"node_stat={_fmt_array(family.node_stat)}",
        f"edge_stat_h={_fmt_array(family.edge_stat_h)}",
        f"edge_stat_v={_fmt_array(family.edge_stat_v)}",
        f"theta_node={_fmt_array(field.node)}",
        f"theta_edge_h={_fmt_array(field.edge_h)}",
        f"theta_edge_v={_fmt_array(field.edge_v)}",
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_model_params(path):
    """Read a key=value parameter file; returns (PairwiseFamily, ParameterField)."""
    kv = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
    q = int(kv["q"])
    parse = lambda key: np.array([float(v) for v in kv[key].split(",")])
    family = PairwiseFamily(q, parse("node_stat"),
                            parse("edge_stat_h").reshape(q, q),
                            parse("edge_stat_v").reshape(q, q))
    field = ParameterField(parse("theta_node"), parse("theta_edge_h"),
                           parse("theta_edge_v"))
    return family, field
