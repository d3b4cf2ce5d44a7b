"""Cutset-based lossless coding workbench for lattice Markov random fields.

Subpackages: model (lattices, families, layouts), chains (exact chain
inference), oracle (exact rates and redundancy terms), gibbs (sampling),
fit (moment matching), arith (arithmetic coder), codec (the compressor),
cli (command-line front end).
"""

from .errors import (CorruptStream, DidNotConverge, HullBoundary,
                     LayoutMismatch, MomentMismatch, NoValidTiling, RccError,
                     StateSpaceTooLarge, TooManySymbols)
from .model import (BlockParams, Configuration, CutsetLayout, GridModel,
                    LatticeShape, PairwiseFamily, ParameterField,
                    build_layout, statistic)

__version__ = "0.1.0"
