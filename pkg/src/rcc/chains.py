"""Exact inference on superpixel chains.

A rectangular block becomes an acyclic chain by clustering each column (or
row) into one supernode with q**b states.  All message passing is done in
the natural-log domain with log-sum-exp stabilization; conversion to bits
happens only at reporting boundaries.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import StateSpaceTooLarge
from .model import BlockParams, GridModel

DEFAULT_STATE_CAP = 4096


def state_cap(cap=None):
    """Effective supernode state-space cap (env RCC_STATE_CAP overrides default)."""
    if cap is not None:
        return int(cap)
    return int(os.environ.get("RCC_STATE_CAP", DEFAULT_STATE_CAP))


def enumerate_states(q, b):
    """(q**b, b) digit table; digit 0 is the first (topmost) pixel of the bundle."""
    S = q ** b
    idx = np.arange(S)
    digits = np.empty((S, b), dtype=np.int64)
    for d in range(b - 1, -1, -1):
        digits[:, d] = idx % q
        idx //= q
    return digits


def pack_state(symbols, q):
    """Inverse of enumerate_states for one bundle."""
    s = 0
    for v in symbols:
        s = s * q + int(v)
    return s


@dataclass(frozen=True)
class ClampedBoundary:
    """Fixed pixel rows above/below a block with the edge weights tying to them.

    Symbol arrays have one entry per column; theta arrays carry the original
    model's vertical-edge parameters on the crossing edges.  Either side may
    be None.
    """

    above_symbols: Optional[np.ndarray] = None
    above_theta: Optional[np.ndarray] = None
    below_symbols: Optional[np.ndarray] = None
    below_theta: Optional[np.ndarray] = None


@dataclass
class SuperpixelChain:
    """A chain of supernodes with log potentials.

    log_node[t] has shape (S,); log_pair[t] has shape (S, S) linking nodes
    t and t+1.  digits maps a state index to its bundle of pixel symbols.
    """

    state_sizes: list
    log_node: list
    log_pair: list
    digits: np.ndarray
    model: GridModel
    boundary: Optional[ClampedBoundary] = None
    transposed: bool = False

    def __post_init__(self):
        for tab in self.log_node + self.log_pair:
            if not np.isfinite(tab).all():
                raise ValueError("chain potentials must be finite")

    @property
    def length(self):
        return len(self.log_node)


def column_chain(model, boundary=None, cap=None):
    """Chain over the columns of a block; each supernode is one pixel column.

    Vertical edges interior to a column enter node potentials, horizontal
    edges enter pair potentials, and clamped boundary rows are absorbed into
    node potentials (this realizes the strip conditional p(X_S | x_dS)).
    """
    m, n = model.shape
    q = model.family.q
    S = q ** m
    cap = state_cap(cap)
    if S > cap:
        raise StateSpaceTooLarge(f"q**b = {S} exceeds state cap {cap}")
    digits = enumerate_states(q, m)
    fam = model.family
    p = model.params

    # node potentials: (S, n) then split per column
    node_pot = fam.node_stat[digits] @ p.node
    if m > 1:
        ev = fam.edge_stat_v[digits[:, :-1], digits[:, 1:]]
        node_pot += ev @ p.edge_v
    if boundary is not None:
        if boundary.above_symbols is not None:
            tab = fam.edge_stat_v[np.asarray(boundary.above_symbols, dtype=np.int64), :]
            node_pot += np.asarray(boundary.above_theta) * tab[:, digits[:, 0]].T
        if boundary.below_symbols is not None:
            tab = fam.edge_stat_v[:, np.asarray(boundary.below_symbols, dtype=np.int64)]
            node_pot += np.asarray(boundary.below_theta) * tab[digits[:, -1], :]
    log_node = [np.ascontiguousarray(node_pot[:, c]) for c in range(n)]

    # pair potentials, shared between columns with identical weights
    log_pair = []
    cache = {}
    for c in range(n - 1):
        w = p.edge_h[:, c]
        key = w.tobytes()
        tab = cache.get(key)
        if tab is None:
            tab = np.zeros((S, S))
            for r in range(m):
                dr = digits[:, r]
                tab += w[r] * fam.edge_stat_h[np.ix_(dr, dr)]
            cache[key] = tab
        log_pair.append(tab)

    return SuperpixelChain([S] * n, log_node, log_pair, digits, model, boundary)


def row_chain(model, cap=None):
    """Chain over the rows of a block; each supernode is one pixel row."""
    chain = column_chain(model.transpose(), cap=cap)
    chain.transposed = True
    return chain


@dataclass
class ChainPosterior:
    """Forward/backward messages and exact marginals of a chain."""

    chain: SuperpixelChain
    log_forward: list
    log_backward: list
    log_partition: float
    node_marginals: list = field(default_factory=list)

    def pair_marginal(self, t):
        """Exact joint of nodes t, t+1; computed on demand (tables can be big)."""
        c = self.chain
        logj = (self.log_forward[t][:, None] + c.log_pair[t]
                + c.log_node[t + 1][None, :] + self.log_backward[t + 1][None, :])
        logj -= logsumexp(logj)
        return np.exp(logj)

    @property
    def pair_marginals(self):
        return [self.pair_marginal(t) for t in range(self.chain.length - 1)]

    def sequential_conditional(self, prefix, t):
        """p(s_t | s_1..t-1); by the chain Markov property only the last
        prefix entry matters, so this is incremental and cheap."""
        c = self.chain
        if t == 0:
            logits = c.log_node[0] + self.log_backward[0]
        else:
            logits = (c.log_pair[t - 1][int(prefix[-1]), :] + c.log_node[t]
                      + self.log_backward[t])
        logits = logits - logsumexp(logits)
        return np.exp(logits)


def marginals(chain):
    """Run forward-backward; returns a ChainPosterior."""
    T = chain.length
    alpha = [None] * T
    beta = [None] * T
    alpha[0] = chain.log_node[0].copy()
    for t in range(1, T):
        alpha[t] = chain.log_node[t] + logsumexp(
            alpha[t - 1][:, None] + chain.log_pair[t - 1], axis=0)
    beta[T - 1] = np.zeros(chain.state_sizes[-1])
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(
            chain.log_pair[t] + chain.log_node[t + 1][None, :]
            + beta[t + 1][None, :], axis=1)
    logZ = float(logsumexp(alpha[T - 1]))
    node_marg = [np.exp(alpha[t] + beta[t] - logZ) for t in range(T)]
    return ChainPosterior(chain, alpha, beta, logZ, node_marg)


def log_partition(chain):
    """log Z by the forward recursion alone."""
    a = chain.log_node[0]
    for t in range(1, chain.length):
        a = chain.log_node[t] + logsumexp(a[:, None] + chain.log_pair[t - 1], axis=0)
    return float(logsumexp(a))


def chain_log_prob(chain, states, logZ=None):
    """log probability (nats) of one full supernode state sequence."""
    if logZ is None:
        logZ = log_partition(chain)
    s = np.asarray(states, dtype=np.int64)
    val = sum(chain.log_node[t][s[t]] for t in range(chain.length))
    val += sum(chain.log_pair[t][s[t], s[t + 1]] for t in range(chain.length - 1))
    return float(val) - logZ


def chain_entropy(chain, posterior=None):
    """Exact entropy in nats: log Z minus expected log potentials."""
    if posterior is None:
        posterior = marginals(chain)
    h = posterior.log_partition
    for t in range(chain.length):
        h -= float(np.dot(posterior.node_marginals[t], chain.log_node[t]))
    for t in range(chain.length - 1):
        pm = posterior.pair_marginal(t)
        h -= float(np.sum(pm * chain.log_pair[t]))
    return h


def chain_moments(chain, posterior=None):
    """Expected statistics of the chain's block model, packed flat.

    Equals the gradient of log_partition with respect to the packed
    parameters (checkable by finite differences).
    """
    if posterior is None:
        posterior = marginals(chain)
    model = chain.model
    m, n = model.shape
    fam = model.family
    digits = chain.digits
    ns = fam.node_stat[digits]                      # (S, m)
    node_m = np.empty((m, n))
    v_m = np.empty((m - 1, n)) if m > 1 else np.zeros((0, n))
    if m > 1:
        ev = fam.edge_stat_v[digits[:, :-1], digits[:, 1:]]  # (S, m-1)
    for c in range(n):
        p = posterior.node_marginals[c]
        node_m[:, c] = p @ ns
        if m > 1:
            v_m[:, c] = p @ ev
    h_m = np.empty((m, n - 1))
    for c in range(n - 1):
        pm = posterior.pair_marginal(c)
        for r in range(m):
            dr = digits[:, r]
            h_m[r, c] = float(np.sum(pm * fam.edge_stat_h[np.ix_(dr, dr)]))
    moments = BlockParams(node_m, h_m, v_m)
    if chain.transposed:
        # chain was built on the transposed model; map back
        moments = BlockParams(node_m.T, v_m.T, h_m.T)
    return moments.pack()


def sequential_conditional(chain, prefix, t, posterior=None):
    """Coding distribution p(s_t | s_1..t-1) over node-t states."""
    if posterior is None:
        posterior = marginals(chain)
    return posterior.sequential_conditional(prefix, t)


def sample_chain(chain, seed, posterior=None, rng=None):
    """One exact joint sample by forward filtering / backward sampling."""
    if posterior is None:
        posterior = marginals(chain)
    if rng is None:
        rng = np.random.default_rng(seed)
    T = chain.length
    states = np.empty(T, dtype=np.int64)
    logits = posterior.log_forward[T - 1]
    p = np.exp(logits - logsumexp(logits))
    states[T - 1] = rng.choice(len(p), p=p / p.sum())
    for t in range(T - 2, -1, -1):
        logits = posterior.log_forward[t] + chain.log_pair[t][:, states[t + 1]]
        p = np.exp(logits - logsumexp(logits))
        states[t] = rng.choice(len(p), p=p / p.sum())
    return states


def chain_to_pixels(chain, states):
    """Map a supernode state sequence back to the block pixel array."""
    cols = chain.digits[np.asarray(states, dtype=np.int64)]  # (T, b)
    if chain.transposed:
        return cols          # rows of the original block
    return cols.T
