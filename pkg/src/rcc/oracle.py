"""Exact desk-scale information quantities for lattice MRFs.

Everything reduces to the vertical Markov chain of rows: the full model's
row chain gives row marginals, adjacent-row joints, and (by composing
row-to-row transfer operators across a gap) exact joints of distant rows.
Block entropies, conditional strip entropies, line cross entropies and
divergences, row mutual informations, combined rates, and the redundancy
decomposition all come out of these primitives.

Internally everything is in nats; public rate/divergence/information
methods return bits (per pixel where stated).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import chains, fit as fitmod
from .model import GridModel, LatticeShape, restrict

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


def _entropy(p):
    p = np.asarray(p)
    return float(-np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)))


@dataclass
class RateReport:
    n_L: int
    n_S: int
    line_rate_bits_per_pixel: float
    strip_rate_bits_per_pixel: float
    combined_rate_exact: float
    combined_rate_approx: float


@dataclass
class RedundancyReport:
    """Per-pixel redundancy split (bits/pixel).

    total is the sum of the two terms by construction; direct_total is the
    same quantity recomputed from joint entropies, so |total - direct_total|
    is a numerical diagnostic.
    """

    correlation_term: float
    distribution_term: float
    total: float
    direct_total: float


class RowChainAnalysis:
    """Cached row-chain messages and transfer-operator powers for one model."""

    def __init__(self, model, cap=None):
        self.model = model
        self.chain = chains.row_chain(model, cap=cap)
        self.post = chains.marginals(self.chain)
        self.digits = self.chain.digits            # (S, N): row state -> pixels
        fam = model.family
        self._node_stat_cols = fam.node_stat[self.digits]            # (S, N)
        if model.shape.cols > 1:
            self._h_stat_cols = fam.edge_stat_h[self.digits[:, :-1],
                                                self.digits[:, 1:]]  # (S, N-1)
        else:
            self._h_stat_cols = np.zeros((self.digits.shape[0], 0))
        self._row_entropy = {}
        self._cond_entropy = {}
        self._compose_cache = {}
        self._onehot = {}
        self._homogeneous = self._detect_homogeneous()

    # --- basic row quantities ------------------------------------------

    @property
    def log_partition(self):
        return self.post.log_partition

    def row_marginal(self, t):
        return self.post.node_marginals[t]

    def row_entropy(self, t):
        if t not in self._row_entropy:
            self._row_entropy[t] = _entropy(self.row_marginal(t))
        return self._row_entropy[t]

    def pair_joint(self, t):
        return self.post.pair_marginal(t)

    def cond_entropy(self, t):
        """H(r_{t+1} | r_t) in nats."""
        if t not in self._cond_entropy:
            self._cond_entropy[t] = _entropy(self.pair_joint(t)) - self.row_entropy(t)
        return self._cond_entropy[t]

    def block_entropy(self, lo, hi):
        """H of rows [lo, hi) in nats, via the vertical Markov chain."""
        if not (0 <= lo < hi <= self.model.shape.rows):
            raise ValueError("block rows out of range")
        h = self.row_entropy(lo)
        for t in range(lo, hi - 1):
            h += self.cond_entropy(t)
        return h

    # --- joints across a gap ---------------------------------------------

    def _detect_homogeneous(self):
        ch = self.chain
        if ch.length < 3:
            return True
        same_pair = all(ch.log_pair[t] is ch.log_pair[0] for t in range(len(ch.log_pair)))
        same_node = all(np.array_equal(ch.log_node[t], ch.log_node[1])
                        for t in range(2, ch.length))
        return same_pair and same_node

    def _transfer(self, t):
        # scaled linear transfer A_t: pair potential plus next node potential
        A = self.chain.log_pair[t] + self.chain.log_node[t + 1][None, :]
        c = float(A.max())
        return np.exp(A - c), c

    def _compose(self, i, j):
        """Product of transfer operators for rows i..j-1, scaled linear form."""
        key = ("gap", j - i) if self._homogeneous else (i, j)
        hit = self._compose_cache.get(key)
        if hit is not None:
            return hit
        if self._homogeneous:
            base = self._compose_cache.get(("gap", 1))
            if base is None:
                base = self._transfer(i)
                self._compose_cache[("gap", 1)] = base
            steps = [base] * (j - i)
        else:
            steps = [self._transfer(t) for t in range(i, j)]
        mat, logsc = steps[0]
        for m2, c2 in steps[1:]:
            mat = mat @ m2
            c = float(mat.max())
            mat = mat / c
            logsc += c2 + math.log(c)
        self._compose_cache[key] = (mat, logsc)
        return mat, logsc

    def joint_rows(self, i, j):
        """Exact joint distribution of rows i < j, marginalizing the gap."""
        if not 0 <= i < j < self.model.shape.rows:
            raise ValueError("need 0 <= i < j < M")
        if j == i + 1:
            return self.pair_joint(i)
        mat, _ = self._compose(i, j)
        with np.errstate(divide="ignore"):
            logj = (self.post.log_forward[i][:, None] + np.log(mat)
                    + self.post.log_backward[j][None, :])
        logj -= logsumexp(logj)
        return np.exp(logj)

    def joint_rows_entropy(self, i, j):
        return _entropy(self.joint_rows(i, j))

    def cond_rows_entropy(self, i, j):
        """H(r_j | r_i) for i < j, nats."""
        return self.joint_rows_entropy(i, j) - self.row_entropy(i)

    def mutual_info(self, i, j):
        """I(r_i; r_j) for i < j, nats."""
        return self.row_entropy(j) - self.cond_rows_entropy(i, j)

    # --- block moments -----------------------------------------------------

    def _col_onehot(self, c):
        oh = self._onehot.get(c)
        if oh is None:
            q = self.model.family.q
            oh = np.zeros((self.digits.shape[0], q))
            oh[np.arange(self.digits.shape[0]), self.digits[:, c]] = 1.0
            self._onehot[c] = oh
        return oh

    def block_moments(self, lo, hi):
        """True-model expected statistics on rows [lo, hi), packed flat in the
        layout of restrict(model, lo, hi)."""
        fam = self.model.family
        N = self.model.shape.cols
        b = hi - lo
        node_m = np.empty((b, N))
        h_m = np.empty((b, N - 1))
        for r in range(b):
            p = self.row_marginal(lo + r)
            node_m[r] = p @ self._node_stat_cols
            h_m[r] = p @ self._h_stat_cols
        v_m = np.empty((b - 1, N)) if b > 1 else np.zeros((0, N))
        for r in range(b - 1):
            J = self.pair_joint(lo + r)
            for c in range(N):
                oh = self._col_onehot(c)
                Q = oh.T @ (J @ oh)          # (q, q) digit-pair distribution
                v_m[r, c] = float(np.sum(Q * fam.edge_stat_v))
        from .model import BlockParams
        return BlockParams(node_m, h_m, v_m).pack()


class ExactOracle:
    """Exact rates, divergences, and redundancy terms for one lattice model.

    Proposition-style block quantities use boundary-aware exact computation
    on blocks placed at the vertical center of the lattice, with at least
    `buffer` rows of padding on each side (warned about if violated).
    """

    def __init__(self, model, cap=None, buffer=4, fit_eps=1e-10, fit_max_iter=200000):
        self.model = model
        self.cap = cap
        self.buffer = buffer
        self.fit_eps = fit_eps
        self.fit_max_iter = fit_max_iter
        self._analysis = None
        self._fits = {}
        self._reduced_analysis = {}

    @property
    def analysis(self):
        if self._analysis is None:
            self._analysis = RowChainAnalysis(self.model, cap=self.cap)
        return self._analysis

    # --- placement -------------------------------------------------------

    def centered_rows(self, n, need_boundary=False):
        M = self.model.shape.rows
        pad = 1 if need_boundary else 0
        lo = (M - n) // 2
        if lo - pad < 0 or M - (lo + n) - pad < 0:
            raise ValueError(f"block of {n} rows does not fit in {M} rows")
        if lo - pad < self.buffer or M - (lo + n) - pad < self.buffer:
            log.warning("centered block of %d rows has < %d buffer rows in a "
                        "%d-row lattice", n, self.buffer, M)
        return lo, lo + n

    # --- entropies and rates ----------------------------------------------

    def block_entropy(self, lo, hi):
        """H of rows [lo, hi) in bits."""
        return self.analysis.block_entropy(lo, hi) / LN2

    def lattice_entropy_bits_per_pixel(self):
        M, N = self.model.shape
        return self.analysis.block_entropy(0, M) / (M * N * LN2)

    def strip_conditional_entropy(self, lo, hi):
        """H(X_S | X_dS) in nats for strip rows [lo, hi)."""
        a = self.analysis
        return a.block_entropy(lo - 1, hi + 1) - a.joint_rows_entropy(lo - 1, hi)

    def strip_rate(self, n_S):
        """Per-pixel strip coding rate (bits), centered placement."""
        lo, hi = self.centered_rows(n_S, need_boundary=True)
        N = self.model.shape.cols
        return self.strip_conditional_entropy(lo, hi) / (n_S * N * LN2)

    def line_fit(self, rows):
        """Moment-matching fit for the block on the given row range (cached)."""
        key = tuple(rows)
        if key not in self._fits:
            lo, hi = rows
            target = self.analysis.block_moments(lo, hi)
            init = restrict(self.model, lo, hi).params
            self._fits[key] = fitmod.fit(
                target, self.model.family, hi - lo, self.model.shape.cols,
                theta_init=init, eps_mu=self.fit_eps, max_iter=self.fit_max_iter,
                cap=self.cap)
        return self._fits[key]

    def line_theta(self, n_L):
        return self.line_fit(self.centered_rows(n_L)).theta_hat

    def reduced_model(self, theta_star):
        return GridModel(self.model.family, theta_star.shape, theta_star)

    def _reduced_rowchain(self, theta_star):
        key = theta_star.pack().tobytes()
        if key not in self._reduced_analysis:
            self._reduced_analysis[key] = RowChainAnalysis(
                self.reduced_model(theta_star), cap=self.cap)
        return self._reduced_analysis[key]

    def line_rate(self, n_L, theta_star=None, check_tol=1e-6):
        """Per-pixel line coding rate (bits): entropy of the fitted reduced
        block model, which equals the cross entropy under moment matching."""
        from .errors import MomentMismatch
        lo, hi = self.centered_rows(n_L)
        if theta_star is None:
            theta_star = self.line_fit((lo, hi)).theta_hat
        chain = chains.column_chain(self.reduced_model(theta_star), cap=self.cap)
        post = chains.marginals(chain)
        mu_target = self.analysis.block_moments(lo, hi)
        resid = np.abs(chains.chain_moments(chain, post) - mu_target).max()
        if resid > check_tol:
            raise MomentMismatch(
                f"reduced-model moments off target by {resid:g} (> {check_tol:g})")
        N = self.model.shape.cols
        return chains.chain_entropy(chain, post) / (n_L * N * LN2)

    def line_cross_entropy(self, theta_star, lo, hi):
        """Phi(theta*) - <theta*, mu_block> in nats: exact expected codelength
        for coding rows [lo, hi) with the reduced model."""
        phi = chains.log_partition(
            chains.column_chain(self.reduced_model(theta_star), cap=self.cap))
        mu = self.analysis.block_moments(lo, hi)
        return phi - float(np.dot(theta_star.pack(), mu))

    def line_divergence(self, n_L, theta_star=None):
        """D(X_B || X~_B) in bits for the centered n_L-row block."""
        lo, hi = self.centered_rows(n_L)
        if theta_star is None:
            theta_star = self.line_fit((lo, hi)).theta_hat
        d = self.line_cross_entropy(theta_star, lo, hi) - self.analysis.block_entropy(lo, hi)
        return d / LN2

    def mutual_info_rows(self, i, j):
        """I(r_i; r_j) in bits; j == i returns H(r_i) (self-information)."""
        if j == i:
            return self.analysis.row_entropy(i) / LN2
        return self.analysis.mutual_info(min(i, j), max(i, j)) / LN2

    # --- layout-level quantities -------------------------------------------

    def _check_layout(self, layout):
        if layout.rows != self.model.shape.rows:
            raise ValueError("layout does not tile this lattice")

    def redundancy_decomposition(self, layout, theta_star=None):
        """Exact per-pixel redundancy split for coding the cutset lines
        independently with the reduced model theta_star (bits/pixel)."""
        self._check_layout(layout)
        a = self.analysis
        M, N = self.model.shape
        if theta_star is None:
            theta_star = self.line_theta(layout.n_L)
        phi = chains.log_partition(
            chains.column_chain(self.reduced_model(theta_star), cap=self.cap))
        ts = theta_star.pack()

        lines = layout.line_row_ranges
        H_lines, D_lines = [], []
        for lo, hi in lines:
            h = a.block_entropy(lo, hi)
            d = (phi - float(np.dot(ts, a.block_moments(lo, hi)))) - h
            H_lines.append(h)
            D_lines.append(d)
        I_terms = [a.mutual_info(lines[i - 1][1] - 1, lines[i][0])
                   for i in range(1, len(lines))]

        denom = M * N * LN2
        corr = sum(I_terms) / denom
        dist = sum(D_lines) / denom

        # independent route: direct divergence via the line-block Markov chain
        h_U = a.block_entropy(*lines[0])
        for i in range(1, len(lines)):
            lo, hi = lines[i]
            h_U += a.cond_rows_entropy(lines[i - 1][1] - 1, lo)
            h_U += a.block_entropy(lo, hi) - a.row_entropy(lo)
        direct = (sum(H_lines) + sum(D_lines) - h_U) / denom
        return RedundancyReport(corr, dist, corr + dist, direct)

    def total_rate(self, layout, theta_star=None):
        """Exact and large-k-approximate combined RCC rates (bits/pixel)."""
        self._check_layout(layout)
        M, N = self.model.shape
        if theta_star is None:
            theta_star = self.line_theta(layout.n_L)
        cross = sum(self.line_cross_entropy(theta_star, lo, hi)
                    for lo, hi in layout.line_row_ranges)
        strip = sum(self.strip_conditional_entropy(lo, hi)
                    for lo, hi in layout.strip_row_ranges)
        n_U = layout.cutset_rows * N
        n_W = (M - layout.cutset_rows) * N
        line_bpp = cross / (n_U * LN2)
        strip_bpp = strip / (n_W * LN2)
        exact = (n_U * line_bpp + n_W * strip_bpp) / (M * N)
        approx = (layout.n_L * line_bpp + layout.n_S * strip_bpp) / (layout.n_L + layout.n_S)
        return RateReport(layout.n_L, layout.n_S, line_bpp, strip_bpp, exact, approx)

    # --- divergence recursions ----------------------------------------------

    def anchored_rows(self, n, n_max):
        """Nested blocks sharing a top row, the largest one centered."""
        top = (self.model.shape.rows - n_max) // 2
        return top, top + n

    def marginal_divergence(self, theta_big, small_rows, theta_small):
        """D(marginal of the first `small_rows` rows of the reduced model
        theta_big || reduced model theta_small), nats."""
        ran = self._reduced_rowchain(theta_big)
        mu = ran.block_moments(0, small_rows)
        h = ran.block_entropy(0, small_rows)
        phi_small = chains.log_partition(
            chains.column_chain(self.reduced_model(theta_small), cap=self.cap))
        return (phi_small - float(np.dot(theta_small.pack(), mu))) - h

    def block_divergence(self, lo, hi, theta_star):
        """D(X_B || X~_B) in nats for rows [lo, hi)."""
        return (self.line_cross_entropy(theta_star, lo, hi)
                - self.analysis.block_entropy(lo, hi))

    def divergence_recursion_residual(self, n, n_max=None):
        """Residual of the distribution-redundancy recursion at block height n
        (anchored blocks), nats.  Zero (to fit tolerance) when the recursion
        identity holds."""
        if n < 2:
            raise ValueError("recursion needs n >= 2")
        n_max = n_max or n
        top, _ = self.anchored_rows(n, n_max)
        th_n = self.line_fit((top, top + n)).theta_hat
        th_n1 = self.line_fit((top, top + n - 1)).theta_hat
        lhs = self.block_divergence(top, top + n, th_n)
        d_prev = self.block_divergence(top, top + n - 1, th_n1)
        d_t2 = self.marginal_divergence(th_n, n - 1, th_n1)
        h_red = self._reduced_rowchain(th_n).cond_entropy(n - 2)
        h_true = self.analysis.cond_entropy(top + n - 2)
        return lhs - (d_prev - d_t2 + h_red - h_true)

    def marginal_recursion_residual(self, m, n_max=None):
        """Residual of the tilde-marginal divergence recursion at height m
        (anchored blocks), nats."""
        if m < 2:
            raise ValueError("recursion needs m >= 2")
        n_max = n_max or (m + 1)
        top, _ = self.anchored_rows(m, n_max)
        th = {b: self.line_fit((top, top + b)).theta_hat for b in (m - 1, m, m + 1)}
        lhs = self.marginal_divergence(th[m + 1], m, th[m])
        rhs = (self.marginal_divergence(th[m + 1], m - 1, th[m - 1])
               - self.marginal_divergence(th[m], m - 1, th[m - 1])
               + self._reduced_rowchain(th[m]).cond_entropy(m - 2)
               - self._reduced_rowchain(th[m + 1]).cond_entropy(m - 2))
        return lhs - rhs

    # --- proposition verification -------------------------------------------

    def verify_propositions(self, max_n=4, identity_tol=1e-8, margin=1e-10):
        """Numerically check the rate orderings, the information monotonicity,
        and the divergence recursions; returns a list of LedgerEntry.

        Assertion failures are reported as falsifications, never raised.
        """
        entries = []
        strips = {n: self.strip_rate(n) for n in range(1, max_n + 1)}
        lines = {n: self.line_rate(n) for n in range(1, max_n + 1)}

        def ordered(vals, increasing):
            diffs = np.diff(vals)
            if np.all(np.abs(diffs) <= 1e-12):
                return "degenerate-equal"
            ok = np.all(diffs > margin) if increasing else np.all(diffs < -margin)
            return "pass" if ok else "fail"

        entries.append(LedgerEntry(
            "strip_rate_increasing", ordered(list(strips.values()), True),
            {f"n={n}": v for n, v in strips.items()}))
        entries.append(LedgerEntry(
            "line_rate_decreasing", ordered(list(lines.values()), False),
            {f"n={n}": v for n, v in lines.items()}))

        gap_lo = min(lines.values()) - max(strips.values())
        if abs(gap_lo) <= 1e-12:
            status = "degenerate-equal"
        else:
            status = "pass" if gap_lo > margin else "fail"
        entries.append(LedgerEntry("line_rate_above_strip_rate", status,
                                   {"min_line_minus_max_strip": gap_lo}))

        M = self.model.shape.rows
        mis = {}
        for g in range(1, max_n + 2):
            i = (M - 1 - g) // 2
            mis[g] = self.mutual_info_rows(i, i + g)
        entries.append(LedgerEntry(
            "row_mutual_info_decreasing_in_gap",
            ordered(list(mis.values()), False),
            {f"gap={g}": v for g, v in mis.items()}))

        # distribution-redundancy curve: emitted, not asserted (conjecture only)
        divs = {n: self.line_divergence(n) for n in range(1, max_n + 1)}
        entries.append(LedgerEntry(
            "line_divergence_curve", "emitted", {f"n={n}": v for n, v in divs.items()}))

        for n in range(2, min(3, max_n) + 1):
            r = self.divergence_recursion_residual(n, n_max=min(3, max_n))
            entries.append(LedgerEntry(
                f"divergence_recursion_n{n}",
                "pass" if abs(r) <= identity_tol else "fail", {"residual": r}))
        if max_n >= 2:
            for m in (2,):
                r = self.marginal_recursion_residual(m, n_max=m + 1)
                entries.append(LedgerEntry(
                    f"marginal_recursion_m{m}",
                    "pass" if abs(r) <= identity_tol else "fail", {"residual": r}))
        return entries


@dataclass
class LedgerEntry:
    name: str
    status: str                  # pass | fail | degenerate-equal | emitted
    values: dict = field(default_factory=dict)

    def format(self):
        vals = " ".join(f"{k}={v:.12g}" for k, v in self.values.items())
        return f"{self.name} {self.status} {vals}".strip()
