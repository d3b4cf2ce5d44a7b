"""Moment matching for reduced block models.

The estimator minimizes the empirical cross entropy

    H(mu_hat, theta) = Phi(theta) - <mu_hat, theta>

over reduced-model parameters theta on a rows x cols block, by gradient
descent with backtracking line search.  The gradient is the moment residual
mu_tilde(theta) - mu_hat, so at termination the achieved moments match the
target to the stopping tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import chains
from .errors import DidNotConverge, HullBoundary
from .model import BlockParams, Configuration, GridModel, LatticeShape, statistic

log = logging.getLogger(__name__)

LINE_SEARCH = {"sufficient_decrease": 1e-4, "shrink": 0.5, "initial_step": 1.0}


@dataclass
class FitResult:
    theta_hat: BlockParams
    final_gradient_norm: float
    iterations: int
    objective_trace: list
    target_moment: np.ndarray
    achieved_moment: np.ndarray
    converged: bool = True
    line_search: dict = field(default_factory=lambda: dict(LINE_SEARCH))


def empirical_moment(samples, family):
    """(1/n) sum_i t(x_i) over block configurations.

    `samples` is an (n, rows, cols) symbol array (or a list of such blocks);
    stacking lines from several images pools over both indices.
    """
    arr = np.asarray(samples, dtype=np.int64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] < 1:
        raise ValueError("need at least one sample block")
    shape = LatticeShape(arr.shape[1], arr.shape[2])
    acc = statistic(Configuration(shape, arr[0]), family)
    for x in arr[1:]:
        acc = acc + statistic(Configuration(shape, x), family)
    return acc / arr.shape[0]


def _build_chain(family, rows, cols, theta_flat, cap=None):
    params = BlockParams.unpack(theta_flat, rows, cols)
    model = GridModel(family, LatticeShape(rows, cols), params)
    return chains.column_chain(model, cap=cap)


def _phi_and_moments(family, rows, cols, theta_flat, cap=None):
    chain = _build_chain(family, rows, cols, theta_flat, cap=cap)
    post = chains.marginals(chain)
    return post.log_partition, chains.chain_moments(chain, post)


def objective(mu_hat, theta_flat, family, rows, cols, cap=None):
    """Empirical cross entropy Phi(theta) - <mu_hat, theta> (nats)."""
    params = BlockParams.unpack(theta_flat, rows, cols)
    model = GridModel(family, LatticeShape(rows, cols), params)
    phi = chains.log_partition(chains.column_chain(model, cap=cap))
    return phi - float(np.dot(mu_hat, theta_flat))


def objective_gradient(mu_hat, theta_flat, family, rows, cols, cap=None):
    """Gradient of the objective: reduced-model moments minus mu_hat."""
    _, mu_tilde = _phi_and_moments(family, rows, cols, theta_flat, cap=cap)
    return mu_tilde - np.asarray(mu_hat)


def check_hull(target, family, rows, cols, warn_margin=1e-9):
    """Raise HullBoundary if any component sits on/outside the hull bounds."""
    lo, hi = family.moment_bounds(rows, cols)
    t = np.asarray(target, dtype=float)
    degenerate = (hi - lo) <= 0          # constant statistic component
    bad = (~degenerate) & ((t <= lo) | (t >= hi))
    if bad.any():
        raise HullBoundary(
            f"{int(bad.sum())} target component(s) on or outside the moment hull")
    margin = np.minimum(t - lo, hi - t)
    near = (~degenerate) & (margin < warn_margin)
    if near.any():
        log.warning("target within %g of the moment hull boundary on %d components",
                    warn_margin, int(near.sum()))


def shrink_toward_uniform(target, family, rows, cols, blend=1e-6):
    """Blend a (possibly degenerate) target toward the theta=0 moment."""
    u = family.uniform_moment(rows, cols)
    return (1.0 - blend) * np.asarray(target, dtype=float) + blend * u


def fit(target, family, rows, cols, theta_init=None, eps_mu=1e-6,
        max_iter=50000, cap=None):
    """Gradient-descent moment matching on a block.

    Stops when the sup-norm of the gradient (the moment residual) drops
    below eps_mu; raises DidNotConverge (carrying the best iterate) at the
    iteration budget, HullBoundary for unattainable targets.

    objective_trace records the objective at every line-search-accepted
    iterate.  Once objective decreases fall below float resolution the line
    search is vacuous; iterations then continue at a fixed step (halved
    whenever the gradient norm grows) and the trace stops growing, since
    the objective can no longer be resolved.
    """
    target = np.asarray(target, dtype=float)
    check_hull(target, family, rows, cols)
    if theta_init is None:
        theta = BlockParams.zeros(rows, cols).pack()
    elif isinstance(theta_init, BlockParams):
        theta = theta_init.pack()
    else:
        theta = np.asarray(theta_init, dtype=float).copy()

    c1 = LINE_SEARCH["sufficient_decrease"]
    shrink = LINE_SEARCH["shrink"]
    phi, mu = _phi_and_moments(family, rows, cols, theta, cap=cap)
    f = phi - float(np.dot(target, theta))
    trace = [f]
    grad = mu - target
    gnorm = float(np.abs(grad).max())
    accepted_step = LINE_SEARCH["initial_step"]
    # once predicted decreases fall below float resolution of f, sufficient
    # decrease is vacuous; switch to a fixed step, halved if the gradient grows
    flat_step = None

    for it in range(1, max_iter + 1):
        if gnorm < eps_mu:
            return FitResult(BlockParams.unpack(theta, rows, cols), gnorm, it - 1,
                             trace, target, mu)
        gsq = float(np.dot(grad, grad))
        if flat_step is None and c1 * accepted_step * gsq < 64 * np.finfo(float).eps * abs(f):
            flat_step = accepted_step
        if flat_step is not None:
            theta = theta - flat_step * grad
            phi, mu = _phi_and_moments(family, rows, cols, theta, cap=cap)
            f = phi - float(np.dot(target, theta))
            grad = mu - target
            new_gnorm = float(np.abs(grad).max())
            if new_gnorm > gnorm:
                flat_step *= shrink
                if flat_step < 1e-18:
                    raise DidNotConverge(
                        "descent stalled at the float noise floor",
                        result=FitResult(BlockParams.unpack(theta, rows, cols),
                                         new_gnorm, it, trace, target, mu,
                                         converged=False))
            gnorm = new_gnorm
            continue
        step = LINE_SEARCH["initial_step"]
        while True:
            cand = theta - step * grad
            chain = _build_chain(family, rows, cols, cand, cap=cap)
            f_cand = chains.log_partition(chain) - float(np.dot(target, cand))
            if f_cand <= f - c1 * step * gsq:
                break
            step *= shrink
            if step < 1e-18:
                raise DidNotConverge(
                    "line search stalled; target may be nearly degenerate",
                    result=FitResult(BlockParams.unpack(theta, rows, cols), gnorm,
                                     it, trace, target, mu, converged=False))
        theta = cand
        accepted_step = step
        f = f_cand
        trace.append(f)
        post = chains.marginals(chain)
        mu = chains.chain_moments(chain, post)
        grad = mu - target
        gnorm = float(np.abs(grad).max())

    result = FitResult(BlockParams.unpack(theta, rows, cols), gnorm, max_iter,
                       trace, target, mu, converged=False)
    raise DidNotConverge(f"gradient norm {gnorm:g} after {max_iter} iterations",
                         result=result)


def save_fit_result(path, result):
    """Plain-text key=value serialization, consumed by codec headers."""
    rows, cols = result.theta_hat.shape
    fmt = lambda a: ",".join(repr(float(v)) for v in np.asarray(a).ravel())
    with open(path, "w") as f:
        f.write(f"rows={rows}\ncols={cols}\n")
        f.write(f"iterations={result.iterations}\n")
        f.write(f"final_gradient_norm={result.final_gradient_norm!r}\n")
        f.write(f"converged={int(result.converged)}\n")
        for key, val in result.line_search.items():
            f.write(f"line_search_{key}={val!r}\n")
        f.write(f"theta_node={fmt(result.theta_hat.node)}\n")
        f.write(f"theta_edge_h={fmt(result.theta_hat.edge_h)}\n")
        f.write(f"theta_edge_v={fmt(result.theta_hat.edge_v)}\n")
        f.write(f"target_moment={fmt(result.target_moment)}\n")
        f.write(f"achieved_moment={fmt(result.achieved_moment)}\n")


def load_fit_theta(path):
    """Read back just the fitted BlockParams from a fit-result file."""
    kv = {}
    with open(path) as f:
        for line in f:
            key, _, val = line.strip().partition("=")
            kv[key] = val
    rows, cols = int(kv["rows"]), int(kv["cols"])
    parse = lambda key: np.array([float(v) for v in kv[key].split(",") if v])
    return BlockParams(parse("theta_node").reshape(rows, cols),
                       parse("theta_edge_h").reshape(rows, cols - 1),
                       parse("theta_edge_v").reshape(rows - 1, cols))
