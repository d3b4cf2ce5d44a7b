"""Command-line front end: sampling, fitting, coding, and rate sweeps.

All subcommands read model/experiment settings from an optional plain-text
key=value spec file, with command-line flags overriding individual keys.
Rates are reported in bits per pixel; CSV output carries one row per
(n_L, n_S) layout.

Exit codes: 0 success, 2 spec error, 3 verification falsified, 4 corrupt
stream.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import chains, codec, fit as fitmod, gibbs
from .errors import CorruptStream, NoValidTiling, RccError
from .model import (Configuration, GridModel, LatticeShape, ParameterField,
                    PairwiseFamily, build_layout, load_model_params,
                    load_raster, save_model_params, save_raster)
from .oracle import ExactOracle

log = logging.getLogger("rcc")

LN2 = math.log(2.0)

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_FALSIFIED = 3
EXIT_CORRUPT = 4


@dataclass(frozen=True)
class ExperimentSpec:
    """Experiment settings; every field maps to a spec-file key and a flag."""

    q: int = 2
    theta_edge: float = 0.4
    theta_node: float = 0.0
    rows: int = 24
    cols: int = 8
    n_l_list: tuple = (1, 2, 3, 4)
    n_s_list: tuple = (1, 2, 3, 4)
    seed: int = 0
    sample_count: int = 100
    sweeps_burn_in: int = 1000
    thinning: int = 10
    eps_mu: float = 1e-6
    max_iter: int = 50000
    max_n: int = 4
    out_dir: str = "rcc_out"

    def family(self):
        if self.q != 2:
            raise ValueError("built-in experiments use the q=2 spin family")
        return PairwiseFamily.ising()

    def parameter_field(self):
        return ParameterField.homogeneous(self.rows, self.theta_node,
                                          self.theta_edge)

    def model(self):
        return GridModel.from_row_invariant(
            self.family(), LatticeShape(self.rows, self.cols),
            self.parameter_field())

    def sampler_config(self):
        return gibbs.SamplerConfig(self.seed, self.sample_count,
                                   self.sweeps_burn_in, self.thinning)


_INT_LIST_FIELDS = {"n_l_list", "n_s_list"}


def _coerce(name, ftype, raw):
    if name in _INT_LIST_FIELDS:
        return tuple(int(v) for v in str(raw).split(",") if v != "")
    return ftype(raw)


def load_spec(path=None, overrides=None):
    """Spec from defaults, then file keys, then non-None overrides."""
    spec = ExperimentSpec()
    ftypes = {"q": int, "theta_edge": float, "theta_node": float, "rows": int,
              "cols": int, "n_l_list": tuple, "n_s_list": tuple, "seed": int,
              "sample_count": int, "sweeps_burn_in": int, "thinning": int,
              "eps_mu": float, "max_iter": int, "max_n": int, "out_dir": str}
    if path is not None:
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, val = line.partition("=")
                key = key.strip()
                if key not in ftypes:
                    raise ValueError(f"unknown spec key {key!r}")
                spec = replace(spec, **{key: _coerce(key, ftypes[key], val.strip())})
    for key, val in (overrides or {}).items():
        if val is not None:
            spec = replace(spec, **{key: _coerce(key, ftypes[key], val)})
    return spec


# --- empirical rate estimators ---------------------------------------------------

def empirical_line_rate(samples, layout, family, theta_star, cap=None):
    """Mean -log2 of the reduced model on sampled line blocks, per pixel."""
    n_L = layout.n_L
    cols = samples.shape[2]
    model = GridModel(family, theta_star.shape, theta_star)
    phi = chains.log_partition(chains.column_chain(model, cap=cap))
    ts = theta_star.pack()
    total = 0.0
    count = 0
    from .model import statistic
    for img in samples:
        for lo, hi in layout.line_row_ranges:
            cfg = Configuration(LatticeShape(n_L, cols), img[lo:hi])
            total += phi - float(np.dot(ts, statistic(cfg, family)))
            count += 1
    return total / (count * n_L * cols * LN2)


def empirical_strip_rate(samples, layout, model, cap=None):
    """Mean -log2 p(strip | boundary rows) over sampled strips, per pixel."""
    n_S = layout.n_S
    cols = model.shape.cols
    total = 0.0
    count = 0
    for img in samples:
        for lo, hi in layout.strip_row_ranges:
            chain = codec._strip_chain(model, lo, hi, img[lo - 1], img[hi], cap=cap)
            states = [chains.pack_state(img[lo:hi, c], model.family.q)
                      for c in range(cols)]
            total -= chains.chain_log_prob(chain, states)
            count += 1
    return total / (count * n_S * cols * LN2)


def _load_sample_dir(path):
    names = sorted(n for n in os.listdir(path)
                   if n.startswith("sample_") and n.endswith(".txt"))
    if not names:
        raise ValueError(f"{path}: no sample rasters found")
    imgs = []
    q = None
    for name in names:
        cfg, q = load_raster(os.path.join(path, name))
        imgs.append(cfg.pixels)
    return np.stack(imgs), q


def _line_blocks(samples, layout):
    out = [img[lo:hi] for img in samples for lo, hi in layout.line_row_ranges]
    return np.stack(out)


# --- subcommands -----------------------------------------------------------------

def cmd_sample(spec, args):
    model = spec.model()
    samples = gibbs.gibbs_sample(model, spec.sampler_config())
    gibbs.write_sample_set(spec.out_dir, samples, spec.sampler_config(),
                           model.family, spec.parameter_field())
    save_model_params(os.path.join(spec.out_dir, "model.txt"),
                      spec.parameter_field(), model.family)
    print(f"wrote {len(samples)} samples to {spec.out_dir}")
    return EXIT_OK


def cmd_fit(spec, args):
    family = spec.family()
    layout = build_layout(spec.rows, args.n_l, args.n_s)
    if args.samples:
        samples, q = _load_sample_dir(args.samples)
        if q != family.q or samples.shape[1:] != (spec.rows, spec.cols):
            raise ValueError("sample set does not match the spec model")
        target = fitmod.empirical_moment(_line_blocks(samples, layout), family)
        target = fitmod.shrink_toward_uniform(target, family, args.n_l, spec.cols)
    else:
        oracle = ExactOracle(spec.model())
        target = oracle.analysis.block_moments(*oracle.centered_rows(args.n_l))
    result = fitmod.fit(target, family, args.n_l, spec.cols,
                        eps_mu=spec.eps_mu, max_iter=spec.max_iter)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    fitmod.save_fit_result(args.out, result)
    print(f"fit converged in {result.iterations} iterations, "
          f"residual {result.final_gradient_norm:.3g}; wrote {args.out}")
    return EXIT_OK


def cmd_encode(spec, args):
    cfg, q = load_raster(args.image)
    family = spec.family()
    if q != family.q:
        raise ValueError("image alphabet does not match the model")
    rows = cfg.shape.rows
    field = ParameterField.homogeneous(rows, spec.theta_node, spec.theta_edge)
    layout = build_layout(rows, args.n_l, args.n_s)
    if args.fit:
        theta_star = fitmod.load_fit_theta(args.fit)
    else:
        model = GridModel.from_row_invariant(family, cfg.shape, field)
        theta_star = ExactOracle(model).line_theta(args.n_l)
    stream = codec.encode_image(cfg, layout, family, field, theta_star)
    data = stream.to_bytes()
    with open(args.out, "wb") as f:
        f.write(data)
    print(f"encoded {cfg.shape.rows}x{cfg.shape.cols} image: "
          f"{stream.payload_bits} payload bits "
          f"({stream.rate_bits_per_pixel:.4f} bits/pixel), "
          f"{len(data)} container bytes -> {args.out}")
    return EXIT_OK


def cmd_decode(spec, args):
    with open(args.stream, "rb") as f:
        data = f.read()
    stream = codec.deserialize(data)
    cfg = codec.decode_image(stream)
    save_raster(args.out, cfg, stream.family.q)
    print(f"decoded {cfg.shape.rows}x{cfg.shape.cols} image -> {args.out}")
    return EXIT_OK


def _sweep_rows(spec, samples=None):
    oracle = ExactOracle(spec.model())
    model = spec.model()
    rows = []
    for n_L in spec.n_l_list:
        for n_S in spec.n_s_list:
            try:
                layout = build_layout(spec.rows, n_L, n_S)
            except NoValidTiling as exc:
                log.warning("skipping (n_L=%d, n_S=%d): %s", n_L, n_S, exc)
                continue
            theta_star = oracle.line_theta(n_L)
            rate = oracle.total_rate(layout, theta_star)
            red = oracle.redundancy_decomposition(layout, theta_star)
            row = {
                "n_L": n_L, "n_S": n_S,
                "line_rate": rate.line_rate_bits_per_pixel,
                "strip_rate": rate.strip_rate_bits_per_pixel,
                "combined_exact": rate.combined_rate_exact,
                "combined_approx": rate.combined_rate_approx,
                "correlation_term": red.correlation_term,
                "distribution_term": red.distribution_term,
                "redundancy_total": red.total,
                "redundancy_direct": red.direct_total,
            }
            if samples is not None:
                row["empirical_line_rate"] = empirical_line_rate(
                    samples, layout, model.family, theta_star)
                row["empirical_strip_rate"] = empirical_strip_rate(
                    samples, layout, model)
            rows.append(row)
    return rows


def _write_csv(path, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def cmd_rates(spec, args):
    samples = None
    if args.samples:
        samples, q = _load_sample_dir(args.samples)
        if q != spec.q or samples.shape[1:] != (spec.rows, spec.cols):
            raise ValueError("sample set does not match the spec model")
    rows = _sweep_rows(spec, samples)
    if not rows:
        raise ValueError("no (n_L, n_S) pair admits a valid layout")
    out = args.out or os.path.join(spec.out_dir, "rates.csv")
    _write_csv(out, rows)
    print(f"wrote {len(rows)} sweep rows to {out}")
    return EXIT_OK


def cmd_redundancy(spec, args):
    oracle = ExactOracle(spec.model())
    layout = build_layout(spec.rows, args.n_l, args.n_s)
    red = oracle.redundancy_decomposition(layout)
    print(f"n_L={args.n_l} n_S={args.n_s} "
          f"correlation={red.correlation_term:.10f} "
          f"distribution={red.distribution_term:.10f} "
          f"total={red.total:.10f} direct={red.direct_total:.10f} "
          f"(all bits/pixel)")
    return EXIT_OK


def cmd_verify(spec, args):
    oracle = ExactOracle(spec.model())
    entries = oracle.verify_propositions(max_n=spec.max_n)
    out = args.out or os.path.join(spec.out_dir, "verify.txt")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as f:
        for e in entries:
            f.write(e.format() + "\n")
    failed = [e for e in entries if e.status == "fail"]
    for e in entries:
        print(e.format())
    print(f"wrote ledger to {out}")
    return EXIT_FALSIFIED if failed else EXIT_OK


# --- argument parsing --------------------------------------------------------------

def _add_spec_flags(p):
    p.add_argument("--spec", help="plain-text key=value spec file")
    p.add_argument("--q", type=int)
    p.add_argument("--theta-edge", dest="theta_edge", type=float)
    p.add_argument("--theta-node", dest="theta_node", type=float)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--n-l-list", dest="n_l_list")
    p.add_argument("--n-s-list", dest="n_s_list")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-count", dest="sample_count", type=int)
    p.add_argument("--sweeps-burn-in", dest="sweeps_burn_in", type=int)
    p.add_argument("--thinning", type=int)
    p.add_argument("--eps-mu", dest="eps_mu", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--max-n", dest="max_n", type=int)
    p.add_argument("--out-dir", dest="out_dir")


_SPEC_KEYS = ("q", "theta_edge", "theta_node", "rows", "cols", "n_l_list",
              "n_s_list", "seed", "sample_count", "sweeps_burn_in", "thinning",
              "eps_mu", "max_iter", "max_n", "out_dir")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rcc",
        description="Cutset-based lossless coding workbench for lattice MRFs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw Gibbs samples from the model")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="moment-match the reduced line model")
    _add_spec_flags(p)
    p.add_argument("--n-l", dest="n_l", type=int, required=True)
    p.add_argument("--n-s", dest="n_s", type=int, required=True)
    p.add_argument("--samples", help="sample dir for empirical moments "
                                     "(default: exact oracle moments)")
    p.add_argument("--out", required=True, help="fit result file")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("encode", help="encode a raster image")
    _add_spec_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--n-l", dest="n_l", type=int, required=True)
    p.add_argument("--n-s", dest="n_s", type=int, required=True)
    p.add_argument("--fit", help="fit result file with the line parameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a coded stream to a raster")
    _add_spec_flags(p)
    p.add_argument("--stream", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("rates", help="sweep layouts and emit rate CSV")
    _add_spec_flags(p)
    p.add_argument("--samples", help="sample dir for empirical estimators")
    p.add_argument("--out", help="CSV path (default <out_dir>/rates.csv)")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("redundancy", help="redundancy split for one layout")
    _add_spec_flags(p)
    p.add_argument("--n-l", dest="n_l", type=int, required=True)
    p.add_argument("--n-s", dest="n_s", type=int, required=True)
    p.set_defaults(func=cmd_redundancy)

    p = sub.add_parser("verify", help="check rate orderings and identities")
    _add_spec_flags(p)
    p.add_argument("--out", help="ledger path (default <out_dir>/verify.txt)")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in _SPEC_KEYS}
        spec = load_spec(args.spec, overrides)
        return args.func(spec, args)
    except CorruptStream as exc:
        log.error("corrupt stream: %s", exc)
        return EXIT_CORRUPT
    except (RccError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
