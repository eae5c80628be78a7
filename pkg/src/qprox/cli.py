"""Command-line harness.

Subcommands: ``generate`` (instance to file), ``run-central``,
``run-distributed``, ``analyze``, and ``reproduce-fig1`` (the bundled
comparison experiment: 11/13/15-bit quantization vs none on one
instance).  Report-producing commands write a rendered PNG next to
every delimited output.

Exit codes: 0 on success, 2 for a malformed or unknown configuration
key, 3 for a violated run precondition.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import analysis, io, problem
from .central import convergence_constants, exact_reference, inexact_prox_svrg
from .config import (RunConfig, config_hash, parse_config,
                     validate_quantization, validate_step)
from .distributed import bit_upper_bound, run_distributed
from .errors import ConfigError, FitRefusedError, ParameterError, QproxError

REFERENCE_TOL = 1e-12


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed_master=args.seed, seed_instance=None,
                      seed_ell=None, seed_dither=None)
    if getattr(args, "bits", None) is not None:
        cfg = replace(cfg, bits=args.bits)
    if getattr(args, "outer", None) is not None:
        cfg = replace(cfg, S=args.outer)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "force", False):
        cfg = replace(cfg, force=True)
    return cfg


def _instance_for(cfg: RunConfig, instance_path=None):
    if instance_path:
        return io.load_instance(instance_path)
    seeds = cfg.resolved_seeds()
    reg = problem.RegularizerSpec(cfg.regularizer, cfg.lambda1, cfg.lambda2)
    return problem.generate_instance(cfg.N, cfg.d, cfg.m, cfg.rows, reg,
                                     seeds["seed_instance"],
                                     x_scale=cfg.x_scale)


def _prepare(cfg: RunConfig, instance_path=None):
    """Instance, smoothness, resolved step/loop sizes, run metadata."""
    validate_quantization(cfg)
    inst = _instance_for(cfg, instance_path)
    sm = inst.smoothness()
    eta = cfg.resolved_eta(sm.L_bar)
    T = cfg.resolved_T()
    validate_step(cfg, eta, sm.L_bar)
    meta = dict(cfg.resolved_seeds(), config_hash=config_hash(cfg))
    try:
        alpha, _, applicable = convergence_constants(sm.mu, sm.L_bar, eta, T)
        if not applicable:
            print(f"note: alpha = {alpha:.4g} >= 1; "
                  "linear-rate guarantee void for this configuration")
    except ParameterError as exc:
        print(f"note: rate constants unavailable ({exc})")
    return inst, sm, eta, T, meta


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _savefig(fig, path):
    fig.savefig(path, dpi=150, bbox_inches="tight")


def _plot_series(out_png, series, title, ylabel="objective gap"):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in series:
        x = np.arange(len(values))
        positive = np.asarray(values) > 0
        ax.semilogy(x[positive], np.asarray(values)[positive], label=label)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _savefig(fig, out_png)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    cfg = _load_config(args)
    validate_quantization(cfg)
    inst = _instance_for(cfg)
    out_dir = _ensure_dir(cfg.out_dir)
    path = os.path.join(out_dir, "instance.qprx")
    io.save_instance(path, inst)
    io.write_xgen_csv(os.path.join(out_dir, "x_gen.csv"), inst)
    print(f"wrote {path} (N={inst.N}, P={inst.P})")
    return 0


def cmd_run_central(args) -> int:
    cfg = _load_config(args)
    inst, sm, eta, T, meta = _prepare(cfg, args.instance)
    x_star = exact_reference(inst, tol=REFERENCE_TOL)
    trace = inexact_prox_svrg(inst, eta, T, cfg.S, seed=meta["seed_ell"],
                              x_star=x_star, force=cfg.force, meta=meta)
    out_dir = _ensure_dir(cfg.out_dir)
    path = os.path.join(out_dir, "trace_central.csv")
    io.write_trace(path, trace)
    print(f"wrote {path} (final gap {trace.gap[-1]:.3e})")
    return 0


def cmd_run_distributed(args) -> int:
    cfg = _load_config(args)
    inst, sm, eta, T, meta = _prepare(cfg, args.instance)
    x_star = exact_reference(inst, tol=REFERENCE_TOL)
    trace, ledger, log = run_distributed(
        inst, eta=eta, T=T, S=cfg.S, bits=cfg.bits, kappa=cfg.kappa,
        C_a=cfg.C_a, C_b=cfg.C_b, C_c=cfg.C_c, C_d=cfg.C_d,
        seed_ell=meta["seed_ell"], seed_dither=meta["seed_dither"],
        unquantized=cfg.unquantized, x_star=x_star, force=cfg.force,
        meta=meta)
    out_dir = _ensure_dir(cfg.out_dir)
    io.write_trace(os.path.join(out_dir, "trace_distributed.csv"), trace)
    io.write_ledger(os.path.join(out_dir, "ledger.csv"), ledger, meta)
    io.save_quantlog(os.path.join(out_dir, "quantlog.qprl"), log)
    cap = bit_upper_bound(inst.N, T, inst.graph.max_degree, max(inst.m),
                          cfg.bits if not cfg.unquantized else 64)
    worst = max(ledger.round_payload_bits(s) for s in range(cfg.S))
    print(f"wrote {out_dir}/trace_distributed.csv ledger.csv quantlog.qprl")
    print(f"final gap {trace.gap[-1]:.3e}; overflows {log.overflow_count}; "
          f"worst round payload {worst} <= bound {cap}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    inst = _instance_for(cfg, args.instance)
    sm = inst.smoothness()
    eta = cfg.resolved_eta(sm.L_bar)
    T = cfg.resolved_T()
    trace = io.read_trace(args.trace)
    S = len(trace)

    rows = [("L_bar", sm.L_bar), ("mu", sm.mu), ("eta", eta), ("T", T)]
    alpha = beta = None
    try:
        alpha, beta, applicable = convergence_constants(sm.mu, sm.L_bar, eta, T)
        rows += [("alpha", alpha), ("beta", beta),
                 ("alpha_lt_1", applicable)]
    except ParameterError as exc:
        rows += [("alpha", f"unavailable ({exc})")]

    try:
        rho, r2 = analysis.fit_linear_rate(trace.gap)
        rows += [("gap_fit_rate", rho), ("gap_fit_r2", r2)]
    except (FitRefusedError, ParameterError) as exc:
        rho = None
        rows += [("gap_fit_rate", f"refused ({exc})")]

    envelope_series = None
    if not cfg.unquantized and alpha is not None:
        p = analysis.EnvelopeParams(
            D=inst.graph.max_degree, T=T, m_bar=max(inst.m), bits=cfg.bits,
            L_bar=sm.L_bar, mu=sm.mu, eta=eta, kappa=cfg.kappa,
            C_a=cfg.C_a, C_b=cfg.C_b, C_c=cfg.C_c, C_d=cfg.C_d, N=inst.N)
        rows += [("C", p.C), ("envelope_applicable", p.envelope_applicable)]
        if p.envelope_applicable:
            envelope_series = np.array(
                [analysis.gap_envelope(p, s, trace.gap[0]) for s in range(S)])
            rows.append(("gap_within_envelope",
                         bool(np.all(trace.gap <= envelope_series * (1 + 1e-9)))))
        gamma_cap = p.C * cfg.kappa ** np.arange(S)
        rows.append(("gamma_within_1.1C",
                     bool(np.all(trace.gamma <= 1.1 * gamma_cap))))
        try:
            grho, _ = analysis.fit_linear_rate(trace.gamma)
            rows += [("gamma_fit_rate", grho),
                     ("gamma_rate_le_1.05kappa", bool(grho <= 1.05 * cfg.kappa))]
        except (FitRefusedError, ParameterError) as exc:
            rows.append(("gamma_fit_rate", f"refused ({exc})"))
        rows.append(("overflows", int(trace.overflows[-1])))

    out_dir = _ensure_dir(cfg.out_dir)
    csv_path = os.path.join(out_dir, "analysis.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(io.meta_comment(dict(config_hash=config_hash(cfg))) + "\n")
        fh.write("metric,value\n")
        for k, v in rows:
            fh.write(f"{k},{v}\n")
    summary = os.path.join(out_dir, "summary.txt")
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in rows:
            fh.write(f"{k:28s} {v}\n")
    if not args.no_plot:
        series = [("gap", trace.gap)]
        if envelope_series is not None:
            series.append(("envelope", envelope_series))
        if np.any(trace.gamma > 0):
            series.append(("error energy", trace.gamma))
        _plot_series(os.path.join(out_dir, "analysis.png"), series,
                     "trace vs envelope", "value")
    print(f"wrote {csv_path} and {summary}")
    for k, v in rows:
        print(f"  {k:28s} {v}")
    return 0


def cmd_reproduce_fig1(args) -> int:
    cfg = _load_config(args)
    inst, sm, eta, T, meta = _prepare(cfg, args.instance)
    x_star = exact_reference(inst, tol=REFERENCE_TOL)
    out_dir = _ensure_dir(cfg.out_dir)

    runs = []
    for label, bits in (("n=11", 11), ("n=13", 13), ("n=15", 15),
                        ("unquantized", None)):
        trace, _, log = run_distributed(
            inst, eta=eta, T=T, S=cfg.S,
            bits=bits if bits else cfg.bits, kappa=cfg.kappa,
            C_a=cfg.C_a, C_b=cfg.C_b, C_c=cfg.C_c, C_d=cfg.C_d,
            seed_ell=meta["seed_ell"], seed_dither=meta["seed_dither"],
            unquantized=bits is None, x_star=x_star, force=cfg.force,
            meta=dict(meta, series=label))
        runs.append((label, trace))
        print(f"{label:12s} final gap {trace.gap[-1]:.3e} "
              f"(overflows {log.overflow_count})")

    csv_path = os.path.join(out_dir, "fig1.csv")
    lines = [io.meta_comment(meta), "series,s,gap,bits_cum"]
    for label, trace in runs:
        for s in range(len(trace)):
            lines.append(f"{label},{s},{repr(float(trace.gap[s]))},"
                         f"{repr(float(trace.bits_cum[s]))}")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if not args.no_plot:
        _plot_series(os.path.join(out_dir, "fig1.png"),
                     [(label, trace.gap) for label, trace in runs],
                     "quantized vs unquantized convergence")
    finals = {label: trace.gap[-1] for label, trace in runs}
    ordered = (finals["n=11"] > finals["n=13"] > finals["n=15"]
               > finals["unquantized"])
    print(f"wrote {csv_path}; floors ordered: {ordered}")
    return 0


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="qprox", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, instance=True):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--bits", type=int, help="override codeword width")
        p.add_argument("--outer", type=int, help="override outer rounds")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--force", action="store_true",
                       help="run despite violated step preconditions")
        p.add_argument("--no-plot", action="store_true",
                       help="skip figure rendering")
        if instance:
            p.add_argument("--instance", help="reuse a saved instance file")

    p = sub.add_parser("generate", help="generate an instance and save it")
    common(p, instance=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run-central", help="centralized solver run")
    common(p)
    p.set_defaults(func=cmd_run_central)

    p = sub.add_parser("run-distributed", help="distributed quantized run")
    common(p)
    p.set_defaults(func=cmd_run_distributed)

    p = sub.add_parser("analyze", help="constants, fits, envelope verdicts")
    common(p)
    p.add_argument("--trace", required=True, help="trace CSV to analyze")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce-fig1",
                       help="11/13/15-bit vs unquantized comparison")
    common(p)
    p.set_defaults(func=cmd_reproduce_fig1)
    return top


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if exc.line is not None:
            print(f"  offending line: {exc.line}", file=sys.stderr)
        return 2
    except ParameterError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return 3
    except QproxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
