"""Command line: ``sleflow <command> [options]``.

Commands: analytic, trace, tail, coupling, gff-cov, hcap.  Options can also
come from an INI file (``--config``), one section per command plus an optional
``[common]`` section; command-line flags win.  Each command writes CSV files
(with a ``# config`` comment line) into ``--out`` and, with ``--svg``, SVG
figures next to them.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("sleflow")


class ConfigError(ValueError):
    pass


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    items = [s for s in str(text).replace(";", ",").split(",") if s.strip()]
    return [float(s) for s in items]


def _complexes(text):
    if isinstance(text, (list, tuple)):
        return [complex(v) for v in text]
    out = []
    for s in str(text).split(","):
        s = s.strip().replace(" ", "").replace("i", "j")
        if s:
            out.append(complex(s))
    return out


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v}")


# option name -> (parser, default, help)
OPTIONS = {
    "analytic": {
        "kappa": (float, None, "SLE parameter"),
        "a": (float, None, "Holder power (default: the maximizer)"),
    },
    "trace": {
        "kappa": (float, 2.0, "SLE parameter"),
        "t": (float, 1.0, "final time"),
        "dt": (float, 1e-3, "driver grid step"),
        "y_min": (float, 1e-4, "trace proxy height"),
        "n_points": (int, 0, "number of trace points (0: every grid time)"),
    },
    "tail": {
        "kappa": (float, 2.0, "SLE parameter"),
        "epsilon": (float, 0.1, "exceedance threshold exponent"),
        "y_grid": (_floats, "0.5,0.25,0.125,0.0625", "comma separated heights in (0, 1)"),
        "n": (int, 10000, "samples per height"),
        "t": (float, 1.0, "flow time"),
        "tol": (float, 1e-8, "integrator tolerance"),
        "coupling": (_bool, False, "also compute the coupling constant and event counts"),
        "y0": (float, 4.0, "pin height for the coupling"),
        "delta": (float, 0.05, "lattice mesh for the coupling"),
    },
    "coupling": {
        "kappa": (float, 2.0, "SLE parameter"),
        "t": (float, 0.25, "flow time"),
        "y0": (float, 4.0, "pin height"),
        "n": (int, 1000, "number of samples"),
        "delta": (float, 0.05, "lattice mesh"),
        "box_scale": (float, 8.0, "box half-width and height in units of y0"),
        "probes": (_complexes, "0.5i,1i,1+1i", "probe points"),
        "x_grid": (_floats, "1,1.5,2,2.5,3,3.5,4", "levels for the coupling-constant tail"),
        "zero_field": (_bool, False, "inject the field h = 0"),
    },
    "gff-cov": {
        "y0": (float, 4.0, "pin height"),
        "probes": (_complexes, "0.5i,1i,2i,1+1i", "probe points"),
        "n": (int, 100000, "number of draws"),
    },
    "hcap": {
        "hcap": (_floats, "0.5,1,2", "capacities of vertical test slits"),
        "walkers": (int, 100000, "number of walkers"),
        "y_launch": (float, 50.0, "launch height"),
        "kappa": (float, 0.0, "if positive, also estimate an SLE hull"),
        "t": (float, 0.5, "time of the SLE hull"),
    },
}

# not part of the reproducibility record: they do not change results
_NOT_RECORDED = {"threads", "out", "config", "svg", "verbose"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--out", default=None, help="output directory (default: current directory)")
    common.add_argument("--config", default=None, help="INI file with option values")
    common.add_argument("--svg", action="store_true", help="also write SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="sleflow", description="Loewner flows, SLE and free-field experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name, parents=[common])
        for key, (_, default, help_) in opts.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"{help_} (default: {default})")
    return p


def resolve(args) -> dict:
    """Merge defaults, the config file and flags; parse and validate values."""
    opts = OPTIONS[args.command]
    raw = {k: d for k, (_, d, _) in opts.items()}
    raw["seed"] = 0
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise ConfigError(f"cannot read config file {args.config}")
        for section in ("common", args.command):
            if cp.has_section(section):
                for k, v in cp.items(section):
                    k = k.replace("-", "_")
                    if k not in raw and k not in ("threads", "out"):
                        raise ConfigError(f"unknown option '{k}' in section [{section}]")
                    raw[k] = v
    for k in list(opts) + ["seed", "threads", "out"]:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    cfg = {}
    for k, v in raw.items():
        if v is None:
            cfg[k] = None
            continue
        parse = opts[k][0] if k in opts else (int if k in ("seed", "threads") else str)
        try:
            cfg[k] = parse(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {k}: {v!r} ({exc})") from None
    cfg.setdefault("threads", None)
    cfg.setdefault("out", None)
    _validate(args.command, cfg)
    return cfg


def _validate(cmd, c):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)
    if "kappa" in c and c["kappa"] is not None:
        need(c["kappa"] >= 0 and math.isfinite(c["kappa"]), "kappa must be nonnegative")
    if cmd == "analytic":
        need(c["kappa"] is not None and c["kappa"] > 0, "analytic needs --kappa > 0")
        need(c["a"] is None or c["a"] > 1, "a must exceed 1")
    elif cmd == "trace":
        need(c["t"] > 0 and 0 < c["dt"] <= c["t"], "need t > 0 and 0 < dt <= t")
        need(c["y_min"] > 0, "y_min must be positive")
    elif cmd == "tail":
        need(len(c["y_grid"]) > 0, "y_grid is empty")
        need(all(0 < y < 1 for y in c["y_grid"]), "y_grid values must lie in (0, 1)")
        need(0 < c["epsilon"] < 0.5, "epsilon must lie in (0, 0.5)")
        need(0 < c["t"] <= 1, "t must lie in (0, 1]")
        need(c["n"] > 0, "n must be positive")
        need(c["kappa"] > 0, "kappa must be positive")
        need(c["y0"] > 2 * math.sqrt(2), "y0 must exceed 2*sqrt(2)")
    elif cmd == "coupling":
        need(c["kappa"] > 0, "kappa must be positive")
        need(0 <= c["t"] <= 1, "t must lie in [0, 1]")
        need(c["y0"] > 2 * math.sqrt(2), "y0 must exceed 2*sqrt(2)")
        need(c["n"] > 0 and c["delta"] > 0, "n and delta must be positive")
        need(all(z.imag > 0 for z in c["probes"]), "probes must lie in the upper half-plane")
        need(len(c["x_grid"]) > 0, "x_grid is empty")
    elif cmd == "gff-cov":
        need(c["y0"] > 2 * math.sqrt(2), "y0 must exceed 2*sqrt(2)")
        need(len(c["probes"]) > 0 and all(z.imag > 0 for z in c["probes"]), "need probes in the upper half-plane")
        need(c["n"] > 1, "n must exceed 1")
    elif cmd == "hcap":
        need(len(c["hcap"]) > 0 and all(h > 0 for h in c["hcap"]), "hcap values must be positive")
        need(c["walkers"] > 1, "walkers must exceed 1")
        need(c["y_launch"] > 0, "y_launch must be positive")
    if c.get("threads") is not None:
        need(c["threads"] >= 1, "threads must be at least 1")


def _fmt_value(v):
    if isinstance(v, list):
        return ";".join(_fmt_value(x) for x in v)
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+}i"
    return repr(v) if isinstance(v, float) else str(v)


def config_comment(cmd, cfg) -> str:
    items = [f"{k}={_fmt_value(v)}" for k, v in sorted(cfg.items()) if k not in _NOT_RECORDED]
    return "config: command=" + cmd + " " + " ".join(items)


# ----------------------------------------------------------------------------
# commands


def cmd_analytic(c, out, svg):
    from .estimator import exponent_params, holder_objective
    p = exponent_params(c["kappa"], c["a"])
    fa = float(holder_objective(p, p.a))
    print(f"kappa = {p.kappa!r}")
    print(f"Q = {p.Q!r}")
    print(f"q = {p.q!r}")
    print(f"a_max = {p.a_max!r}")
    print(f"a = {p.a!r}")
    print(f"b = {p.b!r}")
    print(f"f(a) = {fa!r}")
    if out is not None:
        from .io import write_csv
        write_csv(out / "analytic.csv", ["kappa", "Q", "q", "a_max", "a", "b", "f_a"],
                  [[p.kappa, p.Q, p.q, p.a_max, p.a, p.b, fa]], c["_comment"])


def cmd_trace(c, out, svg):
    from .driver import sample_brownian_driver
    from .hull import hull_summary, is_simple
    d = sample_brownian_driver(c["kappa"], c["t"], c["dt"], c["seed"])
    hs = hull_summary(d, c["t"], c["y_min"], c["n_points"] or None)
    hs.to_csv(out / "trace.csv", c["_comment"])
    d.to_csv(out / "driver.csv", c["_comment"])
    print(f"height = {hs.height:.6f}  hcap = {hs.hcap:.6f}  simple = {is_simple(hs.trace)}")
    if svg:
        from .plotting import plot_trace
        plot_trace(hs.times, hs.trace, out / "trace.svg", f"kappa = {c['kappa']:g}, t = {c['t']:g}")


def cmd_tail(c, out, svg):
    from .estimator import decomposition_holds, tail_experiment
    coupling = None
    if c["coupling"]:
        from .coupling import CouplingParams, MarkovHarmonic
        coupling = MarkovHarmonic.build(CouplingParams(c["kappa"], c["y0"], c["t"]), delta=c["delta"])
    est = tail_experiment(c["kappa"], c["epsilon"], c["y_grid"], c["n"], c["t"], c["seed"], tol=c["tol"],
                          threads=c["threads"], coupling=coupling)
    est.to_csv(out / "tail.csv", c["_comment"])
    print(f"counts = {est.exceed_counts.tolist()} of {est.n_per_y.tolist()}")
    if est.conclusive:
        print(f"fitted slope = {est.fitted_slope:.4f}  95% CI = ({est.slope_ci[0]:.4f}, {est.slope_ci[1]:.4f})"
              f"  q = {est.q_theory:.4f}")
    else:
        print(f"inconclusive: fewer than two heights with exceedances (q = {est.q_theory:.4f})")
    if coupling is not None:
        print(f"event decomposition holds: {decomposition_holds(est)}")
    if svg:
        from .plotting import plot_tail
        plot_tail(est, out / "tail.svg")


def cmd_coupling(c, out, svg):
    from .coupling import (CouplingParams, MarkovHarmonic, ZeroHarmonic, exceedance_curve,
                           exponential_envelope, run_coupling)
    from .gff import cov_halfplane
    from .io import write_csv
    params = CouplingParams(c["kappa"], c["y0"], c["t"])
    probes = c["probes"]
    if c["zero_field"]:
        src = ZeroHarmonic()
    else:
        src = MarkovHarmonic.build(params, delta=c["delta"], box_scale=c["box_scale"],
                                   max_probe_im=max(z.imag for z in probes))
    run = run_coupling(params, c["n"], c["seed"], src, probes=probes, threads=c["threads"])
    run.to_csv(out / "coupling_samples.csv", c["_comment"])
    G = run.accepted_G()
    target = cov_halfplane(run.probes, run.probes, params.y0)
    var = G.var(axis=0, ddof=1)
    rows = [[z.real, z.imag, var[k], target[k], (var[k] / target[k] - 1) if target[k] > 0 else 0.0]
            for k, z in enumerate(run.probes)]
    write_csv(out / "coupling_variance.csv", ["re", "im", "var_G", "target", "rel_err"], rows,
              c["_comment"] + f"\nrejected_fraction={run.rejected_fraction!r}")
    curve = exceedance_curve(run.b_t[~run.rejected], c["x_grid"])
    curve.to_csv(out / "coupling_constant_tail.csv", c["_comment"])
    C, ok = exponential_envelope(curve)
    for r in rows[:-1]:
        print(f"z = {complex(r[0], r[1])}: var G = {r[2]:.4f}  target = {r[3]:.4f}  rel err = {r[4]:+.3f}")
    print(f"rejected fraction = {run.rejected_fraction:.4f}; exp envelope C = {C:.4g} holds: {ok}")
    curv = curve.log_curvature()
    if curv.size:
        print(f"largest second difference of log P[b_t > x]: {curv.max():+.3g} (<= 0 is concave)")
    if svg:
        from .plotting import plot_coupling, plot_exceedance
        plot_coupling(run, target, out / "coupling.svg")
        plot_exceedance(curve, out / "coupling_constant_tail.svg", C)


def cmd_gff_cov(c, out, svg):
    from .gff import cov_matrix, sample_harmonic_values
    from .io import write_csv
    pts = np.array(c["probes"])
    if not np.any(np.isclose(pts, 1j * c["y0"])):
        pts = np.append(pts, 1j * c["y0"])
    C = cov_matrix(pts, c["y0"]) + 0.0   # no negative zeros at the pin
    v = sample_harmonic_values(pts, c["y0"], c["n"], c["seed"])
    E = np.cov(v.T, ddof=1)
    labels = [_fmt_value(complex(z)) for z in pts]
    rows = []
    for a in range(pts.size):
        for b in range(a, pts.size):
            x = (v[:, a] - v[:, a].mean()) * (v[:, b] - v[:, b].mean())
            se = x.std(ddof=1) / math.sqrt(c["n"])
            rows.append([labels[a], labels[b], C[a, b], E[a, b], se])
    write_csv(out / "gff_cov.csv", ["z", "w", "cov_exact", "cov_empirical", "se"], rows, c["_comment"])
    for r in rows:
        print(f"{r[0]:>14} {r[1]:>14}  exact {r[2]:.5f}  empirical {r[3]:.5f} +- {r[4]:.5f}")
    if svg:
        from .plotting import plot_matrix
        plot_matrix(C, labels, out / "gff_cov.svg", "covariance")


def cmd_hcap(c, out, svg):
    from .hull import estimate_hcap_mc, hull_summary
    from .io import write_csv
    rows = []
    for k, h in enumerate(c["hcap"]):
        e = estimate_hcap_mc([0, 1j * math.sqrt(2 * h)], c["walkers"], c["y_launch"], seed=(c["seed"] * 1000 + k))
        rows.append(["slit", h, math.sqrt(2 * h), e.value, e.stderr, e.n_exhausted])
    if c["kappa"] > 0:
        from .driver import sample_brownian_driver
        d = sample_brownian_driver(c["kappa"], c["t"], 1e-3, c["seed"])
        hs = hull_summary(d, c["t"], 1e-4)
        e = estimate_hcap_mc(hs.trace, c["walkers"], c["y_launch"], seed=c["seed"] * 1000 + 999)
        rows.append(["sle", hs.hcap, hs.height, e.value, e.stderr, e.n_exhausted])
    write_csv(out / "hcap.csv", ["hull", "hcap", "height", "estimate", "se", "exhausted"], rows, c["_comment"])
    for r in rows:
        print(f"{r[0]:5} hcap {r[1]:.4f}  height {r[2]:.4f}  estimate {r[3]:.4f} +- {r[4]:.4f}")
    if svg:
        import matplotlib.pyplot as plt
        from .plotting import _save
        fig, ax = plt.subplots()
        ax.errorbar([r[1] for r in rows], [r[3] for r in rows], yerr=[3 * r[4] for r in rows], fmt="o")
        lim = max(r[1] for r in rows) * 1.1
        ax.plot([0, lim], [0, lim], "k--", lw=0.8)
        ax.set_xlabel("hcap")
        ax.set_ylabel("estimate (3 se bars)")
        _save(fig, out / "hcap.svg")


COMMANDS = {
    "analytic": cmd_analytic,
    "trace": cmd_trace,
    "tail": cmd_tail,
    "coupling": cmd_coupling,
    "gff-cov": cmd_gff_cov,
    "hcap": cmd_hcap,
}


def run(command: str, cfg: dict, svg: bool = False) -> int:
    """Execute a resolved configuration; returns the exit code."""
    cfg = dict(cfg)
    cfg["_comment"] = config_comment(command, {k: v for k, v in cfg.items() if not k.startswith("_")})
    if cfg.get("threads") is None:
        cfg["threads"] = os.cpu_count() or 1
    out = None
    if command != "analytic" or cfg.get("out") is not None:
        out = Path(cfg.get("out") or ".")
        out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[command](cfg, out, svg)
    except Exception as exc:  # runtime failure: report and map to exit code 2
        print(f"sleflow {command}: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"sleflow {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return 1
    return run(args.command, cfg, args.svg)


if __name__ == "__main__":
    sys.exit(main())
