"""Command line front end: run analyses from a config, emit reports.

Subcommands share one config loader; flags override the loaded values.
Every run writes its fully resolved config next to the outputs, CSV and
JSON outputs are byte-deterministic for a fixed (config, seed), and each
numeric row carries its error bar. Plots are a convenience view of the
CSV, written as static SVG; nothing reads them back.

Exit codes: 0 when everything ran and every checked rule passed, 2 when
a verification rule failed, 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as cf
from . import deviations as dev
from . import limits as lim
from . import montecarlo as mc
from . import offspring as off
from .errors import BudgetExceeded, ConfigInvalid, GWError, IoFailure


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(data: dict, path: Path) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(_json_safe(data), fh, indent=1, sort_keys=False)
            fh.write("\n")
    except OSError as e:
        raise IoFailure(str(e)) from e


def _write_csv(header: list[str], rows, path: Path) -> None:
    """Fixed column order, 15 significant digits; header-only when empty."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, (int, str)) else f"{v:.15g}"
                            for v in row])
    except OSError as e:
        raise IoFailure(str(e)) from e


def _prepare(args, default_regime: str = "ddev"):
    """Config plus output directory, with the resolved config written."""
    if args.config is not None:
        cfg = cf.load_config(args.config)
    else:
        cfg = cf.default_config(default_regime)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.no_plots:
        cfg = replace(cfg, emit_plots=False)
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.toml").write_text(cf.serialize_config(cfg))
    except OSError as e:
        raise IoFailure(str(e)) from e
    return cfg, out


def _law_report(law: off.OffspringLaw) -> dict:
    c = off.classify(law)
    return {
        "name": law.name,
        "mean": law.mean,
        "variance": law.variance,
        "extinction_probability": c.extinction_prob,
        "gamma": c.gamma,
        "alpha": c.alpha,
        "beta": c.beta,
        "lattice_span": c.lattice_type[0],
        "min_offspring": c.lattice_type[1],
        "case": c.case,
        "truncated_mass": law.truncated_mass,
    }


def cmd_analyze_law(args) -> int:
    cfg, out = _prepare(args)
    rep = _law_report(cf.build_law(cfg))
    _write_json(rep, out / "law.json")
    for k in ("mean", "extinction_probability", "gamma", "alpha",
              "lattice_span", "min_offspring", "case"):
        print(f"{k} = {rep[k]}")
    return 0


def cmd_limits(args) -> int:
    cfg, out = _prepare(args)
    law = cf.build_law(cfg)
    rep = lim.build_limit_report(law)
    _write_json(rep.to_json_dict(), out / "limits.json")
    d = rep.convergence_diagnostics
    print(f"case = {off.classify(law).case}")
    for k in sorted(d):
        print(f"{k} gap = {d[k]:.3g}")
    return 0


def _tail_cell(cfg, law, X, n: int):
    eps = cf.build_epsilon(cfg).value(n, law.mean)
    if cfg.regime in ("bottcher", "bottcher_lattice"):
        bt = dev.bottcher_log_tail(law, X, n, eps)
        return (n, eps, math.exp(bt.log_value), bt.log_value,
                math.exp(bt.log_error_bar))
    d = dev.decomposition_tail(law, X, n, eps, trunc_tol=1e-15)
    logp = math.log(d.value) if d.value > 0.0 else -math.inf
    return (n, eps, d.value, logp, d.error_bar)


def cmd_exact_tail(args) -> int:
    cfg, out = _prepare(args)
    law, X = cf.build_law(cfg), cf.build_increments(cfg)
    t0 = time.monotonic()
    if args.threads > 1:
        # cells are independent; submission order fixes the row order
        with ThreadPoolExecutor(max_workers=args.threads) as ex:
            rows = list(ex.map(lambda n: _tail_cell(cfg, law, X, n),
                               cfg.n_range))
    else:
        rows = []
        for n in cfg.n_range:
            if time.monotonic() - t0 > cfg.time_limit_s:
                raise BudgetExceeded(f"time budget {cfg.time_limit_s}s "
                                     f"hit before n={n}")
            rows.append(_tail_cell(cfg, law, X, n))
    _write_csv(["n", "epsilon", "probability", "log_probability",
                "error_bar"], rows, out / "exact_tail.csv")
    for r in rows:
        print(f"n={r[0]} eps={r[1]:.6g} P={r[2]:.6g} logP={r[3]:.6g}")
    return 0


def cmd_mc_tail(args) -> int:
    cfg, out = _prepare(args)
    law, X = cf.build_law(cfg), cf.build_increments(cfg)
    fam = cf.build_epsilon(cfg)
    batches, entries = [], []
    for i, n in enumerate(cfg.n_range):
        eps = fam.value(n, law.mean)
        b = mc.estimate_rn_tail(law, X, n, eps, cfg.seed + i,
                                cfg.mc_replications,
                                draw_budget=cfg.draw_budget)
        batches.append(b)
        est = b.estimate(0)
        entries.append({"n": n, "seed": b.seed, "replications": b.replications,
                        "epsilon": eps, "estimate": est.value,
                        "ci_low": est.ci_low, "ci_high": est.ci_high,
                        "survivors": b.survivors,
                        "draws_used": b.draws_used})
        print(f"n={n} eps={eps:.6g} estimate={est.value:.6g} "
              f"ci=[{est.ci_low:.6g}, {est.ci_high:.6g}]")
    mc.write_mc_csv(batches, out / "mc_tail.csv")
    _write_json({"rows": entries}, out / "mc_tail.json")
    return 0


EXPERIMENT_HEADER = ["regime", "n", "epsilon", "raw_probability",
                     "log_probability", "error_bar", "normalized_value",
                     "target_low", "target_high"]


def emit_report(results, out: Path, *, plots: bool = False) -> dict:
    """Combined experiment report: experiments.csv + summary.json.

    One CSV row per (regime, n); an empty result list still writes the
    header and a summary with zero experiments. Plot files are derived
    views of the same rows, one per experiment.
    """
    rows = []
    for res in results:
        for r in res.rows:
            rows.append([res.experiment.regime, r.n, r.epsilon,
                         r.raw_probability, r.log_probability, r.error_bar,
                         r.normalized_value, r.target_low, r.target_high])
    _write_csv(EXPERIMENT_HEADER, rows, out / "experiments.csv")
    summary = {"experiments": len(results),
               "passed": sum(1 for r in results if r.passed),
               "all_passed": all(r.passed for r in results),
               "results": [r.to_json_dict() for r in results]}
    _write_json(summary, out / "summary.json")
    if plots:
        for res in results:
            _plot_experiment(res,
                             out / f"experiment_{res.experiment.regime}.svg")
    return summary


def _plot_experiment(res: dev.ExperimentResult, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "gwdev"
    import matplotlib.pyplot as plt

    ns = [r.n for r in res.rows]
    vs = [r.normalized_value for r in res.rows]
    lo, hi = res.prediction.target_low, res.prediction.target_high
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if res.prediction.point_target:
        ax.axhline(lo, color="tab:red", lw=1.0, label="target")
    else:
        ax.axhspan(lo, hi, color="tab:red", alpha=0.15, label="bracket")
        ax.axhline(lo, color="tab:red", lw=0.6)
        ax.axhline(hi, color="tab:red", lw=0.6)
    ax.plot(ns, vs, "o-", color="tab:blue", label="normalized value")
    ax.set_xlabel("n")
    ax.set_ylabel(res.prediction.normalization)
    ax.set_title(res.experiment.regime)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_verify(args) -> int:
    want = args.regime.replace("-", "_")
    cfg, out = _prepare(args, default_regime=want)
    # a config may pin the lattice-adapted variant of the bottcher regime
    ok = cfg.regime == want or (want, cfg.regime) == ("bottcher",
                                                      "bottcher_lattice")
    if not ok:
        raise ConfigInvalid(f"experiment.regime: config says {cfg.regime!r} "
                            f"but the command asked for {want!r}")
    exp = cf.build_experiment(cfg)
    res = dev.run_experiment(exp)
    emit_report([res], out, plots=cfg.emit_plots)
    if cfg.mc_enabled:
        # cross-check at the shallowest depth, where MC resolution reaches
        n0 = cfg.n_range[0]
        b = mc.estimate_rn_tail(exp.law, exp.increments, n0,
                                res.rows[0].epsilon, cfg.seed,
                                cfg.mc_replications,
                                draw_budget=cfg.draw_budget)
        mc.write_mc_csv([b], out / "mc_check.csv")
    for r in res.rows:
        print(f"n={r.n} eps={r.epsilon:.6g} normalized={r.normalized_value:.10g}"
              f" target=[{r.target_low:.10g}, {r.target_high:.10g}]")
    print(f"trend {'ok' if res.trend_ok else 'FAIL'}; "
          f"final {'ok' if res.final_ok else 'FAIL'} "
          f"(distance {res.distances[-1]:.4g}, "
          f"tolerance {exp.final_tolerance:g})")
    print("PASS" if res.passed else "FAIL")
    return 0 if res.passed else 2


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", default=None,
                        help="config file; omitted = regime defaults")
    shared.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (overrides config)")
    shared.add_argument("--seed", type=int, metavar="U64", default=None,
                        help="base seed (overrides config)")
    shared.add_argument("--threads", type=int, metavar="N", default=1,
                        help="worker threads for independent cells")
    shared.add_argument("--no-plots", action="store_true",
                        help="skip plot files")

    p = argparse.ArgumentParser(prog="gwdev",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze-law", parents=[shared],
                   help="offspring law constants").set_defaults(
                       func=cmd_analyze_law)
    sub.add_parser("limits", parents=[shared],
                   help="limit objects and convergence gaps").set_defaults(
                       func=cmd_limits)
    sub.add_parser("exact-tail", parents=[shared],
                   help="exact deviation probabilities over n").set_defaults(
                       func=cmd_exact_tail)
    sub.add_parser("mc-tail", parents=[shared],
                   help="Monte Carlo estimates over n").set_defaults(
                       func=cmd_mc_tail)
    v = sub.add_parser("verify", parents=[shared],
                       help="run a regime experiment against its target")
    v.add_argument("regime", choices=["ddev", "ldev-a", "ldev-b", "ldev-c",
                                      "bottcher", "ldev1"])
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except GWError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
