"""Experiment configuration: TOML in, resolved TOML out.

The file is flat and sectioned per module ([law], [increments],
[experiment], [mc], [budgets], [output]). Parsing materializes every
default, and serialize_config writes sections and keys in one fixed
order with round-trippable float formatting, so

    parse(serialize(parse(text))) == parse(text)

holds exactly and a resolved config can be diffed against any other.
Validation errors name the offending field path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:          # 3.10: same module under its old name
    import tomli as tomllib

from . import deviations as dev
from . import increments as inc
from . import offspring as off
from .errors import ConfigInvalid

LAW_KINDS = ("linear_fractional", "geometric", "two_point", "explicit")
INC_KINDS = ("rademacher", "two_point_indicator", "lattice_pmf",
             "centered_pareto_lattice")


@dataclass(frozen=True)
class ExperimentConfig:
    law_kind: str = "linear_fractional"
    law_params: dict = field(default_factory=lambda: {"mean": 2.0})
    inc_kind: str = "rademacher"
    inc_params: dict = field(default_factory=dict)
    regime: str = "ddev"
    n_range: tuple[int, ...] = (8, 9, 10, 11, 12, 13, 14)
    eps_form: str = "power"
    eps_c: float = 1.0
    eps_rho: float = 0.25
    eps_kappa: float = 0.0
    eps_lam_frac: float = 0.25
    tau: float = 0.0                  # 0 means unset; only ldev_c reads it
    k_truncation: int = 2_000_000
    final_tolerance: float = 0.25
    trend_slack: float = 1e-9
    mc_enabled: bool = False
    mc_replications: int = 100_000
    draw_budget: int = 1 << 28
    time_limit_s: float = 600.0
    out_dir: str = "gwdev_out"
    seed: int = 20260818
    emit_plots: bool = True


def _req(table: dict, section: str, key: str, types, path: str):
    if key not in table:
        raise ConfigInvalid(f"{path}: required field missing")
    v = table[key]
    if not isinstance(v, types) or isinstance(v, bool) and types is not bool:
        raise ConfigInvalid(f"{path}: wrong type {type(v).__name__}")
    return v


def _opt(table: dict, key: str, default, types, path: str):
    if key not in table:
        return default
    v = table[key]
    if types is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, types) or (isinstance(v, bool) and types is not bool):
        raise ConfigInvalid(f"{path}: wrong type {type(v).__name__}")
    return v


def _int_keyed_pmf(raw: dict, path: str) -> dict[int, float]:
    out = {}
    for k, v in raw.items():
        try:
            ik = int(k)
        except (TypeError, ValueError):
            raise ConfigInvalid(f"{path}.{k}: key must be an integer") from None
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigInvalid(f"{path}.{k}: mass must be a number")
        out[ik] = float(v)
    if not out:
        raise ConfigInvalid(f"{path}: empty pmf")
    return out


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigInvalid(f"toml syntax: {e}") from e

    if "law" not in data:
        raise ConfigInvalid("law: section required")
    law = data["law"]
    law_kind = _req(law, "law", "kind", str, "law.kind")
    if law_kind not in LAW_KINDS:
        raise ConfigInvalid(f"law.kind: unknown kind {law_kind!r}")
    law_params: dict = {}
    if law_kind == "linear_fractional":
        law_params["mean"] = _opt(law, "mean", 2.0, float, "law.mean")
    elif law_kind == "geometric":
        law_params["p"] = _req(law, "law", "p", (int, float), "law.p")
    elif law_kind == "two_point":
        for k in ("k1", "k2"):
            law_params[k] = _req(law, "law", k, int, f"law.{k}")
        for k in ("p1", "p2"):
            law_params[k] = float(_req(law, "law", k, (int, float), f"law.{k}"))
    else:
        raw = _req(law, "law", "pmf", dict, "law.pmf")
        law_params["pmf"] = _int_keyed_pmf(raw, "law.pmf")

    incs = data.get("increments", {})
    inc_kind = _opt(incs, "kind", "rademacher", str, "increments.kind")
    if inc_kind not in INC_KINDS:
        raise ConfigInvalid(f"increments.kind: unknown kind {inc_kind!r}")
    inc_params: dict = {}
    if inc_kind == "two_point_indicator":
        inc_params["p"] = float(_req(incs, "increments", "p", (int, float),
                                     "increments.p"))
    elif inc_kind == "centered_pareto_lattice":
        inc_params["theta"] = float(_req(incs, "increments", "theta",
                                         (int, float), "increments.theta"))
        if "scale" in incs:
            inc_params["scale"] = _opt(incs, "scale", 1.0, float,
                                       "increments.scale")
    elif inc_kind == "lattice_pmf":
        raw = _req(incs, "increments", "pmf", dict, "increments.pmf")
        inc_params["pmf"] = _int_keyed_pmf(raw, "increments.pmf")
        inc_params["step"] = _opt(incs, "step", 1.0, float, "increments.step")

    exp = data.get("experiment", {})
    regime = _opt(exp, "regime", "ddev", str, "experiment.regime")
    regime = regime.replace("-", "_")
    if regime not in dev.REGIMES:
        raise ConfigInvalid(f"experiment.regime: unknown regime {regime!r}")
    n_raw = _opt(exp, "n_range", [8, 9, 10, 11, 12, 13, 14], list,
                 "experiment.n_range")
    if (len(n_raw) < 3
            or any(not isinstance(v, int) or isinstance(v, bool)
                   for v in n_raw)
            or list(n_raw) != sorted(set(n_raw))):
        raise ConfigInvalid(
            "experiment.n_range: need >= 3 strictly increasing integers")
    eps_form = _opt(exp, "eps_form", "power", str, "experiment.eps_form")
    if eps_form not in ("power", "bottcher_integer"):
        raise ConfigInvalid(f"experiment.eps_form: unknown form {eps_form!r}")

    mc = data.get("mc", {})
    budgets = data.get("budgets", {})
    out = data.get("output", {})

    return ExperimentConfig(
        law_kind=law_kind,
        law_params=law_params,
        inc_kind=inc_kind,
        inc_params=inc_params,
        regime=regime,
        n_range=tuple(n_raw),
        eps_form=eps_form,
        eps_c=_opt(exp, "eps_c", 1.0, float, "experiment.eps_c"),
        eps_rho=_opt(exp, "eps_rho", 0.25, float, "experiment.eps_rho"),
        eps_kappa=_opt(exp, "eps_kappa", 0.0, float, "experiment.eps_kappa"),
        eps_lam_frac=_opt(exp, "eps_lam_frac", 0.25, float,
                          "experiment.eps_lam_frac"),
        tau=_opt(exp, "tau", 0.0, float, "experiment.tau"),
        k_truncation=_opt(exp, "k_truncation", 2_000_000, int,
                          "experiment.k_truncation"),
        final_tolerance=_opt(exp, "final_tolerance", 0.25, float,
                             "experiment.final_tolerance"),
        trend_slack=_opt(exp, "trend_slack", 1e-9, float,
                         "experiment.trend_slack"),
        mc_enabled=_opt(mc, "enabled", False, bool, "mc.enabled"),
        mc_replications=_opt(mc, "replications", 100_000, int,
                             "mc.replications"),
        draw_budget=_opt(budgets, "draw_budget", 1 << 28, int,
                         "budgets.draw_budget"),
        time_limit_s=_opt(budgets, "time_limit_s", 600.0, float,
                          "budgets.time_limit_s"),
        out_dir=_opt(out, "directory", "gwdev_out", str, "output.directory"),
        seed=_opt(out, "seed", 20260818, int, "output.seed"),
        emit_plots=_opt(out, "emit_plots", True, bool, "output.emit_plots"),
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode()
    except OSError as e:
        raise ConfigInvalid(f"config file: {e}") from e
    return parse_config(text)


# ------------------------------------------------------------ serialization

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v) or math.isnan(v):
            raise ConfigInvalid(f"non-finite float {v} has no TOML form")
        s = repr(v)
        return s if ("." in s or "e" in s or "E" in s) else s + ".0"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise ConfigInvalid(f"cannot serialize {type(v).__name__}")


def _pmf_lines(pmf: dict[int, float]) -> str:
    inner = ", ".join(f'"{k}" = {_fmt(float(pmf[k]))}' for k in sorted(pmf))
    return "{ " + inner + " }"


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = ["[law]", f'kind = {_fmt(cfg.law_kind)}']
    for k in sorted(cfg.law_params):
        v = cfg.law_params[k]
        lines.append(f"{k} = {_pmf_lines(v) if k == 'pmf' else _fmt(v)}")
    lines += ["", "[increments]", f'kind = {_fmt(cfg.inc_kind)}']
    for k in sorted(cfg.inc_params):
        v = cfg.inc_params[k]
        lines.append(f"{k} = {_pmf_lines(v) if k == 'pmf' else _fmt(v)}")
    lines += [
        "", "[experiment]",
        f'regime = {_fmt(cfg.regime)}',
        f"n_range = [{', '.join(str(n) for n in cfg.n_range)}]",
        f'eps_form = {_fmt(cfg.eps_form)}',
        f"eps_c = {_fmt(cfg.eps_c)}",
        f"eps_rho = {_fmt(cfg.eps_rho)}",
        f"eps_kappa = {_fmt(cfg.eps_kappa)}",
        f"eps_lam_frac = {_fmt(cfg.eps_lam_frac)}",
        f"tau = {_fmt(cfg.tau)}",
        f"k_truncation = {cfg.k_truncation}",
        f"final_tolerance = {_fmt(cfg.final_tolerance)}",
        f"trend_slack = {_fmt(cfg.trend_slack)}",
        "", "[mc]",
        f"enabled = {_fmt(cfg.mc_enabled)}",
        f"replications = {cfg.mc_replications}",
        "", "[budgets]",
        f"draw_budget = {cfg.draw_budget}",
        f"time_limit_s = {_fmt(cfg.time_limit_s)}",
        "", "[output]",
        f'directory = {_fmt(cfg.out_dir)}',
        f"seed = {cfg.seed}",
        f"emit_plots = {_fmt(cfg.emit_plots)}",
    ]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ builders

def build_law(cfg: ExperimentConfig) -> off.OffspringLaw:
    p = cfg.law_params
    if cfg.law_kind == "linear_fractional":
        return off.linear_fractional(float(p["mean"]))
    if cfg.law_kind == "geometric":
        return off.geometric(float(p["p"]))
    if cfg.law_kind == "two_point":
        return off.two_point(p["k1"], p["k2"], p["p1"], p["p2"])
    return off.explicit(dict(p["pmf"]))


def build_increments(cfg: ExperimentConfig) -> inc.IncrementLaw:
    return inc.make_increment_law(cfg.inc_kind, **cfg.inc_params)


def build_epsilon(cfg: ExperimentConfig) -> dev.EpsilonFamily:
    return dev.EpsilonFamily(form=cfg.eps_form, c=cfg.eps_c, rho=cfg.eps_rho,
                             kappa=cfg.eps_kappa, lam_frac=cfg.eps_lam_frac)


def build_experiment(cfg: ExperimentConfig) -> dev.DeviationExperiment:
    return dev.DeviationExperiment(
        law=build_law(cfg), increments=build_increments(cfg),
        n_range=cfg.n_range, epsilon=build_epsilon(cfg), regime=cfg.regime,
        tau=cfg.tau if cfg.tau > 0.0 else math.nan,
        k_truncation=cfg.k_truncation,
        final_tolerance=cfg.final_tolerance, trend_slack=cfg.trend_slack)


# ------------------------------------------------------------ defaults

_DEFAULTS = {
    "ddev": {},
    "ldev_a": dict(law_kind="explicit", law_params={"pmf": {1: 0.2, 2: 0.8}},
                   inc_kind="centered_pareto_lattice",
                   inc_params={"theta": 2.5}, regime="ldev_a",
                   n_range=(8, 9, 10, 11, 12), eps_rho=0.45,
                   final_tolerance=0.35),
    "ldev_b": dict(law_kind="explicit", law_params={"pmf": {1: 0.2, 2: 0.8}},
                   inc_kind="centered_pareto_lattice",
                   inc_params={"theta": 2.5}, regime="ldev_b",
                   n_range=(10, 11, 12, 13, 14, 15, 16), eps_rho=0.25,
                   final_tolerance=0.30),
    "ldev_c": dict(law_kind="explicit", law_params={"pmf": {1: 0.2, 2: 0.8}},
                   inc_kind="centered_pareto_lattice",
                   inc_params={"theta": 2.5}, regime="ldev_c",
                   n_range=(8, 9, 10, 11, 12),
                   eps_rho=0.4160021169627056, tau=1.0,
                   final_tolerance=0.35),
    "bottcher": dict(law_kind="explicit",
                     law_params={"pmf": {2: 0.5, 3: 0.5}},
                     inc_kind="rademacher", regime="bottcher",
                     n_range=(8, 9, 10, 11, 12),
                     eps_form="bottcher_integer", eps_lam_frac=0.25,
                     final_tolerance=0.35),
    "bottcher_lattice": dict(law_kind="explicit",
                             law_params={"pmf": {2: 0.5, 3: 0.5}},
                             inc_kind="rademacher",
                             regime="bottcher_lattice",
                             n_range=(8, 9, 10, 11, 12),
                             eps_form="bottcher_integer", eps_lam_frac=0.25,
                             final_tolerance=0.35),
    "ldev1": dict(law_kind="explicit", law_params={"pmf": {2: 0.5, 3: 0.5}},
                  inc_kind="centered_pareto_lattice",
                  inc_params={"theta": 2.5}, regime="ldev1",
                  n_range=(6, 7, 8, 9, 10), eps_rho=0.25,
                  final_tolerance=0.35),
}


def default_config(regime: str = "ddev") -> ExperimentConfig:
    regime = regime.replace("-", "_")
    if regime not in _DEFAULTS:
        raise ConfigInvalid(f"experiment.regime: unknown regime {regime!r}")
    return replace(ExperimentConfig(), **_DEFAULTS[regime])
