"""
Configuration-driven experiment runner.

Configs are INI files with ``[problem]``, ``[run]``, ``[stepsize]`` and
``[output]`` sections::

    [problem]
    kind = lasso            ; lasso | nmf | quadratic
    N = 400
    n = 800
    m = 800
    seed = 1                ; or: file = instance.bin

    [run]
    mode = simulated        ; serial | simulated | async
    delay = poisson:4       ; poisson:P | deterministic:T | empirical:q0,q1,... | empirical:@path
    epochs = 100
    seed = 0
    seeds = 0-19            ; seed set for ``compare``

    [stepsize]
    regime = NonsmoothConvex  ; any Regime value, or explicit
    rho = best              ; default (1 + 1/p) | best | <number>
    safety = 0.99
    tau = max_sampled       ; MaxDelayExperiment only: <number> | max_sampled

    [output]
    dir = out

A ``summary.json`` written by ``run`` is itself a valid config.

Exit status: 0 success, 1 usage or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import re
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .delay_model import Deterministic, Empirical, Poisson, load_empirical, moments
from .engine import RunConfig, run, simulated_delays
from .metrics import write_histogram_csv, write_trace_csv
from .problems import lasso_generate, load_instance, nmf_generate, quadratic_toy
from .stepsize_policy import (
    DEFAULT_SAFETY,
    Regime,
    StepsizeChoice,
    best_rho_nonsmooth_convex,
    choose_rho,
    eta_experiment,
    eta_nonsmooth_convex,
    eta_nonsmooth_nonconvex,
    eta_smooth_convex,
    eta_smooth_nonconvex,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
SECTIONS = ("problem", "run", "stepsize", "output")


class ConfigError(ValueError):
    """The configuration cannot be resolved to a run."""


class NumericFailure(RuntimeError):
    """The run diverged or no admissible stepsize exists."""


# ---------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    """Raw string sections plus the path they came from."""

    sections: dict
    source: Optional[str] = None

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    def canonical(self) -> str:
        return json.dumps({s: dict(sorted(self.sections.get(s, {}).items())) for s in SECTIONS}, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def label(self) -> str:
        lab = self.get("output", "label")
        if lab:
            return lab
        if self.source:
            return os.path.splitext(os.path.basename(self.source))[0]
        return "run"


def load_config(path: str) -> ExperimentConfig:
    """Read an INI config, or the ``config`` block of a ``summary.json``."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        cfg = data.get("config")
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: JSON has no 'config' block")
        sections = {s: {k: str(v) for k, v in cfg.get(s, {}).items()} for s in SECTIONS}
        return ExperimentConfig(sections, path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keys are case sensitive: N and n differ
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    if not cp.has_section("problem"):
        raise ConfigError(f"{path}: missing [problem] section")
    sections = {s: dict(cp.items(s)) if cp.has_section(s) else {} for s in SECTIONS}
    return ExperimentConfig(sections, path)


def _int(cfg: ExperimentConfig, section: str, key: str, default=None) -> Optional[int]:
    v = cfg.get(section, key)
    if v is None or v == "":
        return default
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got {v!r}") from None


def _float(cfg: ExperimentConfig, section: str, key: str, default=None) -> Optional[float]:
    v = cfg.get(section, key)
    if v is None or v == "":
        return default
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got {v!r}") from None


def parse_delay(text: Optional[str]):
    """``poisson:4``, ``deterministic:0``, ``empirical:0.5,0.5`` or ``empirical:@file``."""
    if text is None or text == "":
        return None
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "poisson":
            return Poisson(float(arg))
        if kind == "deterministic":
            return Deterministic(int(arg))
        if kind == "empirical":
            if arg.startswith("@"):
                return load_empirical(arg[1:])
            return Empirical(tuple(float(v) for v in arg.split(",")))
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad delay {text!r}: {exc}") from exc
    raise ConfigError(f"unknown delay kind {kind!r}; use poisson, deterministic or empirical")


def parse_seeds(text: str) -> list:
    """``3``, ``0,2,5`` or ``0-19``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        try:
            out.extend(range(int(m.group(1)), int(m.group(2)) + 1) if m else [int(part)])
        except ValueError:
            raise ConfigError(f"bad seed list {text!r}") from None
    if not out:
        raise ConfigError("empty seed list")
    return out


def build_problem(cfg: ExperimentConfig):
    path = cfg.get("problem", "file")
    if path:
        try:
            return load_instance(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load instance {path}: {exc}") from exc
    kind = cfg.get("problem", "kind")
    seed = _int(cfg, "problem", "seed", 0)
    try:
        if kind == "lasso":
            N, n = _int(cfg, "problem", "N"), _int(cfg, "problem", "n")
            if N is None or n is None:
                raise ConfigError("lasso needs N and n")
            return lasso_generate(N, n, _float(cfg, "problem", "lam"), seed, _int(cfg, "problem", "m"))
        if kind == "nmf":
            M, N, r = (_int(cfg, "problem", k) for k in ("M", "N", "r"))
            if None in (M, N, r):
                raise ConfigError("nmf needs M, N and r")
            return nmf_generate(M, N, r, seed)[0]
        if kind == "quadratic":
            n = _int(cfg, "problem", "n")
            if n is None:
                raise ConfigError("quadratic needs n")
            mu, L = _float(cfg, "problem", "mu", 1.0), _float(cfg, "problem", "L", 10.0)
            return quadratic_toy(n, mu, L, seed, _int(cfg, "problem", "m"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad problem: {exc}") from exc
    raise ConfigError(f"[problem] kind must be lasso, nmf or quadratic, got {kind!r}")


def _mean_delay(cfg: ExperimentConfig, delay) -> float:
    """Delay level fed to the stepsize formulas when ``p`` is not given."""
    p = _float(cfg, "stepsize", "p")
    if p is not None:
        return p
    mode = cfg.get("run", "mode", "serial")
    if mode == "async":
        return float(_int(cfg, "run", "threads", 1) - 1)
    if mode == "serial" or delay is None:
        return 0.0
    return moments(delay, 2.0).T


def _rho(cfg: ExperimentConfig, constants, delay) -> float:
    rule = cfg.get("stepsize", "rho", "default")
    if rule == "default":
        return choose_rho(delay.p if isinstance(delay, Poisson) else moments(delay, 2.0).T)
    if rule == "best":
        return best_rho_nonsmooth_convex(constants, delay)
    try:
        return float(rule)
    except ValueError:
        raise ConfigError(f"[stepsize] rho must be default, best or a number, got {rule!r}") from None


def _model_delay(cfg: ExperimentConfig, delay):
    """Delay model used by the stepsize formulas."""
    if delay is not None and cfg.get("run", "mode") == "simulated":
        return delay
    return Poisson(_mean_delay(cfg, delay))


def build_stepsize(cfg: ExperimentConfig, problem, seed: int) -> StepsizeChoice:
    """Resolve ``[stepsize]`` against the problem constants and run seed."""
    regime = cfg.get("stepsize", "regime", "explicit")
    c = problem.constants()
    if regime.lower() == "explicit":
        raw = cfg.get("stepsize", "eta")
        if raw is None:
            raise ConfigError("explicit stepsize needs [stepsize] eta")
        mt = re.fullmatch(r"\s*([0-9.eE+-]+)\s*/\s*L_c\s*", raw)
        try:
            eta = float(mt.group(1)) / c.L_c if mt else float(raw)
        except ValueError:
            raise ConfigError(f"[stepsize] eta must be a number or '<c>/L_c', got {raw!r}") from None
        if not eta > 0:
            raise ConfigError("[stepsize] eta must be positive")
        return StepsizeChoice(eta, Regime.EXPLICIT, float("nan"), 1.0)
    try:
        reg = Regime(regime)
    except ValueError:
        names = ", ".join(r.value for r in Regime if r is not Regime.EXPLICIT)
        raise ConfigError(f"[stepsize] regime must be explicit or one of {names}") from None
    safety = _float(cfg, "stepsize", "safety", DEFAULT_SAFETY)
    delay = parse_delay(cfg.get("run", "delay"))
    if reg is Regime.EXPECTED_DELAY:
        return eta_experiment(c, _mean_delay(cfg, delay), "expected")
    if reg is Regime.MAX_DELAY:
        tau = cfg.get("stepsize", "tau", "max_sampled")
        if tau == "max_sampled":
            if delay is None:
                raise ConfigError("tau = max_sampled needs [run] delay")
            K = _int(cfg, "run", "epochs", 1) * problem.m
            tau_v = float(simulated_delays(delay, seed, K, problem.m).max(initial=0))
        else:
            try:
                tau_v = float(tau)
            except ValueError:
                raise ConfigError(f"[stepsize] tau must be a number or max_sampled, got {tau!r}") from None
        return eta_experiment(c, tau_v, "max")
    model = _model_delay(cfg, delay)
    try:
        if reg is Regime.SMOOTH_NONCONVEX:
            return eta_smooth_nonconvex(c, moments(model, 2.0).T, safety)
        if reg is Regime.NONSMOOTH_NONCONVEX:
            return eta_nonsmooth_nonconvex(c, moments(model, 2.0).S, safety)
        mom = moments(model, _rho(cfg, c, model))
        if reg is Regime.SMOOTH_CONVEX:
            return eta_smooth_convex(c, mom, safety)
        return eta_nonsmooth_convex(c, mom, safety)
    except ConfigError:
        raise
    except ValueError as exc:
        raise NumericFailure(f"no admissible stepsize: {exc}") from exc


def build_run_config(cfg: ExperimentConfig, problem, seed: int, stepsize) -> RunConfig:
    g = lambda k, d=None: cfg.get("run", k, d)  # noqa: E731
    try:
        return RunConfig(
            mode=g("mode", "serial"),
            epochs=_int(cfg, "run", "epochs", 1),
            stepsize=stepsize,
            seed=seed,
            trace_every=_int(cfg, "run", "trace_every"),
            threads=_int(cfg, "run", "threads", 1),
            delay=parse_delay(g("delay")),
            history=_int(cfg, "run", "history"),
            read_mode=g("read_mode", "consistent_snapshot"),
            grad_mode=g("grad_mode") or None,
            trace_grad_map=g("trace_grad_map", "true").lower() in ("1", "true", "yes"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [run] section: {exc}") from exc


def run_seed(cfg: ExperimentConfig) -> int:
    return _int(cfg, "run", "seed", 0)


def seed_set(cfg: ExperimentConfig) -> list:
    s = cfg.get("run", "seeds")
    return parse_seeds(s) if s else [run_seed(cfg)]


def apply_overrides(cfg: ExperimentConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.set("run", "seed", args.seed)
        cfg.sections["run"].pop("seeds", None)
    if getattr(args, "threads", None) is not None:
        cfg.set("run", "threads", args.threads)
    if getattr(args, "epochs", None) is not None:
        cfg.set("run", "epochs", args.epochs)


# ---------------------------------------------------------------------------
# commands


def execute(cfg: ExperimentConfig, seed: Optional[int] = None):
    """Build and run one seed of an experiment. Returns ``(problem, choice, result)``."""
    seed = run_seed(cfg) if seed is None else seed
    problem = build_problem(cfg)
    choice = build_stepsize(cfg, problem, seed)
    rc = build_run_config(cfg, problem, seed, choice)
    return problem, choice, run(problem, rc)


def _json_float(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def cmd_run(cfg: ExperimentConfig, out_dir: Optional[str], emit_json: bool = False) -> int:
    out_dir = out_dir or cfg.get("output", "dir", "out")
    problem, choice, res = execute(cfg)
    os.makedirs(out_dir, exist_ok=True)
    write_trace_csv(os.path.join(out_dir, "trace.csv"), res.trace)
    write_histogram_csv(os.path.join(out_dir, "delays.csv"), res.delay_histogram)
    delay = parse_delay(cfg.get("run", "delay"))
    mom = None
    if choice.rho_used is not None:
        mom = moments(_model_delay(cfg, delay), choice.rho_used).as_dict()
    final = res.trace[-1].objective if res.trace else res.initial.objective
    summary = {
        "config": cfg.sections,
        "config_hash": cfg.digest(),
        "seed": run_seed(cfg),
        "initial_objective": _json_float(res.initial.objective),
        "final_objective": _json_float(final),
        "iterations": res.iterations,
        "eta": choice.eta,
        "bound": _json_float(choice.bound),
        "stepsize": {k: v for k, v in choice.as_dict().items() if k != "bound"},
        "moments": mom,
        "diverged": res.diverged,
        "clamp_events": res.clamp_events,
        "wall_time": res.wall_time,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if emit_json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"final objective {final:.6g} after {res.iterations} iterations, eta {choice.eta:.6g}; wrote {out_dir}")
    if res.diverged:
        print(f"error: run diverged (objective {final}); partial trace kept in {out_dir}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def stepsize_table(constants, p: float, tau: float, rho_rule: str = "default", safety: float = DEFAULT_SAFETY) -> list:
    """One row per regime plus both experimental formulas, for Poisson(``p``) delays."""
    delay = Poisson(p)
    rows = []

    def add(regime, fn):
        try:
            ch = fn()
            rows.append({"regime": regime.value, "eta": ch.eta, "bound": ch.bound, "rho": ch.rho_used, "error": None})
        except ValueError as exc:
            rows.append({"regime": regime.value, "eta": None, "bound": None, "rho": None, "error": str(exc)})

    def rho():
        if rho_rule == "best":
            return best_rho_nonsmooth_convex(constants, delay)
        return choose_rho(p) if rho_rule == "default" else float(rho_rule)

    mom2 = moments(delay, 2.0)
    add(Regime.SMOOTH_NONCONVEX, lambda: eta_smooth_nonconvex(constants, mom2.T, safety))
    add(Regime.SMOOTH_CONVEX, lambda: eta_smooth_convex(constants, moments(delay, rho()), safety))
    add(Regime.NONSMOOTH_NONCONVEX, lambda: eta_nonsmooth_nonconvex(constants, mom2.S, safety))
    add(Regime.NONSMOOTH_CONVEX, lambda: eta_nonsmooth_convex(constants, moments(delay, rho()), safety))
    add(Regime.EXPECTED_DELAY, lambda: eta_experiment(constants, p, "expected"))
    add(Regime.MAX_DELAY, lambda: eta_experiment(constants, tau, "max"))
    return rows


def cmd_stepsize(cfg: ExperimentConfig, p: Optional[float], tau: Optional[float], emit_json: bool) -> int:
    problem = build_problem(cfg)
    c = problem.constants()
    delay = parse_delay(cfg.get("run", "delay"))
    p = _mean_delay(cfg, delay) if p is None else p
    if tau is None:
        tau = _float(cfg, "stepsize", "tau", p)
    safety = _float(cfg, "stepsize", "safety", DEFAULT_SAFETY)
    rows = stepsize_table(c, p, tau, cfg.get("stepsize", "rho", "default"), safety)
    payload = {
        "constants": {"m": c.m, "L_c": c.L_c, "L_r": c.L_r, "L_f": c.L_f, "mu": c.mu},
        "p": p,
        "tau": tau,
        "rows": rows,
    }
    if emit_json:
        print(json.dumps(payload, sort_keys=True))
        return EXIT_OK
    print(f"m={c.m} L_c={c.L_c:.6g} L_r={c.L_r:.6g} L_f={c.L_f:.6g} p={p:g} tau={tau:g}")
    print(f"{'regime':<26}{'eta':>14}{'bound':>14}{'rho':>10}")
    for r in rows:
        if r["error"]:
            print(f"{r['regime']:<26}{'-':>14}{'-':>14}{'-':>10}  ({r['error']})")
        else:
            rho = "-" if r["rho"] is None else f"{r['rho']:.4g}"
            print(f"{r['regime']:<26}{r['eta']:>14.6g}{r['bound']:>14.6g}{rho:>10}")
    return EXIT_OK


def compare_traces(cfgs: list) -> tuple:
    """Seed-averaged objective per epoch for each config.

    Returns ``(epochs, columns)`` where ``columns`` maps labels to arrays
    aligned with ``epochs`` (NaN where a method has no sample).
    """
    if len(cfgs) < 2:
        raise ConfigError("compare needs at least two configs")
    ref = cfgs[0]
    for c in cfgs[1:]:
        if c.sections.get("problem") != ref.sections.get("problem"):
            raise ConfigError(f"problem instances differ between {ref.label} and {c.label}")
        if seed_set(c) != seed_set(ref):
            raise ConfigError(f"seed sets differ between {ref.label} and {c.label}")
    labels = [c.label for c in cfgs]
    if len(set(labels)) != len(labels):
        labels = [f"{lab}_{i}" for i, lab in enumerate(labels)]
    per_method = {}
    for lab, c in zip(labels, cfgs):
        sums, counts = {}, {}
        for seed in seed_set(c):
            _, _, res = execute(c, seed)
            for smp in [res.initial] + list(res.trace):
                sums[smp.epoch] = sums.get(smp.epoch, 0.0) + smp.objective
                counts[smp.epoch] = counts.get(smp.epoch, 0) + 1
        per_method[lab] = {e: sums[e] / counts[e] for e in sums}
    epochs = np.array(sorted(set().union(*per_method.values())))
    cols = {lab: np.array([d.get(e, np.nan) for e in epochs]) for lab, d in per_method.items()}
    return epochs, cols


def cmd_compare(cfgs: list, out_dir: Optional[str], emit_json: bool) -> int:
    epochs, cols = compare_traces(cfgs)
    out_dir = out_dir or cfgs[0].get("output", "dir", "out")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "compare.csv")
    with open(path, "w") as fh:
        fh.write(",".join(["epoch"] + list(cols)) + "\n")
        for r, e in enumerate(epochs):
            fh.write(",".join([format(e, ".17g")] + [format(v[r], ".17g") for v in cols.values()]) + "\n")
    final = {lab: _json_float(v[-1]) for lab, v in cols.items()}
    if emit_json:
        print(json.dumps({"csv": path, "final_objective": final}, sort_keys=True))
    else:
        for lab, v in final.items():
            print(f"{lab}: final mean objective {v}")
        print(f"wrote {path}")
    if any(v is None for v in final.values()):
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asyncbcu", description="Asynchronous block-coordinate update experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, multi=False):
        if multi:
            p.add_argument("configs", nargs="*", metavar="CONFIG")
            p.add_argument("--config", action="append", default=[], metavar="PATH")
        else:
            p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--json", action="store_true")

    common(sub.add_parser("run", help="run one experiment and write trace, delays and summary"))
    sp = sub.add_parser("stepsize", help="print the stepsize of every regime")
    common(sp)
    sp.add_argument("--p", type=float, help="expected delay (default: from the config)")
    sp.add_argument("--tau", type=float, help="maximum delay for the max-delay formula (default: p)")
    common(sub.add_parser("compare", help="seed-averaged objective traces of several configs"), multi=True)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "compare":
            paths = list(args.configs) + list(args.config)
            cfgs = [load_config(p) for p in paths]
            for c in cfgs:
                apply_overrides(c, args)
            return cmd_compare(cfgs, args.out, args.json)
        cfg = load_config(args.config)
        apply_overrides(cfg, args)
        if args.command == "run":
            return cmd_run(cfg, args.out, args.json)
        return cmd_stepsize(cfg, args.p, args.tau, args.json)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
