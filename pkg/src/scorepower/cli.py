"""Command line surface: case listing, tuning tables, single-cell power,
grid sweeps with figures, summaries, and the commitment-planning demo.

Every experiment's randomness flows from --master-seed through derived
streams.  Tuning streams are pinned to a package constant so the epsilon
tables stay stable across experiment seeds.  Sweep runs write their
resolved config first and a manifest with content digests last, so a run
directory is self-describing.

Exit codes: 0 success, 2 config or precondition error, 3 partial failure
(some cells masked by errors).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy

from . import __version__
from .decision import (
    loo_power,
    make_perturbation,
    plan_to_json,
    profit_report,
    scenarios_from_csv,
    select_plants,
)
from .power import DEFAULT_TUNE_SEED, TrialConfig, power_analysis, tune_epsilon
from .ror import (
    DESK_GRID,
    PAPER_GRID,
    SweepGrid,
    contours_to_json,
    extract_contours,
    ror_fraction,
    smooth_surface,
    summary_max_mean,
    surface_from_csv,
    surface_to_csv,
    svg_heatmap,
    sweep,
)
from .scoring import ScoringRule
from .testcases import TestCaseId, list_cases, make_case

__all__ = ["main", "build_parser", "RunConfig"]

ENV_OUTPUT_DIR = "SCOREPOWER_OUTPUT"
DEFAULT_OUTPUT_DIR = "runs"
DEFAULT_RULES = ("crps-q", "es-partial", "vg", "nll")

# (grid, K) per profile; desk is sized for a laptop-class run
PROFILES = {"desk": (DESK_GRID, 200), "paper": (PAPER_GRID, 1000)}

# mask reasons that are deliberate skips rather than failures
_STRUCTURAL_MASKS = ("m <= d", "skipped:")

LOO_CAVEAT = "rows are reused across leave-one-out trials, so power leans high"


class ConfigError(ValueError):
    pass


def _parse_cases(names: Sequence[str]) -> Tuple[TestCaseId, ...]:
    if list(names) == ["all"]:
        return tuple(info.case for info in list_cases())
    out = []
    for name in names:
        try:
            out.append(TestCaseId(name))
        except ValueError:
            valid = ", ".join(c.value for c in TestCaseId)
            raise ConfigError(f"unknown case {name!r}; expected one of {valid}")
    if not out:
        raise ConfigError("no cases selected")
    return tuple(out)


def _parse_rules(specs: Sequence[str]) -> Tuple[ScoringRule, ...]:
    if not specs:
        raise ConfigError("no rules selected")
    try:
        return tuple(ScoringRule.from_string(s) for s in specs)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _rule_dir(rule: ScoringRule) -> str:
    return rule.label.replace(":p=", "-p")


def _finite_or_none(x: float) -> Optional[float]:
    return float(x) if math.isfinite(x) else None


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved sweep configuration, validated before any work."""

    cases: Tuple[TestCaseId, ...]
    rules: Tuple[ScoringRule, ...]
    grid: SweepGrid
    K: int
    n: int
    alpha: float
    target_power: float
    master_seed: int
    output_dir: Path
    profile: str

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError(f"need K >= 2 trials, got {self.K}")
        if self.n < 1:
            raise ConfigError(f"need n >= 1, got {self.n}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.target_power < 1.0:
            raise ConfigError(
                f"target power must be in (0, 1), got {self.target_power}")
        if not self.cases:
            raise ConfigError("no cases selected")
        if not self.rules:
            raise ConfigError("no rules selected")

    def to_doc(self) -> dict:
        return {
            "cases": [c.value for c in self.cases],
            "rules": [r.label for r in self.rules],
            "d_values": list(self.grid.d_values),
            "m_values": list(self.grid.m_values),
            "K": self.K,
            "n": self.n,
            "alpha": self.alpha,
            "target_power": self.target_power,
            "master_seed": self.master_seed,
            "output_dir": str(self.output_dir),
            "profile": self.profile,
        }


def _load_config_file(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _pick(cli_value, file_doc: dict, key: str, fallback):
    if cli_value is not None:
        return cli_value
    if key in file_doc:
        return file_doc[key]
    return fallback


def resolve_sweep_config(args) -> RunConfig:
    """CLI flags override --config file entries, which override profile
    defaults."""
    doc = _load_config_file(args.config) if args.config else {}
    profile = _pick(args.profile, doc, "profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected desk or paper")
    base_grid, base_k = PROFILES[profile]
    try:
        n = int(_pick(args.n, doc, "n", base_grid.n))
        alpha = float(_pick(args.alpha, doc, "alpha", base_grid.alpha))
        grid = SweepGrid(
            tuple(int(d) for d in _pick(args.d, doc, "d_values", base_grid.d_values)),
            tuple(int(m) for m in _pick(args.m, doc, "m_values", base_grid.m_values)),
            n=n, alpha=alpha)
    except ValueError as exc:
        raise ConfigError(str(exc))
    output_dir = _pick(args.output_dir, doc, "output_dir",
                       os.environ.get(ENV_OUTPUT_DIR, DEFAULT_OUTPUT_DIR))
    return RunConfig(
        cases=_parse_cases(_pick(args.cases, doc, "cases", ["all"])),
        rules=_parse_rules(_pick(args.rules, doc, "rules", list(DEFAULT_RULES))),
        grid=grid,
        K=int(_pick(args.K, doc, "K", base_k)),
        n=n,
        alpha=alpha,
        target_power=float(_pick(args.target_power, doc, "target_power", 0.8)),
        master_seed=int(_pick(args.master_seed, doc, "master_seed", 0)),
        output_dir=Path(output_dir),
        profile=profile,
    )


# ---------------------------------------------------------------------------
# output writing; one writer, digests collected for the manifest

def _write_text(root: Path, rel: str, text: str, registry: List[dict]) -> None:
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode()
    path.write_bytes(data)
    registry.append({
        "path": rel,
        "sha256": hashlib.sha256(data).hexdigest(),
        "bytes": len(data),
    })


def _write_manifest(root: Path, config_bytes: bytes, registry: List[dict],
                    elapsed: float) -> None:
    manifest = {
        "config_sha256": hashlib.sha256(config_bytes).hexdigest(),
        "wall_clock_seconds": elapsed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scorepower": __version__,
        },
        "files": sorted(registry, key=lambda e: e["path"]),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _is_structural_mask(reason: str) -> bool:
    return reason == _STRUCTURAL_MASKS[0] or reason.startswith(_STRUCTURAL_MASKS[1])


# ---------------------------------------------------------------------------
# subcommands

def cmd_cases(args) -> int:
    infos = list_cases()
    if args.cases:
        wanted = set(_parse_cases(args.cases))
        infos = tuple(info for info in infos if info.case in wanted)
    rows = []
    for info in infos:
        if info.direction == "up":
            lo, hi = info.identity_epsilon, info.epsilon_bound
        else:
            lo, hi = info.epsilon_bound, info.identity_epsilon
        rows.append({
            "name": info.case.value,
            "family": info.family,
            "scope": info.scope,
            "variant": info.variant,
            "identity_epsilon": info.identity_epsilon,
            "direction": info.direction,
            "valid_from": lo,
            "valid_to": hi,
            "analytic_tuning": info.analytic,
        })
    if args.format == "json":
        print(json.dumps(rows, indent=2))
        return 0
    header = f"{'case':<24} {'family':<18} {'scope':<7} {'identity':>8}  {'valid range':<18} analytic"
    print(header)
    print("-" * len(header))
    for r in rows:
        lo = "-inf" if r["valid_from"] is None else f"{r['valid_from']:g}"
        hi = "inf" if r["valid_to"] is None else f"{r['valid_to']:g}"
        span = f"({lo}, {hi})"
        print(f"{r['name']:<24} {r['family']:<18} {r['scope']:<7} "
              f"{r['identity_epsilon']:>8g}  {span:<18} {'yes' if r['analytic_tuning'] else 'no'}")
    return 0


def cmd_tune(args) -> int:
    cases = _parse_cases(args.cases)
    d_values = tuple(args.d) if args.d else PROFILES[args.profile][0].d_values
    if any(d < 1 for d in d_values):
        raise ConfigError(f"dimensions must be positive, got {d_values}")
    method = None if args.method is None else args.method.replace("-", "_")
    seed = DEFAULT_TUNE_SEED if args.seed is None else args.seed
    lines = ["case,d,epsilon,error"]
    for case in cases:
        for d in d_values:
            try:
                eps = tune_epsilon(case, d, target_power=args.target_power,
                                   alpha=args.alpha, n=args.n, method=method,
                                   mc_sample=args.mc_sample, seed=seed)
                lines.append(f"{case.value},{d},{repr(eps)},")
            except ValueError as exc:
                reason = str(exc).replace(",", ";")
                lines.append(f"{case.value},{d},,{reason}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_power(args) -> int:
    cases = _parse_cases([args.case])
    rule = _parse_rules([args.rule])[0]
    case = cases[0]
    try:
        if args.epsilon is not None:
            eps = args.epsilon
        else:
            eps = tune_epsilon(case, args.d, target_power=args.target_power,
                               alpha=args.alpha, n=args.n, mc_sample=args.mc_sample)
        pair = make_case(case, args.d, eps)
        config = TrialConfig(pair, rule, args.m, args.n, args.K, args.alpha,
                             args.seed)
        result = power_analysis(config, workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc))
    doc = {
        "case": case.value,
        "rule": rule.label,
        "d": args.d,
        "m": args.m,
        "n": args.n,
        "K": args.K,
        "alpha": args.alpha,
        "seed": args.seed,
        "epsilon": eps,
        "power": result.power,
        "n_min_80": _finite_or_none(result.n_min_80),
        "degenerate": result.degenerate,
        "delta_mean": result.stats.mean,
        "delta_stddev": result.stats.stddev,
        "delta_excess_kurtosis": result.stats.excess_kurtosis,
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_sweep(args) -> int:
    config = resolve_sweep_config(args)
    start = time.monotonic()
    root = config.output_dir
    root.mkdir(parents=True, exist_ok=True)
    registry: List[dict] = []
    config_text = json.dumps(config.to_doc(), indent=2, sort_keys=True) + "\n"
    _write_text(root, "config.json", config_text, registry)
    had_failures = False
    for case in config.cases:
        for rule in config.rules:
            print(f"sweep: {case.value} x {rule.label}", file=sys.stderr)
            surface = sweep(case, rule, config.grid, config.K,
                            config.master_seed, target_power=config.target_power,
                            workers=args.workers,
                            force_large_pairwise=args.force_large_pairwise)
            rel = f"{case.value}/{_rule_dir(rule)}"
            _write_text(root, f"{rel}/surface.csv", surface_to_csv(surface), registry)
            contours = {}
            try:
                evaluator = smooth_surface(surface, smoothing=args.smoothing)
                contours = extract_contours(evaluator, config.grid,
                                            levels=tuple(args.levels),
                                            resolution=args.resolution)
            except ValueError as exc:
                print(f"  contours skipped: {exc}", file=sys.stderr)
            _write_text(root, f"{rel}/contours.json",
                        json.dumps(contours_to_json(contours), indent=2) + "\n",
                        registry)
            _write_text(root, f"{rel}/heatmap.svg", svg_heatmap(surface, contours),
                        registry)
            failures = [r for r in surface.mask.ravel()
                        if r is not None and not _is_structural_mask(r)]
            if failures:
                had_failures = True
                print(f"  {len(failures)} cells failed, first: {failures[0]}",
                      file=sys.stderr)
    _write_manifest(root, config_text.encode(), registry, time.monotonic() - start)
    return 3 if had_failures else 0


def cmd_summary(args) -> int:
    root = Path(args.run_dir)
    paths = sorted(root.glob("*/*/surface.csv"))
    if not paths:
        raise ConfigError(f"no surface.csv files under {root}")
    surfaces = [surface_from_csv(p.read_text()) for p in paths]
    max_mean = summary_max_mean(surfaces)
    fractions = ror_fraction(surfaces, level=args.level)

    lines = ["case,rule,max_mean_power"]
    for (case, rule), value in sorted(max_mean.items()):
        lines.append(f"{case},{rule},{repr(value)}")
    (root / "summary_max_mean.csv").write_text("\n".join(lines) + "\n")
    lines = ["case,rule,reliable_fraction"]
    for (case, rule), value in sorted(fractions.items()):
        lines.append(f"{case},{rule},{repr(value)}")
    (root / "summary_reliable_fraction.csv").write_text("\n".join(lines) + "\n")

    for title, table in (("max over m, mean over d", max_mean),
                         (f"fraction of m>d cells at power >= {args.level:g}", fractions)):
        cases = sorted({c for c, _ in table})
        rules = sorted({r for _, r in table})
        print(title)
        print(f"{'case':<24}" + "".join(f"{r:>16}" for r in rules))
        for c in cases:
            cells = []
            for r in rules:
                v = table.get((c, r), math.nan)
                cells.append(f"{v:>16.4f}" if math.isfinite(v) else f"{'-':>16}")
            print(f"{c:<24}" + "".join(cells))
        print()
    return 0


def cmd_decision(args) -> int:
    try:
        text = Path(args.scenarios).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenarios: {exc}")
    try:
        scenarios = scenarios_from_csv(text)
        plan = select_plants(scenarios, args.budget, args.penalty, args.strategy)
        profit = profit_report(scenarios, plan, args.penalty)
        doc = {"plan": plan_to_json(plan), "profit": profit}
        if args.perturb:
            totals = scenarios.values[:, plan.active, :].sum(axis=1)
            rule = _parse_rules([args.rule])[0]
            perturbation = make_perturbation(args.perturb, args.perturb_value)
            result = loo_power(totals, perturbation, rule, args.n, args.alpha,
                               seed=args.perturb_seed)
            doc["loo"] = {
                "rule": rule.label,
                "perturbation": args.perturb,
                "perturbation_value": args.perturb_value,
                "n": args.n,
                "alpha": args.alpha,
                "power": result.power,
                "n_min_80": _finite_or_none(result.n_min_80),
                "degenerate": result.degenerate,
                "delta_mean": result.stats.mean,
                "delta_stddev": result.stats.stddev,
                "caveat": LOO_CAVEAT,
            }
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc))
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(json.dumps(doc["plan"], indent=2) + "\n")
        (out / "profit_report.json").write_text(json.dumps(doc["profit"], indent=2) + "\n")
        if "loo" in doc:
            (out / "loo_report.json").write_text(json.dumps(doc["loo"], indent=2) + "\n")
        print(f"wrote {out}", file=sys.stderr)
    else:
        print(json.dumps(doc, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common_stat_flags(p: argparse.ArgumentParser, with_k: bool = True):
    p.add_argument("--n", type=int, default=30, help="evaluation sample size")
    p.add_argument("--alpha", type=float, default=0.05, help="test level")
    if with_k:
        p.add_argument("--K", type=int, default=1000, help="Monte Carlo trials")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scorepower",
        description="Power analysis of multivariate scoring rules on "
                    "synthetic benchmark cases.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cases", help="list the benchmark cases")
    p.add_argument("--cases", nargs="+", help="subset of case names")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_cases)

    p = sub.add_parser("tune", help="discrepancy table (case x d -> epsilon)")
    p.add_argument("--cases", nargs="+", default=["all"])
    p.add_argument("--d", nargs="+", type=int, help="dimensions to tune")
    p.add_argument("--profile", choices=tuple(PROFILES), default="desk",
                   help="supplies default dimensions")
    p.add_argument("--method", choices=("analytic", "monte-carlo"))
    p.add_argument("--mc-sample", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=None,
                   help="tuning stream seed (default: package constant)")
    p.add_argument("--target-power", type=float, default=0.8)
    p.add_argument("--output", help="CSV file (default stdout)")
    _add_common_stat_flags(p, with_k=False)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("power", help="power of one (case, rule, d, m) cell")
    p.add_argument("case")
    p.add_argument("rule")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--epsilon", type=float,
                   help="discrepancy (default: tuned to the target)")
    p.add_argument("--target-power", type=float, default=0.8)
    p.add_argument("--mc-sample", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    _add_common_stat_flags(p)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("sweep", help="power surfaces over a (d, m) grid")
    p.add_argument("--profile", choices=tuple(PROFILES))
    p.add_argument("--cases", nargs="+")
    p.add_argument("--rules", nargs="+")
    p.add_argument("--d", nargs="+", type=int)
    p.add_argument("--m", nargs="+", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--target-power", type=float)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir",
                   help=f"run directory (default: ${ENV_OUTPUT_DIR} or ./{DEFAULT_OUTPUT_DIR})")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--levels", nargs="+", type=float, default=[0.8, 0.5, 0.2])
    p.add_argument("--resolution", type=int, default=8)
    p.add_argument("--smoothing", type=float, default=0.0)
    p.add_argument("--force-large-pairwise", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summary", help="summary tables from a sweep directory")
    p.add_argument("run_dir", nargs="?",
                   default=os.environ.get(ENV_OUTPUT_DIR, DEFAULT_OUTPUT_DIR))
    p.add_argument("--level", type=float, default=0.5)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("decision", help="plant selection and commitments demo")
    p.add_argument("scenarios", help="scenario CSV (scenario,plant,period,value)")
    p.add_argument("--budget", type=int, required=True, help="max active plants")
    p.add_argument("--penalty", type=float, required=True,
                   help="shortfall penalty factor, > 1")
    p.add_argument("--strategy", choices=("exhaustive", "greedy"),
                   default="exhaustive")
    p.add_argument("--perturb", choices=("break_correlations", "scale", "shift"),
                   help="also run the leave-one-out power check")
    p.add_argument("--perturb-value", type=float)
    p.add_argument("--perturb-seed", type=int, default=0)
    p.add_argument("--rule", default="crps-q")
    p.add_argument("--output-dir")
    _add_common_stat_flags(p, with_k=False)
    p.set_defaults(func=cmd_decision)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
