"""Power maps over (d, m) grids and their reliability summaries.

A sweep tunes the discrepancy per dimension count, estimates power in every
grid cell, and records per-cell failures in a mask instead of aborting.
Surfaces are smoothed with a thin-plate spline on log2 axes, contoured by
marching squares on a dense resampling, and reduced to the two summary
tables.  A resampling Q-Q diagnostic checks the normal approximation for
gap laws picked by their excess kurtosis.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri

from . import rng
from .power import DeltaStats, estimate_delta, power_from_stats, tune_epsilon
from .scoring import RuleKind, ScoringRule
from .testcases import TestCaseId, make_case

__all__ = [
    "SweepGrid",
    "PowerSurface",
    "ContourSet",
    "QQReport",
    "DESK_GRID",
    "PAPER_GRID",
    "sweep",
    "smooth_surface",
    "extract_contours",
    "summary_max_mean",
    "ror_fraction",
    "qq_diagnostic",
    "surface_to_csv",
    "surface_from_csv",
    "surface_to_json",
    "contours_to_json",
    "svg_heatmap",
]

CSV_HEADER = "case,rule,d,m,n,alpha,epsilon,power,mask_reason"

# O(d m^2) rules get expensive past this ensemble size; sweeps skip them
# above the cap unless forced
PAIRWISE_M_CAP = 4096


@dataclass(frozen=True)
class SweepGrid:
    d_values: Tuple[int, ...]
    m_values: Tuple[int, ...]
    n: int = 30
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "d_values", tuple(int(v) for v in self.d_values))
        object.__setattr__(self, "m_values", tuple(int(v) for v in self.m_values))
        for name, axis in (("d", self.d_values), ("m", self.m_values)):
            if len(axis) == 0:
                raise ValueError(f"{name}_values must be non-empty")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"{name}_values must be strictly increasing")
            if any(v < 1 for v in axis):
                raise ValueError(f"{name}_values must be positive")
        if self.n < 1:
            raise ValueError(f"need n >= 1, got {self.n}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


PAPER_GRID = SweepGrid(tuple(2 ** k for k in range(4, 13)), tuple(2 ** k for k in range(4, 15)))
DESK_GRID = SweepGrid((16, 64, 256), tuple(2 ** k for k in range(4, 13)))


@dataclass
class PowerSurface:
    grid: SweepGrid
    case: TestCaseId
    rule: ScoringRule
    values: np.ndarray
    mask: np.ndarray
    epsilons: np.ndarray

    def cell_defined(self, i: int, j: int) -> bool:
        return self.mask[i, j] is None


ContourSet = Dict[float, List[np.ndarray]]


def _cell_seed(master_seed: int, case: TestCaseId, rule: ScoringRule, d: int, m: int) -> int:
    return rng.derive_seed(master_seed, "cell", case.value, rule.label, d, m)


def sweep(case_id: TestCaseId, rule: ScoringRule, grid: SweepGrid, K: int, seed: int,
          target_power: float = 0.8, workers: Optional[int] = None,
          force_large_pairwise: bool = False) -> PowerSurface:
    """Power for every (d, m) cell at the per-d tuned discrepancy.

    Cell seeds derive from (seed, case, rule, d, m), so the surface is
    bit-identical however the cells are scheduled.
    """
    nd, nm = len(grid.d_values), len(grid.m_values)
    values = np.full((nd, nm), np.nan)
    mask = np.full((nd, nm), None, dtype=object)
    epsilons = np.full(nd, np.nan)
    pairwise = rule.kind in (RuleKind.CRPS_E, RuleKind.ES_FULL)
    for i, d in enumerate(grid.d_values):
        try:
            eps = tune_epsilon(case_id, d, target_power=target_power, alpha=grid.alpha,
                               n=grid.n)
            pair = make_case(case_id, d, eps)
        except ValueError as exc:
            for j in range(nm):
                mask[i, j] = f"case setup failed: {exc}"
            continue
        epsilons[i] = eps
        for j, m in enumerate(grid.m_values):
            if rule.kind is RuleKind.DS and m <= d:
                mask[i, j] = "m <= d"
                continue
            if pairwise and m > PAIRWISE_M_CAP and not force_large_pairwise:
                mask[i, j] = f"skipped: O(d m^2) rule above m={PAIRWISE_M_CAP}"
                continue
            try:
                stats = estimate_delta(pair, rule, m, K, _cell_seed(seed, case_id, rule, d, m),
                                       workers=workers)
                values[i, j] = power_from_stats(stats, grid.n, grid.alpha).power
            except ValueError as exc:
                mask[i, j] = str(exc)
    return PowerSurface(grid, case_id, rule, values, mask, epsilons)


# ---------------------------------------------------------------------------
# thin-plate-spline smoothing on (log2 d, log2 m)

def _tps_basis(r2: np.ndarray) -> np.ndarray:
    # phi(r) = r^2 log r = r2 * log(r2) / 2, with phi(0) = 0
    out = np.zeros_like(r2)
    pos = r2 > 0.0
    out[pos] = 0.5 * r2[pos] * np.log(r2[pos])
    return out


def smooth_surface(surface: PowerSurface, smoothing: float = 0.0) -> Callable:
    """Thin-plate-spline evaluator over (log2 d, log2 m) fit to unmasked cells."""
    if smoothing < 0.0:
        raise ValueError(f"smoothing must be >= 0, got {smoothing}")
    pts = []
    vals = []
    for i, d in enumerate(surface.grid.d_values):
        for j, m in enumerate(surface.grid.m_values):
            if surface.mask[i, j] is None:
                pts.append((math.log2(d), math.log2(m)))
                vals.append(surface.values[i, j])
    if len(pts) < 4:
        raise ValueError(f"need at least 4 unmasked cells to smooth, got {len(pts)}")
    nodes = np.asarray(pts)
    v = np.asarray(vals)
    n = len(nodes)
    poly = np.column_stack([np.ones(n), nodes])
    if np.linalg.matrix_rank(poly) < 3:
        raise ValueError("unmasked cells are collinear; the affine term is degenerate")
    diff = nodes[:, None, :] - nodes[None, :, :]
    K = _tps_basis(np.sum(diff * diff, axis=2)) + smoothing * np.eye(n)
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = K
    system[:n, n:] = poly
    system[n:, :n] = poly.T
    rhs = np.concatenate([v, np.zeros(3)])
    sol = np.linalg.solve(system, rhs)
    w, a = sol[:n], sol[n:]

    def evaluate(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        px = np.broadcast_to(x, shape).reshape(-1)
        py = np.broadcast_to(y, shape).reshape(-1)
        q = np.column_stack([px, py])
        d2 = np.sum((q[:, None, :] - nodes[None, :, :]) ** 2, axis=2)
        out = _tps_basis(d2) @ w + a[0] + q @ a[1:]
        return out.reshape(shape) if shape else float(out[0])

    return evaluate


# ---------------------------------------------------------------------------
# marching squares

_EDGES = {"bottom": ((0, 0), (1, 0)), "right": ((1, 0), (1, 1)),
          "top": ((0, 1), (1, 1)), "left": ((0, 0), (0, 1))}

_SEGMENTS = {
    1: [("bottom", "left")],
    2: [("bottom", "right")],
    3: [("left", "right")],
    4: [("right", "top")],
    6: [("bottom", "top")],
    7: [("left", "top")],
    8: [("left", "top")],
    9: [("bottom", "top")],
    11: [("right", "top")],
    12: [("left", "right")],
    13: [("bottom", "right")],
    14: [("bottom", "left")],
}


def _edge_point(edge, x0, x1, y0, y1, corner_vals, level):
    (ax, ay), (bx, by) = _EDGES[edge]
    va, vb = corner_vals[(ax, ay)], corner_vals[(bx, by)]
    t = 0.5 if vb == va else (level - va) / (vb - va)
    t = min(1.0, max(0.0, t))
    xs = (x0, x1)
    ys = (y0, y1)
    px = xs[ax] + t * (xs[bx] - xs[ax])
    py = ys[ay] + t * (ys[by] - ys[ay])
    return (px, py)


def _chain_segments(segments: List[Tuple[Tuple[float, float], Tuple[float, float]]]) -> List[np.ndarray]:
    def key(p):
        return (round(p[0], 9), round(p[1], 9))

    adjacency: Dict[tuple, List[int]] = {}
    for idx, (a, b) in enumerate(segments):
        adjacency.setdefault(key(a), []).append(idx)
        adjacency.setdefault(key(b), []).append(idx)
    used = [False] * len(segments)
    polylines = []
    for start in range(len(segments)):
        if used[start]:
            continue
        used[start] = True
        a, b = segments[start]
        line = [a, b]
        # extend forward then backward until no unused neighbor remains
        for endpoint, append in ((b, True), (a, False)):
            current = endpoint
            while True:
                nxt = None
                for idx in adjacency.get(key(current), []):
                    if not used[idx]:
                        nxt = idx
                        break
                if nxt is None:
                    break
                used[nxt] = True
                pa, pb = segments[nxt]
                current = pb if key(pa) == key(current) else pa
                if append:
                    line.append(current)
                else:
                    line.insert(0, current)
        polylines.append(np.asarray(line))
    return polylines


def extract_contours(evaluator: Callable, grid: SweepGrid,
                     levels: Sequence[float] = (0.2, 0.5, 0.8),
                     resolution: int = 8) -> ContourSet:
    """Marching-squares polylines of the evaluator on a dense resampling."""
    if resolution < 2:
        raise ValueError(f"resolution must be at least 2x grid density, got {resolution}")
    lx = [math.log2(d) for d in grid.d_values]
    ly = [math.log2(m) for m in grid.m_values]
    nx = (len(lx) - 1) * resolution + 1 if len(lx) > 1 else 2
    ny = (len(ly) - 1) * resolution + 1 if len(ly) > 1 else 2
    xs = np.linspace(lx[0], lx[-1], nx)
    ys = np.linspace(ly[0], ly[-1], ny)
    field = evaluator(xs[:, None], ys[None, :])
    out: ContourSet = {}
    for level in levels:
        inside = field >= level
        segments = []
        for i in range(nx - 1):
            for j in range(ny - 1):
                corner_vals = {(0, 0): field[i, j], (1, 0): field[i + 1, j],
                               (1, 1): field[i + 1, j + 1], (0, 1): field[i, j + 1]}
                code = (int(inside[i, j]) | int(inside[i + 1, j]) << 1
                        | int(inside[i + 1, j + 1]) << 2 | int(inside[i, j + 1]) << 3)
                if code in (0, 15):
                    continue
                if code in (5, 10):
                    center_inside = np.mean(list(corner_vals.values())) >= level
                    if code == 5:
                        pairs = [("bottom", "right"), ("left", "top")] if center_inside \
                            else [("bottom", "left"), ("right", "top")]
                    else:
                        pairs = [("bottom", "left"), ("right", "top")] if center_inside \
                            else [("bottom", "right"), ("left", "top")]
                else:
                    pairs = _SEGMENTS[code]
                for ea, eb in pairs:
                    pa = _edge_point(ea, xs[i], xs[i + 1], ys[j], ys[j + 1], corner_vals, level)
                    pb = _edge_point(eb, xs[i], xs[i + 1], ys[j], ys[j + 1], corner_vals, level)
                    segments.append((pa, pb))
        out[float(level)] = _chain_segments(segments)
    return out


# ---------------------------------------------------------------------------
# summaries

def _surface_key(surface: PowerSurface) -> Tuple[str, str]:
    return (surface.case.value, surface.rule.label)


def summary_max_mean(surfaces: Sequence[PowerSurface]) -> Dict[Tuple[str, str], float]:
    """Per (case, rule): mean over d of the max over m, masked cells skipped."""
    out = {}
    for s in surfaces:
        row_maxes = []
        for i in range(len(s.grid.d_values)):
            defined = [s.values[i, j] for j in range(len(s.grid.m_values))
                       if s.mask[i, j] is None]
            if defined:
                row_maxes.append(max(defined))
        out[_surface_key(s)] = float(np.mean(row_maxes)) if row_maxes else math.nan
    return out


def ror_fraction(surfaces: Sequence[PowerSurface], level: float = 0.5) -> Dict[Tuple[str, str], float]:
    """Fraction of cells at or above the level, counting only cells with m > d."""
    out = {}
    for s in surfaces:
        total = 0
        hits = 0
        for i, d in enumerate(s.grid.d_values):
            for j, m in enumerate(s.grid.m_values):
                if m <= d or s.mask[i, j] is not None:
                    continue
                total += 1
                hits += int(s.values[i, j] >= level)
        out[_surface_key(s)] = hits / total if total else math.nan
    return out


# ---------------------------------------------------------------------------
# normal-approximation Q-Q diagnostic

@dataclass
class QQReport:
    selected: Dict[str, float]
    theoretical: np.ndarray
    empirical: Dict[str, np.ndarray]
    max_gap: Dict[str, float]
    flagged: Dict[str, bool]


def qq_diagnostic(stats: Mapping[str, DeltaStats], n: int, resamples: int = 10_000,
                  kurtosis_quantiles: Sequence[float] = (0.02, 0.05, 0.95, 0.98),
                  probs: Optional[np.ndarray] = None, flag_gap: float = 0.05,
                  seed: int = 0) -> QQReport:
    """Resampled n-trial means vs the fitted normal for kurtosis-ranked gap laws.

    Picks the entries sitting at the requested quantiles of excess kurtosis,
    simulates ensemble means by resampling their raw gaps, and reports paired
    standardized quantiles; entries whose worst quantile gap exceeds flag_gap
    standard errors are flagged.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    missing = [label for label, s in stats.items() if s.deltas is None]
    if missing:
        raise ValueError(f"raw deltas not retained for: {', '.join(sorted(missing))}")
    if probs is None:
        # match the scoring module's quantile convention; the 1% tails are
        # resampling-noise dominated at the default resample count
        probs = np.linspace(0.05, 0.95, 19)
    labels = sorted(stats)
    kurts = np.array([stats[label].excess_kurtosis for label in labels])
    selected: Dict[str, float] = {}
    for q in kurtosis_quantiles:
        target = np.quantile(kurts, q, method="hazen") if len(kurts) > 1 else kurts[0]
        label = labels[int(np.argmin(np.abs(kurts - target)))]
        selected[label] = float(stats[label].excess_kurtosis)
    theoretical = ndtri(probs)
    empirical: Dict[str, np.ndarray] = {}
    max_gap: Dict[str, float] = {}
    flagged: Dict[str, bool] = {}
    for label in selected:
        s = stats[label]
        gen = rng.derive(seed, "qq", label)
        draws = gen.choice(s.deltas, size=(resamples, n), replace=True).mean(axis=1)
        scale = s.stddev / math.sqrt(n)
        standardized = (draws - s.mean) / scale
        emp = np.quantile(standardized, probs, method="hazen")
        empirical[label] = emp
        gap = float(np.max(np.abs(emp - theoretical)))
        max_gap[label] = gap
        flagged[label] = gap > flag_gap
    return QQReport(selected, theoretical, empirical, max_gap, flagged)


# ---------------------------------------------------------------------------
# serialization

def surface_to_csv(surface: PowerSurface) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    g = surface.grid
    for i, d in enumerate(g.d_values):
        eps = surface.epsilons[i]
        eps_text = repr(float(eps)) if math.isfinite(eps) else ""
        for j, m in enumerate(g.m_values):
            reason = surface.mask[i, j]
            power = surface.values[i, j]
            power_text = repr(float(power)) if reason is None else ""
            reason_text = "" if reason is None else str(reason).replace(",", ";")
            buf.write(f"{surface.case.value},{surface.rule.label},{d},{m},{g.n},"
                      f"{repr(g.alpha)},{eps_text},{power_text},{reason_text}\n")
    return buf.getvalue()


def surface_from_csv(text: str) -> PowerSurface:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("unrecognized surface CSV header")
    rows = [ln.split(",") for ln in lines[1:]]
    case = TestCaseId(rows[0][0])
    rule = ScoringRule.from_string(rows[0][1])
    n = int(rows[0][4])
    alpha = float(rows[0][5])
    d_values = sorted({int(r[2]) for r in rows})
    m_values = sorted({int(r[3]) for r in rows})
    grid = SweepGrid(tuple(d_values), tuple(m_values), n, alpha)
    values = np.full((len(d_values), len(m_values)), np.nan)
    mask = np.full(values.shape, None, dtype=object)
    epsilons = np.full(len(d_values), np.nan)
    for r in rows:
        i = d_values.index(int(r[2]))
        j = m_values.index(int(r[3]))
        if r[6]:
            epsilons[i] = float(r[6])
        if r[8]:
            mask[i, j] = r[8]
        elif r[7]:
            values[i, j] = float(r[7])
        else:
            mask[i, j] = "missing"
    return PowerSurface(grid, case, rule, values, mask, epsilons)


def surface_to_json(surface: PowerSurface) -> dict:
    g = surface.grid
    return {
        "case": surface.case.value,
        "rule": surface.rule.label,
        "d_values": list(g.d_values),
        "m_values": list(g.m_values),
        "n": g.n,
        "alpha": g.alpha,
        "epsilons": [None if not math.isfinite(e) else e for e in surface.epsilons],
        "power": [[None if surface.mask[i, j] is not None else surface.values[i, j]
                   for j in range(len(g.m_values))] for i in range(len(g.d_values))],
        "mask": [[surface.mask[i, j] for j in range(len(g.m_values))]
                 for i in range(len(g.d_values))],
    }


def contours_to_json(contours: ContourSet) -> dict:
    return {repr(level): [line.tolist() for line in lines]
            for level, lines in sorted(contours.items())}


_CONTOUR_STYLE = {0.8: "", 0.5: 'stroke-dasharray="8,5" ', 0.2: 'stroke-dasharray="2,4" '}


def _power_color(p: float) -> str:
    # dark blue at 0 through teal to yellow at 1
    t = min(1.0, max(0.0, p))
    r = int(255 * t ** 1.5)
    g = int(255 * (0.15 + 0.85 * t))
    b = int(255 * (0.45 * (1.0 - t) + 0.1))
    return f"rgb({r},{g},{b})"


def svg_heatmap(surface: PowerSurface, contours: Optional[ContourSet] = None,
                cell_px: int = 48) -> str:
    """Standalone SVG: power heatmap with contour overlays on log2 axes."""
    g = surface.grid
    nd, nm = len(g.d_values), len(g.m_values)
    margin = 56
    width = margin + nm * cell_px + 16
    height = margin + nd * cell_px + 16
    lx = [math.log2(d) for d in g.d_values]
    ly = [math.log2(m) for m in g.m_values]

    def to_px(log2d: float, log2m: float) -> Tuple[float, float]:
        # cells are unit squares centered on their grid coordinates
        if nd > 1:
            fy = (log2d - lx[0]) / (lx[-1] - lx[0]) * (nd - 1)
        else:
            fy = 0.0
        if nm > 1:
            fx = (log2m - ly[0]) / (ly[-1] - ly[0]) * (nm - 1)
        else:
            fx = 0.0
        return margin + (fx + 0.5) * cell_px, margin + (fy + 0.5) * cell_px

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<title>{surface.case.value} / {surface.rule.label}</title>',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for i in range(nd):
        for j in range(nm):
            x = margin + j * cell_px
            y = margin + i * cell_px
            if surface.mask[i, j] is not None:
                fill = "rgb(220,220,220)"
            else:
                fill = _power_color(surface.values[i, j])
            parts.append(f'<rect x="{x}" y="{y}" width="{cell_px}" height="{cell_px}" '
                         f'fill="{fill}" stroke="white" stroke-width="1"/>')
    for j, m in enumerate(g.m_values):
        x = margin + (j + 0.5) * cell_px
        parts.append(f'<text x="{x:.1f}" y="{margin - 8}" font-size="11" '
                     f'text-anchor="middle">2^{int(math.log2(m))}</text>')
    for i, d in enumerate(g.d_values):
        y = margin + (i + 0.5) * cell_px + 4
        parts.append(f'<text x="{margin - 8}" y="{y:.1f}" font-size="11" '
                     f'text-anchor="end">2^{int(math.log2(d))}</text>')
    parts.append(f'<text x="{margin + nm * cell_px / 2:.1f}" y="16" font-size="12" '
                 f'text-anchor="middle">ensemble size m</text>')
    parts.append(f'<text x="14" y="{margin + nd * cell_px / 2:.1f}" font-size="12" '
                 f'text-anchor="middle" transform="rotate(-90 14 {margin + nd * cell_px / 2:.1f})">'
                 f'dimension d</text>')
    if contours:
        for level in sorted(contours, reverse=True):
            style = _CONTOUR_STYLE.get(round(level, 2), "")
            for line in contours[level]:
                pts = " ".join(f"{px:.2f},{py:.2f}"
                               for px, py in (to_px(a, b) for a, b in line))
                parts.append(f'<polyline points="{pts}" fill="none" stroke="black" '
                             f'stroke-width="1.6" {style}/>')
    parts.append("</svg>")
    return "\n".join(parts)
