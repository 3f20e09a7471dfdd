"""Energy efficiency, box-plot statistics and configuration comparisons."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict

import numpy as np
from pydantic import BaseModel, Field
from scipy import stats

from .schemas import PerfRecord, PowerReport

MBIT = 1e6
# classes summed into the efficiency denominator unless told otherwise
DEFAULT_CLASSES = ("ran", "radio", "xapp")


class ZeroEnergy(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class DirectionBreakdown(BaseModel):
    bits: float
    efficiency_mbit_per_j: float


class RunEfficiency(BaseModel):
    test_id: str
    bits: float
    energy_j: float
    efficiency_mbit_per_j: float


class EfficiencyReport(BaseModel):
    test_ids: list[str]
    total_bits: float
    total_energy_j: float
    efficiency_mbit_per_j: float
    classes: list[str]
    direction: str  # "dl", "ul" or "mixed"
    by_direction: dict[str, DirectionBreakdown]
    runs: list[RunEfficiency]
    flags: list[str] = Field(default_factory=list)


class DistributionStats(BaseModel):
    n: int
    mean: float
    std: float | None
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    ci95_lo: float | None
    ci95_hi: float | None


def class_energy(power: PowerReport, classes) -> tuple[float, list[str]]:
    """Energy over the selected classes plus flags for missing or empty ones."""
    flags = []
    total = 0.0
    live = 0
    for c in classes:
        members = [t for t in power.targets.values() if t.klass == c]
        if not members:
            flags.append(f"missing:{c}")
            continue
        if all("empty" in t.flags or t.error for t in members):
            flags.append(f"empty:{c}")
        else:
            live += 1
        total += power.totals.get(c, 0.0)
    if live == 0 or total <= 0:
        raise ZeroEnergy(f"{power.test_id}: no energy in classes {', '.join(classes)}")
    return total, flags


def _direction(dirs) -> str:
    dirs = set(dirs)
    return dirs.pop() if len(dirs) == 1 else "mixed"


def combined_efficiency(pairs, classes=DEFAULT_CLASSES) -> EfficiencyReport:
    """Mbit/J over several (PowerReport, PerfRecord) pairs: sum of bits over sum of energy."""
    classes = list(classes)
    runs, flags = [], []
    dir_bits: dict[str, float] = defaultdict(float)
    for power, perf in pairs:
        if power.test_id != perf.test_id:
            raise ValueError(f"test_id mismatch: {power.test_id} vs {perf.test_id}")
        energy, f = class_energy(power, classes)
        flags.extend(f"{power.test_id}:{x}" for x in f)
        for r in perf.ue_results:
            dir_bits[r.direction] += r.bits_transferred
        runs.append(RunEfficiency(test_id=power.test_id, bits=perf.aggregate_bits, energy_j=energy,
                                  efficiency_mbit_per_j=perf.aggregate_bits / MBIT / energy))
    if not runs:
        raise ZeroEnergy("no runs")
    bits = sum(r.bits for r in runs)
    energy = sum(r.energy_j for r in runs)
    return EfficiencyReport(
        test_ids=[r.test_id for r in runs],
        total_bits=bits,
        total_energy_j=energy,
        efficiency_mbit_per_j=bits / MBIT / energy,
        classes=classes,
        direction=_direction(dir_bits),
        by_direction={d: DirectionBreakdown(bits=b, efficiency_mbit_per_j=b / MBIT / energy)
                      for d, b in sorted(dir_bits.items())},
        runs=runs,
        flags=flags,
    )


def energy_efficiency(power: PowerReport, perf: PerfRecord, classes=DEFAULT_CLASSES) -> EfficiencyReport:
    return combined_efficiency([(power, perf)], classes)


def ci95(values) -> tuple[float, float]:
    """Student-t 95% interval for the mean."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 2:
        raise InsufficientData("a confidence interval needs at least two values")
    half = stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x))
    m = x.mean()
    return float(m - half), float(m + half)


def distribution_stats(values) -> DistributionStats:
    x = np.sort(np.asarray(values, dtype=np.float64))
    if len(x) == 0:
        raise InsufficientData("no values")
    q1, med, q3 = (float(v) for v in np.quantile(x, [0.25, 0.5, 0.75], method="linear"))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    # Tukey whiskers: most extreme data inside the fences, never inside the box
    whisker_lo = min(float(x[x >= lo_fence].min()), q1)
    whisker_hi = max(float(x[x <= hi_fence].max()), q3)
    lo = hi = None
    if len(x) >= 2:
        lo, hi = ci95(x)
    return DistributionStats(
        n=len(x), mean=float(x.mean()), std=float(x.std(ddof=1)) if len(x) > 1 else None,
        median=med, q1=q1, q3=q3, whisker_lo=whisker_lo, whisker_hi=whisker_hi, ci95_lo=lo, ci95_hi=hi,
    )


def least_squares(xs, ys) -> tuple[float, float]:
    """Slope and intercept of the ordinary least-squares line."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    mx, my = x.mean(), y.mean()
    sxx = float(((x - mx) ** 2).sum())
    if sxx == 0:
        raise InsufficientData("regression needs at least two distinct loads")
    slope = float(((x - mx) * (y - my)).sum()) / sxx
    return slope, float(my - slope * mx)


class RunPoint(BaseModel):
    """One run reduced to what a comparison needs."""

    test_id: str
    label: str
    load: float
    powers: dict[str, float]  # mean power by class and by component name
    efficiency_mbit_per_j: float | None = None


def run_point(power: PowerReport, perf: PerfRecord | None, label: str, load: float,
              classes=DEFAULT_CLASSES) -> RunPoint:
    powers: dict[str, float] = defaultdict(float)
    for t in power.targets.values():
        if t.klass == "node" or t.error or "empty" in t.flags:
            continue
        powers[t.klass] += t.mean_power_w
        powers[t.component] += t.mean_power_w
    eff = None
    if perf is not None:
        try:
            eff = energy_efficiency(power, perf, classes).efficiency_mbit_per_j
        except ZeroEnergy:
            pass
    return RunPoint(test_id=power.test_id, label=label, load=load, powers=dict(sorted(powers.items())),
                    efficiency_mbit_per_j=eff)


class ComparisonRow(BaseModel):
    label: str
    load: float
    power: DistributionStats
    efficiency: DistributionStats | None
    test_ids: list[str]


class LabelFit(BaseModel):
    label: str
    slope_w_per_unit: float | None
    intercept_w: float | None
    power: DistributionStats
    efficiency: DistributionStats | None


class Comparison(BaseModel):
    power_key: str
    rows: list[ComparisonRow]
    labels: list[LabelFit]


def compare_configurations(runs, power_key: str = "ran") -> Comparison:
    """Per-label and per-(label, load) statistics plus a power-vs-load fit per label."""
    by_label: dict[str, list[RunPoint]] = defaultdict(list)
    for r in runs:
        by_label[r.label].append(r)
    rows, fits = [], []
    for label in sorted(by_label):
        group = by_label[label]
        by_load: dict[float, list[RunPoint]] = defaultdict(list)
        for r in group:
            by_load[r.load].append(r)
        for load in sorted(by_load):
            pts = by_load[load]
            effs = [p.efficiency_mbit_per_j for p in pts if p.efficiency_mbit_per_j is not None]
            rows.append(ComparisonRow(
                label=label, load=load,
                power=distribution_stats([p.powers.get(power_key, 0.0) for p in pts]),
                efficiency=distribution_stats(effs) if effs else None,
                test_ids=[p.test_id for p in pts],
            ))
        loads = [r.load for r in group]
        watts = [r.powers.get(power_key, 0.0) for r in group]
        slope = intercept = None
        if len(set(loads)) > 1:
            slope, intercept = least_squares(loads, watts)
        effs = [r.efficiency_mbit_per_j for r in group if r.efficiency_mbit_per_j is not None]
        fits.append(LabelFit(label=label, slope_w_per_unit=slope, intercept_w=intercept,
                             power=distribution_stats(watts),
                             efficiency=distribution_stats(effs) if effs else None))
    return Comparison(power_key=power_key, rows=rows, labels=fits)


_STAT_FIELDS = list(DistributionStats.model_fields)
COMPARISON_COLUMNS = (
    ["label", "load", "power_key"]
    + [f"power_{f}" for f in _STAT_FIELDS]
    + ["efficiency_mean", "efficiency_ci95_lo", "efficiency_ci95_hi", "slope_w_per_unit", "intercept_w"]
)
EFFICIENCY_COLUMNS = ["test_id", "classes", "direction", "bits", "energy_j", "efficiency_mbit_per_j"]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _comparison_rows(c: Comparison):
    fits = {f.label: f for f in c.labels}
    for row in c.rows:
        fit = fits[row.label]
        eff = row.efficiency
        yield [row.label, row.load, c.power_key] + [getattr(row.power, f) for f in _STAT_FIELDS] + [
            eff.mean if eff else None, eff.ci95_lo if eff else None, eff.ci95_hi if eff else None,
            fit.slope_w_per_unit, fit.intercept_w,
        ]


def _efficiency_rows(r: EfficiencyReport):
    classes = "+".join(r.classes)
    for run in r.runs:
        yield [run.test_id, classes, r.direction, run.bits, run.energy_j, run.efficiency_mbit_per_j]
    if len(r.runs) > 1:
        yield ["total", classes, r.direction, r.total_bits, r.total_energy_j, r.efficiency_mbit_per_j]


def render_plot_data(obj: Comparison | EfficiencyReport | None, fmt: str = "csv") -> str:
    if fmt == "json":
        body = {} if obj is None else obj.model_dump(mode="json")
        return json.dumps(body, sort_keys=True, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(obj, EfficiencyReport):
        header, rows = EFFICIENCY_COLUMNS, _efficiency_rows(obj)
    else:
        header, rows = COMPARISON_COLUMNS, (_comparison_rows(obj) if obj is not None else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def emit_plot_data(obj, path: str | os.PathLike, fmt: str = "csv") -> str:
    """Write box-stat/efficiency data for external plotting; returns the path."""
    text = render_plot_data(obj, fmt)
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)
    return path
