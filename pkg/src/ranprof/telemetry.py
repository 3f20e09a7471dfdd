"""Client layer over the three power sources.

Every client returns a :class:`SampleSeries`. Clients never fill gaps; long
holes are only flagged in ``meta["gaps"]``.
"""
from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass, field

import httpx
import numpy as np

PDU_INTERVAL_NS = 1_000_000_000
PDU_ACCURACY = 0.005
WATTMETER_INTERVAL_NS = 62_500_000  # ~16 samples/s
WATTMETER_ACCURACY = 0.015
GAP_FACTOR = 3.0

WATTMETER_HEADER = ["ts_ns", "power_w"]


class Source(str, enum.Enum):
    PDU = "PDU"
    POD_ESTIMATOR = "POD_ESTIMATOR"
    WATTMETER = "WATTMETER"


class TelemetryError(Exception):
    pass


class SourceUnavailable(TelemetryError):
    pass


class EmptyWindow(TelemetryError):
    pass


class UnknownPod(TelemetryError):
    pass


class FormatError(TelemetryError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


@dataclass
class SampleSeries:
    source: Source
    target: str
    nominal_interval_ns: int
    accuracy_fraction: float
    ts_ns: np.ndarray
    power_w: np.ndarray
    energy_wh: np.ndarray | None = None
    voltage_v: np.ndarray | None = None
    current_a: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.source = Source(self.source)
        self.ts_ns = np.asarray(self.ts_ns, dtype=np.int64)
        self.power_w = np.asarray(self.power_w, dtype=np.float64)
        for name in ("energy_wh", "voltage_v", "current_a"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.asarray(value, dtype=np.float64))
        if self.ts_ns.shape != self.power_w.shape:
            raise ValueError("ts_ns and power_w lengths differ")

    def __len__(self) -> int:
        return len(self.ts_ns)

    def check(self) -> None:
        """Raise ValueError if a series invariant is broken."""
        if len(self.ts_ns) > 1 and np.any(np.diff(self.ts_ns) <= 0):
            raise ValueError(f"{self.target}: timestamps not strictly increasing")
        if np.any(self.power_w < 0) or np.any(np.isnan(self.power_w)):
            raise ValueError(f"{self.target}: negative or NaN power")
        if self.energy_wh is not None and len(self.energy_wh) > 1:
            if np.any(np.diff(self.energy_wh) < 0):
                raise ValueError(f"{self.target}: cumulative energy decreases")

    def gap_threshold_ns(self) -> float:
        return GAP_FACTOR * self.nominal_interval_ns

    def gaps(self) -> list[tuple[int, int]]:
        if len(self.ts_ns) < 2:
            return []
        d = np.diff(self.ts_ns)
        idx = np.nonzero(d > self.gap_threshold_ns())[0]
        return [(int(self.ts_ns[i]), int(self.ts_ns[i + 1])) for i in idx]

    def flag_gaps(self) -> "SampleSeries":
        self.meta["gaps"] = [list(g) for g in self.gaps()]
        return self

    def select(self, start_ns: int, end_ns: int) -> "SampleSeries":
        """Samples with start_ns <= ts < end_ns."""
        lo = int(np.searchsorted(self.ts_ns, start_ns, side="left"))
        hi = int(np.searchsorted(self.ts_ns, end_ns, side="left"))
        part = slice(lo, hi)

        def cut(a):
            return None if a is None else a[part]

        return SampleSeries(
            self.source, self.target, self.nominal_interval_ns, self.accuracy_fraction,
            self.ts_ns[part], self.power_w[part], cut(self.energy_wh), cut(self.voltage_v),
            cut(self.current_a), dict(self.meta),
        )

    def scaled(self, k: float) -> "SampleSeries":
        return SampleSeries(
            self.source, self.target, self.nominal_interval_ns, self.accuracy_fraction,
            self.ts_ns.copy(), self.power_w * k, meta=dict(self.meta),
        )

    def shifted(self, offset_ns: int) -> "SampleSeries":
        if not offset_ns:
            return self
        out = self.select(np.iinfo(np.int64).min, np.iinfo(np.int64).max)
        out.ts_ns = out.ts_ns + np.int64(offset_ns)
        return out


def _checked(series: SampleSeries) -> SampleSeries:
    try:
        series.check()
    except ValueError as exc:
        raise SourceUnavailable(f"malformed payload: {exc}") from None
    return series.flag_gaps()


def _check_window(start_ns: int, end_ns: int) -> None:
    if end_ns < start_ns:
        raise ValueError(f"window end {end_ns} before start {start_ns}")
    if end_ns == start_ns:
        raise EmptyWindow("degenerate window")


def _get(http: httpx.Client, url: str, params: dict) -> httpx.Response:
    try:
        resp = http.get(url, params=params)
    except httpx.HTTPError as exc:
        raise SourceUnavailable(f"{url}: {exc}") from exc
    if resp.status_code >= 500:
        raise SourceUnavailable(f"{url}: HTTP {resp.status_code}")
    return resp


class PduClient:
    """Polls outlet readings from the metered PDU REST facade."""

    def __init__(self, http: httpx.Client):
        self.http = http

    def outlets(self) -> dict[str, str]:
        """node name -> outlet id"""
        resp = _get(self.http, "/pdu/outlets", {})
        resp.raise_for_status()
        return {o["node"]: o["id"] for o in resp.json()}

    def poll(self, outlet: str, start_ns: int, end_ns: int) -> SampleSeries:
        _check_window(start_ns, end_ns)
        resp = _get(self.http, f"/pdu/outlets/{outlet}/samples", {"start": start_ns, "end": end_ns})
        if resp.status_code == 404:
            raise SourceUnavailable(f"unknown outlet {outlet!r}")
        resp.raise_for_status()
        rows = [r for r in resp.json() if start_ns <= r["ts_ns"] < end_ns]
        if not rows:
            raise EmptyWindow(f"outlet {outlet}: no samples in window")
        series = SampleSeries(
            Source.PDU, outlet, PDU_INTERVAL_NS, PDU_ACCURACY,
            [r["ts_ns"] for r in rows],
            [r["power_w"] for r in rows],
            energy_wh=[r["energy_wh"] for r in rows],
            voltage_v=[r["voltage_v"] for r in rows],
            current_a=[r["current_a"] for r in rows],
        )
        return _checked(series)


class PodPowerClient:
    """Range queries against the per-pod power exporter."""

    def __init__(self, http: httpx.Client):
        self.http = http

    def query(self, pod: str, start_ns: int, end_ns: int, step_ns: int = 1_000_000_000) -> SampleSeries:
        _check_window(start_ns, end_ns)
        if step_ns <= 0:
            raise ValueError("step must be positive")
        resp = _get(
            self.http, "/metrics/query_range",
            {"pod": pod, "start": start_ns, "end": end_ns, "step": step_ns},
        )
        if resp.status_code == 404:
            raise UnknownPod(pod)
        resp.raise_for_status()
        body = resp.json()
        rows = [s for s in body["samples"] if start_ns <= s["ts_ns"] < end_ns]
        if not rows:
            raise EmptyWindow(f"pod {pod}: no samples in window")
        series = SampleSeries(
            Source.POD_ESTIMATOR, pod, step_ns, 0.0,
            [s["ts_ns"] for s in rows], [s["power_w"] for s in rows],
        )
        return _checked(series)


def read_wattmeter_trace(path: str | os.PathLike, start_ns: int, end_ns: int, target: str | None = None) -> SampleSeries:
    """Read a ``ts_ns,power_w`` CSV trace, keeping rows inside [start, end)."""
    if end_ns < start_ns:
        raise ValueError(f"window end {end_ns} before start {start_ns}")
    try:
        with open(path, newline="") as f:
            text = f.read()
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        raise SourceUnavailable(f"{path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise EmptyWindow(f"{path}: empty trace")
    if [h.strip() for h in header] != WATTMETER_HEADER:
        raise FormatError(0, f"expected header {','.join(WATTMETER_HEADER)}, got {','.join(header)}")
    ts, power = [], []
    last = None
    for i, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != 2:
            raise FormatError(i, f"expected 2 columns, got {len(row)}")
        try:
            t, p = int(row[0]), float(row[1])
        except ValueError as exc:
            raise FormatError(i, str(exc)) from None
        if last is not None and t <= last:
            raise FormatError(i, "timestamps must be strictly increasing")
        if not p >= 0:
            raise FormatError(i, f"invalid power {row[1]!r}")
        last = t
        if start_ns <= t < end_ns:
            ts.append(t)
            power.append(p)
    if not ts:
        raise EmptyWindow(f"{path}: no samples in window")
    name = target or os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return SampleSeries(Source.WATTMETER, name, WATTMETER_INTERVAL_NS, WATTMETER_ACCURACY, ts, power).flag_gaps()
