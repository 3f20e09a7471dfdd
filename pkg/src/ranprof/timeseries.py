"""Series storage and window algebra.

Energy over a window is the integral of the series' piecewise-linear
reconstruction, clipped to [start, end). Consecutive samples further apart
than ``GAP_FACTOR`` nominal intervals are never bridged. At the edges of the
series the first/last in-window sample is held (zero-order hold) up to the
window boundary, provided that stretch is not itself gap-sized.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import asdict, dataclass
from urllib.parse import quote, unquote

import numpy as np

from .telemetry import GAP_FACTOR, EmptyWindow, SampleSeries, Source

NS = 1e-9


@dataclass(frozen=True)
class Window:
    start_ns: int
    end_ns: int

    def __post_init__(self):
        if self.end_ns < self.start_ns:
            raise ValueError(f"window end {self.end_ns} before start {self.start_ns}")

    @property
    def length_ns(self) -> int:
        return self.end_ns - self.start_ns

    def split(self, at_ns: int) -> tuple["Window", "Window"]:
        if not self.start_ns <= at_ns <= self.end_ns:
            raise ValueError("split point outside window")
        return Window(self.start_ns, at_ns), Window(at_ns, self.end_ns)


@dataclass(frozen=True)
class EnergyResult:
    energy_j: float
    mean_power_w: float
    covered_fraction: float
    gap_count: int
    n_samples: int = 0
    empty: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _as_window(window) -> Window:
    if isinstance(window, Window):
        return window
    start, end = window
    return Window(int(start), int(end))


def integrate_energy(series: SampleSeries, window, gap_factor: float = GAP_FACTOR) -> EnergyResult:
    w = _as_window(window)
    ts = series.ts_ns
    p = series.power_w
    n = len(ts)
    a = int(np.searchsorted(ts, w.start_ns, side="left"))
    b = int(np.searchsorted(ts, w.end_ns, side="left")) - 1
    if w.length_ns == 0 or b < a:
        return EnergyResult(0.0, 0.0, 0.0, 0, 0, empty=True)

    gap = gap_factor * series.nominal_interval_ns
    lo = a - 1 if a > 0 else a
    hi = b + 1 if b + 1 < n else b
    # times relative to window start, as float seconds
    t = (ts[lo:hi + 1] - w.start_ns).astype(np.float64) * NS
    v = p[lo:hi + 1]
    length = w.length_ns * NS
    gap_s = gap * NS

    energy = 0.0
    # covered time is kept in integer ns so the fraction is exact
    covered_ns = 0
    gaps = 0
    if len(t) > 1:
        t0, t1 = t[:-1], t[1:]
        v0, v1 = v[:-1], v[1:]
        u0 = np.clip(t0, 0.0, length)
        u1 = np.clip(t1, 0.0, length)
        span = u1 - u0
        dt = t1 - t0
        bridged = dt <= gap_s
        slope = (v1 - v0) / dt
        y0 = v0 + slope * (u0 - t0)
        y1 = v0 + slope * (u1 - t0)
        ok = bridged & (span > 0)
        energy += float(np.sum(0.5 * (y0[ok] + y1[ok]) * span[ok]))
        rel = ts[lo:hi + 1] - w.start_ns
        span_ns = np.clip(rel[1:], 0, w.length_ns) - np.clip(rel[:-1], 0, w.length_ns)
        covered_ns += int(np.sum(span_ns[ok]))
        gaps += int(np.count_nonzero(~bridged & (span > 0)))

    if a == 0:
        head = (ts[0] - w.start_ns) * NS
        if head > 0:
            if head <= gap_s:
                energy += float(p[0]) * head
                covered_ns += int(ts[0] - w.start_ns)
            else:
                gaps += 1
    if b == n - 1:
        tail = (w.end_ns - ts[b]) * NS
        if tail > 0:
            if tail <= gap_s:
                energy += float(p[b]) * tail
                covered_ns += int(w.end_ns - ts[b])
            else:
                gaps += 1

    covered = covered_ns * NS
    mean = energy / covered if covered_ns > 0 else 0.0
    return EnergyResult(energy, mean, covered_ns / w.length_ns, gaps, b - a + 1)


def align(series_set, window, offsets_ns: dict | None = None) -> dict[str, EnergyResult]:
    """Integrate every series over one shared window.

    ``series_set`` maps target -> SampleSeries (or None for a source that
    produced nothing). Each target is handled at its own rate; empty
    targets come back flagged instead of failing the batch.
    """
    w = _as_window(window)
    offsets_ns = offsets_ns or {}
    out = {}
    for target, series in series_set.items():
        if series is None or len(series) == 0:
            out[target] = EnergyResult(0.0, 0.0, 0.0, 0, 0, empty=True)
            continue
        offset = offsets_ns.get(target, offsets_ns.get(series.source.value, 0))
        out[target] = integrate_energy(series.shifted(offset), w)
    return out


class NotFound(KeyError):
    pass


_DTYPE = np.dtype([("ts", "<i8"), ("p", "<f8"), ("e", "<f8"), ("v", "<f8"), ("i", "<f8")])


def _column(arr, n):
    return np.full(n, np.nan) if arr is None else arr


def _optional(col: np.ndarray):
    return None if np.all(np.isnan(col)) else col.copy()


class Store:
    """Append-only segment store: ``<root>/<source>/<target>/<segment>.bin``.

    Each (source, target) stream directory holds an ``index.json`` listing
    its segments. Storing content identical to an existing segment returns
    that segment's id instead of appending a duplicate.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock(self, source: str, target: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault((source, target), threading.Lock())

    def _dir(self, source: str, target: str) -> str:
        return os.path.join(self.root, source, quote(target, safe=""))

    def _read_index(self, source: str, target: str) -> dict | None:
        path = os.path.join(self._dir(source, target), "index.json")
        try:
            with open(path) as f:
                return json.load(f)
        except FileNotFoundError:
            return None

    def store(self, series: SampleSeries) -> str:
        series.check()
        source = series.source.value
        n = len(series)
        rec = np.empty(n, dtype=_DTYPE)
        rec["ts"] = series.ts_ns
        rec["p"] = series.power_w
        rec["e"] = _column(series.energy_wh, n)
        rec["v"] = _column(series.voltage_v, n)
        rec["i"] = _column(series.current_a, n)
        blob = rec.tobytes()
        digest = hashlib.sha256(blob).hexdigest()
        with self._lock(source, series.target):
            d = self._dir(source, series.target)
            os.makedirs(d, exist_ok=True)
            index = self._read_index(source, series.target) or {
                "source": source,
                "target": series.target,
                "nominal_interval_ns": int(series.nominal_interval_ns),
                "accuracy_fraction": series.accuracy_fraction,
                "segments": [],
            }
            for seg in index["segments"]:
                if seg["sha256"] == digest:
                    return seg["id"]
            number = len(index["segments"])
            fname = f"{number:06d}.bin"
            with open(os.path.join(d, fname), "wb") as f:
                f.write(blob)
            seg_id = f"{source}:{series.target}:{number:06d}"
            index["segments"].append({
                "id": seg_id,
                "file": fname,
                "n": n,
                "first_ts": int(series.ts_ns[0]) if n else None,
                "last_ts": int(series.ts_ns[-1]) if n else None,
                "sha256": digest,
                "meta": series.meta,
            })
            tmp = os.path.join(d, "index.json.tmp")
            with open(tmp, "w") as f:
                json.dump(index, f, indent=1, sort_keys=True)
            os.replace(tmp, os.path.join(d, "index.json"))
        return seg_id

    def _load_segment(self, index: dict, seg: dict) -> SampleSeries:
        d = self._dir(index["source"], index["target"])
        rec = np.fromfile(os.path.join(d, seg["file"]), dtype=_DTYPE)
        return SampleSeries(
            Source(index["source"]), index["target"], index["nominal_interval_ns"],
            index["accuracy_fraction"], rec["ts"].copy(), rec["p"].copy(),
            _optional(rec["e"]), _optional(rec["v"]), _optional(rec["i"]), dict(seg["meta"]),
        )

    @staticmethod
    def _parse_id(series_id: str) -> tuple[str, str, str]:
        try:
            source, rest = series_id.split(":", 1)
            target, number = rest.rsplit(":", 1)
        except ValueError:
            raise NotFound(series_id) from None
        return source, target, number

    def fetch(self, series_id: str, window=None) -> SampleSeries:
        source, target, _ = self._parse_id(series_id)
        index = self._read_index(source, target)
        seg = None
        if index is not None:
            seg = next((s for s in index["segments"] if s["id"] == series_id), None)
        if seg is None:
            raise NotFound(series_id)
        series = self._load_segment(index, seg)
        if window is None:
            return series
        w = _as_window(window)
        out = series.select(w.start_ns, w.end_ns)
        if len(out) == 0:
            raise EmptyWindow(f"{series_id}: nothing in window")
        return out

    def fetch_stream(self, source: Source | str, target: str, window) -> SampleSeries:
        """Every stored sample of one stream inside ``window``, merged across segments."""
        source = Source(source).value
        index = self._read_index(source, target)
        if index is None:
            raise NotFound(f"{source}:{target}")
        w = _as_window(window)
        parts = [self._load_segment(index, s).select(w.start_ns, w.end_ns) for s in index["segments"]
                 if s["n"] and s["first_ts"] < w.end_ns and s["last_ts"] >= w.start_ns]
        parts = [p for p in parts if len(p)]
        if not parts:
            raise EmptyWindow(f"{source}:{target}: nothing in window")
        ts = np.concatenate([p.ts_ns for p in parts])
        # stable sort keeps the earliest-stored copy of a duplicated timestamp first
        order = np.argsort(ts, kind="stable")
        ts = ts[order]
        keep = np.ones(len(ts), dtype=bool)
        keep[1:] = np.diff(ts) != 0
        order = order[keep]

        def merged(name):
            cols = [getattr(p, name) for p in parts]
            if any(c is None for c in cols):
                return None
            return np.concatenate(cols)[order]

        out = SampleSeries(
            Source(source), target, index["nominal_interval_ns"], index["accuracy_fraction"],
            ts[keep], np.concatenate([p.power_w for p in parts])[order],
            merged("energy_wh"), merged("voltage_v"), merged("current_a"),
        )
        return out.flag_gaps()

    def streams(self) -> list[tuple[str, str]]:
        found = []
        for source in sorted(os.listdir(self.root)):
            sdir = os.path.join(self.root, source)
            if not os.path.isdir(sdir):
                continue
            for t in sorted(os.listdir(sdir)):
                if os.path.exists(os.path.join(sdir, t, "index.json")):
                    found.append((source, unquote(t)))
        return found

    def to_csv(self, series_id: str) -> str:
        series = self.fetch(series_id)
        lines = ["ts_ns,power_w,energy_wh,voltage_v,current_a"]
        n = len(series)
        cols = [_column(series.energy_wh, n), _column(series.voltage_v, n), _column(series.current_a, n)]
        for k in range(n):
            extra = ["" if np.isnan(c[k]) else repr(float(c[k])) for c in cols]
            lines.append(",".join([str(int(series.ts_ns[k])), repr(float(series.power_w[k]))] + extra))
        return "\n".join(lines) + "\n"
