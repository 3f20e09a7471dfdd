"""Power collector: pull every telemetry source for a finished test window."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import httpx

from ..schemas import COMPONENT_CLASSES, CollectRequest, PowerReport, TargetEnergy
from ..telemetry import (
    EmptyWindow, PduClient, PodPowerClient, SampleSeries, TelemetryError, read_wattmeter_trace,
)
from ..timeseries import Store, Window, integrate_energy
from .db import ResultsDB

log = logging.getLogger(__name__)


class BadRequest(ValueError):
    pass


def http_clock(http: httpx.Client):
    """Testbed time as reported by the telemetry side's health endpoint."""
    def now() -> int:
        resp = http.get("/health")
        resp.raise_for_status()
        return int(resp.json()["now_ns"])
    return now


class PowerCollector:
    def __init__(self, telemetry: httpx.Client, store: Store, db: ResultsDB, clock=None,
                 offsets_ns: dict[str, int] | None = None, workers: int = 8):
        self.pdu = PduClient(telemetry)
        self.pods = PodPowerClient(telemetry)
        self.store = store
        self.db = db
        self.clock = clock or http_clock(telemetry)
        # per-source clock skew correction, keyed by source name
        self.offsets_ns = dict(offsets_ns or {})
        self.workers = workers

    def _tasks(self, req: CollectRequest):
        w = req.window
        tasks = []
        if req.nodes:
            try:
                outlets = self.pdu.outlets()
            except (TelemetryError, httpx.HTTPError) as exc:
                outlets = exc
            for node in req.nodes:
                meta = dict(target=node, source="PDU", component="node", klass="node", node=node)

                def poll(node=node):
                    if isinstance(outlets, Exception):
                        raise outlets
                    if node not in outlets:
                        raise TelemetryError(f"no PDU outlet for node {node!r}")
                    return self.pdu.poll(outlets[node], w.start_ns, w.end_ns)
                tasks.append((f"node:{node}", meta, poll))
        for pod in req.pods:
            meta = dict(target=pod.name, source="POD_ESTIMATOR", component=pod.component, klass=pod.klass,
                        node=req.placements.get(pod.name))
            tasks.append((f"pod:{pod.name}", meta,
                          lambda pod=pod: self.pods.query(pod.name, w.start_ns, w.end_ns, req.step_ns)))
        if req.ru is not None:
            ru = req.ru
            meta = dict(target=ru.name, source="WATTMETER", component="ru", klass="radio", node=None)
            tasks.append((f"ru:{ru.name}", meta,
                          lambda: read_wattmeter_trace(ru.trace_file, w.start_ns, w.end_ns, target=ru.name)))
        return tasks

    def _energy(self, series: SampleSeries, window: Window, meta: dict) -> TargetEnergy:
        series_id = self.store.store(series)
        offset = self.offsets_ns.get(series.source.value, 0)
        if offset:
            series = series.shifted(offset)
        res = integrate_energy(series, window)
        flags = []
        if res.empty:
            flags.append("empty")
        if res.gap_count:
            flags.append("gaps")
        return TargetEnergy(**meta, series_id=series_id, energy_j=res.energy_j, mean_power_w=res.mean_power_w,
                            covered_fraction=res.covered_fraction, gap_count=res.gap_count,
                            n_samples=res.n_samples, flags=flags)

    def collect(self, req: CollectRequest) -> PowerReport:
        now = self.clock()
        if req.window.end_ns > now:
            raise BadRequest(f"window ends at {req.window.end_ns}, testbed time is {now}")
        window = Window(req.window.start_ns, req.window.end_ns)
        tasks = self._tasks(req)
        with ThreadPoolExecutor(max_workers=max(1, min(self.workers, len(tasks)))) as pool:
            futures = [(key, meta, pool.submit(fn)) for key, meta, fn in tasks]
            outcomes = []
            for key, meta, fut in futures:
                try:
                    outcomes.append((key, meta, fut.result(), None))
                except EmptyWindow as exc:
                    outcomes.append((key, meta, None, exc))
                except (TelemetryError, httpx.HTTPError, OSError) as exc:
                    log.warning("collect %s: %s failed: %s", req.test_id, key, exc)
                    outcomes.append((key, meta, None, exc))
        targets: dict[str, TargetEnergy] = {}
        for key, meta, series, exc in outcomes:
            if series is not None:
                targets[key] = self._energy(series, window, meta)
            elif isinstance(exc, EmptyWindow):
                targets[key] = TargetEnergy(**meta, flags=["empty"])
            else:
                targets[key] = TargetEnergy(**meta, flags=["error"], error=f"{type(exc).__name__}: {exc}")
        report = PowerReport(
            test_id=req.test_id,
            window=req.window,
            targets=dict(sorted(targets.items())),
            totals=class_totals(targets),
            partial=any(t.error for t in targets.values()),
        )
        self.db.put_power(report)
        return report


def class_totals(targets: dict[str, TargetEnergy]) -> dict[str, float]:
    """Energy per component class; platform is node energy minus the pods attributed to it."""
    totals = {c: 0.0 for c in COMPONENT_CLASSES}
    for t in targets.values():
        if t.klass != "node":
            totals[t.klass] += t.energy_j
    for t in targets.values():
        if t.klass == "node" and not t.error:
            pods = sum(p.energy_j for p in targets.values() if p.klass != "node" and p.node == t.node)
            totals["platform"] += t.energy_j - pods
    return totals
