"""HTTP services for the power and performance collectors plus the joined report view."""
from __future__ import annotations

import os

import httpx
from fastapi import APIRouter, FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse

from .. import analytics
from ..schemas import Ack, CollectRequest, PerfRecord, PowerReport, SweepRecord
from ..timeseries import Store
from .db import ResultsDB, UnknownId
from .perf import PerfCollector
from .power import BadRequest, PowerCollector


def _classes(raw: str | None) -> tuple[str, ...]:
    if not raw:
        return analytics.DEFAULT_CLASSES
    return tuple(c.strip() for c in raw.split(",") if c.strip())


def _power_router(collector: PowerCollector) -> APIRouter:
    router = APIRouter(prefix="/power", tags=["power"])

    @router.post("/collect", response_model=PowerReport, response_model_by_alias=True)
    def collect(req: CollectRequest):
        try:
            report = collector.collect(req)
        except BadRequest as exc:
            raise HTTPException(400, str(exc)) from exc
        body = report.model_dump(mode="json", by_alias=True)
        # 207: report emitted, but some sources failed
        return JSONResponse(body, status_code=207 if report.partial else 200)

    @router.get("/reports/{test_id}")
    def power_report(test_id: str):
        try:
            return collector.db.read("power", test_id)
        except UnknownId:
            raise HTTPException(404, f"no power report for {test_id}") from None

    return router


def _perf_router(collector: PerfCollector) -> APIRouter:
    router = APIRouter(prefix="/perf", tags=["perf"])

    @router.post("/results", response_model=Ack)
    def results(record: PerfRecord):
        try:
            changed = collector.ingest(record)
        except BadRequest as exc:
            raise HTTPException(400, str(exc)) from exc
        return Ack(test_id=record.test_id, stored=True, detail=None if changed else "unchanged")

    @router.get("/results/{test_id}")
    def perf_record(test_id: str):
        try:
            return collector.db.read("perf", test_id)
        except UnknownId:
            raise HTTPException(404, f"no perf record for {test_id}") from None

    return router


def _report_router(db: ResultsDB) -> APIRouter:
    router = APIRouter(tags=["reports"])

    @router.get("/reports/{test_id}")
    def joined(test_id: str, classes: str | None = None):
        power = db.power(test_id) if db.exists("power", test_id) else None
        perf = db.perf(test_id) if db.exists("perf", test_id) else None
        if power is None and perf is None:
            raise HTTPException(404, f"unknown test id {test_id}")
        eff, error = None, None
        if power is not None and perf is not None:
            try:
                eff = analytics.energy_efficiency(power, perf, _classes(classes)).model_dump(mode="json")
            except analytics.ZeroEnergy as exc:
                error = str(exc)
        return {
            "test_id": test_id,
            "complete": power is not None and perf is not None,
            "power": power.model_dump(mode="json", by_alias=True) if power else None,
            "perf": perf.model_dump(mode="json") if perf else None,
            "efficiency": eff,
            "efficiency_error": error,
        }

    @router.post("/sweeps", response_model=Ack)
    def put_sweep(record: SweepRecord):
        db.write("sweeps", record.sweep_id, record)
        return Ack(test_id=record.sweep_id)

    @router.get("/sweeps/{sweep_id}")
    def get_sweep(sweep_id: str):
        try:
            return db.read("sweeps", sweep_id)
        except UnknownId:
            raise HTTPException(404, f"unknown sweep {sweep_id}") from None

    @router.get("/sweeps/{sweep_id}/comparison")
    def comparison(sweep_id: str, power_key: str = Query("ran"), classes: str | None = None):
        try:
            record = SweepRecord.model_validate(db.read("sweeps", sweep_id))
        except UnknownId:
            raise HTTPException(404, f"unknown sweep {sweep_id}") from None
        return sweep_comparison(db, record, power_key, _classes(classes)).model_dump(mode="json")

    return router


def sweep_comparison(db: ResultsDB, record: SweepRecord, power_key: str = "ran",
                     classes=analytics.DEFAULT_CLASSES) -> analytics.Comparison:
    points = []
    for run in record.runs:
        if not (run.ok and db.exists("power", run.test_id)):
            continue
        perf = db.perf(run.test_id) if db.exists("perf", run.test_id) else None
        points.append(analytics.run_point(db.power(run.test_id), perf, record.label, run.value, classes))
    return analytics.compare_configurations(points, power_key)


def create_app(root: str | os.PathLike, telemetry: httpx.Client | None = None, clock=None,
               offsets_ns: dict[str, int] | None = None) -> FastAPI:
    """Both collectors and the report view in one service.

    ``telemetry`` reaches the PDU and pod-power endpoints; without it only the
    performance side and the read endpoints work.
    """
    root = os.fspath(root)
    db = ResultsDB(os.path.join(root, "results"))
    app = FastAPI(title="ranprof collectors")
    app.state.db = db

    @app.get("/health")
    def health():
        return {"status": "ok"}

    if telemetry is not None:
        store = Store(os.path.join(root, "store"))
        app.state.power = PowerCollector(telemetry, store, db, clock=clock, offsets_ns=offsets_ns)
        app.include_router(_power_router(app.state.power))
    app.include_router(_perf_router(PerfCollector(db)))
    app.include_router(_report_router(db))
    return app
