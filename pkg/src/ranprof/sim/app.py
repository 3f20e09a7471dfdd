"""HTTP facade of the simulated testbed.

Telemetry endpoints mimic the real sources (PDU REST polling and a
Prometheus-style range query); ``/sim/*`` is the admin surface used by the
orchestrator.
"""
from __future__ import annotations

from typing import Literal

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .engine import SimError, Testbed
from .models import PowerModel


class DeployRequest(BaseModel):
    name: str
    role: str
    kind: Literal["gnb", "core", "ru", "xapp"]
    profile: str
    node: str | None = None
    variant: str | None = None
    serves: list[str] = Field(default_factory=list)
    antenna_layout: Literal["2x2", "4x4"] = "2x2"
    address: str | None = None
    model: PowerModel | None = None


class NameRequest(BaseModel):
    name: str


class AwaitReadyRequest(BaseModel):
    names: list[str]
    timeout_s: float = Field(default=15.0, ge=0)


class AttachRequest(BaseModel):
    ue_id: str
    gnb: str


class TrafficItem(BaseModel):
    ue_id: str
    ue_index: int
    gnb: str
    radio: str
    profile: str
    protocol: Literal["udp", "tcp"]
    direction: Literal["dl", "ul"]
    bandwidth_mbps: float = Field(ge=0)
    duration_s: float = Field(gt=0)


class TrafficRequest(BaseModel):
    ues: list[TrafficItem] = Field(min_length=1)


class TraceRequest(BaseModel):
    ru: str
    start_ns: int
    end_ns: int
    file: str


class AdvanceRequest(BaseModel):
    seconds: float | None = Field(default=None, ge=0)
    until_ns: int | None = None


class FaultRequest(BaseModel):
    stall: list[str] | None = None
    ue_drop: list[int | str] | None = None
    scrape_drop_prob: float | None = Field(default=None, ge=0, le=1)
    clear: bool = False


def create_app(testbed: Testbed | None = None) -> FastAPI:
    bed = testbed or Testbed()
    app = FastAPI(title="ranprof testbed simulator")
    app.state.testbed = bed

    @app.exception_handler(SimError)
    def _sim_error(request, exc: SimError):
        return JSONResponse(status_code=exc.status, content={"detail": str(exc), "error": type(exc).__name__})

    @app.get("/health")
    def health():
        return {"status": "ok", "now_ns": bed.now_ns()}

    @app.get("/pdu/outlets")
    def outlets():
        return bed.pdu_outlets()

    @app.get("/pdu/outlets/{outlet}/samples")
    def pdu_samples(outlet: str, start: int, end: int):
        if end < start:
            raise HTTPException(400, "end before start")
        return bed.pdu_samples(outlet, start, end)

    @app.get("/metrics/query_range")
    def query_range(pod: str, start: int, end: int, step: int = Query(1_000_000_000, gt=0)):
        if end < start:
            raise HTTPException(400, "end before start")
        return {"pod": pod, "samples": bed.pod_query_range(pod, start, end, step)}

    @app.post("/sim/deploy")
    def deploy(req: DeployRequest):
        life = bed.deploy(**req.model_dump(exclude={"model"}), model=req.model)
        return {"name": life.name, "node": life.node, "state": life.state(bed.now_ns()),
                "deployed_ns": life.deployed_ns, "ready_ns": life.ready_ns}

    @app.post("/sim/teardown")
    def teardown(req: NameRequest):
        return {"name": req.name, "removed": bed.teardown(req.name)}

    @app.post("/sim/teardown_all")
    def teardown_all():
        return {"removed": bed.teardown_all()}

    @app.get("/sim/inventory")
    def inventory():
        return bed.inventory()

    @app.post("/sim/await_ready")
    def await_ready(req: AwaitReadyRequest):
        return bed.await_ready(req.names, req.timeout_s)

    @app.post("/sim/ue/attach")
    def attach(req: AttachRequest):
        att = bed.attach_ue(req.ue_id, req.gnb)
        return {"ue_id": att.ue_id, "gnb": att.gnb, "attach_ns": att.attach_ns}

    @app.post("/sim/ue/traffic")
    def traffic(req: TrafficRequest):
        return bed.run_traffic([u.model_dump() for u in req.ues])

    @app.get("/sim/ue/traffic/{batch_id}")
    def traffic_batch(batch_id: str):
        batch = bed.batches.get(batch_id)
        if batch is None:
            raise HTTPException(404, f"unknown batch {batch_id}")
        return batch

    @app.post("/sim/ru/trace")
    def ru_trace(req: TraceRequest):
        try:
            path = bed.write_ru_trace(req.ru, req.start_ns, req.end_ns, req.file)
        except OSError as exc:
            raise HTTPException(500, f"cannot write trace: {exc}") from exc
        return {"ru": req.ru, "file": path}

    @app.get("/sim/clock")
    def clock():
        return {"now_ns": bed.now_ns(), "warp": bed.clock.warp, "paced": bed.clock.paced}

    @app.post("/sim/clock/advance")
    def advance(req: AdvanceRequest):
        if req.until_ns is not None:
            return {"now_ns": bed.clock.advance_to(req.until_ns)}
        return {"now_ns": bed.clock.advance(req.seconds or 0.0)}

    @app.post("/sim/faults")
    def faults(req: FaultRequest):
        return bed.set_faults(req.stall, req.ue_drop, req.scrape_drop_prob, req.clear)

    @app.get("/sim/config")
    def config():
        return bed.config.model_dump(mode="json")

    return app
