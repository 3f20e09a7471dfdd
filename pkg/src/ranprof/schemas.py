"""Wire models shared by the simulator, the collectors and their clients."""
from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, model_validator

ComponentClass = Literal["ran", "core", "radio", "xapp", "platform"]
COMPONENT_CLASSES = ("ran", "core", "radio", "xapp", "platform")


class UeResult(BaseModel):
    ue_index: int
    ue_id: str = ""
    protocol: Literal["udp", "tcp"]
    direction: Literal["dl", "ul"]
    duration_s: float = Field(gt=0)
    start_ns: int | None = None
    end_ns: int | None = None
    bits_transferred: float = Field(ge=0)
    mean_bitrate_bps: float = Field(ge=0)
    jitter_ms: float | None = Field(default=None, ge=0)
    lost_percent: float | None = Field(default=None, ge=0)
    retransmits: int | None = Field(default=None, ge=0)


class WindowModel(BaseModel):
    start_ns: int
    end_ns: int

    @model_validator(mode="after")
    def _ordered(self):
        if self.end_ns <= self.start_ns:
            raise ValueError("window end must be after start")
        return self


class PodTarget(BaseModel):
    name: str
    component: str  # gnb, upf, amf, smf, xapp, ...
    klass: ComponentClass = Field(alias="class")

    model_config = {"populate_by_name": True}


class RadioTarget(BaseModel):
    name: str
    trace_file: str


class CollectRequest(BaseModel):
    test_id: str
    window: WindowModel
    placements: dict[str, str] = Field(default_factory=dict)  # component -> node
    nodes: list[str] = Field(default_factory=list)
    pods: list[PodTarget] = Field(default_factory=list)
    ru: RadioTarget | None = None
    network_scenario_id: int | None = None
    traffic_scenario_id: int | None = None
    step_ns: int = Field(default=1_000_000_000, gt=0)

    @model_validator(mode="after")
    def _has_target(self):
        if not (self.nodes or self.pods or self.ru):
            raise ValueError("at least one telemetry target is required")
        return self


class TargetEnergy(BaseModel):
    target: str
    source: Literal["PDU", "POD_ESTIMATOR", "WATTMETER"]
    component: str
    klass: ComponentClass | Literal["node"] = Field(alias="class")
    node: str | None = None
    series_id: str | None = None
    energy_j: float = 0.0
    mean_power_w: float = 0.0
    covered_fraction: float = 0.0
    gap_count: int = 0
    n_samples: int = 0
    flags: list[str] = Field(default_factory=list)
    error: str | None = None

    model_config = {"populate_by_name": True}


class PowerReport(BaseModel):
    test_id: str
    window: WindowModel
    targets: dict[str, TargetEnergy]
    totals: dict[str, float]
    partial: bool = False


class PerfRecord(BaseModel):
    test_id: str
    ue_results: list[UeResult]
    aggregate_bits: float = Field(ge=0)
    aggregate_mean_bitrate_bps: float = Field(ge=0)
    traffic_scenario_id: int | None = None

    @classmethod
    def from_results(cls, test_id: str, results: list[UeResult], **kw) -> "PerfRecord":
        return cls(
            test_id=test_id,
            ue_results=results,
            aggregate_bits=sum(r.bits_transferred for r in results),
            aggregate_mean_bitrate_bps=sum(r.mean_bitrate_bps for r in results),
            **kw,
        )


class Ack(BaseModel):
    test_id: str
    stored: bool = True
    detail: str | None = None


class SweepRun(BaseModel):
    value: float
    test_id: str
    ok: bool = True


class SweepRecord(BaseModel):
    sweep_id: str
    label: str
    param: str
    values: list[float]
    runs: list[SweepRun] = Field(default_factory=list)
    vector: dict = Field(default_factory=dict)
