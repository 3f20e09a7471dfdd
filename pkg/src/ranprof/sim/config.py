"""Simulator configuration and the default testbed preset.

Model parameters come from published measurements: gNB pod power versus UDP
load (OAI 36 -> 40 W, srsRAN flat 48 W over 10-70 Mbps), UPF 1.5 -> 5 W over
the same sweep, RU idle 35.6 W (2x2) / 38.7 W (4x4), and the per-UE-count
CU/DU and RU averages for the two KPM xApps.
"""
from __future__ import annotations

import ipaddress
import json

from pydantic import BaseModel, Field, field_validator

from .models import PowerModel

EPOCH_NS = 1_760_000_000 * 10**9

# average CU/DU and RU power for 1..5 attached UEs, per monitoring xApp
E2E_TABLE = {
    "kpm-protobuf": {
        "cudu": [11.9, 13.2, 24.35, 26.15, 26.3],
        "ru": [35.3606, 35.4810, 35.5110, 35.5836, 35.6025],
    },
    "kpm-standard": {
        "cudu": [10.95, 11.65, 22.55, 25.9, 26.15],
        "ru": [35.2991, 35.4462, 35.5937, 35.6625, 35.6925],
    },
}

RU_IDLE_W = {"2x2": 35.6, "4x4": 38.7}


class NodeConfig(BaseModel):
    name: str
    outlet: str
    roles: list[str] = Field(default_factory=list)
    baseline_w: float | None = None


class CellConfig(BaseModel):
    """Air-interface capacity for one radio type.

    Total cell throughput with n active UEs is capacity_mbps * n**ue_gain_exponent,
    shared equally between them.
    """

    capacity_mbps: float = Field(gt=0)
    ue_gain_exponent: float = 0.0
    udp_loss: float = Field(default=0.0, ge=0, lt=1)
    udp_rate_jitter: float = Field(default=0.005, ge=0)
    tcp_rate_jitter: float = Field(default=0.02, ge=0)


class SimConfig(BaseModel):
    seed: int = 0
    epoch_ns: int = EPOCH_NS
    warp: float = Field(default=60.0, ge=1)
    paced: bool = True
    startup_delay_s: float = Field(default=2.0, ge=0)
    node_baseline_w: float = 200.0
    nodes: list[NodeConfig] = Field(default_factory=list)
    ru_subnets: list[str] = Field(default_factory=lambda: ["192.168.40.0/24", "10.10.0.0/16"])
    models: dict[str, PowerModel] = Field(default_factory=dict)
    cells: dict[str, CellConfig] = Field(default_factory=dict)
    # steady TCP throughput per "<stack>/<split>/<dl|ul>"
    tcp_rates_mbps: dict[str, float] = Field(default_factory=dict)
    pdu_interval_s: float = Field(default=1.0, gt=0)
    pdu_accuracy: float = 0.005
    pdu_voltage_v: float = 230.0
    scrape_interval_s: float = Field(default=1.0, gt=0)
    scrape_drop_prob: float = Field(default=0.0, ge=0, le=1)
    wattmeter_interval_ms: float = Field(default=62.5, gt=0)
    wattmeter_jitter_ms: float = Field(default=10.0, ge=0)

    @field_validator("ru_subnets")
    @classmethod
    def _subnets(cls, value):
        for net in value:
            ipaddress.IPv4Network(net)
        return value

    @classmethod
    def load(cls, path) -> "SimConfig":
        """Read a JSON config file; missing sections fall back to the defaults."""
        with open(path) as f:
            data = json.load(f)
        return default_config(**data)


def _lookup(values) -> list[list[float]]:
    return [[i + 1, v] for i, v in enumerate(values)]


def default_models() -> dict[str, PowerModel]:
    oai_slope = (40.0 - 36.0) / (70.0 - 10.0)
    upf_slope = (5.0 - 1.5) / (70.0 - 10.0)
    models = {
        "gnb:oai/8": PowerModel(
            kind="LINEAR_LOAD",
            params={"intercept_w": 36.0 - 10.0 * oai_slope, "slope": oai_slope,
                    "driver": "load_mbps", "max_load": 70.0},
            noise_sigma_w=0.5,
        ),
        "gnb:srsran/8": PowerModel(kind="CONSTANT", params={"value_w": 48.0}, noise_sigma_w=0.5),
        "gnb:srsran/7.2": PowerModel(kind="CONSTANT", params={"value_w": 48.0}, noise_sigma_w=0.5),
        "core:upf": PowerModel(
            kind="LINEAR_LOAD",
            params={"intercept_w": 1.5 - 10.0 * upf_slope, "slope": upf_slope, "driver": "load_mbps"},
            noise_sigma_w=0.2,
        ),
        "core:amf": PowerModel(kind="CONSTANT", params={"value_w": 0.3}, noise_sigma_w=0.05),
        "core:smf": PowerModel(kind="CONSTANT", params={"value_w": 0.25}, noise_sigma_w=0.05),
        "xapp:kpm-protobuf": PowerModel(
            kind="LINEAR_LOAD",
            params={"intercept_w": 0.9, "slope": 0.15, "driver": "ue_count"},
            noise_sigma_w=0.05,
        ),
        "xapp:kpm-standard": PowerModel(
            kind="LINEAR_LOAD",
            params={"intercept_w": 1.3, "slope": 0.2, "driver": "ue_count"},
            noise_sigma_w=0.05,
        ),
    }
    for radio in ("usrp", "foxconn"):
        models[f"ru:{radio}"] = PowerModel(
            kind="RU_PROFILE", params={"idle_w": dict(RU_IDLE_W), "boot_s": 5.0}, noise_sigma_w=0.05,
        )
    for xapp, table in E2E_TABLE.items():
        cudu = PowerModel(kind="LOOKUP_UE_COUNT", params={"table": _lookup(table["cudu"])}, noise_sigma_w=0.3)
        models[f"gnb:oai/7.2+{xapp}"] = cudu
        models[f"ru:foxconn+{xapp}"] = PowerModel(
            kind="RU_PROFILE",
            params={
                "idle_w": dict(RU_IDLE_W),
                "ue_delta_w": _lookup([round(v - RU_IDLE_W["2x2"], 6) for v in table["ru"]]),
                "boot_s": 5.0,
            },
            noise_sigma_w=0.05,
        )
    models["gnb:oai/7.2"] = models["gnb:oai/7.2+kpm-protobuf"]
    return models


def default_nodes() -> list[NodeConfig]:
    return [
        NodeConfig(name="microway-1", outlet="px4-a.1", roles=["gnb-split8"]),
        NodeConfig(name="dell-r760-1", outlet="px4-a.2", roles=["gnb-split7.2"]),
        NodeConfig(name="core-1", outlet="px4-a.3", roles=["core"]),
        NodeConfig(name="ric-1", outlet="px4-a.4", roles=["ric"]),
    ]


def pool_nodes(n: int) -> list[NodeConfig]:
    """``n`` identical hosts that can each carry a whole deployment, for concurrent runs."""
    roles = ["gnb-split8", "gnb-split7.2", "core", "ric"]
    return [NodeConfig(name=f"pool-{i:03d}", outlet=f"px4-p.{i}", roles=list(roles)) for i in range(1, n + 1)]


def default_cells() -> dict[str, CellConfig]:
    return {
        "usrp": CellConfig(capacity_mbps=150.0),
        "foxconn": CellConfig(capacity_mbps=70.0, ue_gain_exponent=0.55),
    }


def default_tcp_rates() -> dict[str, float]:
    # rate = efficiency-interval midpoint x modelled pod power at that rate
    return {
        "oai/8/dl": 125.0,
        "srsran/8/dl": 114.48,
        "oai/8/ul": 12.255,
        "srsran/8/ul": 12.432,
    }


def default_config(**overrides) -> SimConfig:
    models = default_models()
    for key, value in (overrides.pop("models", None) or {}).items():
        models[key] = value if isinstance(value, PowerModel) else PowerModel.model_validate(value)
    cells = default_cells()
    for key, value in (overrides.pop("cells", None) or {}).items():
        cells[key] = value if isinstance(value, CellConfig) else CellConfig.model_validate(value)
    rates = default_tcp_rates()
    rates.update(overrides.pop("tcp_rates_mbps", None) or {})
    nodes = overrides.pop("nodes", None)
    return SimConfig.model_validate({
        "models": models,
        "cells": cells,
        "tcp_rates_mbps": rates,
        "nodes": default_nodes() if nodes is None else nodes,
        **overrides,
    })
