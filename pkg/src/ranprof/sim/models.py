from __future__ import annotations

from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from . import noise


def _table(pairs) -> tuple[np.ndarray, np.ndarray]:
    keys = np.array([float(k) for k, _ in pairs])
    vals = np.array([float(v) for _, v in pairs])
    return keys, vals


def _check_table(pairs, what: str) -> None:
    if not pairs:
        raise ValueError(f"{what}: empty lookup table")
    keys, _ = _table(pairs)
    if np.any(np.diff(keys) <= 0):
        raise ValueError(f"{what}: lookup keys must be strictly increasing")


class PowerModel(BaseModel):
    """Noise-free power as a function of load context, plus Gaussian noise.

    params by kind:
      LINEAR_LOAD      intercept_w, slope (W per unit), driver ("load_mbps" | "ue_count"),
                       optional max_load (driver value is clamped to it)
      CONSTANT         value_w
      LOOKUP_UE_COUNT  table: [[ue_count, W], ...], linear between keys, held outside
      RU_PROFILE       idle_w: {layout: W}, optional ue_delta_w: [[ue_count, dW], ...],
                       boot_s (linear ramp from 0 W after power-on)
    """

    kind: Literal["LINEAR_LOAD", "CONSTANT", "LOOKUP_UE_COUNT", "RU_PROFILE"]
    params: dict[str, Any] = Field(default_factory=dict)
    noise_sigma_w: float = Field(default=0.0, ge=0)
    seed: int | None = None

    @model_validator(mode="after")
    def _params_for_kind(self):
        p = self.params
        if self.kind == "LINEAR_LOAD":
            for key in ("intercept_w", "slope"):
                if key not in p:
                    raise ValueError(f"LINEAR_LOAD needs {key}")
            if p.get("driver", "load_mbps") not in ("load_mbps", "ue_count"):
                raise ValueError("LINEAR_LOAD driver must be load_mbps or ue_count")
        elif self.kind == "CONSTANT":
            if "value_w" not in p:
                raise ValueError("CONSTANT needs value_w")
        elif self.kind == "LOOKUP_UE_COUNT":
            _check_table(p.get("table"), "LOOKUP_UE_COUNT")
        elif self.kind == "RU_PROFILE":
            if not p.get("idle_w"):
                raise ValueError("RU_PROFILE needs idle_w per antenna layout")
            if p.get("ue_delta_w"):
                _check_table(p["ue_delta_w"], "RU_PROFILE ue_delta_w")
        return self

    @property
    def boot_s(self) -> float:
        return float(self.params.get("boot_s", 0.0)) if self.kind == "RU_PROFILE" else 0.0

    def mean_power(self, load_mbps, ue_count, since_on_s=None, layout: str = "2x2") -> np.ndarray:
        load = np.asarray(load_mbps, dtype=np.float64)
        ues = np.asarray(ue_count, dtype=np.float64)
        p = self.params
        if self.kind == "LINEAR_LOAD":
            x = ues if p.get("driver", "load_mbps") == "ue_count" else load
            if p.get("max_load") is not None:
                x = np.minimum(x, float(p["max_load"]))
            out = float(p["intercept_w"]) + float(p["slope"]) * x
        elif self.kind == "CONSTANT":
            out = np.full(np.broadcast(load, ues).shape, float(p["value_w"]))
        elif self.kind == "LOOKUP_UE_COUNT":
            keys, vals = _table(p["table"])
            out = np.interp(ues, keys, vals)
        else:
            idle = p["idle_w"]
            if layout not in idle:
                raise ValueError(f"RU profile has no idle power for layout {layout!r}")
            out = np.full(ues.shape, float(idle[layout]))
            if p.get("ue_delta_w"):
                keys, vals = _table(p["ue_delta_w"])
                out = out + np.where(ues >= keys[0], np.interp(ues, keys, vals), 0.0)
            boot = self.boot_s
            if boot > 0 and since_on_s is not None:
                ramp = np.clip(np.asarray(since_on_s, dtype=np.float64) / boot, 0.0, 1.0)
                out = out * ramp
        return np.maximum(np.asarray(out, dtype=np.float64), 0.0)

    def emit(self, mean: np.ndarray, seed: int, key: str, stream: str, counter) -> np.ndarray:
        """Mean plus Gaussian noise, clamped at 0 W."""
        mean = np.asarray(mean, dtype=np.float64)
        if self.noise_sigma_w == 0:
            return mean
        s = seed if self.seed is None else self.seed
        z = noise.normal(s, key, stream, counter)
        return np.maximum(mean + self.noise_sigma_w * z, 0.0)
