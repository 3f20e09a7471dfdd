"""JSON test vectors: a network scenario plus a traffic scenario.

Parsing is strict about types and lenient about unknown keys, which are
reported through :class:`UnknownFieldWarning` and dropped.
"""
from __future__ import annotations

import ipaddress
import json
import typing
import warnings
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

STACK_PREFIXES = ("oai-", "srsran-")

# functional split -> radio unit allowed with it
SPLIT_RADIO = {"8": "usrp", "7.2": "foxconn"}


class VectorError(ValueError):
    pass


class SchemaError(VectorError):
    """A field is missing, ill-typed or out of range; ``path`` is a JSON path."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class ConstraintError(VectorError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class UnknownFieldWarning(UserWarning):
    pass


class _Model(BaseModel):
    model_config = ConfigDict(strict=True, frozen=True, extra="ignore")


class CoreNetwork(_Model):
    name: Literal["open5gs", "commercial"]


class StackUnit(_Model):
    name: str
    config_file: str


class RadioUnit(_Model):
    name: Literal["usrp", "foxconn"]
    address: str
    antenna_layout: Literal["2x2", "4x4"] = "2x2"

    @field_validator("address")
    @classmethod
    def _ipv4(cls, value: str) -> str:
        try:
            ipaddress.IPv4Address(value)
        except ValueError:
            raise ValueError(f"not an IPv4 address: {value!r}") from None
        return value


class RanSpec(_Model):
    cu: StackUnit
    du: StackUnit
    functional_split: Literal["7.2", "8"]
    ru: RadioUnit


class NetworkScenario(_Model):
    id: int = Field(gt=0)
    core_network: CoreNetwork
    ran: RanSpec
    # RIC applications deployed next to the gNB; not part of the minimal vector
    xapps: tuple[Literal["kpm-protobuf", "kpm-standard"], ...] = ()


class UeSpec(_Model):
    slice_id: int
    test_type: Literal["iperf"]
    bandwidth_mbps: float = Field(ge=0)
    duration: float = Field(gt=0)
    protocol: Literal["udp", "tcp"]
    reverse: bool
    json_output: bool
    server_hostname: str
    server_port: int = Field(ge=1, le=65535)

    @property
    def direction(self) -> str:
        # iperf --reverse: the server sends, the UE receives
        return "dl" if self.reverse else "ul"


class TrafficScenario(_Model):
    id: int = Field(gt=0)
    ue_specification: tuple[UeSpec, ...]


class TestVector(_Model):
    __test__ = False  # keep pytest from collecting this class

    network_scenario: NetworkScenario
    traffic_scenario: TrafficScenario

    @property
    def stack(self) -> str:
        return self.network_scenario.ran.cu.name.split("-", 1)[0]

    @property
    def split(self) -> str:
        return self.network_scenario.ran.functional_split

    @property
    def ues(self) -> tuple[UeSpec, ...]:
        return self.traffic_scenario.ue_specification

    @property
    def duration_s(self) -> float:
        return max(ue.duration for ue in self.ues)


def _json_path(loc: tuple) -> str:
    path = "$"
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}"
    return path


def _model_of(annotation: Any) -> tuple[type[BaseModel] | None, bool]:
    """Return (model class, is_sequence) for a field annotation."""
    if isinstance(annotation, type) and issubclass(annotation, BaseModel):
        return annotation, False
    origin = typing.get_origin(annotation)
    if origin in (tuple, list):
        args = [a for a in typing.get_args(annotation) if a is not Ellipsis]
        if args and isinstance(args[0], type) and issubclass(args[0], BaseModel):
            return args[0], True
    return None, False


def _unknown_fields(data: Any, model: type[BaseModel], path: str) -> list[str]:
    if not isinstance(data, dict):
        return []
    found = []
    for key, value in data.items():
        field = model.model_fields.get(key)
        if field is None:
            found.append(f"{path}.{key}")
            continue
        sub, many = _model_of(field.annotation)
        if sub is None:
            continue
        if many and isinstance(value, list):
            for i, item in enumerate(value):
                found.extend(_unknown_fields(item, sub, f"{path}.{key}[{i}]"))
        elif not many:
            found.extend(_unknown_fields(value, sub, f"{path}.{key}"))
    return found


def check_constraints(v: TestVector) -> None:
    """Cross-field rules; raises ConstraintError on the first violation."""
    ran = v.network_scenario.ran
    prefixes = []
    for unit in ("cu", "du"):
        name = getattr(ran, unit).name
        prefix = next((p for p in STACK_PREFIXES if name.startswith(p)), None)
        if prefix is None:
            raise ConstraintError(
                f"$.network_scenario.ran.{unit}.name",
                f"unknown RAN stack {name!r} (expected prefix {' or '.join(STACK_PREFIXES)})",
            )
        prefixes.append(prefix)
    if prefixes[0] != prefixes[1]:
        raise ConstraintError(
            "$.network_scenario.ran.du.name",
            f"CU and DU come from different stacks ({ran.cu.name!r} vs {ran.du.name!r})",
        )
    wanted = SPLIT_RADIO[ran.functional_split]
    if ran.ru.name != wanted:
        raise ConstraintError(
            "$.network_scenario.ran.ru.name",
            f"split {ran.functional_split} requires ru {wanted!r}, got {ran.ru.name!r}",
        )
    ues = v.traffic_scenario.ue_specification
    if not ues:
        raise ConstraintError("$.traffic_scenario.ue_specification", "at least one UE is required")
    for i, ue in enumerate(ues):
        if ue.protocol == "udp" and ue.bandwidth_mbps <= 0:
            raise ConstraintError(
                f"$.traffic_scenario.ue_specification[{i}].bandwidth_mbps",
                "UDP tests need a positive target bitrate",
            )


def from_obj(data: Any) -> TestVector:
    if not isinstance(data, dict):
        raise SchemaError("$", f"expected an object, got {type(data).__name__}")
    try:
        # JSON mode: strict types, arrays accepted for tuple fields
        v = TestVector.model_validate_json(json.dumps(data))
    except ValidationError as exc:
        err = exc.errors()[0]
        raise SchemaError(_json_path(err["loc"]), err["msg"]) from None
    for path in _unknown_fields(data, TestVector, "$"):
        warnings.warn(f"ignoring unknown field {path}", UnknownFieldWarning, stacklevel=3)
    check_constraints(v)
    return v


def parse_test_vector(text: str | bytes) -> TestVector:
    try:
        data = json.loads(text)
    except (ValueError, TypeError) as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return from_obj(data)


def load_test_vector(path) -> TestVector:
    with open(path, "rb") as f:
        return parse_test_vector(f.read())


def to_obj(v: TestVector) -> dict:
    data = v.model_dump(mode="json")
    data["network_scenario"]["xapps"] = list(data["network_scenario"]["xapps"])
    return data


def serialize_test_vector(v: TestVector) -> str:
    return json.dumps(to_obj(v), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def with_param(v: TestVector, param: str, value: float) -> TestVector:
    """Copy of ``v`` with a numeric field replaced.

    ``param`` is a dotted path such as ``traffic.bandwidth_mbps`` (applied to
    every UE), ``traffic.ue_specification.0.duration`` or any full path into
    the document. ``traffic``/``network`` abbreviate the two scenario keys.
    """
    parts = param.split(".")
    alias = {"traffic": "traffic_scenario", "network": "network_scenario"}
    parts[0] = alias.get(parts[0], parts[0])
    data = to_obj(v)

    def assign(node: Any, rest: list[str], here: str) -> int:
        if not rest:
            raise SchemaError(here, "path does not address a field")
        key, tail = rest[0], rest[1:]
        if isinstance(node, list):
            if key.isdigit():
                if int(key) >= len(node):
                    raise SchemaError(f"{here}[{key}]", "index out of range")
                return assign(node[int(key)], tail, f"{here}[{key}]")
            # broadcast over list elements
            return sum(assign(item, rest, f"{here}[{i}]") for i, item in enumerate(node))
        if not isinstance(node, dict) or key not in node:
            raise SchemaError(f"{here}.{key}", "no such field")
        if tail or isinstance(node[key], list):
            return assign(node[key], tail, f"{here}.{key}")
        current = node[key]
        if isinstance(current, bool) or not isinstance(current, (int, float)):
            raise SchemaError(f"{here}.{key}", "field is not numeric")
        node[key] = type(current)(value) if isinstance(current, int) and float(value).is_integer() else float(value)
        return 1

    if parts == ["traffic_scenario", "bandwidth_mbps"] or (
        parts[0] == "traffic_scenario" and len(parts) == 2 and parts[1] in UeSpec.model_fields
    ):
        parts = ["traffic_scenario", "ue_specification", parts[1]]
    assign(data, parts, "$")
    return from_obj(data)
