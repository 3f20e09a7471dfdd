"""File-backed results database keyed by test id."""
from __future__ import annotations

import json
import os
import re
import tempfile
import threading
from collections import defaultdict

from pydantic import BaseModel

from ..schemas import PerfRecord, PowerReport

_SAFE = re.compile(r"^[A-Za-z0-9._-]+$")


class UnknownId(KeyError):
    pass


def dumps(obj) -> str:
    """Canonical JSON text for a model or plain object."""
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="json", by_alias=True)
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


class ResultsDB:
    """``<root>/power/<id>.json``, ``<root>/perf/<id>.json`` and ``<root>/sweeps/<id>.json``.

    Writes are atomic renames, serialized per record; identical content
    rewrites are no-ops so re-collection is idempotent.
    """

    KINDS = ("power", "perf", "sweeps")

    def __init__(self, root: str | os.PathLike):
        self.root = os.fspath(root)
        for kind in self.KINDS:
            os.makedirs(os.path.join(self.root, kind), exist_ok=True)
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def _path(self, kind: str, key: str) -> str:
        if not _SAFE.match(key):
            raise UnknownId(key)
        return os.path.join(self.root, kind, f"{key}.json")

    def _lock(self, kind: str, key: str) -> threading.Lock:
        with self._guard:
            return self._locks[f"{kind}/{key}"]

    def write(self, kind: str, key: str, obj) -> bool:
        """Store ``obj``; returns False when identical content was already there."""
        text = dumps(obj)
        path = self._path(kind, key)
        with self._lock(kind, key):
            try:
                with open(path) as f:
                    if f.read() == text:
                        return False
            except FileNotFoundError:
                pass
            fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
            with os.fdopen(fd, "w") as f:
                f.write(text)
            os.replace(tmp, path)
        return True

    def read(self, kind: str, key: str) -> dict:
        try:
            with open(self._path(kind, key)) as f:
                return json.load(f)
        except FileNotFoundError:
            raise UnknownId(key) from None

    def exists(self, kind: str, key: str) -> bool:
        try:
            return os.path.exists(self._path(kind, key))
        except UnknownId:
            return False

    def ids(self, kind: str) -> list[str]:
        names = os.listdir(os.path.join(self.root, kind))
        return sorted(n[:-5] for n in names if n.endswith(".json"))

    def put_power(self, report: PowerReport) -> bool:
        return self.write("power", report.test_id, report)

    def put_perf(self, record: PerfRecord) -> bool:
        return self.write("perf", record.test_id, record)

    def power(self, test_id: str) -> PowerReport:
        return PowerReport.model_validate(self.read("power", test_id))

    def perf(self, test_id: str) -> PerfRecord:
        return PerfRecord.model_validate(self.read("perf", test_id))
