"""Performance collector: ingest per-UE traffic results."""
from __future__ import annotations

import math

from ..schemas import PerfRecord
from .db import ResultsDB
from .power import BadRequest


def check_aggregates(record: PerfRecord) -> None:
    bits = sum(r.bits_transferred for r in record.ue_results)
    rate = sum(r.mean_bitrate_bps for r in record.ue_results)
    if not math.isclose(record.aggregate_bits, bits, rel_tol=1e-9, abs_tol=1e-6):
        raise BadRequest(f"aggregate_bits {record.aggregate_bits} != per-UE sum {bits}")
    if not math.isclose(record.aggregate_mean_bitrate_bps, rate, rel_tol=1e-9, abs_tol=1e-6):
        raise BadRequest(f"aggregate_mean_bitrate_bps {record.aggregate_mean_bitrate_bps} != per-UE sum {rate}")


class PerfCollector:
    def __init__(self, db: ResultsDB):
        self.db = db

    def ingest(self, record: PerfRecord) -> bool:
        check_aggregates(record)
        return self.db.put_perf(record)
