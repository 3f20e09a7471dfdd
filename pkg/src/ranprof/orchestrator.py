"""Drive one test vector through deploy, traffic, collection and aggregation.

Every stage transition is appended to ``runs/<test_id>.jsonl`` before the
next stage starts, so an interrupted run can be inspected (and cleaned up)
from its journal alone.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import random
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import httpx

from .schemas import (
    CollectRequest, PerfRecord, PodTarget, RadioTarget, SweepRecord, SweepRun, UeResult, WindowModel,
)
from .testspec import TestVector, serialize_test_vector, to_obj, with_param

log = logging.getLogger(__name__)

S = 1_000_000_000

class RunStage(str, enum.Enum):
    PARSED = "PARSED"
    DEPLOY_CORE = "DEPLOY_CORE"
    DEPLOY_RAN = "DEPLOY_RAN"
    ATTACH_UES = "ATTACH_UES"
    EXECUTE = "EXECUTE"
    COLLECT = "COLLECT"
    AGGREGATE = "AGGREGATE"
    DONE = "DONE"
    FAILED = "FAILED"

SUCCESS_ORDER = [
    RunStage.PARSED, RunStage.DEPLOY_CORE, RunStage.DEPLOY_RAN, RunStage.ATTACH_UES,
    RunStage.EXECUTE, RunStage.COLLECT, RunStage.AGGREGATE, RunStage.DONE,
]

CORE_FUNCTIONS = ("amf", "smf", "upf")

class RunError(Exception):
    """Base for run failures; ``run`` is the FAILED TestRun."""

    def __init__(self, message: str, run: "TestRun | None" = None):
        super().__init__(message)
        self.run = run

class DeployError(RunError):
    pass

class TrafficError(RunError):
    pass

class CollectError(RunError):
    pass

class NodeBusy(DeployError):
    pass

class StageError(RuntimeError):
    pass

@dataclass
class Artifacts:
    ru_trace_file: str | None = None
    ue_results: list[str] = field(default_factory=list)  # perf record refs

@dataclass
class Component:
    name: str
    role: str
    kind: str
    profile: str
    component: str
    klass: str
    node: str | None = None
    variant: str | None = None
    serves: tuple[str, ...] = ()
    antenna_layout: str = "2x2"
    address: str | None = None

@dataclass
class TestRun:
    __test__ = False

    test_id: str
    vector: TestVector
    stage: RunStage = RunStage.PARSED
    history: list[RunStage] = field(default_factory=list)
    start_ns: int | None = None
    end_ns: int | None = None
    placements: dict[str, str] = field(default_factory=dict)
    components: list[Component] = field(default_factory=list)
    artifacts: Artifacts = field(default_factory=Artifacts)
    ue_results: list[UeResult] = field(default_factory=list)
    acks: dict[str, dict] = field(default_factory=dict)
    summary: dict | None = None
    failure: dict | None = None

    @property
    def short(self) -> str:
        return self.test_id[:8]

    def to_dict(self) -> dict:
        return {
            "test_id": self.test_id,
            "stage": self.stage.value,
            "history": [s.value for s in self.history],
            "start_ns": self.start_ns,
            "end_ns": self.end_ns,
            "placements": dict(sorted(self.placements.items())),
            "artifacts": {"ru_trace_file": self.artifacts.ru_trace_file,
                          "ue_results": list(self.artifacts.ue_results)},
            "failure": self.failure,
        }

def check_history(history) -> bool:
    """True if history is a prefix of the success order, optionally followed by FAILED."""
    stages = [RunStage(s) for s in history]
    if stages and stages[-1] is RunStage.FAILED:
        stages = stages[:-1]
    return stages == SUCCESS_ORDER[:len(stages)]

def read_journal(path: str | os.PathLike) -> list[dict]:
    """Entries of a run journal; a torn final line (crash mid-write) is skipped."""
    entries = []
    with open(path) as f:
        for line in f:
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError:
                break
    return entries

class LeaseRegistry:
    """Exclusive node leases so concurrent runs never share a host."""

    def __init__(self):
        self._owners: dict[str, str] = {}
        self._cond = threading.Condition()

    def claim(self, owner: str, roles, nodes: list[dict], timeout_s: float = 0.0) -> dict[str, str]:
        """Lease one host per role (a host may serve several roles); returns role -> node.

        Waits up to ``timeout_s`` for other runs to release their hosts.
        """
        roles = list(dict.fromkeys(roles))
        for role in roles:
            if not any(role in n["roles"] for n in nodes):
                raise DeployError(f"no node with role {role!r}")
        deadline = time.monotonic() + timeout_s
        with self._cond:
            while True:
                picked = {}
                for role in roles:
                    mine = [n["name"] for n in nodes if role in n["roles"]
                            and self._owners.get(n["name"], owner) == owner]
                    if not mine:
                        break
                    # prefer a host this run already holds or picked
                    held = [m for m in mine if m in picked.values()]
                    picked[role] = (held or mine)[0]
                if len(picked) == len(roles):
                    for node in picked.values():
                        self._owners[node] = owner
                    return picked
                left = deadline - time.monotonic()
                if left <= 0:
                    raise NodeBusy(f"every node with role {role!r} is leased")
                self._cond.wait(left)

    def release(self, owner: str) -> None:
        with self._cond:
            for n in [n for n, o in self._owners.items() if o == owner]:
                del self._owners[n]
            self._cond.notify_all()

    def holder(self, node: str) -> str | None:
        with self._cond:
            return self._owners.get(node)

@dataclass
class Env:
    """Handles on the testbed simulator and the collector service."""

    sim: httpx.Client
    collectors: httpx.Client
    workdir: str = "."

class Orchestrator:
    def __init__(self, env: Env, seed: int = 0, readiness_timeout_s: float = 15.0, grace_s: float = 10.0,
                 retries: int = 3, backoff_s: float = 0.25, sleep=time.sleep,
                 leases: LeaseRegistry | None = None, lease_wait_s: float = 0.0):
        self.env = env
        self.rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self.readiness_timeout_s = readiness_timeout_s
        self.grace_s = grace_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.sleep = sleep
        self.leases = leases or LeaseRegistry()
        self.lease_wait_s = lease_wait_s
        self.runs_dir = os.path.join(env.workdir, "runs")
        self.trace_dir = os.path.join(env.workdir, "traces")
        self._nodes: list[dict] | None = None

    # -- helpers -------------------------------------------------------------

    def new_test_id(self) -> str:
        with self._rng_lock:
            return str(uuid.UUID(int=self.rng.getrandbits(128), version=4))

    def journal_path(self, test_id: str) -> str:
        return os.path.join(self.runs_dir, f"{test_id}.jsonl")

    def _journal(self, run: TestRun, **extra) -> None:
        os.makedirs(self.runs_dir, exist_ok=True)
        now = None
        try:
            now = self._sim("GET", "/sim/clock")["now_ns"]
        except RunError:
            pass
        entry = {"test_id": run.test_id, "seq": len(run.history), "stage": run.stage.value, "virtual_ns": now}
        entry.update(extra)
        # a rerun under the same id starts a fresh journal
        with open(self.journal_path(run.test_id), "w" if len(run.history) == 1 else "a") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
            f.flush()

    def _advance(self, run: TestRun, stage: RunStage, **extra) -> None:
        if run.stage is RunStage.FAILED:
            raise StageError("run already FAILED")
        expected = SUCCESS_ORDER[SUCCESS_ORDER.index(run.stage) + 1] if run.history else RunStage.PARSED
        if stage is not expected:
            raise StageError(f"illegal transition {run.stage.value} -> {stage.value}")
        run.stage = stage
        run.history.append(stage)
        self._journal(run, **extra)
        log.info("%s %s", run.short, stage.value)

    def _fail(self, run: TestRun, exc: Exception) -> None:
        if run.stage is RunStage.FAILED:
            return
        run.failure = {"stage": run.stage.value, "error": type(exc).__name__, "message": str(exc)}
        run.stage = RunStage.FAILED
        run.history.append(RunStage.FAILED)
        self._journal(run, failure=run.failure)
        log.warning("%s FAILED at %s: %s", run.short, run.failure["stage"], exc)

    def _sim(self, method: str, url: str, json_body=None, error=DeployError) -> dict:
        try:
            resp = self.env.sim.request(method, url, json=json_body)
        except httpx.HTTPError as exc:
            raise error(f"simulator unreachable: {exc}") from exc
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail")
            except ValueError:
                detail = resp.text
            raise error(f"{method} {url}: HTTP {resp.status_code}: {detail}")
        return resp.json()

    def nodes(self) -> list[dict]:
        if self._nodes is None:
            self._nodes = self._sim("GET", "/sim/inventory")["nodes"]
        return self._nodes

    # -- planning ------------------------------------------------------------

    def roles(self, vector: TestVector) -> list[str]:
        roles = ["core", f"gnb-split{vector.split}"]
        if vector.network_scenario.xapps:
            roles.append("ric")
        return roles

    def plan(self, run: TestRun, hosts: dict[str, str]) -> list[Component]:
        """Components to deploy, given the role -> node leases of this run."""
        v = run.vector
        ns = v.network_scenario
        ran = ns.ran
        p = run.short
        variant = ns.xapps[0] if ns.xapps else None
        gnb = f"{p}-gnb"
        comps = [
            Component(f"{p}-{nf}", "core", "core", nf, nf, "core", node=hosts["core"], serves=(gnb,))
            for nf in CORE_FUNCTIONS
        ]
        comps.append(Component(gnb, "gnb", "gnb", f"{v.stack}/{v.split}", "gnb", "ran",
                               node=hosts[f"gnb-split{v.split}"], variant=variant))
        comps.append(Component(f"{p}-ru", "ru", "ru", ran.ru.name, "ru", "radio", variant=variant,
                               serves=(gnb,), antenna_layout=ran.ru.antenna_layout, address=ran.ru.address))
        comps.extend(Component(f"{p}-{x}", "xapp", "xapp", x, "xapp", "xapp", node=hosts["ric"], serves=(gnb,))
                     for x in ns.xapps)
        return comps

    def _deploy(self, run: TestRun, comps: list[Component]) -> None:
        for c in comps:
            run.components.append(c)
            self._sim("POST", "/sim/deploy", {
                "name": c.name, "role": c.role, "kind": c.kind, "profile": c.profile, "node": c.node,
                "variant": c.variant, "serves": list(c.serves), "antenna_layout": c.antenna_layout,
                "address": c.address,
            })
            if c.node is not None:
                run.placements[c.name] = c.node
        res = self._sim("POST", "/sim/await_ready",
                        {"names": [c.name for c in comps], "timeout_s": self.readiness_timeout_s})
        if not res["ready"]:
            raise DeployError(f"not ready within {self.readiness_timeout_s:g} s: {', '.join(res['pending'])}")

    def teardown(self, run: TestRun) -> None:
        for c in reversed(run.components):
            try:
                self._sim("POST", "/sim/teardown", {"name": c.name})
            except RunError as exc:
                log.warning("%s teardown of %s failed: %s", run.short, c.name, exc)
        self.leases.release(run.test_id)

    # -- stages --------------------------------------------------------------

    def _gnb(self, run: TestRun) -> Component:
        return next(c for c in run.components if c.kind == "gnb")

    def ue_ids(self, run: TestRun) -> list[str]:
        return [f"{run.short}-ue{i}" for i in range(len(run.vector.ues))]

    def attach_ues(self, run: TestRun) -> None:
        gnb = self._gnb(run).name
        for ue_id in self.ue_ids(run):
            self._sim("POST", "/sim/ue/attach", {"ue_id": ue_id, "gnb": gnb})

    def dispatch_traffic(self, run: TestRun) -> list[UeResult]:
        """Start every UE's test at once and wait for all results (EXECUTE -> COLLECT)."""
        if run.stage is not RunStage.ATTACH_UES:
            raise StageError(f"dispatch_traffic needs ATTACH_UES, run is {run.stage.value}")
        gnb = self._gnb(run)
        v = run.vector
        reqs = [
            {"ue_id": ue_id, "ue_index": i, "gnb": gnb.name, "radio": v.network_scenario.ran.ru.name,
             "profile": f"{v.stack}/{v.split}", "protocol": ue.protocol, "direction": ue.direction,
             "bandwidth_mbps": ue.bandwidth_mbps, "duration_s": ue.duration}
            for i, (ue_id, ue) in enumerate(zip(self.ue_ids(run), v.ues))
        ]
        self._advance(run, RunStage.EXECUTE)
        batch = self._sim("POST", "/sim/ue/traffic", {"ues": reqs}, error=TrafficError)
        # the window opens when the testbed starts the traffic
        run.start_ns = batch["start_ns"]
        results, missing = [], []
        for req, res in zip(reqs, batch["results"]):
            deadline = run.start_ns + int(round((req["duration_s"] + self.grace_s) * S))
            if res is None or res["end_ns"] > deadline:
                missing.append(req["ue_index"])
                continue
            results.append(UeResult.model_validate(res))
        run.end_ns = batch["end_ns"]
        run.ue_results = results
        self._write_ru_trace(run)
        self._advance(run, RunStage.COLLECT, start_ns=run.start_ns, end_ns=run.end_ns)
        if missing:
            raise TrafficError(f"no result from UE(s) {', '.join(map(str, missing))}")
        return results

    def _write_ru_trace(self, run: TestRun) -> None:
        ru = next(c for c in run.components if c.kind == "ru")
        path = os.path.abspath(os.path.join(self.trace_dir, f"{run.test_id}-ru.csv"))
        try:
            self._sim("POST", "/sim/ru/trace",
                      {"ru": ru.name, "start_ns": run.start_ns, "end_ns": run.end_ns, "file": path})
            run.artifacts.ru_trace_file = path
        except RunError as exc:
            # the collector will flag the RU target
            log.warning("%s RU trace not written: %s", run.short, exc)
            run.artifacts.ru_trace_file = path

    def collect_request(self, run: TestRun) -> CollectRequest:
        pods = [PodTarget(name=c.name, component=c.component, klass=c.klass)
                for c in run.components if c.kind != "ru"]
        ru = next(c for c in run.components if c.kind == "ru")
        return CollectRequest(
            test_id=run.test_id,
            window=WindowModel(start_ns=run.start_ns, end_ns=run.end_ns),
            placements=dict(sorted(run.placements.items())),
            nodes=sorted(set(run.placements.values())),
            pods=pods,
            ru=RadioTarget(name=ru.name, trace_file=run.artifacts.ru_trace_file or ""),
            network_scenario_id=run.vector.network_scenario.id,
            traffic_scenario_id=run.vector.traffic_scenario.id,
        )

    def _post(self, url: str, body: dict) -> httpx.Response:
        delay = self.backoff_s
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.env.collectors.post(url, json=body)
                if 200 <= resp.status_code < 300:
                    return resp
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
            except httpx.HTTPError as exc:
                last = str(exc) or type(exc).__name__
            if attempt < self.retries:
                self.sleep(delay)
                delay *= 2
        raise CollectError(f"{url} failed after {self.retries} retries: {last}")

    def submit_to_collectors(self, run: TestRun, power: bool = True, perf: bool = True) -> dict:
        if run.stage is not RunStage.COLLECT:
            raise StageError(f"submit_to_collectors needs COLLECT, run is {run.stage.value}")
        if power:
            req = self.collect_request(run)
            resp = self._post("/power/collect", req.model_dump(mode="json", by_alias=True))
            run.acks["power"] = {"test_id": resp.json()["test_id"], "status": resp.status_code,
                                 "partial": resp.json()["partial"]}
        if perf:
            record = PerfRecord.from_results(run.test_id, run.ue_results,
                                             traffic_scenario_id=run.vector.traffic_scenario.id)
            resp = self._post("/perf/results", record.model_dump(mode="json"))
            run.acks["perf"] = resp.json()
            run.artifacts.ue_results.append(f"/perf/results/{run.test_id}")
        for name, ack in run.acks.items():
            if ack["test_id"] != run.test_id:
                raise CollectError(f"{name} collector acknowledged {ack['test_id']}, expected {run.test_id}")
        return run.acks

    def aggregate(self, run: TestRun) -> dict:
        try:
            resp = self.env.collectors.get(f"/reports/{run.test_id}")
        except httpx.HTTPError as exc:
            raise CollectError(f"report fetch failed: {exc}") from exc
        if resp.status_code != 200:
            raise CollectError(f"report fetch: HTTP {resp.status_code}")
        body = resp.json()
        if not body["complete"]:
            raise CollectError("power and perf records do not join")
        run.summary = body["efficiency"]
        return body

    # -- driver --------------------------------------------------------------

    def run_test(self, vector: TestVector, test_id: str | None = None) -> TestRun:
        """Run one vector to DONE; raises a RunError (carrying the FAILED run) otherwise."""
        run = TestRun(test_id or self.new_test_id(), vector)
        self._advance(run, RunStage.PARSED, vector=json.loads(serialize_test_vector(vector)))
        try:
            try:
                self._sim("GET", "/health")
                hosts = self.leases.claim(run.test_id, self.roles(vector), self.nodes(), self.lease_wait_s)
                comps = self.plan(run, hosts)
                self._advance(run, RunStage.DEPLOY_CORE)
                self._deploy(run, [c for c in comps if c.kind == "core"])
                self._advance(run, RunStage.DEPLOY_RAN)
                self._deploy(run, [c for c in comps if c.kind != "core"])
                self._advance(run, RunStage.ATTACH_UES, placements=dict(sorted(run.placements.items())))
                self.attach_ues(run)
                traffic_error = None
                try:
                    self.dispatch_traffic(run)
                except TrafficError as exc:
                    if run.stage is not RunStage.COLLECT:
                        raise
                    traffic_error = exc
                # on a traffic failure power is still collected before failing
                self.submit_to_collectors(run, perf=traffic_error is None)
                if traffic_error is not None:
                    raise traffic_error
                self._advance(run, RunStage.AGGREGATE, acks=run.acks)
                self.aggregate(run)
                self._advance(run, RunStage.DONE)
            except RunError as exc:
                exc.run = run
                self._fail(run, exc)
                raise
            except Exception as exc:
                self._fail(run, exc)
                raise RunError(f"{type(exc).__name__}: {exc}", run) from exc
        finally:
            self.teardown(run)
        return run
    def run_batch(self, vectors, parallel: int = 1, lease_wait_s: float = 600.0) -> list:
        """Run several vectors; returns a TestRun or RunError per vector, in input order.

        Test ids are drawn up front so they do not depend on scheduling. With
        ``parallel`` > 1 runs wait for free hosts through the lease registry.
        """
        ids = [self.new_test_id() for _ in vectors]

        def one(item):
            vector, test_id = item
            try:
                return self.run_test(vector, test_id)
            except RunError as exc:
                return exc

        if parallel <= 1:
            return [one(item) for item in zip(vectors, ids)]
        saved, self.lease_wait_s = self.lease_wait_s, max(self.lease_wait_s, lease_wait_s)
        try:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                return list(pool.map(one, zip(vectors, ids)))
        finally:
            self.lease_wait_s = saved

    def sweep(self, vector: TestVector, param: str, values, reps: int = 1, parallel: int = 1,
              label: str | None = None, progress=None) -> tuple[SweepRecord, list]:
        """One run per (value, repetition), recorded under a sweep id at the collectors."""
        vectors, points = [], []
        for value in values:
            varied = with_param(vector, param, value)
            for _ in range(reps):
                vectors.append(varied)
                points.append(float(value))
        with self._rng_lock:
            sweep_id = "sweep-" + uuid.UUID(int=self.rng.getrandbits(128), version=4).hex[:12]
        outcomes = self.run_batch(vectors, parallel)
        runs = []
        for value, out in zip(points, outcomes):
            run = out if isinstance(out, TestRun) else out.run
            runs.append(SweepRun(value=value, test_id=run.test_id, ok=isinstance(out, TestRun)))
            if progress is not None:
                progress(value, out)
        record = SweepRecord(sweep_id=sweep_id, label=label or f"{vector.stack}/{vector.split}", param=param,
                             values=[float(v) for v in values], runs=runs, vector=to_obj(vector))
        self._post("/sweeps", record.model_dump(mode="json"))
        return record, outcomes


def run_test(vector: TestVector, env: Env, **kw) -> TestRun:
    return Orchestrator(env, **kw).run_test(vector)
