import contextlib

import pytest
from ranprof.server import TestClient

from ranprof.sim.app import create_app
from ranprof.sim.config import default_config
from ranprof.sim.engine import Testbed


@pytest.fixture
def bed():
    return Testbed(default_config(paced=False))


@pytest.fixture
def sim(bed):
    with TestClient(create_app(bed)) as client:
        yield client


def run_udp(bed, gnb="gnb-1", profile="srsran/8", mbps=70.0, duration=60.0, radio="usrp", n=1, node="microway-1"):
    """Deploy a gNB with n attached UEs and run one UDP DL batch; returns the batch."""
    if gnb not in bed.active:
        bed.deploy(gnb, "gnb", "gnb", profile, node=node)
    bed.await_ready([gnb], 15)
    reqs = []
    for i in range(n):
        bed.attach_ue(f"ue{i}", gnb)
        reqs.append(dict(ue_id=f"ue{i}", ue_index=i, gnb=gnb, radio=radio, profile=profile,
                         protocol="udp", direction="dl", bandwidth_mbps=mbps, duration_s=duration))
    return bed.run_traffic(reqs)


class Harness:
    """Simulator, collectors and orchestrator wired together in-process."""

    def __init__(self, workdir, seed=0, orch_seed=0, collectors=None, **cfg):
        from ranprof.collectors.app import create_app as collectors_app
        from ranprof.orchestrator import Env, Orchestrator

        from ranprof.server import open_client

        cfg.setdefault("paced", False)
        self._exit = contextlib.ExitStack()
        _open.append(self)
        self.bed = Testbed(default_config(seed=seed, **cfg))
        self.sim = open_client(create_app(self.bed), self._exit)
        self.col = collectors or open_client(
            collectors_app(workdir, telemetry=self.sim, clock=self.bed.now_ns), self._exit)
        self.sleeps = []
        self.orch = Orchestrator(Env(self.sim, self.col, str(workdir)), seed=orch_seed, sleep=self.sleeps.append)

    def close(self):
        self._exit.close()
        if self in _open:
            _open.remove(self)


# each harness holds two portal threads; anything left open is shut at exit
_open = []


@pytest.fixture(scope="session", autouse=True)
def _close_harnesses():
    yield
    while _open:
        _open[-1].close()


@pytest.fixture
def harness(tmp_path):
    h = Harness(tmp_path)
    yield h
    h.close()
