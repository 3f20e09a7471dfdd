"""Process entry point for the simulator and collector services.

``python -m ranprof.server --root DIR`` serves both on two ports from one
process; ``LocalStack`` wires the same apps together in-process.
"""
from __future__ import annotations

import argparse
import asyncio
import contextlib
import os
import warnings
from dataclasses import dataclass

import httpx
import uvicorn

from .collectors.app import create_app as collectors_app
from .collectors.power import http_clock
from .sim.app import create_app as sim_app
from .sim.config import SimConfig, default_config
from .sim.engine import Testbed

with warnings.catch_warnings():
    # starlette nags about its httpx-based client on import
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

SIM_PORT = 8750
COLLECTOR_PORT = 8751


def sim_config(path: str | None = None, **overrides) -> SimConfig:
    cfg = SimConfig.load(path) if path else default_config()
    return cfg.model_copy(update={k: v for k, v in overrides.items() if v is not None})


def open_client(app, stack: contextlib.ExitStack) -> TestClient:
    """In-process client bound to one long-lived event loop.

    A client used outside ``with`` starts a fresh loop per request, and anyio
    keeps every one of those loops alive.
    """
    return stack.enter_context(TestClient(app))


@dataclass
class LocalStack:
    """Testbed and collectors reachable through in-process clients."""

    bed: Testbed
    sim: httpx.Client
    collectors: httpx.Client
    _exit: contextlib.ExitStack

    @classmethod
    def build(cls, root: str, config: SimConfig) -> "LocalStack":
        exit_stack = contextlib.ExitStack()
        bed = Testbed(config)
        sim = open_client(sim_app(bed), exit_stack)
        col = open_client(collectors_app(root, telemetry=sim, clock=bed.now_ns), exit_stack)
        return cls(bed, sim, col, exit_stack)

    def close(self) -> None:
        self._exit.close()


async def _serve(config: SimConfig, root: str, host: str, sim_port: int, collector_port: int) -> None:
    bed = Testbed(config)
    telemetry = httpx.Client(base_url=f"http://{host}:{sim_port}", timeout=60.0)
    col = collectors_app(root, telemetry=telemetry, clock=http_clock(telemetry))
    servers = [
        uvicorn.Server(uvicorn.Config(sim_app(bed), host=host, port=sim_port, log_level="warning")),
        uvicorn.Server(uvicorn.Config(col, host=host, port=collector_port, log_level="warning")),
    ]
    await asyncio.gather(*(s.serve() for s in servers))


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="Serve the testbed simulator and the collectors")
    parser.add_argument("--root", default="ranprof-data", help="results and telemetry store directory")
    parser.add_argument("--config", help="simulator config JSON")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--sim-port", type=int, default=SIM_PORT)
    parser.add_argument("--collector-port", type=int, default=COLLECTOR_PORT)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--warp", type=float)
    args = parser.parse_args(argv)
    os.makedirs(args.root, exist_ok=True)
    cfg = sim_config(args.config, seed=args.seed, warp=args.warp)
    asyncio.run(_serve(cfg, args.root, args.host, args.sim_port, args.collector_port))


if __name__ == "__main__":
    main()
