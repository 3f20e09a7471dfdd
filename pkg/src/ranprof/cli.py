"""Command line front end: run vectors, sweep a parameter, emit reports, manage services.

Exit codes:
    0  success
    1  service unreachable or other operational error
    2  bad arguments, unparsable vector or bad parameter path
    3  at least one run failed (ids of the attempted runs are still printed)
    4  unknown test or sweep id
    5  port conflict or services already running
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import secrets
import signal
import socket
import subprocess
import sys
import time
from urllib.parse import urlsplit

import httpx
from pydantic import BaseModel, Field, ValidationError, field_validator

from . import analytics
from .collectors.app import create_app as collectors_app
from .orchestrator import Env, Orchestrator, RunError, TestRun
from .server import COLLECTOR_PORT, SIM_PORT, LocalStack, TestClient
from .sim.config import default_config, pool_nodes
from .testspec import VectorError, load_test_vector, with_param

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_RUN, EXIT_UNKNOWN, EXIT_PORT = 0, 1, 2, 3, 4, 5
ENV_PREFIX = "RANPROF_"


class CliConfig(BaseModel):
    sim_url: str = f"http://127.0.0.1:{SIM_PORT}"
    collector_url: str = f"http://127.0.0.1:{COLLECTOR_PORT}"
    store: str = "ranprof-data"
    # None draws a fresh seed for test ids on every invocation
    seed: int | None = None
    warp: float = Field(default=60.0, ge=1)
    reps: int = Field(default=1, ge=1)
    local: bool = False
    paced: bool = True
    # simulator config overrides, used by --local and `sim start`
    sim: dict = Field(default_factory=dict)

    @field_validator("sim_url", "collector_url")
    @classmethod
    def _url(cls, value: str) -> str:
        parts = urlsplit(value)
        if parts.scheme not in ("http", "https") or not parts.hostname:
            raise ValueError(f"not an http URL: {value!r}")
        return value.rstrip("/")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def load_config(path: str | None = None, environ=None, overrides: dict | None = None) -> CliConfig:
    """Defaults, then the JSON file, then RANPROF_* variables, then flags."""
    environ = os.environ if environ is None else environ
    data: dict = {}
    path = path or environ.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            with open(path) as f:
                data.update(json.load(f))
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_USAGE, f"{path}: {exc}") from None
    for name in CliConfig.model_fields:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            data[name] = json.loads(raw) if name == "sim" else raw
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return CliConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        where = ".".join(str(p) for p in err["loc"]) or "config"
        raise CliError(EXIT_USAGE, f"config {where}: {err['msg']}") from None


def _err(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _vector(path: str):
    try:
        return load_test_vector(path)
    except VectorError as exc:
        raise CliError(EXIT_USAGE, f"{path}: {exc}") from None
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"{path}: {exc.strerror}") from None


@contextlib.contextmanager
def session(cfg: CliConfig, parallel: int = 1):
    """Orchestrator bound either to the running services or to an in-process stack."""
    seed = cfg.seed if cfg.seed is not None else secrets.randbits(63)
    os.makedirs(cfg.store, exist_ok=True)
    if cfg.local:
        sim_cfg = default_config(**{"seed": cfg.seed or 0, "warp": cfg.warp, "paced": cfg.paced, **cfg.sim})
        if parallel > 1:
            sim_cfg = sim_cfg.model_copy(update={"nodes": list(sim_cfg.nodes) + pool_nodes(parallel)})
        stack = LocalStack.build(cfg.store, sim_cfg)
        sim, col, close = stack.sim, stack.collectors, stack.close
    else:
        sim = httpx.Client(base_url=cfg.sim_url, timeout=httpx.Timeout(30.0, read=None))
        col = httpx.Client(base_url=cfg.collector_url, timeout=httpx.Timeout(30.0, read=None))

        def close():
            sim.close()
            col.close()
    try:
        yield Orchestrator(Env(sim, col, cfg.store), seed=seed)
    finally:
        close()


def _describe(out) -> str:
    if isinstance(out, TestRun):
        return f"{out.test_id} {out.stage.value}"
    run = out.run
    where = f" at {run.failure['stage']}" if run and run.failure else ""
    return f"{run.test_id if run else '-'} FAILED{where}: {out}"


def cmd_run(args, cfg: CliConfig) -> int:
    vector = _vector(args.vector)
    reps = args.reps or cfg.reps
    failed = 0
    with session(cfg) as orch:
        for i in range(reps):
            try:
                run = orch.run_test(vector)
            except RunError as exc:
                failed += 1
                _err(f"[{i + 1}/{reps}] {_describe(exc)}")
                if exc.run is not None:
                    print(exc.run.test_id, flush=True)
                continue
            _err(f"[{i + 1}/{reps}] {_describe(run)}")
            print(run.test_id, flush=True)
    return EXIT_RUN if failed else EXIT_OK


def parse_values(text: str) -> list[float]:
    """``10,20,30`` or an inclusive ``start:stop:step`` range."""
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(round((stop - start) / step))
            return [start + i * step for i in range(n + 1) if start + i * step <= stop + 1e-9 * abs(step)]
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def cmd_sweep(args, cfg: CliConfig) -> int:
    vector = _vector(args.vector)
    for value in args.values:
        try:
            with_param(vector, args.param, value)
        except VectorError as exc:
            raise CliError(EXIT_USAGE, f"--param {args.param}={value:g}: {exc}") from None
    reps = args.reps or cfg.reps
    total = len(args.values) * reps
    done = []

    def progress(value, out):
        done.append(out)
        _err(f"[{len(done)}/{total}] {args.param}={value:g} {_describe(out)}")

    with session(cfg, parallel=args.parallel) as orch:
        try:
            record, outcomes = orch.sweep(vector, args.param, args.values, reps=reps, parallel=args.parallel,
                                          label=args.label, progress=progress)
        except RunError as exc:
            raise CliError(EXIT_RUN, f"sweep not recorded: {exc}") from None
    print(record.sweep_id, flush=True)
    return EXIT_OK if all(r.ok for r in record.runs) else EXIT_RUN


def _fetch(client: httpx.Client, url: str, what: str, params=None) -> dict:
    resp = client.get(url, params=params)
    if resp.status_code == 404:
        raise CliError(EXIT_UNKNOWN, f"unknown {what}")
    if resp.status_code >= 400:
        raise CliError(EXIT_ERROR, f"{url}: HTTP {resp.status_code} {resp.text}")
    return resp.json()


def cmd_report(args, cfg: CliConfig) -> int:
    if cfg.local:
        # used in a with block below, so one event loop serves every request
        client = TestClient(collectors_app(cfg.store))
    else:
        client = httpx.Client(base_url=cfg.collector_url, timeout=60.0)
    params = {"classes": args.classes} if args.classes else {}
    with client:
        if args.id.startswith("sweep-"):
            body = _fetch(client, f"/sweeps/{args.id}/comparison", f"sweep id {args.id}",
                          dict(params, power_key=args.power))
            obj = analytics.Comparison.model_validate(body)
        else:
            body = _fetch(client, f"/reports/{args.id}", f"test id {args.id}", params)
            if body["efficiency"] is None:
                missing = "power" if body["power"] is None else "perf" if body["perf"] is None else None
                reason = f"no {missing} record" if missing else body["efficiency_error"]
                raise CliError(EXIT_RUN, f"{args.id}: no efficiency report ({reason})")
            obj = analytics.EfficiencyReport.model_validate(body["efficiency"])
    if args.out:
        analytics.emit_plot_data(obj, args.out, args.format)
        _err(f"wrote {args.out}")
    else:
        sys.stdout.write(analytics.render_plot_data(obj, args.format))
    return EXIT_OK


# -- service lifecycle ------------------------------------------------------

def _pidfile(cfg: CliConfig) -> str:
    return os.path.join(cfg.store, "server.pid")


def _alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _running_pid(cfg: CliConfig) -> int | None:
    try:
        with open(_pidfile(cfg)) as f:
            pid = int(f.read().strip())
    except (OSError, ValueError):
        return None
    return pid if _alive(pid) else None


def port_free(host: str, port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind((host, port))
        except OSError:
            return False
    return True


def _healthy(url: str) -> bool:
    try:
        return httpx.get(url + "/health", timeout=1.0).status_code == 200
    except httpx.HTTPError:
        return False


def sim_start(cfg: CliConfig, sim_config: str | None = None, timeout_s: float = 20.0) -> int:
    if _running_pid(cfg):
        raise CliError(EXIT_PORT, f"already running (pid {_running_pid(cfg)})")
    sim, col = urlsplit(cfg.sim_url), urlsplit(cfg.collector_url)
    if sim.hostname != col.hostname:
        raise CliError(EXIT_USAGE, "simulator and collectors must share a host")
    for parts in (sim, col):
        if not port_free(parts.hostname, parts.port):
            raise CliError(EXIT_PORT, f"port {parts.port} on {parts.hostname} is in use")
    os.makedirs(cfg.store, exist_ok=True)
    cmd = [sys.executable, "-m", "ranprof.server", "--root", cfg.store, "--host", sim.hostname,
           "--sim-port", str(sim.port), "--collector-port", str(col.port), "--warp", str(cfg.warp)]
    if cfg.seed is not None:
        cmd += ["--seed", str(cfg.seed)]
    if cfg.sim and not sim_config:
        sim_config = os.path.join(cfg.store, "sim-config.json")
        with open(sim_config, "w") as f:
            json.dump(cfg.sim, f, indent=2)
    if sim_config:
        cmd += ["--config", sim_config]
    log = open(os.path.join(cfg.store, "server.log"), "ab")
    proc = subprocess.Popen(cmd, stdout=log, stderr=log, stdin=subprocess.DEVNULL, start_new_session=True)
    log.close()
    deadline = time.monotonic() + timeout_s
    while not (_healthy(cfg.sim_url) and _healthy(cfg.collector_url)):
        if proc.poll() is not None:
            raise CliError(EXIT_ERROR, f"services exited with status {proc.returncode}, see server.log")
        if time.monotonic() > deadline:
            proc.terminate()
            raise CliError(EXIT_ERROR, "services did not come up in time")
        time.sleep(0.1)
    with open(_pidfile(cfg), "w") as f:
        f.write(f"{proc.pid}\n")
    _err(f"started pid {proc.pid}: simulator {cfg.sim_url}, collectors {cfg.collector_url}")
    return EXIT_OK


def sim_stop(cfg: CliConfig, timeout_s: float = 10.0) -> int:
    pid = _running_pid(cfg)
    if pid is None:
        _err("not running")
    else:
        os.kill(pid, signal.SIGTERM)
        deadline = time.monotonic() + timeout_s
        while _alive(pid) and time.monotonic() < deadline:
            with contextlib.suppress(ChildProcessError):
                os.waitpid(pid, os.WNOHANG)
            time.sleep(0.05)
        if _alive(pid):
            os.kill(pid, signal.SIGKILL)
        _err(f"stopped pid {pid}")
    with contextlib.suppress(FileNotFoundError):
        os.remove(_pidfile(cfg))
    return EXIT_OK


def sim_status(cfg: CliConfig) -> int:
    try:
        inventory = httpx.get(cfg.sim_url + "/sim/inventory", timeout=5.0).json()
        collectors = _healthy(cfg.collector_url)
    except httpx.HTTPError:
        raise CliError(EXIT_ERROR, f"simulator not reachable at {cfg.sim_url}") from None
    print(json.dumps({"collectors": "up" if collectors else "down", **inventory}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sim(args, cfg: CliConfig) -> int:
    if args.action == "start":
        return sim_start(cfg, args.sim_config)
    if args.action == "stop":
        return sim_stop(cfg)
    return sim_status(cfg)


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps unset flags from overriding the config file and environment
    opt = dict(default=argparse.SUPPRESS)
    common.add_argument("--config", help="CLI config JSON (also RANPROF_CONFIG)", **opt)
    common.add_argument("--sim-url", dest="sim_url", help="simulator base URL", **opt)
    common.add_argument("--collector-url", dest="collector_url", help="collector base URL", **opt)
    common.add_argument("--store", help="directory for results, journals and traces", **opt)
    common.add_argument("--seed", type=int, help="fix every random draw", **opt)
    common.add_argument("--warp", type=float, help="virtual seconds per wall second", **opt)
    common.add_argument("--local", action="store_const", const=True,
                        help="run the simulator and collectors in-process", **opt)
    common.add_argument("--no-pace", dest="paced", action="store_const", const=False,
                        help="with --local, do not sleep for virtual time", **opt)

    parser = argparse.ArgumentParser(prog="ranprof", parents=[common],
                                     description="Energy profiling runs against a (simulated) RAN testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a test vector")
    p.add_argument("vector", help="test vector JSON")
    p.add_argument("--reps", type=int, help="sequential repetitions")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="run a vector across values of one parameter")
    p.add_argument("vector")
    p.add_argument("--param", default="traffic.bandwidth_mbps", help="dotted path of a numeric field")
    p.add_argument("--values", type=parse_values, required=True, help="10,20,30 or 10:70:10")
    p.add_argument("--reps", type=int, help="repetitions per value")
    p.add_argument("--parallel", type=int, default=1, help="concurrent runs")
    p.add_argument("--label", help="configuration label (default <stack>/<split>)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="efficiency report for a test or sweep id")
    p.add_argument("id")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--classes", help="component classes, e.g. ran,radio,xapp")
    p.add_argument("--power", default="ran", help="class or component whose power is compared in sweeps")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sim", parents=[common], help="start, stop or inspect the local services")
    p.add_argument("action", choices=("start", "stop", "status"))
    p.add_argument("--sim-config", help="simulator config JSON")
    p.set_defaults(func=cmd_sim)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {name: getattr(args, name, None) for name in CliConfig.model_fields}
    try:
        cfg = load_config(getattr(args, "config", None), overrides=flags)
        if getattr(args, "reps", None) is not None and args.reps < 1:
            raise CliError(EXIT_USAGE, "--reps must be at least 1")
        if getattr(args, "parallel", 1) < 1:
            raise CliError(EXIT_USAGE, "--parallel must be at least 1")
        return args.func(args, cfg)
    except CliError as exc:
        _err(f"ranprof: {exc}")
        return exc.code
    except httpx.TransportError as exc:
        _err(f"ranprof: service unreachable: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
