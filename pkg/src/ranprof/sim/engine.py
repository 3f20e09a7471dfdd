"""Simulated O-RAN testbed state.

All state sits behind one lock, so concurrent HTTP requests see a total
order. Telemetry is computed on demand from component lifetimes, attached
UEs and traffic flows, and is a pure function of the seed.
"""
from __future__ import annotations

import ipaddress
import itertools
import math
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from . import noise
from .clock import VirtualClock
from .config import SimConfig
from .models import PowerModel

STARTING, READY, STOPPED, ABSENT = "STARTING", "READY", "STOPPED", "ABSENT"


class SimError(Exception):
    status = 400


class NodeUnknown(SimError):
    status = 404


class NameConflict(SimError):
    status = 409


class UnknownComponent(SimError):
    status = 404


class DetachError(SimError):
    status = 409


@dataclass
class Lifetime:
    name: str
    role: str
    kind: str
    node: str | None
    model: PowerModel
    layout: str
    serves: tuple[str, ...]
    address: str | None
    deployed_ns: int
    ready_ns: int | None
    stopped_ns: int | None = None

    @property
    def key(self) -> str:
        return f"{self.name}@{self.deployed_ns}"

    def state(self, now: int) -> str:
        if self.stopped_ns is not None:
            return STOPPED
        if self.ready_ns is not None and self.ready_ns <= now:
            return READY
        return STARTING

    def alive(self, t: np.ndarray) -> np.ndarray:
        mask = t >= self.deployed_ns
        if self.stopped_ns is not None:
            mask &= t < self.stopped_ns
        return mask


@dataclass
class Attachment:
    ue_id: str
    gnb: str
    attach_ns: int
    detach_ns: int | None = None


@dataclass
class Flow:
    gnb: str
    start_ns: int
    end_ns: int
    rate_mbps: float


@dataclass
class _PduCache:
    k0: int
    power: np.ndarray = field(default_factory=lambda: np.empty(0))
    energy_wh: np.ndarray = field(default_factory=lambda: np.empty(0))
    voltage: np.ndarray = field(default_factory=lambda: np.empty(0))


def align_range_query(scrape_ts: np.ndarray, scrape_vals: np.ndarray, start: int, end: int,
                      step: int, lookback: int) -> tuple[np.ndarray, np.ndarray]:
    """For each boundary start + j*step < end, the latest scrape in (b - lookback, b]."""
    bounds = np.arange(start, end, step, dtype=np.int64)
    if len(scrape_ts) == 0 or len(bounds) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    idx = np.searchsorted(scrape_ts, bounds, side="right") - 1
    ok = idx >= 0
    ok[ok] &= scrape_ts[idx[ok]] > bounds[ok] - lookback
    return bounds[ok], scrape_vals[idx[ok]]


class Testbed:
    __test__ = False

    def __init__(self, config: SimConfig | None = None):
        from .config import default_config

        self.config = config or default_config()
        cfg = self.config
        self.clock = VirtualClock(cfg.epoch_ns, cfg.warp, cfg.paced)
        self.seed = cfg.seed
        self.nodes = {n.name: n for n in cfg.nodes}
        self.outlets = {n.outlet: n for n in cfg.nodes}
        self._subnets = [ipaddress.IPv4Network(s) for s in cfg.ru_subnets]
        self._lock = threading.RLock()
        self.lifetimes: list[Lifetime] = []
        self.active: dict[str, Lifetime] = {}
        self.by_name: dict[str, list[Lifetime]] = {}
        self.by_node: dict[str, list[Lifetime]] = {}
        self.attachments: dict[str, Attachment] = {}
        self.attach_history: dict[str, list[Attachment]] = {}
        self.flows: dict[str, list[Flow]] = {}
        self.batches: dict[str, dict] = {}
        self._batch_ids = itertools.count(1)
        self.faults: dict = {"stall": set(), "ue_drop": set()}
        self._pdu: dict[str, _PduCache] = {}
        self._pdu_interval = int(round(cfg.pdu_interval_s * 1e9))
        self._scrape = int(round(cfg.scrape_interval_s * 1e9))
        self._watt = int(round(cfg.wattmeter_interval_ms * 1e6))
        self._watt_jitter = int(round(cfg.wattmeter_jitter_ms * 1e6))

    # -- lifecycle -----------------------------------------------------------

    def now_ns(self) -> int:
        return self.clock.now_ns()

    def resolve_model(self, kind: str, profile: str, variant: str | None = None) -> PowerModel:
        models = self.config.models
        for key in ([f"{kind}:{profile}+{variant}"] if variant else []) + [f"{kind}:{profile}"]:
            if key in models:
                return models[key]
        raise UnknownComponent(f"no power model for {kind}:{profile}")

    def _routable(self, address: str | None) -> bool:
        if address is None:
            return True
        try:
            ip = ipaddress.IPv4Address(address)
        except ValueError:
            return False
        return any(ip in net for net in self._subnets)

    def deploy(self, name: str, role: str, kind: str, profile: str, node: str | None = None,
               variant: str | None = None, serves=(), antenna_layout: str = "2x2",
               address: str | None = None, model: PowerModel | None = None) -> Lifetime:
        with self._lock:
            if name in self.active:
                raise NameConflict(f"{name!r} is already deployed")
            if kind != "ru" and node not in self.nodes:
                raise NodeUnknown(f"unknown node {node!r}")
            if node is not None and node not in self.nodes:
                raise NodeUnknown(f"unknown node {node!r}")
            model = model or self.resolve_model(kind, profile, variant)
            now = self.clock.now_ns()
            delay = model.boot_s if kind == "ru" else self.config.startup_delay_s
            ready = now + int(round(delay * 1e9))
            stalled = role in self.faults["stall"] or name in self.faults["stall"]
            if stalled or (kind == "ru" and not self._routable(address)):
                ready = None
            life = Lifetime(name, role, kind, node if kind != "ru" else None, model, antenna_layout,
                            tuple(serves), address, now, ready)
            self.lifetimes.append(life)
            self.active[name] = life
            self.by_name.setdefault(name, []).append(life)
            if life.node is not None:
                self.by_node.setdefault(life.node, []).append(life)
            return life

    def teardown(self, name: str) -> bool:
        """Stop a component; returns False (still an ack) if it was not deployed."""
        with self._lock:
            life = self.active.pop(name, None)
            if life is None:
                return False
            now = self.clock.now_ns()
            life.stopped_ns = now
            if life.kind == "gnb":
                for ue_id, att in list(self.attachments.items()):
                    if att.gnb == name:
                        att.detach_ns = now
                        del self.attachments[ue_id]
            return True

    def teardown_all(self) -> list[str]:
        with self._lock:
            names = list(self.active)
            for name in names:
                self.teardown(name)
            return names

    def state_of(self, name: str) -> str:
        with self._lock:
            life = self.active.get(name)
            return ABSENT if life is None else life.state(self.clock.now_ns())

    def inventory(self) -> dict:
        with self._lock:
            now = self.clock.now_ns()
            return {
                "now_ns": now,
                "nodes": [
                    {"name": n.name, "outlet": n.outlet, "roles": list(n.roles),
                     "baseline_w": self._baseline(n.name)}
                    for n in self.nodes.values()
                ],
                "components": [
                    {"name": l.name, "role": l.role, "kind": l.kind, "node": l.node,
                     "state": l.state(now), "deployed_ns": l.deployed_ns, "ready_ns": l.ready_ns}
                    for l in self.active.values()
                ],
                "ues": [
                    {"ue_id": a.ue_id, "gnb": a.gnb, "attach_ns": a.attach_ns}
                    for a in self.attachments.values()
                ],
            }

    def await_ready(self, names, timeout_s: float) -> dict:
        """Advance the clock until every named component is READY, or the timeout."""
        with self._lock:
            now = self.clock.now_ns()
            lives = []
            for name in names:
                if name not in self.active:
                    raise UnknownComponent(f"{name!r} is not deployed")
                lives.append(self.active[name])
            deadline = now + int(round(timeout_s * 1e9))
            pending = [l.name for l in lives if l.ready_ns is None or l.ready_ns > deadline]
            target = deadline if pending else max([now] + [l.ready_ns for l in lives])
        self.clock.advance_to(target)
        with self._lock:
            now = self.clock.now_ns()
            return {
                "ready": not pending,
                "now_ns": now,
                "states": {l.name: l.state(now) for l in lives},
                "pending": pending,
            }

    def set_faults(self, stall=None, ue_drop=None, scrape_drop_prob=None, clear=False) -> dict:
        with self._lock:
            if clear:
                self.faults = {"stall": set(), "ue_drop": set()}
            if stall is not None:
                self.faults["stall"] = set(stall)
            if ue_drop is not None:
                self.faults["ue_drop"] = set(ue_drop)
            if scrape_drop_prob is not None:
                self.config.scrape_drop_prob = float(scrape_drop_prob)
            return {"stall": sorted(self.faults["stall"]), "ue_drop": sorted(self.faults["ue_drop"]),
                    "scrape_drop_prob": self.config.scrape_drop_prob}

    # -- UEs and traffic -----------------------------------------------------

    def attach_ue(self, ue_id: str, gnb: str) -> Attachment:
        with self._lock:
            life = self.active.get(gnb)
            if life is None or life.kind != "gnb":
                raise UnknownComponent(f"no gNB {gnb!r}")
            if life.state(self.clock.now_ns()) != READY:
                raise DetachError(f"gNB {gnb!r} is not READY")
            current = self.attachments.get(ue_id)
            if current is not None:
                if current.gnb == gnb:
                    return current
                raise DetachError(f"UE {ue_id!r} is attached to {current.gnb!r}")
            att = Attachment(ue_id, gnb, self.clock.now_ns())
            self.attachments[ue_id] = att
            self.attach_history.setdefault(gnb, []).append(att)
            return att

    def _cell(self, radio: str):
        cell = self.config.cells.get(radio)
        if cell is None:
            raise UnknownComponent(f"no cell model for radio {radio!r}")
        return cell

    def run_traffic(self, requests: list[dict]) -> dict:
        """Run iperf-style tests for several UEs concurrently (in virtual time).

        Each request: ue_id, ue_index, gnb, radio, profile ("<stack>/<split>"),
        protocol, direction ("dl"/"ul"), bandwidth_mbps, duration_s.
        Blocks until the longest test ends; dropped UEs get ``None``.
        """
        with self._lock:
            now = self.clock.now_ns()
            for r in requests:
                att = self.attachments.get(r["ue_id"])
                if att is None or att.gnb != r["gnb"]:
                    raise DetachError(f"UE {r['ue_id']!r} is not attached to {r['gnb']!r}")
            per_gnb: dict[str, int] = {}
            for r in requests:
                per_gnb[r["gnb"]] = per_gnb.get(r["gnb"], 0) + 1
            results = []
            for r in requests:
                cell = self._cell(r["radio"])
                n = per_gnb[r["gnb"]]
                share = cell_share(cell.capacity_mbps, cell.ue_gain_exponent, n)
                key = f"{r['gnb']}/{r['ue_index']}"
                z = float(noise.normal(self.seed, key, "rate", now)[0])
                u = float(noise.uniform(self.seed, key, "aux", now)[0])
                duration = float(r["duration_s"])
                if r["protocol"] == "udp":
                    target = float(r["bandwidth_mbps"])
                    mbps = min(target, share) * (1 - cell.udp_loss) * (1 + cell.udp_rate_jitter * z)
                    mbps = max(mbps, 0.0)
                    extra = {
                        "jitter_ms": round(0.05 + 0.02 * u, 6),
                        "lost_percent": max(0.0, (target - mbps) / target * 100.0),
                        "retransmits": None,
                    }
                else:
                    steady = self.config.tcp_rates_mbps.get(f"{r['profile']}/{r['direction']}", share)
                    mbps = max(min(steady, share) * (1 + cell.tcp_rate_jitter * z), 0.0)
                    extra = {"jitter_ms": None, "lost_percent": None,
                             "retransmits": int(mbps * duration * u / 50.0)}
                end = now + int(round(duration * 1e9))
                self.flows.setdefault(r["gnb"], []).append(Flow(r["gnb"], now, end, mbps))
                bps = mbps * 1e6
                result = {
                    "ue_index": r["ue_index"],
                    "ue_id": r["ue_id"],
                    "protocol": r["protocol"],
                    "direction": r["direction"],
                    "duration_s": duration,
                    "start_ns": now,
                    "end_ns": end,
                    "bits_transferred": bps * duration,
                    "mean_bitrate_bps": bps,
                    **extra,
                }
                dropped = r["ue_index"] in self.faults["ue_drop"] or r["ue_id"] in self.faults["ue_drop"]
                results.append(None if dropped else result)
            end_ns = now + max(int(round(float(r["duration_s"]) * 1e9)) for r in requests)
            batch_id = f"b{next(self._batch_ids)}"
            self.batches[batch_id] = {"batch_id": batch_id, "start_ns": now, "end_ns": end_ns,
                                      "results": results}
        self.clock.advance_to(end_ns)
        return self.batches[batch_id]

    # -- power evaluation ----------------------------------------------------

    def _baseline(self, node: str) -> float:
        b = self.nodes[node].baseline_w
        return self.config.node_baseline_w if b is None else b

    def _drivers(self, life: Lifetime) -> list[str]:
        return [life.name] if life.kind == "gnb" else list(life.serves)

    def _context(self, life: Lifetime, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        load = np.zeros(len(t))
        ues = np.zeros(len(t))
        for g in self._drivers(life):
            for f in self.flows.get(g, ()):
                load += f.rate_mbps * ((t >= f.start_ns) & (t < f.end_ns))
            for a in self.attach_history.get(g, ()):
                m = t >= a.attach_ns
                if a.detach_ns is not None:
                    m &= t < a.detach_ns
                ues += m
        return load, ues

    def mean_power(self, life: Lifetime, t: np.ndarray) -> np.ndarray:
        """Noise-free power of one lifetime at times t (0 outside the lifetime)."""
        t = np.asarray(t, dtype=np.int64)
        alive = life.alive(t)
        out = np.zeros(len(t))
        if not alive.any():
            return out
        ta = t[alive]
        load, ues = self._context(life, ta)
        since = (ta - life.deployed_ns) * 1e-9
        out[alive] = life.model.mean_power(load, ues, since, life.layout)
        return out

    def emit_power(self, name: str, t: np.ndarray, stream: str = "pod") -> tuple[np.ndarray, np.ndarray]:
        """Noisy power of a named component at times t; returns (power, alive mask)."""
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        with self._lock:
            power = np.zeros(len(t))
            alive = np.zeros(len(t), dtype=bool)
            for life in self.by_name.get(name, ()):
                m = life.alive(t)
                if not m.any():
                    continue
                mean = self.mean_power(life, t[m])
                power[m] = life.model.emit(mean, self.seed, life.key, stream, t[m])
                alive |= m
            return power, alive

    def node_power(self, node: str, t: np.ndarray) -> np.ndarray:
        """Noise-free outlet power: baseline plus every pod on the node."""
        t = np.asarray(t, dtype=np.int64)
        total = np.full(len(t), self._baseline(node))
        if len(t) == 0:
            return total
        lo, hi = int(t.min()), int(t.max())
        for life in self.by_node.get(node, ()):
            if life.deployed_ns > hi or (life.stopped_ns is not None and life.stopped_ns <= lo):
                continue
            total += self.mean_power(life, t)
        return total

    # -- PDU -----------------------------------------------------------------

    def pdu_outlets(self) -> list[dict]:
        return [{"id": n.outlet, "node": n.name} for n in self.nodes.values()]

    def _pdu_extend(self, outlet: str, k_max: int) -> _PduCache:
        node = self.outlets[outlet].name
        cache = self._pdu.get(outlet)
        if cache is None:
            cache = _PduCache(k0=-(-self.config.epoch_ns // self._pdu_interval))
            self._pdu[outlet] = cache
        have = len(cache.power)
        need = k_max - cache.k0 + 1
        if need <= have:
            return cache
        k = np.arange(cache.k0 + have, cache.k0 + need, dtype=np.int64)
        t = k * self._pdu_interval
        true = self.node_power(node, t)
        sigma = self.config.pdu_accuracy / 2
        reading = np.maximum(true * (1 + sigma * noise.normal(self.seed, f"pdu:{outlet}", "p", k)), 0.0)
        volts = self.config.pdu_voltage_v * (1 + 0.002 * noise.normal(self.seed, f"pdu:{outlet}", "v", k))
        dt_h = self._pdu_interval * 1e-9 / 3600.0
        prev_p = cache.power[-1] if have else reading[0]
        prev_e = cache.energy_wh[-1] if have else 0.0
        inc = 0.5 * (np.concatenate([[prev_p], reading[:-1]]) + reading) * dt_h
        if not have:
            inc[0] = 0.0
        cache.power = np.concatenate([cache.power, reading])
        cache.energy_wh = np.concatenate([cache.energy_wh, prev_e + np.cumsum(inc)])
        cache.voltage = np.concatenate([cache.voltage, volts])
        return cache

    def pdu_samples(self, outlet: str, start_ns: int, end_ns: int) -> list[dict]:
        with self._lock:
            if outlet not in self.outlets:
                raise UnknownComponent(f"unknown outlet {outlet!r}")
            now = self.clock.now_ns()
            iv = self._pdu_interval
            end = min(end_ns, now)  # only readings taken strictly before now exist
            k_lo = max(-(-start_ns // iv), -(-self.config.epoch_ns // iv))
            k_hi = -(-end // iv) - 1
            if k_hi < k_lo:
                return []
            cache = self._pdu_extend(outlet, k_hi)
            sl = slice(k_lo - cache.k0, k_hi - cache.k0 + 1)
            p, e, v = cache.power[sl], cache.energy_wh[sl], cache.voltage[sl]
            return [
                {"ts_ns": int(k * iv), "voltage_v": float(v[i]), "current_a": float(p[i] / v[i]),
                 "power_w": float(p[i]), "energy_wh": float(e[i])}
                for i, k in enumerate(range(k_lo, k_hi + 1))
            ]

    # -- pod power exporter --------------------------------------------------

    def pod_query_range(self, pod: str, start_ns: int, end_ns: int, step_ns: int) -> list[dict]:
        if step_ns <= 0:
            raise SimError("step must be positive")
        with self._lock:
            lives = [l for l in self.by_name.get(pod, ())
                     if l.kind != "ru" and l.deployed_ns < end_ns
                     and (l.stopped_ns is None or l.stopped_ns > start_ns)]
            if not lives:
                raise UnknownComponent(f"pod {pod!r} did not exist in the window")
            now = self.clock.now_ns()
            sc = self._scrape
            first = -(-(start_ns - sc) // sc)
            last = (min(end_ns, now) - 1) // sc
            k = np.arange(first, last + 1, dtype=np.int64)
            ts = k * sc
            ts_ok = ts < now
            k, ts = k[ts_ok], ts[ts_ok]
            power, alive = self.emit_power(pod, ts)
            keep = alive
            if self.config.scrape_drop_prob > 0:
                keep &= noise.uniform(self.seed, pod, "drop", k) >= self.config.scrape_drop_prob
            bounds, vals = align_range_query(ts[keep], power[keep], start_ns, min(end_ns, now), step_ns, sc)
            return [{"ts_ns": int(b), "power_w": float(v)} for b, v in zip(bounds, vals)]

    # -- wattmeter -----------------------------------------------------------

    def wattmeter_samples(self, ru: str, start_ns: int, end_ns: int) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            lives = [l for l in self.by_name.get(ru, ()) if l.kind == "ru"]
            if not lives:
                raise UnknownComponent(f"no RU {ru!r}")
            end = min(end_ns, self.clock.now_ns())
            iv, jit = self._watt, self._watt_jitter
            k = np.arange(start_ns // iv - 1, -(-end // iv) + 2, dtype=np.int64)
            offset = np.rint((2 * noise.uniform(self.seed, f"watt:{ru}", "jitter", k) - 1) * jit).astype(np.int64)
            ts = k * iv + offset
            ts = ts[(ts >= start_ns) & (ts < end)]
            power, _ = self.emit_power(ru, ts, stream="wattmeter")
            return ts, power

    def write_ru_trace(self, ru: str, start_ns: int, end_ns: int, path: str | os.PathLike) -> str:
        ts, power = self.wattmeter_samples(ru, start_ns, end_ns)
        path = os.fspath(path)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        lines = ["ts_ns,power_w"] + [f"{int(t)},{p:.4f}" for t, p in zip(ts, power)]
        with open(path, "w", newline="") as f:
            f.write("\n".join(lines) + "\n")
        return path


def cell_share(capacity_mbps: float, exponent: float, n: int) -> float:
    return capacity_mbps * math.pow(n, exponent) / n
