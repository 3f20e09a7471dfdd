import httpx
import numpy as np
import pytest

from ranprof.telemetry import (
    EmptyWindow, FormatError, PduClient, PodPowerClient, SampleSeries, Source, SourceUnavailable,
    UnknownPod, read_wattmeter_trace,
)
from ranprof.timeseries import Window, integrate_energy

from conftest import run_udp

S = 1_000_000_000


@pytest.fixture
def ran(bed):
    """srsRAN gNB on microway-1 after one 60 s UDP run."""
    return run_udp(bed, profile="srsran/8", mbps=40)


def test_pdu_poll_sixty_seconds(sim, ran):
    series = PduClient(sim).poll("px4-a.1", ran["start_ns"], ran["end_ns"])
    assert series.source is Source.PDU and series.accuracy_fraction == 0.005
    assert 59 <= len(series) <= 61
    assert np.allclose(np.diff(series.ts_ns), S)
    assert series.voltage_v is not None and series.current_a is not None
    assert np.allclose(series.voltage_v * series.current_a, series.power_w)
    assert np.all(np.diff(series.energy_wh) >= 0)


def test_pdu_degenerate_window(sim, ran):
    with pytest.raises(EmptyWindow):
        PduClient(sim).poll("px4-a.1", ran["start_ns"], ran["start_ns"])


def test_pdu_outlets_and_unknown_outlet(sim, ran):
    client = PduClient(sim)
    assert client.outlets()["microway-1"] == "px4-a.1"
    with pytest.raises(SourceUnavailable):
        client.poll("px9-z.9", ran["start_ns"], ran["end_ns"])


def test_pdu_outlet_is_baseline_plus_pod(sim, ran):
    series = PduClient(sim).poll("px4-a.1", ran["start_ns"], ran["end_ns"])
    assert series.power_w.mean() == pytest.approx(200 + 48, rel=0.005)


def test_pdu_energy_consistency(sim, ran):
    series = PduClient(sim).poll("px4-a.1", ran["start_ns"], ran["end_ns"])
    sub = series.select(ran["start_ns"] + 10 * S, ran["start_ns"] + 40 * S)
    delta_j = (sub.energy_wh[-1] - sub.energy_wh[0]) * 3600
    trap = integrate_energy(sub, Window(int(sub.ts_ns[0]), int(sub.ts_ns[-1]))).energy_j
    assert abs(delta_j - trap) <= 2 * 0.005 * trap


def test_pod_query(sim, ran):
    series = PodPowerClient(sim).query("gnb-1", ran["start_ns"], ran["end_ns"])
    assert series.source is Source.POD_ESTIMATOR and series.accuracy_fraction == 0.0
    assert len(series) == 60
    assert series.power_w.mean() == pytest.approx(48, abs=0.3)


def test_pod_query_step(sim, ran):
    coarse = PodPowerClient(sim).query("gnb-1", ran["start_ns"], ran["end_ns"], step_ns=5 * S)
    fine = PodPowerClient(sim).query("gnb-1", ran["start_ns"], ran["end_ns"])
    assert len(coarse) == 12
    lookup = dict(zip(fine.ts_ns.tolist(), fine.power_w.tolist()))
    # 1 s scrapes on the boundaries: each coarse point is the scrape at its boundary
    assert coarse.power_w.tolist() == [lookup[t] for t in coarse.ts_ns.tolist()]


def test_pod_query_before_creation(sim, bed):
    start = bed.now_ns()
    bed.clock.advance(30)
    bed.deploy("late", "gnb", "gnb", "srsran/8", node="microway-1")
    with pytest.raises(UnknownPod):
        PodPowerClient(sim).query("late", start, start + 20 * S)
    with pytest.raises(UnknownPod):
        PodPowerClient(sim).query("nobody", start, start + 20 * S)


def test_pod_query_missing_scrapes_are_gaps(sim, bed):
    bed.set_faults(scrape_drop_prob=0.5)
    batch = run_udp(bed, profile="srsran/8", mbps=40)
    series = PodPowerClient(sim).query("gnb-1", batch["start_ns"], batch["end_ns"])
    assert len(series) < 60
    assert set(np.diff(series.ts_ns) % S) == {0}


def _write(path, rows, header="ts_ns,power_w"):
    path.write_text("\n".join([header] + rows) + "\n")
    return path


def test_wattmeter_window_discipline(tmp_path):
    p = _write(tmp_path / "t.csv", [f"{t},{35 + t / 100}" for t in range(0, 100, 10)])
    series = read_wattmeter_trace(p, 20, 60)
    assert series.ts_ns.tolist() == [20, 30, 40, 50]
    assert series.target == "t" and series.source is Source.WATTMETER


def test_wattmeter_errors(tmp_path):
    with pytest.raises(SourceUnavailable):
        read_wattmeter_trace(tmp_path / "missing.csv", 0, 10)
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(EmptyWindow):
        read_wattmeter_trace(tmp_path / "empty.csv", 0, 10)
    with pytest.raises(FormatError) as err:
        read_wattmeter_trace(_write(tmp_path / "bad.csv", ["1,2.0", "2,oops"]), 0, 10)
    assert err.value.row == 2
    with pytest.raises(FormatError) as err:
        read_wattmeter_trace(_write(tmp_path / "order.csv", ["5,1", "5,1"]), 0, 10)
    assert err.value.row == 2
    with pytest.raises(FormatError):
        read_wattmeter_trace(_write(tmp_path / "hdr.csv", ["1,1"], header="time,watts"), 0, 10)
    with pytest.raises(EmptyWindow):
        read_wattmeter_trace(_write(tmp_path / "out.csv", ["1,1"]), 5, 10)


def test_wattmeter_sim_trace(bed, tmp_path):
    bed.deploy("ru-1", "ru", "ru", "usrp", address="192.168.40.20")
    start = bed.await_ready(["ru-1"], 15)["now_ns"]
    bed.clock.advance(60)
    path = bed.write_ru_trace("ru-1", start, start + 60 * S, tmp_path / "ru.csv")
    series = read_wattmeter_trace(path, start, start + 60 * S, target="ru-1")
    assert 930 <= len(series) <= 990
    assert series.power_w.mean() == pytest.approx(35.6, abs=0.2)
    assert "gaps" not in series.meta or series.meta["gaps"] == []


def test_unreachable_source():
    def boom(request):
        raise httpx.ConnectError("refused")

    http = httpx.Client(transport=httpx.MockTransport(boom), base_url="http://pdu")
    with pytest.raises(SourceUnavailable):
        PduClient(http).poll("px4-a.1", 0, 10)
    down = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503)), base_url="http://x")
    with pytest.raises(SourceUnavailable):
        PodPowerClient(down).query("gnb", 0, 10)


@pytest.mark.parametrize("ts,p,e", [
    ([0, 0], [1.0, 1.0], None),
    ([0, 1], [1.0, -1.0], None),
    ([0, 1], [1.0, 1.0], [2.0, 1.0]),
])
def test_series_invariants(ts, p, e):
    with pytest.raises(ValueError):
        SampleSeries(Source.PDU, "o", S, 0.005, ts, p, energy_wh=e).check()


def test_gap_flagging():
    s = SampleSeries(Source.PDU, "o", S, 0.005, [0, S, 5 * S], [1.0, 1.0, 1.0]).flag_gaps()
    assert s.meta["gaps"] == [[S, 5 * S]]


def test_malformed_payload():
    body = [{"ts_ns": 2, "voltage_v": 230, "current_a": 0, "power_w": -1.0, "energy_wh": 0}]
    http = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, json=body)), base_url="http://x")
    with pytest.raises(SourceUnavailable):
        PduClient(http).poll("o", 0, 10)
