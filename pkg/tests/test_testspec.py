import json
import random
import warnings

import pytest
from hypothesis import HealthCheck, given, settings

from ranprof.testspec import (
    ConstraintError,
    SchemaError,
    UnknownFieldWarning,
    VectorError,
    from_obj,
    load_test_vector,
    parse_test_vector,
    serialize_test_vector,
    with_param,
)
from vectorgen import LISTING, fuzz_texts, listing_doc, vector_docs


def test_listing_structure():
    v = load_test_vector(LISTING)
    ns, ts = v.network_scenario, v.traffic_scenario
    assert ns.core_network.name == "commercial"
    assert ns.ran.cu.name == "oai-cu"
    assert ns.ran.du.config_file == "oai_162prb.conf"
    assert ns.ran.functional_split == "8"
    assert ns.ran.ru.name == "usrp"
    assert ns.ran.ru.antenna_layout == "2x2"
    assert len(ts.ue_specification) == 1
    ue = ts.ue_specification[0]
    assert (ue.protocol, ue.bandwidth_mbps, ue.duration, ue.reverse) == ("udp", 70.0, 60.0, True)
    assert ue.direction == "dl"
    assert v.stack == "oai" and v.split == "8"


def test_empty_ue_list_is_constraint_error():
    doc = listing_doc()
    doc["traffic_scenario"]["ue_specification"] = []
    with pytest.raises(ConstraintError) as err:
        from_obj(doc)
    assert err.value.path == "$.traffic_scenario.ue_specification"


def test_split_radio_mismatch():
    doc = listing_doc()
    doc["network_scenario"]["ran"]["functional_split"] = "7.2"
    with pytest.raises(ConstraintError, match="foxconn"):
        from_obj(doc)


@pytest.mark.parametrize("cu,du,ok", [
    ("oai-cu", "oai-du", True),
    ("srsran-cu", "srsran-du", True),
    ("oai-cu", "srsran-du", False),
    ("srsran-cu", "oai-du", False),
    ("nokia-cu", "nokia-du", False),
])
def test_stack_prefix_rule(cu, du, ok):
    doc = listing_doc()
    doc["network_scenario"]["ran"]["cu"]["name"] = cu
    doc["network_scenario"]["ran"]["du"]["name"] = du
    if ok:
        from_obj(doc)
    else:
        with pytest.raises(ConstraintError):
            from_obj(doc)


def test_udp_needs_bandwidth_tcp_does_not():
    doc = listing_doc()
    doc["traffic_scenario"]["ue_specification"][0]["bandwidth_mbps"] = 0
    with pytest.raises(ConstraintError):
        from_obj(doc)
    doc["traffic_scenario"]["ue_specification"][0]["protocol"] = "tcp"
    assert from_obj(doc).ues[0].bandwidth_mbps == 0


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d["network_scenario"].pop("id"), "$.network_scenario.id"),
    (lambda d: d["network_scenario"].update(id=0), "$.network_scenario.id"),
    (lambda d: d["network_scenario"]["ran"]["ru"].update(address="300.1.1.1"), "$.network_scenario.ran.ru.address"),
    (lambda d: d["traffic_scenario"]["ue_specification"][0].update(duration=0), "$.traffic_scenario.ue_specification[0].duration"),
    (lambda d: d["traffic_scenario"]["ue_specification"][0].update(server_port=70000), "$.traffic_scenario.ue_specification[0].server_port"),
    (lambda d: d["traffic_scenario"]["ue_specification"][0].update(reverse="yes"), "$.traffic_scenario.ue_specification[0].reverse"),
    (lambda d: d["network_scenario"]["core_network"].update(name="free5gc"), "$.network_scenario.core_network.name"),
])
def test_schema_errors_name_the_path(mutate, path):
    doc = listing_doc()
    mutate(doc)
    with pytest.raises(SchemaError) as err:
        from_obj(doc)
    assert err.value.path == path
    assert path in str(err.value)


def test_invalid_json():
    with pytest.raises(SchemaError) as err:
        parse_test_vector("{not json")
    assert err.value.path == "$"


def test_unknown_fields_warn_and_are_ignored():
    doc = listing_doc()
    doc["vendor"] = {"x": 1}
    doc["traffic_scenario"]["ue_specification"][0]["window"] = 5
    with pytest.warns(UnknownFieldWarning) as rec:
        v = from_obj(doc)
    msgs = " ".join(str(w.message) for w in rec)
    assert "$.vendor" in msgs and "$.traffic_scenario.ue_specification[0].window" in msgs
    assert v == load_test_vector(LISTING)


def test_round_trip_listing():
    v = load_test_vector(LISTING)
    assert parse_test_vector(serialize_test_vector(v)) == v


def test_default_layout_is_materialised():
    text = serialize_test_vector(load_test_vector(LISTING))
    assert json.loads(text)["network_scenario"]["ran"]["ru"]["antenna_layout"] == "2x2"


def test_canonical_fixpoint():
    first = open(LISTING).read()
    second = serialize_test_vector(parse_test_vector(first))
    third = serialize_test_vector(parse_test_vector(second))
    assert second == third


def test_fuzz_never_crashes():
    for text in fuzz_texts(1000, seed=1):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                parse_test_vector(text)
        except SchemaError as exc:
            assert exc.path.startswith("$")
        except ConstraintError:
            pass


@settings(max_examples=200, suppress_health_check=[HealthCheck.too_slow])
@given(vector_docs())
def test_round_trip_generated(doc):
    v = from_obj(doc)
    text = serialize_test_vector(v)
    assert parse_test_vector(text) == v
    assert serialize_test_vector(parse_test_vector(text)) == text


@settings(max_examples=100, suppress_health_check=[HealthCheck.too_slow])
@given(vector_docs())
def test_field_order_does_not_matter(doc):
    rng = random.Random(json.dumps(doc, sort_keys=True))

    def shuffled(node):
        if isinstance(node, dict):
            items = list(node.items())
            rng.shuffle(items)
            return {k: shuffled(v) for k, v in items}
        if isinstance(node, list):
            return [shuffled(x) for x in node]
        return node

    for variant in (doc, shuffled(doc)):
        variant["network_scenario"]["ran"]["functional_split"] = "7.2"
        variant["network_scenario"]["ran"]["ru"]["name"] = "usrp"
    outcomes = []
    for variant in (doc, shuffled(doc)):
        try:
            outcomes.append(from_obj(variant))
        except VectorError as exc:
            outcomes.append((type(exc), exc.path))
    assert outcomes[0] == outcomes[1]


def test_with_param_broadcasts_to_every_ue():
    doc = listing_doc()
    doc["traffic_scenario"]["ue_specification"].append(dict(doc["traffic_scenario"]["ue_specification"][0]))
    v = with_param(from_obj(doc), "traffic.bandwidth_mbps", 10)
    assert [u.bandwidth_mbps for u in v.ues] == [10.0, 10.0]
    v = with_param(v, "traffic.ue_specification.1.duration", 30)
    assert [u.duration for u in v.ues] == [60.0, 30.0]


@pytest.mark.parametrize("param", ["traffic.protocol", "network.ran.ru.name", "traffic.nope", "bogus"])
def test_with_param_rejects_bad_paths(param):
    with pytest.raises(SchemaError):
        with_param(load_test_vector(LISTING), param, 10)
