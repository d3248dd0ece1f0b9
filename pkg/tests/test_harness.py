import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mavsession.harness import (
    ALL_FORWARDED,
    SCENARIOS,
    Expected,
    InvalidParams,
    TraceParseError,
    TraceRecord,
    bench,
    default_config,
    dump_trace,
    encode_records,
    generate_scenario,
    load_trace,
    parse_trace,
    replay_trace,
    write_trace,
)
from mavsession.protocols import AltitudeComparison, ParachuteGuardParams, build_parachute_guard
from mavsession.proxy import config_from_document
from mavsession.session import dump_protocol

CONFIG = default_config()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.data(), st.integers(0, 1000))
def test_mission_scenarios_self_consistent(n, data, seed):
    k = data.draw(st.integers(0, n - 1))
    for kind, params in (("good_mission", {"N": n}), ("stale_buffer", {"N": n, "k": k}),
                         ("out_of_order_request", {"N": max(n, 2)})):
        s = generate_scenario(kind, params, seed)
        assert replay_trace(s, CONFIG).outcome() == s.expected


@settings(max_examples=60, deadline=None)
@given(value=st.floats(0, 30), pitch_p=st.floats(0.1, 10), rate_ff=st.floats(0.1, 5), populate=st.booleans())
def test_param_attack_self_consistent(value, pitch_p, rate_ff, populate):
    s = generate_scenario("param_attack", {"value": value, "MC_PITCH_P": pitch_p, "MC_PITCHRATE_FF": rate_ff,
                                           "populate": populate})
    assert replay_trace(s, CONFIG).outcome() == s.expected


@settings(max_examples=60, deadline=None)
@given(armed=st.booleans(), mode=st.sampled_from(["STABILIZE", "ACRO", "FLIP", "LOITER", "AUTO"]),
       v_z=st.floats(-3, 3), alt=st.floats(0, 100), alt_min=st.floats(0, 100),
       param1=st.sampled_from([0, 1, 2]), carrier=st.sampled_from(["COMMAND_LONG", "COMMAND_INT"]),
       stale=st.sampled_from([0.0, 1.0, 5.0]))
def test_parachute_attack_self_consistent(armed, mode, v_z, alt, alt_min, param1, carrier, stale):
    s = generate_scenario("parachute_attack", {"armed": armed, "mode": mode, "v_z": v_z, "alt": alt,
                                               "CHUTE_ALT_MIN": alt_min, "param1": param1, "carrier": carrier,
                                               "stale_delay": stale})
    assert replay_trace(s, CONFIG).outcome() == s.expected


def test_parachute_below_min_scenario(tmp_path):
    path = tmp_path / "chute.json"
    path.write_text(dump_protocol(build_parachute_guard(ParachuteGuardParams(AltitudeComparison.BELOW_MIN))))
    config = config_from_document({"protocols": [str(path)]})
    for alt in (10.0, 40.0):
        s = generate_scenario("parachute_attack", {"alt": alt, "altitude_comparison": "BelowMin"})
        assert replay_trace(s, config).outcome() == s.expected
    assert s.expected.kind == "DropAt"


@pytest.mark.parametrize("kind", sorted(SCENARIOS))
def test_seeded_generation_is_byte_identical(kind, tmp_path):
    params = {"stale_buffer": {"N": 3, "k": 1}, "good_mission": {"N": 3}, "out_of_order_request": {"N": 3}}
    a = generate_scenario(kind, params.get(kind, {}), seed=7)
    b = generate_scenario(kind, params.get(kind, {}), seed=7)
    assert dump_trace(a) == dump_trace(b)
    assert encode_records(a.records, CONFIG.dialect) == encode_records(b.records, CONFIG.dialect)
    write_trace(a, tmp_path / "t.jsonl")
    back = load_trace(tmp_path / "t.jsonl")
    assert back == a
    assert dump_trace(back) == dump_trace(a)


def test_seeds_change_timing_only():
    a, b = generate_scenario("good_mission", {"N": 3}, 1), generate_scenario("good_mission", {"N": 3}, 2)
    assert [r.label for r in a.records] == [r.label for r in b.records]
    assert [r.delay for r in a.records] != [r.delay for r in b.records]


def test_good_mission_100_shape():
    s = generate_scenario("good_mission", {"N": 100})
    protocol = [r for r in s.records if r.label != "HEARTBEAT"]
    assert len(protocol) == 202
    assert len(s.records) > 202
    report = replay_trace(s)
    assert report.final["mission"] == "Completed" and not report.violations


def test_empty_trace_replay():
    report = replay_trace([])
    assert report.decisions == [] and report.outcome() == ALL_FORWARDED
    assert set(report.final.values()) == {"Running"}


def test_expected_json_and_str():
    e = Expected("DropAt", 5, "RefinementFalse")
    assert str(e) == "DropAt(5, RefinementFalse)"
    assert Expected.from_json(e.to_json()) == e
    assert str(ALL_FORWARDED) == "AllForwarded"


@pytest.mark.parametrize("kind, params", [
    ("nope", {}),
    ("good_mission", {}),
    ("good_mission", {"N": 0}),
    ("good_mission", {"N": "many"}),
    ("stale_buffer", {"N": 2, "k": 2}),
    ("out_of_order_request", {"N": 1}),
    ("param_attack", {"value": "inf"}),
    ("parachute_attack", {"mode": "SPIN"}),
    ("parachute_attack", {"carrier": "COMMAND_ACK"}),
    ("parachute_attack", {"armed": "maybe"}),
])
def test_invalid_params(kind, params):
    with pytest.raises(InvalidParams):
        generate_scenario(kind, params)


@pytest.mark.parametrize("text", [
    "not json",
    "[1, 2]",
    '{"dir": "GCS->UAV"}',
    '{"dir": "up", "label": "HEARTBEAT"}',
    '{"dir": "GCS->UAV", "label": "HEARTBEAT", "delay": -1}',
    '{"trace": 2}',
    '{"dir": "GCS->UAV", "label": "HEARTBEAT"}\n{"trace": 1}',
])
def test_trace_parse_errors(text):
    with pytest.raises(TraceParseError):
        parse_trace(text)


def test_headerless_trace_and_encoding_errors():
    s = parse_trace('{"dir": "GCS->UAV", "label": "MISSION_COUNT", "fields": {"count": 1}}\n\n')
    assert s.expected == ALL_FORWARDED and len(s.records) == 1
    for rec in (TraceRecord("GCS->UAV", "NOT_A_MESSAGE"),
                TraceRecord("GCS->UAV", "MISSION_COUNT", {"nope": 1}),
                TraceRecord("GCS->UAV", "MISSION_COUNT", {"count": 70000}),
                TraceRecord("GCS->UAV", "MISSION_ACK", {"type": "MAV_MISSION_MAYBE"})):
        with pytest.raises(TraceParseError):
            encode_records([rec], CONFIG.dialect)


def test_bench_shape():
    s = generate_scenario("good_mission", {"N": 10})
    report = bench(CONFIG, s, 30)
    assert report.messages == len(s.records) and report.repetitions == 30
    assert report.min_us <= report.median_us <= report.max_us
    assert "±" in report.table() and "μs" in report.table()
    assert json.loads(json.dumps(report.to_json()))["protocols"] == list(report.protocols)
    with pytest.raises(InvalidParams):
        bench(CONFIG, s, 5)


def test_more_protocols_cost_more():
    # a single guard that ignores mission traffic is the closest thing to pass-through
    guard_only = config_from_document({"protocols": ["builtin:param_guard"]})
    s = generate_scenario("good_mission", {"N": 50})
    full = bench(CONFIG, s, 30)
    light = bench(guard_only, s, 30)
    assert full.median_us >= light.median_us
