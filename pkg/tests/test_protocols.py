import itertools
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mavsession.dialect import bundled_dialect
from mavsession.protocols import (
    BUILDERS,
    AltitudeComparison,
    MissionParams,
    ParachuteGuardParams,
    PitchGuardParams,
    build_mission_protocol,
    build_parachute_guard,
    build_param_guard,
    builtin_protocol_text,
    resolve_protocol,
)
from mavsession.refinement import BoolV, EnumV, FloatV, IntV, StrV
from mavsession.session import (
    Direction,
    ObservedMessage,
    StepKind,
    ViolationReason,
    check_against_dialect,
    dump_protocol,
    run_trace,
    start,
    step,
)

from mission_oracle import compare_exhaustive

G, U = Direction("GCS", "UAV"), Direction("UAV", "GCS")
COMMON = bundled_dialect("common")
PARACHUTE = EnumV("MAV_CMD", "MAV_CMD_DO_PARACHUTE", 208)


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_shipped_files_match_builders(name):
    built = BUILDERS[name]()
    assert resolve_protocol(f"builtin:{name}", COMMON) == built
    assert builtin_protocol_text(name) == dump_protocol(built)
    check_against_dialect(built, COMMON)


def test_param_validation():
    for bad in (0, 1, 65536):
        with pytest.raises(ValueError):
            MissionParams(bad)
    for bad in (0.0, -1.0, float("inf"), float("nan")):
        with pytest.raises(ValueError):
            PitchGuardParams(p=bad)
    with pytest.raises(ValueError):
        ParachuteGuardParams(forbidden_modes=())
    with pytest.raises(ValueError):
        ParachuteGuardParams(altitude_comparison="Sideways")


def test_mission_limit_is_configurable():
    spec = build_mission_protocol(MissionParams(10))
    m = lambda n: ObservedMessage(G, "MISSION_COUNT", {"count": IntV(n)})  # noqa: E731
    assert step(start(spec), m(9)).kind is StepKind.ACCEPTED
    assert step(start(spec), m(10)).kind is StepKind.VIOLATION


# -- mission -------------------------------------------------------------------------


def _sym_trace(n, k, ack):
    out = [("G", "COUNT", n)]
    for i in range(k):
        out += [("U", "REQ", i), ("G", "ITEM", i)]
    return tuple(out + [("U", "ACK", ack)])


def test_mission_complete_traces_equal_closed_form():
    _, bad, complete = compare_exhaustive(build_mission_protocol(), max_len=8, both_directions=False)
    assert bad == []
    expected = set()
    for n in range(1, 4):
        expected.add(_sym_trace(n, n, "ACCEPTED"))
        for k in range(n + 1):
            expected.add(_sym_trace(n, k, "ERROR"))
    assert set(complete) == expected


# -- param guard -------------------------------------------------------------------------


def param_set(name, value):
    return ObservedMessage(G, "PARAM_SET", {"param_id": StrV(name), "param_value": FloatV(value),
                                            "target_system": IntV(1)})


SHADOW = {"MC_PITCH_P": FloatV(6.5), "MC_PITCHRATE_FF": FloatV(2.0)}


@pytest.mark.parametrize("value, kind", [(10.0, StepKind.COMPLETED), (13.0, StepKind.VIOLATION),
                                         (12.99, StepKind.COMPLETED), (13.01, StepKind.VIOLATION)])
def test_param_guard_boundary(value, kind):
    guard = build_param_guard()
    res = step(start(guard), param_set("MC_PITCHRATE_MAX", value), SHADOW)
    assert res.kind is kind
    if kind is StepKind.VIOLATION:
        assert res.report.reason is ViolationReason.REFINEMENT_FALSE


def test_param_guard_fails_closed_without_shadow():
    res = step(start(build_param_guard()), param_set("MC_PITCHRATE_MAX", 1.0), {})
    assert res.report.reason is ViolationReason.EVALUATION_ERROR


def test_param_guard_weights_and_filter():
    guard = build_param_guard(PitchGuardParams(p=2.0, q=0.5))
    assert step(start(guard), param_set("MC_PITCHRATE_MAX", 12.9), SHADOW).kind is StepKind.COMPLETED
    assert step(start(guard), param_set("MC_ROLL_P", 1e9), {}).kind is StepKind.IRRELEVANT


def test_param_guard_against_float_oracle():
    # float32 wire values compared against an exact-rational oracle
    from fractions import Fraction

    guard = build_param_guard()
    for bits in range(0x414F0000, 0x41510000, 0x1000):
        v = struct.unpack("<f", struct.pack("<I", bits))[0]
        res = step(start(guard), param_set("MC_PITCHRATE_MAX", v), SHADOW)
        assert (res.kind is StepKind.COMPLETED) == (Fraction(v) < Fraction(13))


# -- parachute guard -------------------------------------------------------------------------

SAFE = {"motors_armed": BoolV(True), "mode": StrV("STABILIZE"), "v_z": FloatV(-0.5),
        "alt": FloatV(40.0), "CHUTE_ALT_MIN": FloatV(30.0)}


def chute(n=2.0, label="COMMAND_LONG", command=PARACHUTE):
    return ObservedMessage(G, label, {"command": command, "param1": FloatV(n)})


def verdict(state, msg=None, params=ParachuteGuardParams()):
    return step(start(build_parachute_guard(params)), msg or chute(), state).kind


def test_parachute_all_true():
    assert verdict(SAFE) is StepKind.COMPLETED
    assert verdict(SAFE, chute(label="COMMAND_INT")) is StepKind.COMPLETED
    assert verdict(dict(SAFE, v_z=FloatV(0.0))) is StepKind.COMPLETED  # hovering is not ascending


@pytest.mark.parametrize("change", [
    {"n": 1.0},
    {"motors_armed": BoolV(False)},
    {"mode": StrV("ACRO")},
    {"mode": StrV("FLIP")},
    {"v_z": FloatV(2.0)},
    {"alt": FloatV(10.0)},
])
def test_parachute_single_conjunct_failures(change):
    change = dict(change)
    n = change.pop("n", 2.0)
    assert verdict(dict(SAFE, **change), chute(n)) is StepKind.VIOLATION


def test_parachute_missing_state_fails_closed():
    for name in SAFE:
        state = {k: v for k, v in SAFE.items() if k != name}
        res = step(start(build_parachute_guard()), chute(), state)
        assert res.report.reason is ViolationReason.EVALUATION_ERROR, name


def test_parachute_below_min_variant():
    params = ParachuteGuardParams(AltitudeComparison.BELOW_MIN)
    assert verdict(SAFE, params=params) is StepKind.VIOLATION
    assert verdict(dict(SAFE, alt=FloatV(20.0)), params=params) is StepKind.COMPLETED


def test_parachute_ignores_other_commands():
    other = EnumV("MAV_CMD", "MAV_CMD_NAV_TAKEOFF", 22)
    assert verdict({}, chute(command=other)) is StepKind.IRRELEVANT
    assert verdict({}, chute(command=IntV(208))) is StepKind.VIOLATION


@given(st.booleans(), st.sampled_from(["STABILIZE", "ACRO", "FLIP", "LOITER"]),
       st.floats(-5, 5), st.floats(0, 100), st.floats(0, 100), st.sampled_from([0.0, 1.0, 2.0]))
def test_parachute_matches_conjunction_oracle(armed, mode, v_z, alt, alt_min, n):
    state = {"motors_armed": BoolV(armed), "mode": StrV(mode), "v_z": FloatV(v_z), "alt": FloatV(alt),
             "CHUTE_ALT_MIN": FloatV(alt_min)}
    want = n == 2 and armed and mode not in ("ACRO", "FLIP") and v_z <= 0 and alt >= alt_min
    assert (verdict(state, chute(n)) is StepKind.COMPLETED) == want


# -- guards are stateless across activations -------------------------------------------------


def test_persistent_guard_verdicts_ignore_history():
    guard = build_param_guard()
    values = [5.0, 14.0, 12.0, 13.0]
    for perm in itertools.permutations(values):
        verdicts = {}
        for v in perm:
            res = step(start(guard), param_set("MC_PITCHRATE_MAX", v), SHADOW)
            verdicts[v] = res.kind
        assert verdicts == {5.0: StepKind.COMPLETED, 12.0: StepKind.COMPLETED,
                            13.0: StepKind.VIOLATION, 14.0: StepKind.VIOLATION}


def test_mission_examples():
    spec = build_mission_protocol()
    acc = EnumV("MAV_MISSION_RESULT", "MAV_MISSION_ACCEPTED", 0)
    err = EnumV("MAV_MISSION_RESULT", "MAV_MISSION_ERROR", 1)
    tr = [ObservedMessage(G, "MISSION_COUNT", {"count": IntV(1)}),
          ObservedMessage(U, "MISSION_REQUEST_INT", {"seq": IntV(0)}),
          ObservedMessage(G, "MISSION_ITEM_INT", {"seq": IntV(0)}),
          ObservedMessage(U, "MISSION_ACK", {"type": acc})]
    assert run_trace(spec, tr)[-1].kind is StepKind.COMPLETED
    assert run_trace(spec, [ObservedMessage(G, "MISSION_COUNT", {"count": IntV(0)})])[-1].kind is StepKind.VIOLATION
    early = [tr[0], ObservedMessage(U, "MISSION_ACK", {"type": err})]
    assert run_trace(spec, early)[-1].kind is StepKind.COMPLETED
