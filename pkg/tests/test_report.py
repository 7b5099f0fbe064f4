import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from boundarycurv.critical import ScanReport
from boundarycurv.report import ReportEnvelope, ValidationTable, dumps, loads

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**62), 2**62) | st.floats(allow_nan=False) | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=6), inner, max_size=4),
    max_leaves=20,
)


@given(st.floats(allow_nan=False))
def test_float_round_trip(v):
    back = loads(dumps([v]))[0]
    assert back == v and math.copysign(1.0, back) == math.copysign(1.0, v)
    assert isinstance(back, float)


@given(json_values)
def test_value_round_trip(obj):
    assert loads(dumps(obj)) == obj


@given(json_values)
def test_stable_output(obj):
    assert dumps(obj) == dumps(loads(dumps(obj)))


def test_nan_tokens():
    text = dumps({"a": float("nan"), "b": [float("inf"), -float("inf")]})
    back = loads(text)
    assert math.isnan(back["a"]) and back["b"] == [math.inf, -math.inf]


def test_numpy_and_formatting():
    text = dumps({"v": np.array([1.0, 0.1]), "s": np.float64(2.0), "i": np.int64(3), "t": (1, 2)})
    assert '"v": [1.0, 0.10000000000000001]' in text
    assert '"s": 2.0' in text and '"i": 3' in text and '"t": [1, 2]' in text
    assert json.loads(text)["v"][1] == 0.1


def test_key_order_kept():
    assert list(loads(dumps({"z": 1, "a": 2, "m": 3}))) == ["z", "a", "m"]
    with pytest.raises(TypeError):
        dumps({1: 2})


def test_validation_table():
    t = ValidationTable("demo")
    t.add("small", 1e-9, 1e-8)
    t.add("forced", float("nan"), 1e-8, detail="not observable", passed=True)
    assert t.passed
    t.add("large", 1.0, 1e-8)
    assert not t.passed
    back = ValidationTable.from_dict(loads(dumps(t.to_dict())))
    assert [r.passed for r in back.rows] == [True, True, False]


def test_envelope_round_trip(ellipse_scan):
    env = ReportEnvelope(
        command="analyze",
        spec={"name": "ellipse(2,1)", "hash": "sha256:0"},
        parameters={"seed": 0, "tau_crit": 1e-9},
        payload_type="ScanReport",
        payload=ellipse_scan.to_dict(),
    )
    text = env.to_json()
    back = ReportEnvelope.from_json(text)
    assert back.to_json() == text
    assert back.schema == 1
    assert ScanReport.from_dict(back.payload).to_dict() == ellipse_scan.to_dict()
    with pytest.raises(ValueError):
        ReportEnvelope.from_json(text.replace('"schema": 1', '"schema": 2'))
