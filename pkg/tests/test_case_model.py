import copy
import io
import json
import math
from importlib import resources

import pytest

from gridsentry.case_model import (
    BranchStatus,
    BusType,
    CaseError,
    CaseSyntaxError,
    NegativeReactanceWarning,
    bundled_case,
    case_to_json,
    internal_index,
    load_case,
    read_case,
)

from conftest import TWO_BUS, make_json_case


CASE2_M = """function mpc = case2
%% tiny test case
mpc.version = '2';
mpc.baseMVA = 100;

%  bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1.00	0	110	1	1.05	0.95;
	2	1	10	5	0	0	1	1.00	-3.5	110	1	1.05	0.95;
];

mpc.gen = [
	1	10	0	10	-10	1.00	100	1	50	0;
];

mpc.branch = [
	1	2	0.01	0.05	0.02	100	100	100	0	0	1	-360	360;
];
"""


def m_case(text, **kw):
    return load_case(text.encode(), "m", **kw)


def test_ieee14_counts(ieee14):
    assert ieee14.N == 14
    assert ieee14.K == 20
    assert ieee14.name == "case14"


@pytest.mark.parametrize("n", [14, 30, 39, 57, 118])
def test_bundled_cases_parse(cases, n):
    case = cases[n]
    assert case.N == n
    assert sum(b.bus_type is BusType.SLACK for b in case.buses) == 1
    for br in case.branches:
        internal_index(case, br.from_bus)
        internal_index(case, br.to_bus)
    assert case.is_connected
    assert not case.negative_reactance


def test_bundled_case_aliases():
    assert bundled_case("ieee14").N == bundled_case("14").N == 14
    with pytest.raises(CaseError):
        bundled_case("case9999")


def test_two_bus_json(two_bus):
    assert (two_bus.N, two_bus.K) == (2, 1)
    assert two_bus.buses[0].bus_type is BusType.SLACK
    assert two_bus.slack == 0


def test_matpower_subset_fields():
    case = m_case(CASE2_M)
    assert case.name == "case2"
    assert case.base_MVA == 100
    assert case.buses[1].Pd == 10
    assert case.buses[1].Va == pytest.approx(math.radians(-3.5))
    br = case.branches[0]
    assert br.tap_ratio == 1.0  # 0 in MATPOWER means no transformer
    assert (br.r, br.x, br.b) == (0.01, 0.05, 0.02)
    assert case.generators[0].Pg == 10


def test_unknown_bus_in_branch():
    text = CASE2_M.replace("\t1\t2\t0.01", "\t1\t99\t0.01")
    with pytest.raises(CaseError, match="unknown bus id 99"):
        m_case(text)


def test_syntax_error_is_position_annotated():
    text = CASE2_M.replace("1.05\t0.95;\n\t2", "1.05\tx0.95;\n\t2")
    with pytest.raises(CaseSyntaxError) as info:
        m_case(text)
    assert info.value.line == 8
    assert "x0.95" in str(info.value)


def test_arbitrary_matlab_rejected():
    with pytest.raises(CaseSyntaxError, match="unsupported statement"):
        m_case(CASE2_M + "\nfor k = 1:3\n  disp(k);\nend\n")


def test_ragged_matrix_rejected():
    text = CASE2_M.replace("1.05\t0.95;\n];\n\nmpc.gen", "1.05;\n];\n\nmpc.gen", 1)
    with pytest.raises(CaseSyntaxError, match="rectangular"):
        m_case(text)


def test_duplicate_bus_id():
    doc = copy.deepcopy(TWO_BUS)
    doc["buses"][1]["id"] = 1
    with pytest.raises(CaseError, match="duplicate bus id 1"):
        make_json_case(doc)


@pytest.mark.parametrize("types,match", [(["PQ", "PQ"], "no slack"), (["Slack", "Slack"], "multiple slack")])
def test_slack_uniqueness(types, match):
    doc = copy.deepcopy(TWO_BUS)
    for bus, t in zip(doc["buses"], types):
        bus["type"] = t
    with pytest.raises(CaseError, match=match):
        make_json_case(doc)


def test_negative_reactance_warns_by_default_and_fails_strict():
    doc = copy.deepcopy(TWO_BUS)
    doc["branches"][0]["x"] = -0.1
    with pytest.warns(NegativeReactanceWarning):
        case = make_json_case(doc)
    assert case.negative_reactance
    assert case.warnings
    with pytest.raises(CaseError, match="negative series reactance"):
        make_json_case(doc, strict=True)


def test_negative_reactance_out_of_service_is_ignored():
    doc = copy.deepcopy(TWO_BUS)
    doc["branches"].append({"from": 1, "to": 2, "r": 0, "x": -0.2, "status": "OutOfService"})
    case = make_json_case(doc, strict=True)
    assert case.K == 1
    assert case.branches[1].status is BranchStatus.OUT_OF_SERVICE


def test_disconnected_case_is_flagged():
    doc = copy.deepcopy(TWO_BUS)
    doc["buses"].append({"id": 3, "type": "PQ"})
    with pytest.warns(UserWarning, match="not connected"):
        case = make_json_case(doc)
    assert not case.is_connected


def test_internal_index(ieee14):
    assert internal_index(ieee14, 1) == 0
    assert internal_index(ieee14, 14) == 13
    with pytest.raises(CaseError):
        internal_index(ieee14, 15)


def test_internal_index_is_bijective_on_sparse_ids(cases):
    case = cases[118]
    idx = [internal_index(case, i) for i in case.bus_ids]
    assert sorted(idx) == list(range(case.N))


@pytest.mark.parametrize("n", [14, 118])
def test_json_round_trip(cases, n):
    text = case_to_json(cases[n])
    once = load_case(text, "json")
    twice = load_case(case_to_json(once), "json")
    assert once == twice
    assert once.buses == cases[n].buses
    assert once.branches == cases[n].branches


def test_load_case_accepts_streams(tmp_path):
    data = resources.files("gridsentry").joinpath("data").joinpath("case14.m").read_bytes()
    assert load_case(io.BytesIO(data), "m").N == 14
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TWO_BUS))
    assert read_case(path).N == 2


def test_json_syntax_error():
    with pytest.raises(CaseSyntaxError):
        load_case(b'{"name": ', "json")
