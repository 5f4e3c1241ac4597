import json

import pytest

from gridsentry.case_model import bundled_case, load_case


TWO_BUS = {
    "name": "two_bus",
    "base_MVA": 100.0,
    "buses": [
        {"id": 1, "type": "Slack", "Vm": 1.0, "Va_deg": 0.0, "base_kV": 138.0},
        {"id": 2, "type": "PQ", "Vm": 1.0, "Va_deg": 0.0, "base_kV": 138.0},
    ],
    "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1, "b": 0.0}],
}


def make_json_case(doc, **kw):
    return load_case(json.dumps(doc).encode(), "json", **kw)


@pytest.fixture(scope="session")
def two_bus():
    return make_json_case(TWO_BUS)


@pytest.fixture(scope="session")
def ieee14():
    return bundled_case("case14")


@pytest.fixture(scope="session")
def ieee30():
    return bundled_case("case30")


@pytest.fixture(scope="session")
def cases():
    return {n: bundled_case(f"case{n}") for n in (14, 30, 39, 57, 118)}
