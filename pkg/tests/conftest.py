from __future__ import annotations

import sys

import pytest

from lro.relation import Database, Relation


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """One visible pass/fail line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.fspath.basename == "test_acceptance.py":
        status = "PASS" if report.passed else "FAIL"
        name = item.name.replace("test_", "", 1)
        sys.stderr.write(f"ACCEPTANCE {name}: {status}\n")


@pytest.fixture
def restaurants() -> Relation:
    return Relation(
        "Restaurants",
        ["Name", "Location", "Description"],
        [
            ("Alley Wok", "Palo Alto", "Cozy spot for Sichuan classics"),
            ("Bella Pasta", "Rome", "Candlelit trattoria with handmade pasta"),
            ("Golden Gate Dim Sum", "San Francisco", "Bustling carts of dumplings"),
            ("Prairie Grill", "Omaha", "Steakhouse with open-flame pit"),
        ],
    )


@pytest.fixture
def enterprises() -> Relation:
    return Relation(
        "Enterprises",
        ["Enterprise", "CEO"],
        [
            ("Microsoft", "Satya Nadella"),
            ("Google", "Sundar Pichai"),
            ("Reckitt", "Kris Licht"),
            ("P&G", "Jon Moeller"),
        ],
    )


@pytest.fixture
def people() -> Relation:
    return Relation(
        "People",
        ["Name", "Gender", "Company Name"],
        [
            ("Satya Nadella", "Male", "Microsoft"),
            ("Clara", None, "Google"),
            ("Jon R. Moeller", "Male", "P&G"),
        ],
    )


@pytest.fixture
def small_db(restaurants, enterprises, people) -> Database:
    extra = Relation("Offices", ["City"], [("Seattle",), ("Dublin",)])
    return Database([restaurants, enterprises, people, extra])
