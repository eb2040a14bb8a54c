"""Attack scenario library and the threat-to-defense matrix."""

from __future__ import annotations

import dataclasses
import json

import pytest

from ccplane.adversary import (
    SCENARIOS,
    AttackScenario,
    ThreatClass,
    run_matrix,
    run_scenario,
)
from ccplane.measurement import PlatformProfile


class TestScenarioLibrary:
    def test_all_nine_threat_classes_covered(self):
        assert {s.threat_class for s in SCENARIOS} == set(ThreatClass)

    @pytest.mark.parametrize("scenario", SCENARIOS, ids=lambda s: s.name)
    def test_scenario_passes_on_every_profile(self, scenario, profile):
        outcome = run_scenario(scenario, profile, seed=5)
        assert outcome.passed, (outcome.observed, outcome.expected_defense)
        assert not outcome.leaked

    def test_no_scenario_accepts_faulted_evidence(self, profile):
        for scenario in SCENARIOS:
            outcome = run_scenario(scenario, profile, seed=6)
            assert outcome.observed != "undetected"


class TestMatrix:
    def test_full_matrix_shape_and_result(self):
        report = run_matrix(list(PlatformProfile), seed=9)
        assert len(report.outcomes) == 27
        assert report.all_passed
        parsed = json.loads(report.to_json())
        assert parsed["total"] == 27 and parsed["passed"] == 27

    def test_reproducible_bytes_under_fixed_seed(self):
        first = run_matrix(list(PlatformProfile), seed=123)
        second = run_matrix(list(PlatformProfile), seed=123)
        assert first.to_json() == second.to_json()
        assert first.to_text() == second.to_text()

    def test_empty_profile_list(self):
        report = run_matrix([], seed=1)
        assert report.outcomes == ()
        assert report.all_passed  # vacuously

    def test_wrong_expectation_fails_exactly_one_cell(self):
        sabotaged = dataclasses.replace(SCENARIOS[1], expected_defense="BadChain")
        outcomes = [
            run_scenario(s, PlatformProfile.VM_TDX, seed=2)
            for s in (sabotaged,) + SCENARIOS[2:]
        ]
        failing = [o for o in outcomes if not o.passed]
        assert len(failing) == 1
        assert failing[0].scenario == sabotaged.name

    def test_text_table_lists_all_cells(self):
        report = run_matrix([PlatformProfile.VM_SEV], seed=3)
        text = report.to_text()
        for scenario in SCENARIOS:
            assert scenario.name in text
        assert "9/9 cells passed" in text
