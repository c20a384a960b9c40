"""Acceptance criteria at desk scale, one test per criterion.

Expensive artifacts are cached in FITPRINT_ACCEPTANCE_CACHE (default
<repo>/.fitprint-cache); a cold cache builds everything and takes a few
hours on one core. Each test prints its criterion line, and the terminal
summary collects all of them.
"""

import os
from pathlib import Path

import pytest

from fitprint import experiments as E

pytestmark = pytest.mark.slow

RESULTS: list[E.CriterionResult] = []


@pytest.fixture(scope="session")
def desk():
    default = Path(__file__).resolve().parents[1] / ".fitprint-cache"
    return E.Desk(E.DeskConfig(cache_dir=os.environ.get("FITPRINT_ACCEPTANCE_CACHE", str(default))))


def _check(result: E.CriterionResult):
    RESULTS.append(result)
    print(result.line())
    assert result.passed, result.line()


def test_criterion_01_threshold_exactness():
    _check(E.criterion_threshold())


def test_criterion_02_autograd_soundness():
    _check(E.criterion_gradcheck())


def test_criterion_03_extraction_fixed_point(desk):
    _check(E.criterion_fixed_point(desk))


def test_criterion_04_effectiveness(desk):
    _check(E.criterion_effectiveness(desk))


def test_criterion_05_untargeted_false_claim(desk):
    _check(E.criterion_untargeted(desk))


def test_criterion_06_adaptive_false_claim(desk):
    _check(E.criterion_adaptive(desk))


def test_criterion_07_removal_attacks(desk):
    _check(E.criterion_removal(desk))


def test_criterion_08_label_only(desk):
    _check(E.criterion_label_only(desk))


def test_criterion_09_lime_solver():
    _check(E.criterion_lime_solver())


def test_criterion_10_lambda_trend(desk):
    _check(E.criterion_lambda(desk))


def test_criterion_11_registry_durability(tmp_path):
    _check(E.criterion_registry(tmp_path))
