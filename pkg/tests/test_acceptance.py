"""Acceptance criteria at desk scale, one PASS/FAIL line per criterion.

Runtime budgets are asserted alongside the numerical tolerances.  Criterion 4
reuses the ensembles cached by criterion 3, so its budget covers both.
"""

import time

import pytest

from sns.verification import CHECKS, run_checks

BUDGET_SECONDS = {
    "mass": 10,
    "energy": 60,
    "ito": 600,
    "bd": 600,
    "mv": 600,
    "weak": 120,
    "increments": 600,
    "bounds": 900,
    "stability": 1200,
    "oracles": 600,
}


@pytest.mark.parametrize("key", list(CHECKS))
def test_criterion(key, capsys):
    result = CHECKS[key]("desk")
    within = result.seconds <= BUDGET_SECONDS[key]
    with capsys.disabled():
        budget = "" if within else f" [over {BUDGET_SECONDS[key]}s budget]"
        print(f"\n{result.line()}{budget}")
    assert result.passed, result.detail
    assert within, f"{result.seconds:.1f}s exceeds {BUDGET_SECONDS[key]}s"


def test_smoke_suite_under_a_minute(capsys):
    from sns import verification

    # start from cold caches so the timing covers the whole suite
    for fn in (verification._deterministic_refinement, verification._ito_ensemble,
               verification._ito_refinement):
        fn.cache_clear()
    t0 = time.perf_counter()
    results = run_checks("smoke")
    elapsed = time.perf_counter() - t0
    with capsys.disabled():
        print(f"\n[{'PASS' if all(r.passed for r in results) and elapsed < 60 else 'FAIL'}] "
              f"smoke suite: {sum(r.passed for r in results)}/{len(results)} checks in {elapsed:.1f}s")
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
    assert elapsed < 60
