"""Acceptance battery: every criterion at its stated tolerance and time budget.

Each test prints one PASS/FAIL line (shown even without ``-s``) followed by
the criterion's measured details.
"""

import pytest

from andersonlab.acceptance import TITLES, run_criterion


@pytest.mark.parametrize("number", sorted(TITLES))
def test_criterion(number, capsys):
    res = run_criterion(number, seed=0)
    with capsys.disabled():
        print()
        print(res.line)
        for key, value in res.as_dict()["details"].items():
            print(f"    {key}: {value}")
    assert res.passed, res.line
