"""Acceptance criteria 1-11, each at its stated tolerance and runtime budget.

Every criterion prints one PASS/FAIL line with the measured number.
"""

import pytest

from nestedbec.verification import CHECKS, run_check


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_acceptance_criterion(number, capsys):
    res = run_check(number)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()


def test_kappa_sign_flip_is_caught(capsys):
    res = run_check(1, flip_kappa_sign=True)
    with capsys.disabled():
        print("\n(mutation) " + res.line())
    assert not res.passed
