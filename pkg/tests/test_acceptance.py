"""The twelve acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line with the measured values, visible even
under output capture. Tolerances live in ``susceptlab.verify`` and are not
relaxed here.
"""

import pytest

from susceptlab.verify import CRITERIA


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    res = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()
