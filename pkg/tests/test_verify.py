import numpy as np
import pytest

from asmlp import verify
from asmlp.tensor import Tensor


def test_shift_grid_size():
    assert len(verify.shift_grid()) == 5 * 2 * 4 * 4


@pytest.mark.parametrize("impl", ["composed", "kernel"])
def test_oracle_cases_sample(impl):
    for s, d, mode, C in verify.shift_grid()[::17]:
        assert verify.oracle_case(s, d, mode, C, seed=3, impl=impl) is None


def test_gradcheck_detects_a_wrong_backward():
    from asmlp.tensor import make_result

    def bad_square(x):
        return make_result(x.data**2, (x,), lambda g: (g * x.data,), "bad_square")  # missing factor 2

    x = Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True, dtype=np.float64)
    assert verify.gradcheck(lambda: bad_square(x).sum(), [x]) > 0.1
    assert verify.gradcheck(lambda: (x * x).sum(), [x]) < 1e-8


def test_unit_law_triples_are_reproducible():
    assert verify.unit_law_triples(4) == verify.unit_law_triples(4)
    assert len(verify.unit_law_triples(4)) == 10


def test_rfield_suite_passes():
    report = verify.run_rfield_suite(seed=0)
    assert report.ok, "\n".join(report.lines())


def test_run_suite_rejects_unknown():
    with pytest.raises(ValueError):
        verify.run_suite("nope")


def test_report_lines_end_with_summary():
    r = verify.SuiteReport("x", [verify.Check("a", True), verify.Check("b", False, "why")])
    assert not r.ok
    assert r.lines()[-1] == "x: 1/2 passed" and "[FAIL] b: why" in r.lines()[1]
