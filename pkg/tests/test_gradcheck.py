from __future__ import annotations

import numpy as np
import pytest

import tensor as tn
from alignment import GexiaModel
from gradcheck import check_gradients, gradcheck_config, relative_error, run_pipeline_gradcheck
from tensor import Tensor


def test_relative_error() -> None:
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


def test_quadratic_gradients() -> None:
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    report = check_gradients(lambda: tn.sum(tn.mul(x, x)), [("x", x)])
    assert report.passed
    assert report.max_rel_error < 1e-8
    assert x.data.tolist() == [1.0, -2.0, 3.0]


def test_pipeline_passes() -> None:
    report = run_pipeline_gradcheck(seed=0, eps=1e-5, dtype="f64", iters=3)
    names = [entry.name for entry in report.entries]
    expected = [name for name, _ in GexiaModel.initialize(gradcheck_config()).named_parameters()]
    assert names == expected
    assert len(set(names)) == len(names)
    assert report.passed, [entry.to_row() for entry in report.entries if not entry.passed]
    assert all(0 < entry.checked <= 48 for entry in report.entries)


def test_huge_step_fails() -> None:
    report = run_pipeline_gradcheck(seed=0, eps=1.0, dtype="f64", iters=1)
    assert not report.passed
