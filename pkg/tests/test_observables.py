import math

import numpy as np
import pytest

from wiplab.errors import RangeError
from wiplab.observables import ObservableSpec, center, integrate_invariant, second_moment


def test_spec_validation():
    with pytest.raises(RangeError):
        ObservableSpec("exp")
    with pytest.raises(RangeError):
        ObservableSpec("power", theta=0.0)
    with pytest.raises(RangeError):
        ObservableSpec("power")


def test_labels_and_holder_exponent():
    assert ObservableSpec("power", theta=0.5).label == "x^0.5"
    assert ObservableSpec("power", theta=0.5).eta == 0.5
    assert ObservableSpec("poly", coeffs=(1, 0, 2)).label == "poly(1,0,2)"
    assert ObservableSpec("cos").eta == 1.0


def test_centering_on_doubling(doubling):
    v = center(ObservableSpec("x"), doubling)
    assert v.mean == pytest.approx(0.5, abs=1e-12)
    assert v(np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-12)
    assert center(ObservableSpec("cos"), doubling).mean == pytest.approx(0.0, abs=1e-12)
    assert center(ObservableSpec("poly", coeffs=(0.0, 0.0, 1.0)), doubling).mean == pytest.approx(1.0 / 3.0)


def test_centering_on_gauss(gauss):
    v = center(ObservableSpec("x"), gauss)
    assert v.mean == pytest.approx(1.0 / math.log(2.0) - 1.0, abs=1e-10)


def test_second_moment(doubling):
    v = center(ObservableSpec("x"), doubling)
    assert second_moment(v, doubling) == pytest.approx(1.0 / 12.0, abs=1e-12)
    assert second_moment(ObservableSpec("zero"), doubling) == 0.0


def test_lsv_centering_uses_the_ulam_measure(lsv):
    v = center(ObservableSpec("x"), lsv)
    assert 0.0 < v.mean < 0.5
    assert integrate_invariant(lsv, v) == pytest.approx(0.0, abs=1e-10)
