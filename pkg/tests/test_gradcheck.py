import numpy as np

from uwenhance import tensor as T
from uwenhance.gradcheck import CHECKS, GradResult, check_gradients, relative_error


def test_relative_error_definition():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0, 3.0]), np.array([1.0, 2.0])) == 1.0 / 3.0
    # both tiny: the floor keeps the ratio finite
    assert relative_error(np.array([0.0]), np.array([1e-9])) <= 1e-3


def test_detects_wrong_backward(rng):
    x = T.Tensor(rng.standard_normal(4), requires_grad=True)
    wrong = lambda: T.custom_op(x.data ** 2, (x,), lambda g: (g * x.data,)).sum()  # should be 2x
    assert check_gradients(wrong, {"x": x})["x"][0] > 0.1
    right = lambda: (x * x).sum()
    assert check_gradients(right, {"x": x})["x"][0] < 1e-8


def test_entry_subsampling(rng):
    x = T.Tensor(rng.standard_normal((10, 10)), requires_grad=True)
    err, n = check_gradients(lambda: (x * x * x).sum(), {"x": x}, entries=7, rng=rng)["x"]
    assert n == 7 and err < 1e-6


def test_gradresult_pass_flag():
    assert GradResult("a", 1e-5, 1e-4, 3).passed
    assert not GradResult("a", 1e-3, 1e-4, 3).passed


def test_registry():
    assert set(CHECKS) == {"ops", "layers", "spectral", "scan", "swsa", "block", "loss", "network"}
