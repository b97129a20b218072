"""Shared oracles and fixtures for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from regir import ndgrad as ng


def numeric_grad(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central finite differences of scalar-valued `f` at `x`."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    """Max-norm error of `analytic` relative to the oracle's scale.

    Differences below `atol` count as zero: at an identically-flat point the
    central-difference oracle returns pure cancellation noise (~1e-9), which
    must not read as a relative error against a zero gradient.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if diff <= atol:
        return 0.0
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(diff / scale)


def check_grads(build_loss, params: dict, h: float = 1e-5, tol: float = 1e-6) -> None:
    """Compare autodiff gradients of `build_loss(params)` against finite differences.

    `params` maps names to float64 numpy arrays.  `build_loss` must construct
    fresh tensors from the arrays it is given and return a scalar Tensor.
    """
    with ng.use_dtype(np.float64):
        tensors = {k: ng.Tensor(v.copy(), requires_grad=True, dtype=np.float64)
                   for k, v in params.items()}
        loss = build_loss(tensors)
        ng.backward(loss)
        for name, arr in params.items():
            def f(x, _name=name):
                with ng.use_dtype(np.float64):
                    probe = {k: ng.Tensor(v.copy(), dtype=np.float64)
                             for k, v in params.items()}
                    probe[_name] = ng.Tensor(x, dtype=np.float64)
                    return float(build_loss(probe).values)

            numeric = numeric_grad(f, arr.copy(), h)
            analytic = tensors[name].grad
            assert analytic is not None, f"no gradient for {name}"
            err = rel_error(analytic, numeric)
            assert err <= tol, f"gradient mismatch for {name}: rel error {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
