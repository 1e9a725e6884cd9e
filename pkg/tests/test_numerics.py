from __future__ import annotations

import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motiongcn import numerics as nx
from motiongcn.errors import DomainError, ShapeError, TapeError
from motiongcn.numerics import Tape, Tensor, backward, check_gradients, no_grad

POINTS = 20
TOL = 1e-4


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, margin, x)


def _weighted(out: Tensor, seed: int) -> Tensor:
    """Contract the op output with fixed random weights so every entry matters."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * Tensor(w)).sum()


# random-point generators, one per case in FUNCS
def _cases():
    return {
        "add": lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))],
        "sub": lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))],
        "mul": lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))],
        "div": lambda r: [r.normal(size=(2, 3)), r.uniform(0.5, 2.0, size=(2, 3))],
        "scalar_mul": lambda r: [r.normal(size=(5,))],
        "matmul": lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 2))],
        "matmul_batched": lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 3))],
        "transpose": lambda r: [r.normal(size=(2, 3, 4))],
        "reshape": lambda r: [r.normal(size=(2, 6))],
        "relu": lambda r: [_away_from_zero(r, (4, 3))],
        "exp": lambda r: [r.normal(size=(3, 3))],
        "log": lambda r: [r.uniform(0.2, 3.0, size=(3, 3))],
        "arccos_clamped": lambda r: [r.uniform(-0.95, 0.95, size=(6,))],
        "clip": lambda r: [r.choice([-1.0, 1.0], size=(6,)) * r.uniform(0.0, 0.4, size=6)
                           + r.choice([0.0, 1.5], size=6)],
        "power": lambda r: [r.uniform(0.3, 2.0, size=(4,))],
        "softmax": lambda r: [r.normal(size=(3, 5))],
        "sum": lambda r: [r.normal(size=(3, 4))],
        "mean": lambda r: [r.normal(size=(3, 4))],
        "max_lastdim": lambda r: [r.normal(size=(3, 5))],
        "concat": lambda r: [r.normal(size=(2, 3)), r.normal(size=(1, 3))],
        "slice": lambda r: [r.normal(size=(4, 5))],
        "broadcast": lambda r: [r.normal(size=(1, 3))],
        "l2_norm": lambda r: [r.normal(size=(3, 4))],
    }


FUNCS = {
    "add": lambda a, b: _weighted(a + b, 1),
    "sub": lambda a, b: _weighted(a - b, 2),
    "mul": lambda a, b: _weighted(a * b, 3),
    "div": lambda a, b: _weighted(nx.div(a, b), 4),
    "scalar_mul": lambda a: _weighted(nx.scalar_mul(a, -2.5), 5),
    "matmul": lambda a, b: _weighted(a @ b, 6),
    "matmul_batched": lambda a, b: _weighted(a @ b, 7),
    "transpose": lambda a: _weighted(nx.transpose(a, (2, 0, 1)), 8),
    "reshape": lambda a: _weighted(nx.reshape(a, (3, 4)), 9),
    "relu": lambda a: _weighted(nx.relu(a), 10),
    "exp": lambda a: _weighted(nx.exp(a), 11),
    "log": lambda a: _weighted(nx.log(a), 12),
    "arccos_clamped": lambda a: _weighted(nx.arccos_clamped(a), 13),
    "clip": lambda a: _weighted(nx.clip(a, -0.5, 1.0), 14),
    "power": lambda a: _weighted(nx.power(a, 2.5), 15),
    "softmax": lambda a: _weighted(nx.softmax(a), 16),
    "sum": lambda a: _weighted(nx.sum_(a, axis=0), 17),
    "mean": lambda a: _weighted(nx.mean(a, axis=1, keepdims=True), 18),
    "max_lastdim": lambda a: _weighted(nx.max_lastdim(a), 19),
    "concat": lambda a, b: _weighted(nx.concat([a, b], axis=0), 20),
    "slice": lambda a: _weighted(nx.slice_(a, (slice(1, 3), slice(None, None, 2))), 21),
    "broadcast": lambda a: _weighted(nx.broadcast(a, (4, 3)), 22),
    "l2_norm": lambda a: _weighted(nx.l2_norm(a), 23),
}


def worst_op_error(name: str) -> float:
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    make = _cases()[name]
    return max(check_gradients(FUNCS[name], make(rng), h=1e-5) for _ in range(POINTS))


@pytest.mark.parametrize("name", sorted(FUNCS))
def test_gradient_matches_central_difference(name):
    assert worst_op_error(name) < TOL


REGISTRY_NAME = {
    "scalar_mul": "scalar-mul",
    "matmul_batched": "matmul",
    "arccos_clamped": "arccos-clamped",
    "power": "pow",
    "softmax": "softmax-lastdim",
    "max_lastdim": "max-lastdim",
    "l2_norm": "l2-norm-lastdim",
}


def test_every_registered_op_has_a_gradient_case():
    covered = {REGISTRY_NAME.get(name, name) for name in FUNCS}
    assert covered == set(nx.OPS)


def test_matmul_identity():
    out = nx.matmul(np.array([[1.0, 2], [3, 4]]), np.eye(2))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax(np.zeros(3)).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_arccos_clamped_value():
    assert nx.arccos_clamped(np.array(1.5)).item() == pytest.approx(np.arccos(1 - 1e-6), abs=0)
    assert round(nx.arccos_clamped(np.array(1.5)).item(), 7) == 0.0014142


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-1e6, 1e6)))
def test_arccos_clamped_finite_with_finite_gradient(x):
    t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        out = nx.arccos_clamped(t).sum()
    g = backward(tape, out, [t])[t]
    assert np.all(np.isfinite(out.data)) and np.all(np.isfinite(g))


@settings(max_examples=200)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)), elements=st.floats(-700, 700)))
def test_softmax_rows_sum_to_one(x):
    s = nx.softmax(x).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_log_rejects_non_positive():
    with pytest.raises(DomainError):
        nx.log(np.array([1.0, 0.0]))


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        nx.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_backward_square():
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape() as tape:
        y = x * x
    assert backward(tape, y, [x])[x] == pytest.approx(6.0)


def test_backward_relu_subgradient():
    x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = nx.relu(x).sum()
    np.testing.assert_array_equal(backward(tape, y, [x])[x], [0.0, 1.0])


def test_untouched_leaf_gets_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = (x * 2.0).sum()
    grads = backward(tape, y, [x, unused])
    np.testing.assert_array_equal(grads[unused], np.zeros((2, 2)))


def test_backward_requires_recorded_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(TapeError):
        backward(tape, y)
    other = Tensor(np.array(1.0))
    with pytest.raises(TapeError):
        backward(tape, other)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        with no_grad():
            _ = (x * x).sum()
    assert len(tape.records) == 0


def test_check_gradients_quadratic():
    x = np.random.default_rng(0).normal(size=7)
    assert check_gradients(lambda t: (t * t).sum(), x, h=1e-5) < 1e-7


def test_check_gradients_constant():
    assert check_gradients(lambda t: Tensor(np.array(4.0)), np.ones(3)) == 0.0


def test_check_gradients_softmax_cross_entropy():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 5))
    onehot = np.eye(5)[rng.integers(0, 5, size=4)]

    def xent(z):
        return -(nx.log(nx.softmax(z)) * Tensor(onehot)).sum()

    assert check_gradients(xent, logits) < 1e-6


def test_check_gradients_rejects_non_scalar():
    with pytest.raises(TapeError):
        check_gradients(lambda t: t * 2.0, np.ones(3))


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        with Tape() as tape:
            out = nx.softmax(nx.relu(a @ b)).sum() + nx.l2_norm(a).mean()
        g = backward(tape, out, [a, b])
        return out.data.tobytes() + g[a].tobytes() + g[b].tobytes()

    assert run() == run()
