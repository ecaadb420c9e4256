"""Tensor/tape core: op semantics, backward rules, stop-gradient, softmax."""

import numpy as np
import pytest

from racoln import autodiff as ad
from racoln.errors import DegenerateInput, InvalidArgument


def test_square_grad():
    x = ad.Tensor(3.0, requires_grad=True)
    with ad.Tape() as tape:
        y = ad.square(x)
    ad.backward(tape, y)
    assert x.grad == pytest.approx(6.0)


def test_tanh_grad_at_zero():
    x = ad.Tensor(0.0, requires_grad=True)
    with ad.Tape() as tape:
        y = ad.tanh(x)
    ad.backward(tape, y)
    assert x.grad == pytest.approx(1.0)


def test_backward_requires_scalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with ad.Tape() as tape:
        y = ad.square(x)
    with pytest.raises(InvalidArgument):
        ad.backward(tape, y)


def test_backward_accumulates_until_reset():
    x = ad.Tensor(3.0, requires_grad=True)
    with ad.Tape() as tape:
        y = ad.square(x)
    ad.backward(tape, y)
    ad.backward(tape, y)
    assert x.grad == pytest.approx(12.0)
    x.zero_grad()
    ad.backward(tape, y)
    assert x.grad == pytest.approx(6.0)


def test_detach_values_pass_gradients_do_not():
    x = ad.Tensor(2.0, requires_grad=True)
    w = ad.Tensor(5.0, requires_grad=True)
    with ad.Tape() as tape:
        d = ad.detach(x)
        loss = ad.mul(d, w)
    assert d.data == pytest.approx(2.0)
    ad.backward(tape, loss)
    assert x.grad == pytest.approx(0.0)
    assert w.grad == pytest.approx(2.0)


def test_shared_subexpression_grad():
    # y = x*x + x -> dy/dx = 2x + 1
    x = ad.Tensor(4.0, requires_grad=True)
    with ad.Tape() as tape:
        y = ad.add(ad.mul(x, x), x)
    ad.backward(tape, y)
    assert x.grad == pytest.approx(9.0)


def test_nonfinite_raises():
    with pytest.raises(InvalidArgument):
        ad.Tensor([1.0, np.inf])
    x = ad.Tensor([-1.0])
    with pytest.raises(InvalidArgument):
        ad.log(x)


def test_no_grad_suppresses_recording():
    x = ad.Tensor(2.0, requires_grad=True)
    with ad.Tape() as tape:
        with ad.no_grad():
            y = ad.square(x)
        z = ad.mul(x, 3.0)
    assert not y.requires_grad
    ad.backward(tape, z)
    assert x.grad == pytest.approx(3.0)


class TestSoftmaxTemp:
    def test_symmetry(self):
        out = ad.softmax_temp(ad.Tensor([0.0, 0.0]), 1.0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_high_temperature_flattens(self):
        out = ad.softmax_temp(ad.Tensor([1.0, 3.0]), 1e6)
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-5)

    def test_closed_form(self):
        out = ad.softmax_temp(ad.Tensor([1.0, 2.0]), 1.0)
        e = np.e
        np.testing.assert_allclose(out.data, [1 / (1 + e), e / (1 + e)], rtol=1e-12)

    def test_mask_zeroes_and_renormalizes(self):
        mask = np.array([True, False, True, True])
        out = ad.softmax_temp(ad.Tensor([1.0, 99.0, 1.0, 1.0]), 1.0, mask=mask)
        assert out.data[1] == 0.0
        assert out.data.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_bad_temperature(self):
        with pytest.raises(InvalidArgument):
            ad.softmax_temp(ad.Tensor([1.0, 2.0]), 0.0)

    def test_rejects_fully_masked(self):
        with pytest.raises(DegenerateInput):
            ad.softmax_temp(ad.Tensor([[1.0, 2.0]]), 1.0,
                            mask=np.array([[False, False]]))

    def test_probability_vector_property(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 9))
            logits = ad.Tensor(rng.normal(scale=5.0, size=n))
            mask = rng.random(n) < 0.7
            if not mask.any():
                mask[int(rng.integers(n))] = True
            out = ad.softmax_temp(logits, float(rng.uniform(0.1, 10)), mask=mask).data
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert out.sum() == pytest.approx(1.0, abs=1e-12)


def _rand_tensor(rng, shape, grad=True):
    return ad.Tensor(rng.normal(size=shape), requires_grad=grad)


@pytest.mark.parametrize("seed", range(12))
def test_elementwise_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = _rand_tensor(rng, (3, 4))
    b = _rand_tensor(rng, (3, 4))
    c = _rand_tensor(rng, (4,))  # broadcast operand

    def f():
        x = ad.add(ad.mul(a, b), c)
        x = ad.sub(ad.tanh(x), ad.sigmoid(b))
        x = ad.div(x, ad.add(ad.square(a), 2.0))
        x = ad.mul(x, ad.exp(ad.mul(a, 0.1)))
        x = ad.add(x, ad.sqrt(ad.add(ad.square(b), 1.0)))
        x = ad.add(x, ad.log(ad.add(ad.square(c), 0.5)))
        return ad.reduce_mean(ad.reduce_sum(x, axis=1))

    assert ad.gradient_check(f, [a, b, c]) < 1e-4


@pytest.mark.parametrize("seed", range(12))
def test_structural_ops_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    a = _rand_tensor(rng, (2, 3, 4))
    b = _rand_tensor(rng, (2, 3, 4))
    table = _rand_tensor(rng, (6, 4))
    ids = rng.integers(0, 6, size=(2, 3))
    picks = rng.integers(0, 4, size=(2, 3))

    def f():
        x = ad.concat([a, b], axis=-1)
        x = ad.reshape(x, (6, 8))
        y = ad.stack([ad.select(a, t, axis=1) for t in range(3)], axis=1)
        z = ad.embedding_rows(table, ids)
        mixed = ad.add(y, z)
        picked = ad.gather_last(ad.reduce_sum(mixed, axis=1), picks[:, 0])
        return ad.add(ad.reduce_mean(ad.square(x)), ad.reduce_sum(picked))

    assert ad.gradient_check(f, [a, b, table]) < 1e-4


@pytest.mark.parametrize("seed", range(12))
def test_softmax_family_matches_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    logits = _rand_tensor(rng, (3, 5))
    mask = rng.random((3, 5)) < 0.8
    mask[np.arange(3), rng.integers(0, 5, 3)] = True
    targets = rng.integers(0, 5, size=3)
    tau = float(rng.uniform(0.2, 3.0))

    def f():
        p = ad.softmax_temp(logits, tau, mask=mask)
        lp = ad.log_softmax(ad.mul(logits, 0.7))
        picked = ad.gather_last(lp, targets)
        return ad.add(ad.reduce_sum(ad.square(p)), ad.reduce_mean(picked))

    assert ad.gradient_check(f, [logits]) < 1e-4


def test_matmul_grad_matches_finite_differences():
    rng = np.random.default_rng(7)
    a = _rand_tensor(rng, (3, 4))
    w = _rand_tensor(rng, (4, 2))

    def f():
        return ad.reduce_sum(ad.square(ad.matmul(a, w)))

    assert ad.gradient_check(f, [a, w]) < 1e-4
