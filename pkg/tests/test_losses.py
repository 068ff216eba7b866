import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from camboost.errors import DataError, DimensionError
from camboost.losses import (LabelVector, NoiseDecomposition, an_loss, bce_neg, bce_pos,
                             full_loss, gradient_gap, logit_grad)
from camboost.tensor import Tensor

LN2 = math.log(2.0)


def test_bce_at_zero():
    assert bce_pos(0.0) == pytest.approx(LN2, abs=1e-15)
    assert bce_neg(0.0) == pytest.approx(LN2, abs=1e-15)


@given(st.floats(-700, 700))
def test_bce_symmetry(g):
    assert bce_pos(g) == pytest.approx(bce_neg(-g), abs=1e-12)


@given(st.floats(-500, 500))
def test_bce_finite(g):
    assert math.isfinite(bce_pos(g)) and math.isfinite(bce_neg(g))


def test_an_loss_example():
    loss = an_loss(Tensor([0.0, 0.0]), LabelVector((1, -1)))
    assert loss.item() == pytest.approx(LN2, abs=1e-15)


def test_an_equals_full_when_observed(rng):
    full = rng.integers(0, 2, size=7)
    g = rng.normal(size=7)
    assert an_loss(Tensor(g), LabelVector.from_full(full)).item() == pytest.approx(
        full_loss(Tensor(g), full).item(), abs=1e-15)


def test_an_loss_term_oracle(rng):
    g = rng.normal(size=8) * 3
    states = rng.choice([1, 0, -1], size=8)
    expected = sum(-math.log(1 / (1 + math.exp(-gi))) if s == 1 else -math.log(1 - 1 / (1 + math.exp(-gi)))
                   for gi, s in zip(g, states)) / 8
    assert an_loss(Tensor(g), LabelVector(tuple(states))).item() == pytest.approx(expected, abs=1e-12)


def test_full_loss_examples(rng):
    assert full_loss(Tensor(np.zeros(5)), np.ones(5)).item() == pytest.approx(LN2, abs=1e-15)
    g = rng.normal(size=6)
    y = rng.integers(0, 2, size=6)
    expected = np.mean([bce_pos(a) if b else bce_neg(a) for a, b in zip(g, y)])
    assert full_loss(Tensor(g), y).item() == pytest.approx(expected, abs=1e-12)


def test_zero_classes():
    with pytest.raises(DimensionError):
        an_loss(Tensor(np.zeros(0)), LabelVector(()))


def test_batched_loss_is_mean_of_samples(rng):
    g = rng.normal(size=(3, 4))
    states = rng.choice([1, -1], size=(3, 4))
    batch = an_loss(Tensor(g), states).item()
    per = [an_loss(Tensor(g[i]), LabelVector(tuple(states[i]))).item() for i in range(3)]
    assert batch == pytest.approx(np.mean(per), abs=1e-14)


@given(st.permutations(range(6)))
def test_an_loss_permutation_invariant(perm):
    g = np.linspace(-2, 3, 6)
    states = np.array([1, -1, 0, -1, 1, -1])
    p = list(perm)
    a = an_loss(Tensor(g), LabelVector(tuple(states))).item()
    b = an_loss(Tensor(g[p]), LabelVector(tuple(states[p]))).item()
    assert a == pytest.approx(b, abs=1e-14)


class TestLogitGrad:
    def test_at_zero(self):
        assert logit_grad(0.0, "positive") == -0.5
        assert logit_grad(0.0, "negative") == 0.5

    @given(st.floats(-40, 40))
    def test_difference_is_one(self, g):
        # the difference is exact whenever sigma(g) - 1 is exact (sigma >= 0.5)
        d = logit_grad(g, "negative") - logit_grad(g, "positive")
        if g >= 0:
            assert d == 1.0
        else:
            assert d == pytest.approx(1.0, abs=1e-16)


class TestGradientGap:
    def test_example(self):
        partial = LabelVector(tuple([1] + [-1] * 79))
        full = np.zeros(80)
        full[[0, 5, 6, 7]] = 1
        dec = NoiseDecomposition.from_labels(partial, full)
        assert gradient_gap(partial, dec) == pytest.approx(0.0375, abs=1e-15)

    def test_no_false_negatives(self):
        partial = LabelVector((1, 0, -1))
        dec = NoiseDecomposition.from_labels(partial, [1, 0, 0])
        assert gradient_gap(partial, dec) == 0.0

    def test_inconsistent(self):
        partial = LabelVector((1, 0, -1))
        with pytest.raises(DataError):
            gradient_gap(partial, NoiseDecomposition(frozenset({1}), frozenset()))
        with pytest.raises(DataError):
            gradient_gap(partial, NoiseDecomposition(frozenset({1, 2}), frozenset({2})))

    @settings(max_examples=50)
    @given(seed=st.integers(0, 2**30), c=st.sampled_from([4, 20, 80]))
    def test_autodiff_gap(self, seed, c):
        r = np.random.default_rng(seed)
        full = r.integers(0, 2, size=c)
        full[r.integers(c)] = 1
        states = np.where(full == 1, np.where(r.random(c) < 0.4, 1, -1), np.where(r.random(c) < 0.3, 0, -1))
        partial = LabelVector(tuple(states))
        g = r.normal(size=c) * 4
        ga = Tensor(g, True)
        an_loss(ga, partial).backward()
        gf = Tensor(g, True)
        full_loss(gf, full).backward()
        dec = NoiseDecomposition.from_labels(partial, full)
        assert ga.grad.sum() - gf.grad.sum() == pytest.approx(gradient_gap(partial, dec), abs=1e-10)


def test_label_vector_sets():
    lv = LabelVector((1, 0, -1, -1))
    assert lv.positive == {0} and lv.negative == {1} and lv.unannotated == {2, 3}
    assert lv.sparsity() == (2, 2)
    with pytest.raises(DataError):
        LabelVector((2,))
