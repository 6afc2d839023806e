import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hgperf import autodiff as ad
from hgperf.autodiff import AdamState, SegmentMap, Tensor, grad_check
from hgperf.errors import ShapeError

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((eye @ a).data, a.data)
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


def test_matmul_gradient_tight(rng):
    b = Tensor(rng.normal(size=(4, 3)))
    assert grad_check(lambda a: ad.total(a @ b), rng.normal(size=(5, 4))) < 1e-6


def test_segment_mean_examples():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert ad.segment_mean(x, SegmentMap([0, 1], [0, 0], 1)).data.tolist() == [[2.0, 3.0]]
    one = Tensor([[5.0, -1.0]])
    assert np.array_equal(ad.segment_mean(one, SegmentMap([0], [0], 1)).data, one.data)
    out = ad.segment_mean(x, SegmentMap([0, 1], [1, 1], 2)).data
    assert out[0].tolist() == [0.0, 0.0]
    assert out[1].tolist() == [2.0, 3.0]


def test_segment_mean_backward_scatters_by_count():
    x = Tensor(np.ones((3, 1)), requires_grad=True)
    ad.total(ad.segment_mean(x, SegmentMap([0, 1, 2], [0, 0, 1], 2))).backward()
    assert x.grad[:, 0].tolist() == [0.5, 0.5, 1.0]


def test_segment_mean_bounds():
    with pytest.raises(IndexError):
        ad.segment_mean(Tensor(np.ones((2, 1))), SegmentMap([0, 2], [0, 0], 1))
    with pytest.raises(IndexError):
        SegmentMap([0], [3], 2)


def test_gelu_examples():
    assert ad.gelu(Tensor([[0.0]])).item() == 0.0
    assert ad.gelu(Tensor([[1.0]])).item() == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), rel=1e-14)
    tail = ad.gelu(Tensor([[-10.0]])).item()
    assert tail == pytest.approx(-10 * 0.5 * math.erfc(10 / math.sqrt(2)), rel=1e-10)
    assert abs(tail) < 1e-20


def test_dropout_identities(rng):
    x = Tensor(rng.normal(size=(4, 3)))
    assert ad.dropout(x, 0.0, True, rng) is x
    assert ad.dropout(x, 0.7, False, None) is x


def test_dropout_preserves_expectation():
    out = ad.dropout(Tensor(np.ones((1000, 100))), 0.5, True, np.random.default_rng(0)).data
    assert 0.98 <= out.mean() <= 1.02
    assert set(np.unique(out)) <= {0.0, 2.0}


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_rate_validation(rate):
    with pytest.raises(ValueError):
        ad.dropout(Tensor(np.ones((2, 2))), rate, True, np.random.default_rng(0))


def test_dropout_same_seed_same_mask():
    x = Tensor(np.ones((20, 20)))
    a = ad.dropout(x, 0.3, True, np.random.default_rng(4)).data
    b = ad.dropout(x, 0.3, True, np.random.default_rng(4)).data
    assert np.array_equal(a, b)


def test_l1_examples():
    pred = Tensor([[1.0], [3.0]])
    assert ad.l1_loss(pred, pred.data, [True, True]).item() == 0.0
    assert ad.l1_loss(pred, [[0.0], [0.0]], [True, True]).item() == 2.0
    assert ad.l1_loss(pred, [[0.0], [0.0]], [True, False]).item() == 1.0
    with pytest.raises(ValueError):
        ad.l1_loss(pred, [[0.0], [0.0]], [False, False])


def test_l1_gradient_ignores_masked_rows():
    pred = Tensor([[1.0], [-3.0], [2.0]], requires_grad=True)
    ad.l1_loss(pred, np.zeros((3, 1)), [True, True, False]).backward()
    assert pred.grad[:, 0].tolist() == [0.5, -0.5, 0.0]


def _adam_once(g, lr=0.1):
    p = Tensor([[0.0]], requires_grad=True, name="p")
    p.grad = np.array([[g]])
    ad.adam_step([p], AdamState(), lr)
    return p


def test_adam_examples():
    assert _adam_once(0.0).item() == 0.0
    assert _adam_once(1.0).item() == pytest.approx(-0.1, rel=1e-6)
    assert _adam_once(-1.0).item() == pytest.approx(0.1, rel=1e-6)
    assert _adam_once(1.0).grad is None


def test_adam_matches_closed_form_over_steps(rng):
    grads = rng.normal(size=5)
    p = Tensor([[1.0]], requires_grad=True)
    st_ = AdamState()
    m = v = 0.0
    ref = 1.0
    for t, g in enumerate(grads, start=1):
        p.grad = np.array([[g]])
        ad.adam_step([p], st_, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p.item() == pytest.approx(ref, rel=1e-12)


def test_adam_missing_gradient_names_parameter():
    p = Tensor([[0.0]], requires_grad=True, name="head/bias")
    with pytest.raises(ValueError, match="head/bias"):
        ad.adam_step([p], AdamState(), 0.1)


def test_kaiming_examples():
    w = ad.kaiming_uniform(200, 50, 6, np.random.default_rng(0))
    assert w.data.min() >= -1.0 and w.data.max() <= 1.0
    a = ad.kaiming_uniform(3, 4, 5, np.random.default_rng(1)).data
    b = ad.kaiming_uniform(3, 4, 5, np.random.default_rng(1)).data
    assert np.array_equal(a, b)
    big = ad.kaiming_uniform(1000, 100, 24, np.random.default_rng(2)).data
    assert big.var() == pytest.approx(1 / 12, rel=0.05)
    with pytest.raises(ValueError):
        ad.kaiming_uniform(2, 2, 0, np.random.default_rng(0))


def test_grad_check_examples(rng):
    assert grad_check(lambda x: ad.total(ad.square(x)), [[1.0, 2.0]]) < 1e-7
    target = rng.normal(size=(4, 1))
    point = target + 1.0
    assert grad_check(lambda x: ad.l1_loss(x, target, np.ones(4, bool)), point) < 1e-5
    assert grad_check(lambda x: ad.total(ad.gelu(x)), rng.normal(size=(3, 3))) < 1e-6
    with pytest.raises(ValueError):
        grad_check(lambda x: ad.total(x), [[np.nan]])


def test_gradients_accumulate_over_shared_use():
    x = Tensor([[2.0]], requires_grad=True)
    ad.total(ad.add(x @ x, x)).backward()
    assert x.grad.tolist() == [[5.0]]


def test_data_setter_rejects_shape_change():
    t = Tensor(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        t.data = np.zeros((3, 2))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)), elements=finite))
def test_segment_mean_matches_loop(x):
    n = x.shape[0]
    rng = np.random.default_rng(n)
    seg_ids = rng.integers(0, 3, size=n)
    out = ad.segment_mean(Tensor(x), SegmentMap(np.arange(n), seg_ids, 3)).data
    for s in range(3):
        rows = x[seg_ids == s]
        expected = rows.mean(axis=0) if len(rows) else np.zeros(x.shape[1])
        assert np.allclose(out[s], expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_gelu_matches_erf(x):
    ref = np.vectorize(lambda v: v * 0.5 * (1 + math.erf(v / math.sqrt(2))))(x)
    assert np.allclose(ad.gelu(Tensor(x)).data, ref, rtol=1e-13, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_square_sum_gradient(x):
    t = Tensor(x, requires_grad=True)
    ad.total(ad.square(t)).backward()
    assert np.allclose(t.grad, 2 * x)
