import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetcs import autodiff as ad
from hetcs.autodiff import Adam, AdamState, Segments, ShapeError, Tensor, adam_step, finite_diff_check


def t(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def test_elementwise_values():
    x = t([0.0, 1.0, -1.0])
    assert np.allclose(ad.elu(x).data, [0.0, 1.0, math.exp(-1) - 1])
    assert ad.leaky_relu(t([-2.0])).data[0] == pytest.approx(-0.4)
    assert ad.sigmoid(t([0.0])).data[0] == 0.5


def test_sigmoid_extremes_are_finite():
    out = ad.sigmoid(t([-800.0, 800.0])).data
    assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0


def test_matmul_value():
    out = ad.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[1.0], [1.0]]))
    assert out.data.ravel().tolist() == [3.0, 7.0]


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))


def test_segment_softmax_examples():
    one = ad.segment_softmax(t([[4.2]]), [0])
    assert one.data[0, 0] == 1.0
    eq = ad.segment_softmax(t([[1.5], [1.5]]), [0, 0])
    assert eq.data.ravel().tolist() == [0.5, 0.5]
    out = ad.segment_softmax(t([[math.log(3)], [0.0]]), [0, 0])
    assert np.allclose(out.data.ravel(), [0.75, 0.25], atol=1e-15)


def test_segment_softmax_large_scores_stable():
    out = ad.segment_softmax(t([[1000.0], [999.0], [-1000.0]]), [0, 0, 1])
    assert np.all(np.isfinite(out.data))
    assert out.data[2, 0] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_segment_softmax_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    ids = np.sort(rng.integers(0, 6, size=int(rng.integers(1, 30))))
    scores = rng.normal(scale=5, size=(ids.size, 3))
    out = ad.segment_softmax(t(scores), ids, 6).data
    sums = np.zeros((6, 3))
    np.add.at(sums, ids, out)
    present = np.unique(ids)
    assert np.allclose(sums[present], 1.0, atol=1e-12)


def test_backward_square():
    x = t([3.0])
    ad.backward(ad.sum(x * x))
    assert x.grad.tolist() == [6.0]


def test_backward_sigmoid_at_zero():
    w = t([[0.0]])
    ad.backward(ad.sum(ad.sigmoid(ad.matmul(w, t([[1.0]], grad=False)))))
    assert w.grad[0, 0] == 0.25


def test_grad_accumulates_on_reuse():
    x = t([2.0])
    ad.backward(ad.sum(x * x + x))
    assert x.grad.tolist() == [5.0]


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        ad.backward(t([1.0, 2.0]) * 2.0)


def test_random_two_layer_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = t(rng.normal(size=(5, 4)), grad=False)
    w1, w2 = t(rng.normal(size=(4, 6))), t(rng.normal(size=(6, 1)))
    ids = np.array([0, 0, 1, 2, 2])

    def loss():
        h = ad.elu(ad.matmul(x, w1))
        a = ad.segment_softmax(ad.leaky_relu(ad.matmul(h, w2)), ids, 3)
        return ad.mean(ad.sigmoid(ad.segment_sum(a * h, ids, 3)))

    assert finite_diff_check(loss, [w1, w2]) < 1e-4


def test_head_aggregate_matches_gather_then_segment_sum():
    rng = np.random.default_rng(1)
    n, e, heads, width = 7, 15, 3, 2
    dst = np.sort(rng.integers(0, n, size=e))
    src = rng.integers(0, n, size=e)
    w = t(rng.random((e, heads)))
    v = t(rng.normal(size=(n, heads * width)))
    seg = Segments.from_ids(dst, n)
    fused = ad.head_aggregate(w, v, seg, src, heads)
    scale = np.repeat(w.data, width, axis=1)
    naive = np.zeros((n, heads * width))
    np.add.at(naive, dst, scale * v.data[src])
    assert np.allclose(fused.data, naive, atol=1e-13)
    err = finite_diff_check(lambda: ad.sum(ad.head_aggregate(w, v, seg, src, heads) * fused.data), [w, v])
    assert err < 1e-7


def test_gather_rows_gradient_scatters():
    x = t(np.arange(6.0).reshape(3, 2))
    ad.backward(ad.sum(ad.gather_rows(x, [0, 0, 2])))
    assert x.grad.tolist() == [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]


def test_finite_diff_linear_and_constant():
    w = t([1.0, -2.0, 0.5])
    c = np.array([0.3, 0.1, -0.7])
    assert finite_diff_check(lambda: ad.sum(w * c), [w]) < 1e-9
    const = t([1.0, 2.0])
    errs = finite_diff_check(lambda: Tensor(np.array(3.0)), {"c": const}, per_tensor=True)
    assert errs == {"c": 0.0}


def test_adam_zero_gradient_no_decay_is_noop():
    p = t([1.0, -1.0])
    before = p.data.copy()
    adam_step({"p": p}, {"p": np.zeros(2)}, AdamState(weight_decay=0.0))
    assert np.array_equal(p.data, before)


def test_adam_first_step_magnitude():
    p = t([0.0])
    adam_step({"p": p}, {"p": np.ones(1)}, AdamState(lr=0.001, weight_decay=0.0))
    assert p.data[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)


def test_adam_decoupled_weight_decay():
    p = t([2.0])
    adam_step({"p": p}, {"p": np.zeros(1)}, AdamState(lr=0.1, weight_decay=0.5))
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adam_symmetric_parameters_stay_equal():
    a, b = t([0.3, 0.7]), t([0.3, 0.7])
    opt = Adam({"a": a, "b": b}, lr=0.01)
    for g in ([1.0, -2.0], [0.5, 0.1]):
        a.grad, b.grad = np.array(g), np.array(g)
        opt.step()
    assert np.array_equal(a.data, b.data)


def test_adam_rejects_non_finite_gradient():
    p = t([1.0])
    with pytest.raises(FloatingPointError, match="'w'"):
        adam_step({"w": p}, {"w": np.array([np.nan])}, AdamState())


def test_ndarray_times_tensor_returns_tensor():
    out = np.array([2.0]) * t([3.0])
    assert isinstance(out, Tensor) and out.data[0] == 6.0
