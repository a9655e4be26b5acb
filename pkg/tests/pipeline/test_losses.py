import math

import numpy as np
import pytest

from msp_pretrain.autodiff import Tensor, grad_check
from msp_pretrain.exceptions import DegenerateTargetError, ShapeError
from msp_pretrain.pipeline.losses import (
    loss_chamfer,
    loss_color,
    loss_dsf,
    loss_sc,
    softmax_cross_entropy,
)


def tracked(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def test_bce_at_zero_logits():
    y = np.array([[0, 1, 1], [1, 0, 0]])
    assert loss_sc(Tensor(np.zeros((2, 3))), y).item() == pytest.approx(math.log(2.0))


def test_bce_large_logits_stay_finite():
    z = Tensor(np.array([[800.0, -800.0]]))
    assert loss_sc(z, np.array([[1, 0]])).item() == pytest.approx(0.0)
    assert loss_sc(z, np.array([[0, 1]])).item() == pytest.approx(800.0)


def test_cosine_values():
    v = np.array([[1.0, 2.0, 2.0], [0.0, 3.0, 4.0]])
    assert loss_dsf(Tensor(v.copy()), v).item() == pytest.approx(0.0, abs=1e-12)
    assert loss_dsf(Tensor(-v), v).item() == pytest.approx(2.0)
    assert loss_dsf(Tensor(3.0 * v), v).item() == pytest.approx(0.0, abs=1e-12)
    orth = np.array([[1.0, 0.0, 0.0]])
    assert loss_dsf(Tensor([[0.0, 1.0, 0.0]]), orth).item() == pytest.approx(1.0)


def test_cosine_skips_zero_rows():
    target = np.array([[1.0, 0.0], [0.0, 0.0]])
    pred = tracked([[1.0, 0.0], [5.0, 5.0]])
    assert loss_dsf(pred, target).item() == pytest.approx(0.0)
    with pytest.raises(DegenerateTargetError):
        loss_dsf(tracked([[1.0, 1.0]]), np.zeros((1, 2)))


def test_mse():
    loss = loss_color(Tensor([[0.0, 0.5, 1.0]]), np.array([[1.0, 0.5, 0.0]]))
    assert loss.item() == pytest.approx(2.0 / 3.0)


def test_chamfer_values():
    pts = np.array([[0.0, 0.0, 0.1], [0.1, 0.0, 0.0]])
    assert loss_chamfer(Tensor(pts[None].copy()), [pts]).item() == pytest.approx(0.0)
    shifted = loss_chamfer(Tensor(pts[None] + [0.0, 0.0, 0.1]), [pts]).item()
    assert shifted > 0.0
    single = loss_chamfer(Tensor([[[0.0, 0.0, 0.0]]]), [np.array([[0.0, 0.0, 0.2]])]).item()
    assert single == pytest.approx(2 * 0.04)


def test_chamfer_skips_empty_sets():
    pred = Tensor(np.zeros((2, 1, 3)))
    loss = loss_chamfer(pred, [np.zeros((0, 3)), np.array([[0.0, 0.0, 0.1]])])
    assert loss.item() == pytest.approx(0.02)
    with pytest.raises(DegenerateTargetError):
        loss_chamfer(Tensor(np.zeros((1, 2, 3))), [np.zeros((0, 3))])


def test_cross_entropy():
    assert softmax_cross_entropy(Tensor(np.zeros((2, 4))), np.array([0, 3])).item() == pytest.approx(
        math.log(4.0)
    )
    confident = Tensor(np.array([[50.0, 0.0], [0.0, 50.0]]))
    assert softmax_cross_entropy(confident, np.array([0, 1])).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "fn,pred_shape,target",
    [
        (loss_sc, (2, 3), np.zeros((3, 2))),
        (loss_dsf, (2, 3), np.ones((2, 4))),
        (loss_color, (2, 3), np.zeros((2, 4))),
    ],
)
def test_shape_mismatch(fn, pred_shape, target):
    with pytest.raises(ShapeError):
        fn(Tensor(np.ones(pred_shape)), target)


def test_gradients(msp_rng):
    bits = (msp_rng.uniform(size=(4, 6)) < 0.5).astype(float)
    assert grad_check(lambda z: loss_sc(z, bits), [tracked(msp_rng.normal(size=(4, 6)))]).passed
    target = msp_rng.normal(size=(4, 6))
    assert grad_check(lambda p: loss_dsf(p, target), [tracked(msp_rng.normal(size=(4, 6)))]).passed
    assert grad_check(lambda p: loss_color(p, target), [tracked(msp_rng.normal(size=(4, 6)))]).passed
    sets = [msp_rng.uniform(-0.2, 0.2, size=(n, 3)) for n in (2, 6, 3)]
    offsets = tracked(msp_rng.uniform(-0.2, 0.2, size=(3, 4, 3)))
    assert grad_check(lambda p: loss_chamfer(p, sets), [offsets]).passed
    labels = np.array([2, 0, 1, 1])
    assert grad_check(lambda z: softmax_cross_entropy(z, labels), [tracked(msp_rng.normal(size=(4, 3)))]).passed
