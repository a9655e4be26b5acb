import numpy as np
import pytest

from msp_pretrain.exceptions import ContractError
from msp_pretrain.nn import EmaTracker, ParamStore, ema_update


def online(value):
    store = ParamStore()
    store.add("encoder.w", np.full(3, value))
    store.add("head.w", np.full(2, value))
    return store


def test_tracks_only_prefix():
    tracker = EmaTracker.track(online(1.0), 0.9)
    assert list(tracker.shadow) == ["encoder.w"]
    assert not tracker.shadow["encoder.w"].requires_grad


def test_closed_form():
    store = online(0.0)
    tracker = EmaTracker.track(store, 0.9)
    store["encoder.w"].data[:] = 1.0
    for _ in range(5):
        ema_update(tracker, store)
    np.testing.assert_allclose(tracker.shadow["encoder.w"].data, 1 - 0.9**5)


@pytest.mark.parametrize("decay,expected", [(0.0, 4.0), (1.0, 2.0)])
def test_decay_bounds(decay, expected):
    store = online(2.0)
    tracker = EmaTracker.track(store, decay)
    store["encoder.w"].data[:] = 4.0
    ema_update(tracker, store)
    np.testing.assert_array_equal(tracker.shadow["encoder.w"].data, np.full(3, expected))


def test_invalid_decay():
    with pytest.raises(ValueError):
        EmaTracker.track(online(0.0), 1.5)


def test_mismatched_store():
    tracker = EmaTracker.track(online(0.0), 0.5)
    other = ParamStore()
    other.add("encoder.v", np.zeros(3))
    with pytest.raises(ContractError):
        ema_update(tracker, other)
