import numpy as np
import pytest

from msp_pretrain.exceptions import ContractError
from msp_pretrain.nn import ParamInit, ParamStore
from msp_pretrain.utils import derive_rng


def make(seed=0):
    store = ParamStore()
    init = ParamInit(store, derive_rng(seed))
    init.linear("enc.proj", 3, 4)
    init.layer_norm("head.ln", 4)
    return store


def test_names_sorted_and_shapes():
    store = make()
    assert list(store) == ["enc.proj.bias", "enc.proj.weight", "head.ln.bias", "head.ln.gain"]
    assert store.shapes()["enc.proj.weight"] == (3, 4)
    assert store.n_values == 4 + 12 + 4 + 4
    np.testing.assert_array_equal(store["head.ln.gain"].data, np.ones(4))


def test_duplicate_and_missing_names():
    store = make()
    with pytest.raises(ContractError):
        store.add("enc.proj.bias", np.zeros(4))
    with pytest.raises(KeyError):
        store["nope"]


def test_subset_shares_tensors():
    store = make()
    sub = store.subset("enc.")
    assert list(sub) == ["enc.proj.bias", "enc.proj.weight"]
    assert sub["enc.proj.weight"] is store["enc.proj.weight"]


def test_copy_is_deep():
    store = make()
    clone = store.copy(requires_grad=False, dtype=np.float32)
    assert clone["enc.proj.weight"].dtype == np.float32
    assert not clone["enc.proj.weight"].requires_grad
    clone["enc.proj.bias"].data[:] = 5.0
    assert store["enc.proj.bias"].data.sum() == 0.0


def test_checksum():
    assert make(0).checksum() == make(0).checksum()
    assert make(0).checksum() != make(1).checksum()
    store = make(0)
    before = store.checksum()
    store.zero_grad()
    assert store.checksum() == before
