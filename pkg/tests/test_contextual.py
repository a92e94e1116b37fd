import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from agisnet.contextual import contextual_similarity, cosine_distance

from .oracles import cx_bruteforce


def _t(a):
    return torch.as_tensor(np.asarray(a), dtype=torch.float64)


def test_single_vector_sets_give_one():
    x = _t([[0.3, -1.0, 2.0]])
    y = _t([[5.0, 0.1, 0.0]])
    assert contextual_similarity(x, y).item() == 1.0


def test_self_similarity_close_to_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = _t(rng.normal(size=(rng.integers(2, 9), 16)))
        assert contextual_similarity(x, x).item() >= 0.99


@pytest.mark.parametrize("seed", range(10))
def test_matches_bruteforce_small(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    assert contextual_similarity(_t(X), _t(Y)).item() == pytest.approx(cx_bruteforce(X.tolist(), Y.tolist()), abs=1e-6)


def test_zero_vector_is_orthogonal():
    x = _t([[0.0, 0.0], [1.0, 0.0]])
    y = _t([[1.0, 0.0], [0.0, 1.0]])
    d = cosine_distance(x, y)
    assert torch.equal(d[0], torch.ones(2, dtype=torch.float64))
    assert contextual_similarity(x, y).item() == pytest.approx(cx_bruteforce(x.tolist(), y.tolist()), abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        contextual_similarity(torch.ones(2, 3), torch.ones(2, 4))


def test_batched_equals_unbatched():
    rng = np.random.default_rng(5)
    x, y = _t(rng.normal(size=(3, 6, 5))), _t(rng.normal(size=(3, 7, 5)))
    batched = contextual_similarity(x, y)
    for b in range(3):
        assert batched[b].item() == pytest.approx(contextual_similarity(x[b], y[b]).item(), abs=1e-14)


vec_sets = st.integers(1, 8).flatmap(
    lambda n: st.lists(
        st.lists(st.integers(-40, 40).map(lambda v: v / 4), min_size=4, max_size=4),
        min_size=n,
        max_size=n,
    )
)


@settings(max_examples=60, deadline=None)
@given(X=vec_sets, Y=vec_sets, seed=st.integers(0, 1000))
def test_properties(X, Y, seed):
    x, y = _t(X), _t(Y)
    cx = contextual_similarity(x, y).item()
    assert 0 < cx <= 1 + 1e-12
    assert cx == pytest.approx(cx_bruteforce(X, Y), abs=1e-9)
    rng = np.random.default_rng(seed)
    px = x[torch.as_tensor(rng.permutation(len(X)))]
    py = y[torch.as_tensor(rng.permutation(len(Y)))]
    assert abs(contextual_similarity(px, py).item() - cx) <= 1e-12
