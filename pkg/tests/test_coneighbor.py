import numpy as np
import pytest
from conftest import random_stochastic
from hypothesis import given, settings
from hypothesis import strategies as st

from camdiffuse.cam import AttentionMatrix
from camdiffuse.coneighbor import (
    RefinedAttention,
    jaccard,
    jaccard_similarity_form,
    load_refined,
    refine,
    save_refined,
    similarity,
    topk_mask,
)
from camdiffuse.errors import (
    GridMismatch,
    InvalidAttention,
    KOutOfRange,
    NonFiniteInput,
    ShapeMismatch,
)
from camdiffuse.synth import dense_oracle_refine, dense_oracle_similarity


def stochastic(seed, n, density=1.0):
    return random_stochastic(np.random.default_rng(seed), n, density)


def test_identity_and_uniform():
    assert np.array_equal(similarity(np.eye(5)), np.eye(5))
    assert np.allclose(similarity(np.full((6, 6), 1 / 6)), 1.0, atol=1e-15)


def test_half_overlap_instance():
    # two uniform rows over {0, 1} and {1, 2}: one shared neighbor of two
    a = np.zeros((4, 4))
    a[0, [0, 1]] = 0.5
    a[1, [1, 2]] = 0.5
    a[2:, :] = 0.25
    s = similarity(a)
    assert s[0, 1] == pytest.approx(0.5, abs=1e-15)
    assert jaccard_similarity_form(jaccard({0, 1}, {1, 2})) == pytest.approx(0.5)


@pytest.mark.parametrize("n, block", [(9, 256), (64, 256), (300, 256), (70, 16), (33, 7)])
def test_matches_oracle_and_blocking(n, block):
    a = stochastic(n, n)
    s = similarity(a, block=block)
    assert np.array_equal(s, s.T)
    if n <= 64:
        assert np.abs(s - np.array(dense_oracle_similarity(a))).max() < 1e-12
    assert np.allclose(s, similarity(a, block=n), atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 24), st.integers(0, 2**31), st.floats(0.1, 1.0))
def test_similarity_properties(n, seed, density):
    a = stochastic(seed, n, density)
    s = similarity(a)
    assert np.array_equal(s, s.T)
    assert s.min() >= 0.0 and s.max() <= 1.0
    assert np.allclose(np.diag(s), 1.0, atol=1e-12)
    # 1 - S_ij is half the squared distance of the sqrt rows, so S_ij = 1 iff rows match
    root = np.sqrt(a)
    dist = 0.5 * ((root[:, None, :] - root[None, :, :]) ** 2).sum(axis=2)
    assert np.allclose(1.0 - s, dist, atol=1e-12)


def test_duplicate_rows_have_unit_similarity():
    a = stochastic(5, 8)
    a[3] = a[6]
    s = similarity(a)
    assert s[3, 6] == pytest.approx(1.0, abs=1e-12)
    off = s[~np.eye(8, dtype=bool)]
    assert (off < 1 - 1e-6).sum() == off.size - 2


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.data())
def test_uniform_rows_follow_jaccard_form(ns, data):
    c = data.draw(st.integers(0, ns))
    n = 2 * ns + 2
    a = np.full((n, n), 1.0 / n)
    a[0] = 0.0
    a[1] = 0.0
    a[0, :ns] = 1.0 / ns
    a[1, ns - c : 2 * ns - c] = 1.0 / ns
    s = similarity(a)
    j = jaccard(range(ns), range(ns - c, 2 * ns - c))
    assert abs(s[0, 1] - jaccard_similarity_form(j)) < 1e-12


def test_similarity_errors():
    with pytest.raises(ShapeMismatch):
        similarity(np.ones((2, 3)))
    with pytest.raises(InvalidAttention):
        similarity(-np.eye(2))
    with pytest.raises(NonFiniteInput):
        similarity(np.full((2, 2), np.nan))


def test_topk_ties_prefer_lower_columns():
    s = np.array([[0.5, 0.9, 0.5, 0.5, 0.1]])
    assert topk_mask(s, 2).tolist() == [[True, True, False, False, False]]
    assert topk_mask(s, 3).tolist() == [[True, True, True, False, False]]


def test_refine_handworked_case():
    a = np.array([[0.4, 0.3, 0.2, 0.1], [0.1, 0.4, 0.3, 0.2], [0.25, 0.25, 0.25, 0.25], [0.0, 0.0, 0.5, 0.5]])
    s = np.array([[1.0, 0.9, 0.2, 0.9], [0.9, 1.0, 0.5, 0.1], [0.2, 0.5, 1.0, 0.5], [0.9, 0.1, 0.5, 1.0]])
    got = refine(a, s, 2, grid=(2, 2))
    expect = np.array([[4 / 7, 3 / 7, 0, 0], [0.2, 0.8, 0, 0], [0, 0.5, 0.5, 0], [0, 0, 0, 1.0]])
    assert np.allclose(got.to_dense(), expect, atol=1e-15)
    assert got.indptr.tolist() == [0, 2, 4, 6, 7]
    assert got.grid == (2, 2)


def test_refine_identity():
    r = refine(np.eye(6), similarity(np.eye(6)), 3)
    assert np.array_equal(r.to_dense(), np.eye(6))
    assert r.nnz == 6


def test_refine_uniform_full_k():
    a = np.full((5, 5), 0.2)
    assert np.allclose(refine(a, similarity(a), 5).to_dense(), 0.2, atol=1e-15)
    # all-tied similarity keeps the lowest columns
    r = refine(a, similarity(a), 2).to_dense()
    assert np.allclose(r[:, :2], 0.5) and not r[:, 2:].any()


def test_degenerate_row_becomes_self_loop():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    r = refine(a, similarity(a), 1)
    assert np.array_equal(r.to_dense(), np.eye(2))


@pytest.mark.parametrize("k", [0, 5, 2.5, "3"])
def test_k_out_of_range(k):
    with pytest.raises(KOutOfRange):
        refine(np.eye(4), np.eye(4), k)


def test_refine_errors():
    with pytest.raises(ShapeMismatch):
        refine(np.eye(4), np.eye(3), 1)
    with pytest.raises(GridMismatch):
        refine(np.eye(4), np.eye(4), 1, grid=(3, 3))
    with pytest.raises(NonFiniteInput):
        refine(np.full((2, 2), np.nan), np.eye(2), 1)


def test_refine_keeps_attention_grid():
    a = AttentionMatrix(np.full((6, 6), 1 / 6), (2, 3))
    assert refine(a, similarity(a), 2).grid == (2, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**31), st.floats(0.1, 1.0), st.data())
def test_refine_matches_oracle(n, seed, density, data):
    k = data.draw(st.integers(1, n))
    a = stochastic(seed, n, density)
    s = similarity(a)
    r = refine(a, s, k, block=data.draw(st.sampled_from([3, 256])))
    dense = r.to_dense()
    assert np.abs(dense - np.array(dense_oracle_refine(a, s, k))).max() < 1e-12
    assert np.allclose(dense.sum(axis=1), 1.0, atol=1e-12)
    assert (np.diff(r.indptr) <= k).all()
    for i in range(n):
        cols, _ = r.row(i)
        assert (np.diff(cols) > 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**31), st.data())
def test_refine_permutation_equivariant(n, seed, data):
    k = data.draw(st.integers(1, n))
    a = stochastic(seed, n)
    s = similarity(a)
    perm = np.random.default_rng(seed + 1).permutation(n)
    base = refine(a, s, k).to_dense()
    moved = refine(a[perm][:, perm], s[perm][:, perm], k).to_dense()
    assert np.allclose(moved, base[perm][:, perm], atol=1e-15)


def test_csr_roundtrip(tmp_path):
    a = stochastic(2, 12, 0.5)
    r = refine(a, similarity(a), 4, grid=(3, 4))
    meta = save_refined(r, tmp_path / "refined", k=4)
    back = load_refined(meta)
    assert back.grid == (3, 4)
    assert np.array_equal(back.indptr, r.indptr) and np.array_equal(back.indices, r.indices)
    assert np.allclose(back.data, r.data, atol=1e-7)


def test_from_dense_drops_zeros():
    r = RefinedAttention.from_dense(np.array([[0.0, 1.0], [0.5, 0.5]]))
    assert r.nnz == 3 and r.grid == (1, 2)
