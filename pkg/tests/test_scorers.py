import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selcal import scorers
from selcal.scorers import (
    jacobi_eigh,
    laplacian_spectrum,
    normalize,
    pe_black,
    pe_white,
    se_black,
    se_white,
    shannon_entropy,
    u_deg,
    u_ecc,
    u_eigv,
)

LN2 = math.log(2)


def block_matrix(sizes):
    n = sum(sizes)
    w = np.zeros((n, n))
    start = 0
    for s in sizes:
        w[start:start + s, start:start + s] = 1.0
        start += s
    return w


def charpoly_roots(a):
    """Eigenvalues from the Faddeev-LeVerrier characteristic polynomial, solved in mpmath."""
    n = a.shape[0]
    a = mpmath.matrix(a.tolist())
    coeffs = [mpmath.mpf(1)]
    mk = mpmath.zeros(n, n)
    eye = mpmath.eye(n)
    for k in range(1, n + 1):
        mk = a * mk + coeffs[-1] * eye
        am = a * mk
        c = -sum(am[i, i] for i in range(n)) / k
        coeffs.append(c)
    roots = mpmath.polyroots(coeffs, maxsteps=200, extraprec=200)
    return sorted(float(mpmath.re(r)) for r in roots)


# -- entropies -----------------------------------------------------------------


@pytest.mark.parametrize("f", [shannon_entropy, pe_white])
def test_entropy_examples(f):
    assert f([0.2] * 5) == pytest.approx(math.log(5), abs=1e-12)
    assert f([0.0, 1.0, 0.0]) == 0.0
    assert f([0.5, 0.25, 0.25]) == pytest.approx(1.5 * LN2, abs=1e-12)


def test_entropy_rejects_bad_vectors():
    for bad in ([], [0.5, 0.6], [-0.1, 1.1], [math.nan, 1.0]):
        with pytest.raises(ValueError):
            shannon_entropy(bad)


def test_pe_black_examples():
    assert pe_black([0, 0, 0, 0], 5) == 0.0
    assert pe_black([0, 1], 2) == pytest.approx(LN2, abs=1e-12)
    assert pe_black([0, 0, 1, 1, 2, 2, 2, 2], 3) == pytest.approx(1.5 * LN2, abs=1e-12)
    with pytest.raises(ValueError):
        pe_black([0, 3], 3)


def test_se_black_examples():
    assert se_black([0, 0, 1, 1]) == pytest.approx(LN2, abs=1e-12)
    assert se_black([3, 3, 3]) == 0.0
    p = np.array([0.6, 0.2, 0.2])
    assert se_black([0, 0, 0, 1, 2]) == pytest.approx(-np.sum(p * np.log(p)), abs=1e-12)


def test_se_white_examples():
    assert se_white([0, 1], [0.3, 0.3]) == pytest.approx(LN2, abs=1e-12)
    assert se_white([0, 0], [0.4, 0.1]) == 0.0
    assert se_white([0, 0, 1], [0.2, 0.2, 0.4]) == pytest.approx(LN2, abs=1e-12)
    with pytest.raises(ValueError):
        se_white([0, 1], [0.5])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=30), st.randoms())
def test_se_black_permutation_and_range(labels, rnd):
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    h = se_black(labels)
    assert se_black(shuffled) == h
    assert 0.0 <= h <= math.log(len(set(labels))) + 1e-12


@given(st.lists(st.integers(0, 5), min_size=1, max_size=25), st.randoms())
def test_pe_black_permutation_and_range(ids, rnd):
    shuffled = list(ids)
    rnd.shuffle(shuffled)
    assert pe_black(shuffled, 6) == pe_black(ids, 6)
    assert 0.0 <= pe_black(ids, 6) <= math.log(6) + 1e-12


# -- similarity graphs ---------------------------------------------------------


def test_normalize_examples():
    np.testing.assert_array_equal(normalize(np.eye(3)), np.eye(3))
    assert normalize([[1.0, 1.2], [1.2, 1.0]])[0, 1] == 1.0
    np.testing.assert_allclose(normalize([[1, 0.4], [0.6, 1]]), [[1, 0.5], [0.5, 1]], atol=1e-15)


def test_normalize_invariants():
    rng = np.random.default_rng(0)
    w = normalize(rng.uniform(-0.5, 1.5, size=(6, 6)))
    assert np.abs(w - w.T).max() <= 1e-12
    assert w.min() >= 0.0 and w.max() <= 1.0
    np.testing.assert_array_equal(np.diag(w), 1.0)


def test_spectrum_examples():
    np.testing.assert_allclose(laplacian_spectrum(np.ones((4, 4))), [0, 1, 1, 1], atol=1e-10)
    np.testing.assert_allclose(laplacian_spectrum(np.eye(3)), [0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(laplacian_spectrum(block_matrix([2, 2])), [0, 0, 1, 1], atol=1e-10)


def test_spectrum_range_on_random_graphs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.integers(1, 9)
        lam = laplacian_spectrum(normalize(rng.random((n, n))))
        assert lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9


def test_u_eigv_examples():
    assert u_eigv(block_matrix([5, 5])) == pytest.approx(2.0, abs=1e-8)
    assert u_eigv(np.ones((6, 6))) == pytest.approx(1.0, abs=1e-8)
    assert u_eigv(np.eye(4)) == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("sizes", [[12], [6, 6], [4, 4, 4], [1, 5, 6], [2, 3]])
def test_u_eigv_counts_blocks(sizes):
    assert u_eigv(block_matrix(sizes)) == pytest.approx(len(sizes), abs=1e-8)


def test_u_deg_examples():
    assert u_deg(np.ones((5, 5))) == 0.0
    assert u_deg(np.eye(2)) == 0.5
    assert u_deg(block_matrix([1, 1])) == 0.5


def test_u_ecc_examples():
    assert u_ecc(np.ones((5, 5))) == pytest.approx(0.0, abs=1e-8)
    assert u_ecc(np.ones((1, 1)), k=1) == 0.0
    w = block_matrix([3, 2])
    value = u_ecc(w)
    assert value > 0.1
    rng = np.random.default_rng(2)
    for _ in range(10):
        p = rng.permutation(5)
        assert u_ecc(w[np.ix_(p, p)]) == pytest.approx(value, abs=1e-8)


def test_u_ecc_rejects_bad_k():
    with pytest.raises(ValueError):
        u_ecc(np.eye(3), k=4)


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n), st.permutations(list(range(n))))))
@settings(max_examples=60, deadline=None)
def test_graph_scores_permutation_invariant(case):
    flat, perm = case
    n = len(perm)
    w = normalize(np.array(flat).reshape(n, n))
    p = np.array(perm)
    wp = w[np.ix_(p, p)]
    assert u_deg(wp) == pytest.approx(u_deg(w), abs=1e-12)
    assert u_eigv(wp) == pytest.approx(u_eigv(w), abs=1e-8)
    assert 0.0 <= u_deg(w) <= 1.0
    assert -1e-12 <= u_eigv(w) <= n + 1e-9


def test_u_ecc_permutation_invariant_on_separated_spectra():
    # random graphs with a clear gap between the kept and dropped eigenvalues
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        n = int(rng.integers(3, 8))
        w = normalize(rng.random((n, n)))
        vals = laplacian_spectrum(w)
        if min(vals[1] - vals[0], vals[2] - vals[1]) < 1e-3:
            continue
        p = rng.permutation(n)
        assert u_ecc(w[np.ix_(p, p)]) == pytest.approx(u_ecc(w), abs=1e-8)
        checked += 1


# -- eigensolver ---------------------------------------------------------------


def test_jacobi_against_characteristic_polynomial():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        a = rng.normal(size=(n, n))
        a = (a + a.T) / 2
        vals, _ = jacobi_eigh(a)
        np.testing.assert_allclose(vals, charpoly_roots(a), atol=1e-8)


def test_jacobi_vectors_are_orthonormal_eigenpairs():
    rng = np.random.default_rng(12)
    for n in (2, 5, 10):
        a = rng.normal(size=(n, n))
        a = a + a.T
        vals, vecs = jacobi_eigh(a)
        np.testing.assert_allclose(a @ vecs, vecs * vals, atol=1e-9)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-12)
        assert np.all(np.diff(vals) >= 0)


def test_jacobi_diagonal_and_repeated():
    vals, vecs = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(vals, [1.0, 2.0, 3.0])
    vals, _ = jacobi_eigh(np.ones((4, 4)))
    np.testing.assert_allclose(vals, [0, 0, 0, 4], atol=1e-12)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(ValueError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_cutoff_constant():
    assert scorers.ECC_EIGEN_CUTOFF < 1.0
