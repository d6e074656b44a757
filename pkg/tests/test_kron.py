import numpy as np
import pytest

from matmech.blocks import AllRange, Identity, Prefix, Total, WidthRange
from matmech.errors import ShapeError
from matmech.kron import kron_matvec, kron_materialize, max_col_norm

from oracles import dense_kron


def test_matvec_total_cross_identity():
    # dense oracle for T2 x I2 is [[1,0,1,0],[0,1,0,1]]
    t2 = np.ones((1, 2))
    i2 = np.eye(2)
    dense = dense_kron([t2, i2])
    assert np.array_equal(dense, [[1, 0, 1, 0], [0, 1, 0, 1]])
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(kron_matvec([t2, i2], x), [4.0, 6.0])


def test_matvec_identity_is_noop():
    x = np.arange(12, dtype=float)
    assert np.array_equal(kron_matvec([np.eye(3), np.eye(4)], x), x)


def test_matvec_prefix_cross_total():
    p2 = np.tril(np.ones((2, 2)))
    t2 = np.ones((1, 2))
    dense = dense_kron([p2, t2])
    assert np.array_equal(dense, [[1, 1, 0, 0], [1, 1, 1, 1]])
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(kron_matvec([p2, t2], x), dense @ x)
    assert np.array_equal(kron_matvec([p2, t2], x), [3.0, 10.0])


def test_matvec_random_matches_dense():
    rng = np.random.default_rng(7)
    for _ in range(25):
        d = rng.integers(1, 5)
        factors = [rng.normal(size=(rng.integers(1, 9), rng.integers(1, 9)))
                   for _ in range(d)]
        x = rng.normal(size=int(np.prod([f.shape[1] for f in factors])))
        expect = dense_kron(factors) @ x
        got = kron_matvec(factors, x)
        np.testing.assert_allclose(got, expect, rtol=1e-10, atol=1e-10)


def test_matvec_shape_mismatch():
    with pytest.raises(ShapeError):
        kron_matvec([np.eye(2), np.eye(3)], np.zeros(5))


def test_kron_identities_dense():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(3, 3))
    b = rng.normal(size=(4, 2))
    ab = dense_kron([a, b])
    np.testing.assert_allclose(ab.T, dense_kron([a.T, b.T]), rtol=1e-8)
    np.testing.assert_allclose(np.linalg.pinv(ab),
                               dense_kron([np.linalg.pinv(a), np.linalg.pinv(b)]),
                               rtol=1e-8, atol=1e-10)
    c = rng.normal(size=(3, 5))
    d = rng.normal(size=(2, 4))
    np.testing.assert_allclose(dense_kron([a, b]) @ dense_kron([c, d]),
                               dense_kron([a @ c, b @ d]), rtol=1e-8)


def test_norms_multiply_over_factors():
    blocks_a = [Identity(5), Prefix(9), AllRange(6), WidthRange(16, 4)]
    blocks_b = [Total(7), AllRange(4), Prefix(32)]
    for ba in blocks_a:
        for bb in blocks_b:
            a, b = ba.materialize(), bb.materialize()
            ab = dense_kron([a, b])
            for norm in ("L1", "L2"):
                assert max_col_norm(ab, norm) == pytest.approx(
                    max_col_norm(a, norm) * max_col_norm(b, norm), rel=1e-12)
            assert np.linalg.norm(ab) == pytest.approx(
                np.linalg.norm(a) * np.linalg.norm(b), rel=1e-12)


def test_materialize_cap():
    from matmech.errors import SizeError
    with pytest.raises(SizeError):
        kron_materialize([np.ones((500, 500)), np.ones((500, 500))],
                         max_entries=10 ** 6)
