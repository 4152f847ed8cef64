"""Linear algebra verification against hand-solved and LAPACK oracles."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotinv import linalg
from rotinv.errors import NonSymmetricError, NotPSDError, NotPositiveDefiniteError

RNG = np.random.default_rng(20260810)


def random_symmetric(n, rng, scale=1.0):
    a = rng.standard_normal((n, n)) * scale
    return a + a.T


class TestJacobiEigh:
    def test_identity(self):
        dec = linalg.jacobi_eigh(np.eye(3))
        np.testing.assert_allclose(dec.eigenvalues, [1.0, 1.0, 1.0])
        assert linalg.is_orthogonal(dec.q)

    def test_already_diagonal(self):
        dec = linalg.jacobi_eigh(np.diag([4.0, 1.0]))
        np.testing.assert_allclose(dec.eigenvalues, [1.0, 4.0])
        # permutation matrix sorts the eigenvalues
        np.testing.assert_allclose(np.abs(dec.q), [[0.0, 1.0], [1.0, 0.0]])

    def test_hand_solved_2x2(self):
        # characteristic polynomial of [[2,1],[1,2]]: (2-l)^2 - 1 = 0 -> l = 1, 3
        # eigenvectors (1,-1)/sqrt(2) and (1,1)/sqrt(2)
        s = np.array([[2.0, 1.0], [1.0, 2.0]])
        dec = linalg.jacobi_eigh(s)
        np.testing.assert_allclose(dec.eigenvalues, [1.0, 3.0], atol=1e-14)
        isq = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(dec.q[:, 0], [isq, -isq], atol=1e-14)
        np.testing.assert_allclose(dec.q[:, 1], [isq, isq], atol=1e-14)

    @pytest.mark.parametrize("n", [2, 3, 5, 8, 16])
    def test_matches_lapack(self, n):
        s = random_symmetric(n, RNG)
        dec = linalg.jacobi_eigh(s)
        np.testing.assert_allclose(dec.eigenvalues, np.linalg.eigvalsh(s),
                                   rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("n", [2, 4, 7])
    def test_reconstruction_and_orthogonality(self, n):
        s = random_symmetric(n, RNG, scale=3.0)
        dec = linalg.jacobi_eigh(s)
        recon = dec.q @ np.diag(dec.eigenvalues) @ dec.q.T
        scale = max(1.0, np.linalg.norm(s))
        assert np.abs(recon - s).max() <= 1e-11 * scale
        assert np.abs(dec.q.T @ dec.q - np.eye(n)).max() <= 1e-12
        diag = dec.q.T @ s @ dec.q
        off = diag - np.diag(np.diag(diag))
        assert np.linalg.norm(off) <= 1e-12 * np.linalg.norm(s)

    def test_eigenvalues_ascending_and_gauge(self):
        for _ in range(10):
            s = random_symmetric(5, RNG)
            dec = linalg.jacobi_eigh(s)
            assert np.all(np.diff(dec.eigenvalues) >= -1e-14)
            for j in range(5):
                col = dec.q[:, j]
                first = col[np.abs(col) > 1e-12][0]
                assert first > 0

    def test_rejects_non_symmetric(self):
        with pytest.raises(NonSymmetricError):
            linalg.jacobi_eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(NonSymmetricError):
            linalg.jacobi_eigh(np.zeros((2, 3)))

    def test_zero_matrix(self):
        dec = linalg.jacobi_eigh(np.zeros((3, 3)))
        np.testing.assert_array_equal(dec.eigenvalues, np.zeros(3))


class TestSqrtPsd:
    def test_identity(self):
        np.testing.assert_allclose(linalg.sqrt_psd(np.eye(4)), np.eye(4), atol=1e-14)

    def test_diagonal(self):
        np.testing.assert_allclose(linalg.sqrt_psd(np.diag([4.0, 9.0])),
                                   np.diag([2.0, 3.0]), atol=1e-13)

    def test_hand_solved_2x2(self):
        # sqrt of [[2,1],[1,2]] = [[(r3+1)/2, (r3-1)/2], [(r3-1)/2, (r3+1)/2]]
        s = np.array([[2.0, 1.0], [1.0, 2.0]])
        r3 = np.sqrt(3.0)
        expected = np.array([[(r3 + 1) / 2, (r3 - 1) / 2], [(r3 - 1) / 2, (r3 + 1) / 2]])
        root = linalg.sqrt_psd(s)
        np.testing.assert_allclose(root, expected, atol=1e-13)
        np.testing.assert_allclose(root @ root, s, atol=1e-11)

    def test_square_reproduces_input(self):
        for n in (2, 3, 6):
            a = RNG.standard_normal((n, n))
            s = a @ a.T
            root = linalg.sqrt_psd(s)
            assert np.abs(root @ root - s).max() <= 1e-11 * max(1.0, np.linalg.norm(s))

    def test_fourth_root_composition(self):
        a = RNG.standard_normal((4, 4))
        s = a @ a.T + 0.1 * np.eye(4)
        quarter = linalg.sqrt_psd(linalg.sqrt_psd(s))
        fourth = np.linalg.matrix_power(quarter, 4)
        assert np.abs(fourth - s).max() <= 1e-9 * np.linalg.norm(s)

    def test_clamps_tiny_negatives(self):
        v = np.array([1.0, 2.0])
        s = np.outer(v, v)  # rank one, eigenvalue 0 up to roundoff
        root = linalg.sqrt_psd(s)
        np.testing.assert_allclose(root @ root, s, atol=1e-11)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPSDError):
            linalg.sqrt_psd(np.diag([-1.0, 1.0]))


class TestInvSqrtPd:
    def test_identity(self):
        np.testing.assert_allclose(linalg.inv_sqrt_pd(np.eye(3)), np.eye(3), atol=1e-14)

    def test_diagonal(self):
        np.testing.assert_allclose(linalg.inv_sqrt_pd(np.diag([4.0, 16.0])),
                                   np.diag([0.5, 0.25]), atol=1e-14)

    def test_whitening_identity(self):
        for n in (2, 5):
            a = RNG.standard_normal((n, n))
            s = a @ a.T + 0.5 * np.eye(n)
            c = linalg.inv_sqrt_pd(s)
            assert np.abs(c @ s @ c - np.eye(n)).max() <= 1e-10

    def test_inverse_of_sqrt(self):
        # eigenvalue range exercised across [1e-6, 1e6]
        s = np.diag([1e-6, 1.0, 1e6])
        prod = linalg.inv_sqrt_pd(s) @ linalg.sqrt_psd(s)
        assert np.abs(prod - np.eye(3)).max() <= 1e-9

    def test_near_singular_rejected(self):
        with pytest.raises(NotPositiveDefiniteError) as err:
            linalg.inv_sqrt_pd(np.diag([1e-14, 1.0]), eps_pd=1e-10)
        assert err.value.min_eigenvalue == pytest.approx(1e-14, rel=1e-6)


class TestHaarOrthogonal:
    def test_seed_determinism(self):
        b1 = linalg.haar_orthogonal(4, 42)
        b2 = linalg.haar_orthogonal(4, 42)
        np.testing.assert_array_equal(b1, b2)
        assert not np.array_equal(b1, linalg.haar_orthogonal(4, 43))

    def test_n1_is_sign(self):
        signs = {linalg.haar_orthogonal(1, seed)[0, 0] for seed in range(40)}
        assert signs == {1.0, -1.0}

    @pytest.mark.parametrize("n", [1, 2, 3, 8])
    def test_orthogonality_invariant(self, n):
        for seed in range(5):
            b = linalg.haar_orthogonal(n, seed)
            assert np.abs(b.T @ b - np.eye(n)).max() <= 1e-12
            assert abs(abs(np.linalg.det(b)) - 1.0) <= 1e-10

    def test_angle_uniform_on_circle(self):
        # first column of an O(2) Haar matrix is uniform on the circle;
        # one-sample KS against the uniform CDF, cross-checked against a
        # direct uniform-angle sampler
        n_samples = 100_000
        rng = np.random.default_rng(np.random.SeedSequence(7))
        angles = np.empty(n_samples)
        for i in range(n_samples):
            b = linalg.haar_orthogonal(2, rng)
            angles[i] = np.arctan2(b[1, 0], b[0, 0])
        u = np.sort((angles + np.pi) / (2 * np.pi))
        grid = (np.arange(1, n_samples + 1)) / n_samples
        d = np.abs(u - grid).max()
        assert d < 0.01

        oracle = np.random.default_rng(11).uniform(0.0, 2 * np.pi, n_samples)
        o = np.sort(oracle / (2 * np.pi))
        d_oracle = np.abs(o - grid).max()
        assert d_oracle < 0.01  # sanity: the oracle sampler itself is uniform


class TestBatchedHelpers:
    def test_batch_matches_single(self):
        mats = np.stack([random_symmetric(3, RNG) for _ in range(40)])
        q, lam = linalg.eigh_batch(mats)
        for i in range(40):
            single = linalg.jacobi_eigh(mats[i])
            np.testing.assert_allclose(lam[i], single.eigenvalues, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(np.abs(q[i]), np.abs(single.q), atol=1e-9)

    def test_batch_2x2_closed_form(self):
        mats = np.stack([random_symmetric(2, RNG) for _ in range(500)])
        q, lam = linalg.eigh_batch(mats)
        recon = np.einsum("bik,bk,bjk->bij", q, lam, q)
        assert np.abs(recon - mats).max() <= 1e-13 * max(1.0, np.abs(mats).max())
        np.testing.assert_allclose(lam, np.linalg.eigvalsh(mats), atol=1e-13)

    def test_batch_diagonal_exact(self):
        mats = np.zeros((2, 2, 2))
        mats[0] = np.diag([4.0, 9.0])
        mats[1] = np.diag([9.0, 4.0])
        q, lam = linalg.eigh_batch(mats)
        np.testing.assert_array_equal(lam, [[4.0, 9.0], [4.0, 9.0]])
        np.testing.assert_array_equal(np.abs(q[0]), np.eye(2))
        np.testing.assert_array_equal(np.abs(q[1]), [[0.0, 1.0], [1.0, 0.0]])

    def test_inv_sqrt_batch_reports_first_bad_index(self):
        mats = np.stack([np.eye(2), np.diag([1e-14, 1.0]), np.diag([1e-15, 1.0])])
        with pytest.raises(NotPositiveDefiniteError) as err:
            linalg.inv_sqrt_pd_batch(mats, eps_pd=1e-10)
        assert err.value.index == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=10**6))
def test_property_reconstruction(n, seed):
    rng = np.random.default_rng(seed)
    s = random_symmetric(n, rng)
    dec = linalg.jacobi_eigh(s)
    recon = dec.q @ np.diag(dec.eigenvalues) @ dec.q.T
    assert np.abs(recon - s).max() <= 1e-11 * max(1.0, np.linalg.norm(s))
