import numpy as np
import pytest

from rvesurrogate import tensorlab as tl


def random_symmetric(rng, scale=1.0):
    g = rng.standard_normal((3, 3)) * scale
    return 0.5 * (g + g.T)


def random_spd(rng, spread=1.0):
    g = rng.standard_normal((3, 3)) * spread
    return g @ g.T + 0.1 * np.eye(3)


class TestSymEig:
    def test_identity(self):
        vals, vecs = tl.sym_eig(np.eye(3))
        assert np.allclose(vals, [1.0, 1.0, 1.0])
        assert np.allclose(vecs.T @ vecs, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        vals, vecs = tl.sym_eig(np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(vals, [3.0, 2.0, 1.0], atol=1e-14)
        # axis-aligned eigenvectors up to sign
        assert np.allclose(np.abs(vecs), np.eye(3), atol=1e-12)

    def test_against_lapack_oracle(self):
        # independent oracle: LAPACK symmetric eigensolver
        rng = np.random.default_rng(42)
        for _ in range(200):
            s = random_symmetric(rng, scale=rng.uniform(0.1, 10.0))
            vals, vecs = tl.sym_eig(s)
            ref = np.sort(np.linalg.eigvalsh(s))[::-1]
            assert np.allclose(vals, ref, atol=1e-9 * max(1.0, np.abs(ref).max()))
            assert np.linalg.norm(vecs.T @ vecs - np.eye(3)) <= 1e-10
            rebuilt = tl.reassemble(vals, vecs)
            err = np.linalg.norm(rebuilt - s) / max(np.linalg.norm(s), 1e-30)
            assert err <= 1e-10

    def test_descending_order(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            vals, _ = tl.sym_eig(random_symmetric(rng))
            assert vals[0] >= vals[1] >= vals[2]

    def test_batch_matches_single_bitwise(self):
        rng = np.random.default_rng(7)
        batch = np.stack([random_symmetric(rng) for _ in range(17)])
        bvals, bvecs = tl.sym_eig(batch)
        for i in range(batch.shape[0]):
            svals, svecs = tl.sym_eig(batch[i])
            assert np.array_equal(bvals[i], svals)
            assert np.array_equal(bvecs[i], svecs)

    def test_rejects_nonfinite(self):
        s = np.eye(3)
        s[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            tl.sym_eig(s)

    def test_rejects_asymmetric(self):
        t = np.eye(3)
        t[0, 1] = 0.5
        with pytest.raises(ValueError, match="not symmetric"):
            tl.sym_eig(t)

    def test_degenerate_spectrum(self):
        s = np.diag([2.0, 2.0, 2.0])
        vals, vecs = tl.sym_eig(s)
        assert np.allclose(vals, 2.0)
        assert np.allclose(tl.reassemble(vals, vecs), s, atol=1e-12)


class TestLogExp:
    def test_log_identity_is_zero(self):
        assert np.allclose(tl.log_spd(np.eye(3)), 0.0)

    def test_log_diagonal(self):
        s = np.diag([np.e**2, 1.0, 1.0])
        assert np.allclose(tl.log_spd(s), np.diag([2.0, 0.0, 0.0]), atol=1e-12)

    def test_exp_zero_is_identity(self):
        assert np.allclose(tl.exp_sym(np.zeros((3, 3))), np.eye(3))

    def test_exp_diagonal(self):
        assert np.allclose(
            tl.exp_sym(np.diag([1.0, 0.0, 0.0])), np.diag([np.e, 1.0, 1.0])
        )

    def test_round_trip_100_random_spd(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            s = random_spd(rng, spread=rng.uniform(0.2, 2.0))
            back = tl.exp_sym(tl.log_spd(s))
            rel = np.linalg.norm(back - s) / np.linalg.norm(s)
            assert rel <= 1e-9

    def test_log_matches_eigen_reassembly_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            s = random_spd(rng)
            w, q = np.linalg.eigh(s)
            ref = (q * np.log(w)) @ q.T
            assert np.allclose(tl.log_spd(s), ref, atol=1e-9)

    def test_log_domain_error_reports_eigenvalue(self):
        s = np.diag([2.0, 1.0, -0.5])
        with pytest.raises(ValueError, match="-0.5"):
            tl.log_spd(s)

    def test_exp_result_spd(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            e = tl.exp_sym(random_symmetric(rng))
            assert np.all(np.linalg.eigvalsh(e) > 0.0)

    def test_sqrt_spd(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            s = random_spd(rng)
            r = tl.sqrt_spd(s)
            assert np.allclose(r @ r, s, atol=1e-10 * np.linalg.norm(s))


class TestBasicOps:
    def test_dev_identity_zero(self):
        assert np.allclose(tl.dev(np.eye(3)), 0.0)

    def test_det_identity(self):
        assert tl.det(np.eye(3)) == 1.0

    def test_dev_diag_example(self):
        got = tl.dev(np.diag([3.0, 0.0, 0.0]))
        assert np.allclose(got, np.diag([2.0, -1.0, -1.0]))

    def test_dev_traceless_property(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            s = random_symmetric(rng, scale=rng.uniform(0.1, 100.0))
            assert abs(tl.trace(tl.dev(s))) <= 1e-12 * max(tl.frobenius(s), 1e-30)

    def test_det_against_numpy(self):
        rng = np.random.default_rng(22)
        t = rng.standard_normal((40, 3, 3))
        assert np.allclose(tl.det(t), np.linalg.det(t), atol=1e-12)

    def test_inv(self):
        rng = np.random.default_rng(23)
        t = rng.standard_normal((20, 3, 3)) + 2.0 * np.eye(3)
        assert np.allclose(tl.inv(t) @ t, np.broadcast_to(np.eye(3), t.shape), atol=1e-10)

    def test_inv_singular_raises(self):
        with pytest.raises(ValueError, match="singular"):
            tl.inv(np.zeros((3, 3)))

    def test_double_dot(self):
        a = np.arange(9.0).reshape(3, 3)
        assert tl.double_dot(a, a) == np.sum(a * a)
