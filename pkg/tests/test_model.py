import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hierfish import model as M
from hierfish.errors import (
    DimensionMismatch,
    EmptyInput,
    NonFiniteInput,
    TaxonomyMismatch,
)

from conftest import random_simplex


class TestStableSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(M.stable_softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)

    def test_shift_invariance(self):
        a = M.stable_softmax([0.3, -1.2, 2.0])
        b = M.stable_softmax([0.3 + 100.0, -1.2 + 100.0, 2.0 + 100.0])
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_no_overflow_extreme_logits(self):
        # oracle: 1/(1+e^-1000) is 1.0 to double precision
        with np.errstate(over="raise"):
            p = M.stable_softmax([1000.0, 0.0])
        assert p[0] == pytest.approx(1.0, abs=1e-300)
        assert p[1] == pytest.approx(0.0, abs=1e-300)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=10),
           st.floats(-1e6, 1e6))
    def test_properties(self, logits, shift):
        p = M.stable_softmax(logits)
        assert abs(p.sum() - 1.0) <= 1e-12
        # logit differences below float resolution can tie after exp,
        # so assert the logit argmax attains the output maximum
        assert p[int(np.argmax(logits))] == p.max()
        shifted = M.stable_softmax(np.asarray(logits) + shift)
        np.testing.assert_allclose(p, shifted, atol=1e-12)

    def test_errors(self):
        with pytest.raises(EmptyInput):
            M.stable_softmax(np.array([]))
        with pytest.raises(NonFiniteInput):
            M.stable_softmax([np.nan, 0.0])
        with pytest.raises(NonFiniteInput):
            M.stable_softmax([np.inf, 0.0])


class TestJointScores:
    def test_direct_product(self):
        joint = M.joint_scores([0.5, 0.5], [np.array([1.0]), np.array([0.6, 0.4])])
        np.testing.assert_allclose(joint, [0.5, 0.3, 0.2], atol=1e-15)

    def test_uniform(self, six31):
        coarse = np.full(6, 1 / 6)
        fine = [np.full(n, 1 / n) for n in six31.group_sizes]
        joint = M.joint_scores(coarse, fine)
        for s in range(six31.S):
            g, _ = six31.to_local(s)
            assert joint[s] == pytest.approx(1 / (6 * six31.group_sizes[g]), abs=1e-15)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        sizes = [2, 3, 4]
        coarse = random_simplex(rng, 3)
        fine = [random_simplex(rng, n) for n in sizes]
        joint = M.joint_scores(coarse, fine)
        # independent oracle: explicit nested loop product and sum
        expected = []
        for g, n in enumerate(sizes):
            for i in range(n):
                expected.append(coarse[g] * fine[g][i])
        np.testing.assert_allclose(joint, expected, atol=1e-12)
        assert abs(sum(expected) - 1.0) <= 1e-12
        assert abs(joint.sum() - 1.0) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            M.joint_scores([0.5, 0.5], [np.array([1.0])])


def _toy_params(tiny_taxonomy):
    """2-group/3-species model with hand-set weights, d_in=2, d1=2, h=2, d2=2."""
    p = M.init_params(tiny_taxonomy, d_in=2, d1=2, hidden=2, d2=2, seed=0)
    p.W1 = np.array([[0.5, -0.2], [0.1, 0.4]])
    p.b1 = np.array([0.05, -0.1])
    p.W2 = np.array([[0.3, 0.7], [-0.6, 0.2]])
    p.b2 = np.array([0.1, 0.0])
    p.Wc1 = np.array([[1.0, -0.5], [0.2, 0.8]])
    p.bc1 = np.array([0.0, 0.1])
    p.Wc2 = np.array([[0.4, -0.3], [-0.2, 0.6]])
    p.bc2 = np.array([0.05, -0.05])
    p.Wf = [np.array([[0.9, -0.4], [0.3, 0.2]]), np.array([[0.5], [-0.7]])]
    p.bf = [np.array([0.1, -0.1]), np.array([0.0])]
    p.Wl1 = np.array([[0.6, -0.1], [0.2, 0.5]])
    p.bl1 = np.array([-0.05, 0.05])
    p.Wl2 = np.array([[0.3, -0.2, 0.4], [0.1, 0.6, -0.5]])
    p.bl2 = np.array([0.0, 0.1, -0.1])
    return p


def _oracle_softmax(z):
    e = [np.exp(v) for v in z]
    s = sum(e)
    return [v / s for v in e]


def _oracle_forward(p, x):
    """From-scratch scalar-arithmetic forward pass, independent of model.py."""
    def dense(v, W, b):
        return [sum(v[k] * W[k][j] for k in range(len(v))) + b[j]
                for j in range(len(b))]

    def relu(v):
        return [max(u, 0.0) for u in v]

    shallow = relu(dense(x, p.W1, p.b1))
    deep = relu(dense(shallow, p.W2, p.b2))
    coarse = _oracle_softmax(dense(relu(dense(shallow, p.Wc1, p.bc1)), p.Wc2, p.bc2))
    fine = [_oracle_softmax(dense(deep, p.Wf[g], p.bf[g])) for g in range(2)]
    joint = [coarse[g] * fine[g][i] for g in range(2) for i in range(len(fine[g]))]
    flat = _oracle_softmax(dense(relu(dense(deep, p.Wl1, p.bl1)), p.Wl2, p.bl2))
    return coarse, fine, joint, flat


class TestForward:
    def test_zero_weights_uniform(self, tiny_taxonomy):
        p = M.init_params(tiny_taxonomy, d_in=3, d1=2, hidden=2, d2=2, seed=0)
        for _, arr in p.fields():
            arr[...] = 0.0
        out = M.forward(p, np.array([1.0, -2.0, 0.5]))
        np.testing.assert_allclose(out.coarse, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(out.fine_local[0], [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(out.fine_local[1], [1.0], atol=1e-15)
        np.testing.assert_allclose(out.joint, [0.25, 0.25, 0.5], atol=1e-15)
        np.testing.assert_allclose(M.forward_flat(p, np.zeros(3)), [1 / 3] * 3, atol=1e-15)

    def test_matches_independent_oracle(self, tiny_taxonomy):
        p = _toy_params(tiny_taxonomy)
        x = np.array([0.8, -1.3])
        out = M.forward(p, x)
        flat = M.forward_flat(p, x)
        coarse, fine, joint, flat_o = _oracle_forward(p, list(x))
        np.testing.assert_allclose(out.coarse, coarse, atol=1e-12)
        for g in range(2):
            np.testing.assert_allclose(out.fine_local[g], fine[g], atol=1e-12)
        np.testing.assert_allclose(out.joint, joint, atol=1e-12)
        np.testing.assert_allclose(flat, flat_o, atol=1e-12)

    def test_random_params_joint_sums_to_one(self, toy_taxonomy):
        for seed in range(20):
            p = M.init_params(toy_taxonomy, d_in=5, d1=4, hidden=3, d2=3, seed=seed)
            rng = np.random.default_rng(seed)
            out = M.forward(p, rng.normal(0, 2, 5))
            assert abs(out.coarse.sum() - 1.0) <= 1e-9
            for f in out.fine_local:
                assert abs(f.sum() - 1.0) <= 1e-9
            assert abs(out.joint.sum() - 1.0) <= 1e-9

    def test_precomputed_reproduces_trunk_bitwise(self, tiny_taxonomy):
        p = _toy_params(tiny_taxonomy)
        x = np.array([0.8, -1.3])
        _, shallow, _, deep = M.trunk_features(p, x)
        out_trunk = M.forward(p, x)
        flat_trunk = M.forward_flat(p, x)
        q = p.copy()
        q.mode = M.MODE_PRECOMPUTED
        out_pre = M.forward(q, (shallow, deep))
        flat_pre = M.forward_flat(q, (shallow, deep))
        assert np.array_equal(out_trunk.coarse, out_pre.coarse)
        assert np.array_equal(out_trunk.joint, out_pre.joint)
        for a, b in zip(out_trunk.fine_local, out_pre.fine_local):
            assert np.array_equal(a, b)
        assert np.array_equal(flat_trunk, flat_pre)

    def test_dimension_mismatch(self, tiny_taxonomy):
        p = _toy_params(tiny_taxonomy)
        with pytest.raises(DimensionMismatch):
            M.forward(p, np.zeros(5))
        with pytest.raises(DimensionMismatch):
            M.forward(p, (np.zeros(2), np.zeros(2)))  # pair in trunk mode


class TestCheckpoint:
    def test_round_trip(self, tmp_path, toy_taxonomy):
        p = M.init_params(toy_taxonomy, d_in=5, d1=4, hidden=3, d2=3, seed=9)
        path = str(tmp_path / "ckpt.json")
        M.save_checkpoint(p, toy_taxonomy, path)
        q = M.load_checkpoint(path, toy_taxonomy)
        assert q.mode == p.mode
        for (ka, a), (kb, b) in zip(p.fields(), q.fields()):
            assert ka == kb
            assert np.array_equal(a, b)

    def test_taxonomy_mismatch(self, tmp_path, toy_taxonomy, tiny_taxonomy):
        p = M.init_params(toy_taxonomy, d_in=5, d1=4, hidden=3, d2=3, seed=9)
        path = str(tmp_path / "ckpt.json")
        M.save_checkpoint(p, toy_taxonomy, path)
        with pytest.raises(TaxonomyMismatch):
            M.load_checkpoint(path, tiny_taxonomy)
