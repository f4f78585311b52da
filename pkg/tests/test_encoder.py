import numpy as np
import pytest

from metrix import autodiff as ad
from metrix import encoder


def make_params(seed=0, input_dim=5, hidden=(7,), embed_dim=4, scale=1.0):
    return encoder.init_encoder(input_dim, hidden_dims=hidden,
                                embed_dim=embed_dim, split=1, seed=seed,
                                init_scale=scale)


class TestForward:
    def test_zero_weights_give_zero_features(self):
        p = make_params()
        p.weights[0][:] = 0.0
        x = np.ones(5)
        assert np.array_equal(encoder.features(p, x), np.zeros(7))

    def test_identity_like_layer_is_activation(self):
        p = encoder.init_encoder(4, hidden_dims=(4,), embed_dim=3, split=1, seed=1)
        p.weights[0] = np.eye(4)
        p.biases[0][:] = 0.0
        x = np.array([0.5, -1.0, 2.0, 0.0])
        assert np.allclose(encoder.features(p, x), np.tanh(x), atol=0, rtol=0)

    def test_split_consistency_bit_exact(self):
        p = make_params(seed=3)
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.normal(size=5)
            direct = encoder.embed(p, x)
            composed = encoder.head(p, encoder.features(p, x))
            assert np.array_equal(direct, composed)

    def test_unit_norm(self):
        p = make_params(seed=4)
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 5))
        emb = encoder.embed(p, X)
        assert np.all(np.abs(np.linalg.norm(emb, axis=1) - 1.0) <= 1e-12)

    def test_three_four_normalizes(self):
        p = encoder.init_encoder(2, hidden_dims=(2,), embed_dim=2, split=1, seed=0)
        p.weights[1] = np.eye(2)
        p.biases[1][:] = 0.0
        out = encoder.head(p, np.array([3.0, 4.0]))
        assert np.allclose(out, [0.6, 0.8], atol=1e-15)

    def test_zero_vector_rejected_at_normalization(self):
        p = make_params()
        p.weights[-1][:] = 0.0
        p.biases[-1][:] = 0.0
        with pytest.raises(ValueError):
            encoder.embed(p, np.ones(5))

    def test_dimension_mismatch(self):
        p = make_params()
        with pytest.raises(ValueError):
            encoder.embed(p, np.ones(3))
        with pytest.raises(ValueError):
            encoder.head(p, np.ones(3))

    def test_deterministic_init(self):
        a = make_params(seed=9)
        b = make_params(seed=9)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)


class TestBackward:
    def test_head_gradient_matches_finite_diff(self):
        # gradient through the normalization layer
        p = make_params(seed=5)
        rng = np.random.default_rng(2)
        f = rng.normal(size=7)
        probe = rng.normal(size=4)

        def scalar(feat):
            return float(probe @ encoder.head(p, np.asarray(feat)))

        _, cache = encoder.forward(p, f, start_layer=1)
        _, d_input = encoder.backward(p, cache, probe)
        fd = ad.finite_diff(lambda xs: scalar(xs), list(f), h=1e-5)
        for got, want in zip(d_input, fd):
            assert abs(got - want) / max(1.0, abs(want)) < 1e-5

    def test_full_gradient_matches_finite_diff(self):
        p = make_params(seed=6)
        rng = np.random.default_rng(3)
        X = rng.normal(size=(3, 5))
        probe = rng.normal(size=(3, 4))

        def value(params):
            return float(np.sum(probe * encoder.embed(params, X)))

        _, cache = encoder.forward(p, X)
        grads, _ = encoder.backward(p, cache, probe)
        h = 1e-6
        for k in range(2):
            for arr, g in ((p.weights[k], grads[k][0]), (p.biases[k], grads[k][1])):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up = value(p)
                    arr[idx] = orig - h
                    dn = value(p)
                    arr[idx] = orig
                    fd = (up - dn) / (2 * h)
                    assert abs(fd - g[idx]) / max(1.0, abs(fd)) < 1e-4

    def test_features_backward_matches_finite_diff(self):
        p = make_params(seed=7)
        rng = np.random.default_rng(4)
        x = rng.normal(size=5)
        probe = rng.normal(size=7)

        def scalar(inp):
            return float(probe @ encoder.features(p, np.asarray(inp)))

        _, cache = encoder.features_forward(p, x)
        _, d_input = encoder.features_backward(p, cache, probe)
        fd = ad.finite_diff(scalar, list(x), h=1e-5)
        for got, want in zip(d_input, fd):
            assert abs(got - want) / max(1.0, abs(want)) < 1e-5


class TestSimilarity:
    def test_self_similarity_is_one(self):
        p = make_params(seed=8)
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = encoder.RawInput(rng.normal(size=5))
            assert encoder.similarity(x, x, p) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_embeddings(self):
        p = make_params()
        a = encoder.Embedded(np.array([1.0, 0.0, 0.0, 0.0]))
        b = encoder.Embedded(np.array([0.0, 1.0, 0.0, 0.0]))
        assert encoder.similarity(a, b, p) == 0.0

    def test_symmetry(self):
        p = make_params(seed=10)
        rng = np.random.default_rng(6)
        for _ in range(20):
            a = encoder.RawInput(rng.normal(size=5))
            b = encoder.RawInput(rng.normal(size=5))
            assert abs(encoder.similarity(a, b, p)
                       - encoder.similarity(b, a, p)) <= 1e-12

    def test_bounds_for_encoded_inputs(self):
        p = make_params(seed=11)
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = encoder.RawInput(rng.normal(size=5))
            b = encoder.RawInput(rng.normal(size=5))
            assert -1.0 - 1e-12 <= encoder.similarity(a, b, p) <= 1.0 + 1e-12

    def test_mixed_embedding_similarity_in_bounds(self):
        # convex mix of two unit embeddings has norm <= 1
        p = make_params(seed=12)
        rng = np.random.default_rng(8)
        ea = encoder.embed(p, rng.normal(size=5))
        ep = encoder.embed(p, rng.normal(size=5))
        en = encoder.embed(p, rng.normal(size=5))
        for lam in (0.0, 0.3, 0.5, 0.9, 1.0):
            v = lam * ep + (1 - lam) * en
            s = encoder.similarity(encoder.Embedded(ea), encoder.Embedded(v), p)
            assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12

    def test_proxy_is_normalized_before_use(self):
        p = make_params()
        bank = encoder.ProxyBank(class_ids=(0,), vectors=np.array([[3.0, 0.0, 0.0, 0.0]]))
        a = encoder.Embedded(np.array([1.0, 0.0, 0.0, 0.0]))
        s = encoder.similarity(a, encoder.ProxyRef(0), p, proxies=bank)
        assert s == pytest.approx(1.0, abs=1e-15)

    def test_proxy_without_bank_rejected(self):
        p = make_params()
        with pytest.raises(ValueError):
            encoder.similarity(encoder.ProxyRef(0),
                               encoder.Embedded(np.zeros(4)), p)

    def test_dimension_mismatch_rejected(self):
        p = make_params()
        with pytest.raises(ValueError):
            encoder.similarity(encoder.Embedded(np.ones(3)),
                               encoder.Embedded(np.ones(4)), p)


class TestProxyBank:
    def test_init_unit_norm(self):
        bank = encoder.init_proxies({0, 2, 4}, 6, seed=3)
        assert bank.class_ids == (0, 2, 4)
        assert np.allclose(np.linalg.norm(bank.vectors, axis=1), 1.0, atol=1e-12)

    def test_missing_class(self):
        bank = encoder.init_proxies({0, 2}, 4, seed=3)
        with pytest.raises(KeyError):
            bank.unit_vector(1)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        p = make_params(seed=13, hidden=(6, 5), embed_dim=3)
        p = encoder.init_encoder(5, hidden_dims=(6, 5), embed_dim=3, split=2,
                                 seed=13, init_scale=0.8)
        bank = encoder.init_proxies({0, 2, 4}, 3, seed=1)
        path = tmp_path / "ckpt.txt"
        encoder.save_checkpoint(p, bank, path)
        q, bank2 = encoder.load_checkpoint(path)
        assert q.split == p.split
        for wa, wb in zip(p.weights, q.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(p.biases, q.biases):
            assert np.array_equal(ba, bb)
        assert bank2.class_ids == bank.class_ids
        assert np.array_equal(bank2.vectors, bank.vectors)

    def test_round_trip_without_proxies(self, tmp_path):
        p = make_params(seed=14)
        path = tmp_path / "ckpt.txt"
        encoder.save_checkpoint(p, None, path)
        q, bank = encoder.load_checkpoint(path)
        assert bank is None
        assert np.array_equal(q.weights[0], p.weights[0])
