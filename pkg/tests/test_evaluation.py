import math

import numpy as np
import pytest

from metrix import autodiff as ad
from metrix import datasets, encoder, evaluation, losses


def tiny_split(seed=31, classes=4, per_class=5):
    ds = datasets.generate_gaussian(classes, per_class, 4, 2.0, 0.8, seed)
    return ds, ds.test_split()


@pytest.fixture()
def params():
    return encoder.init_encoder(4, hidden_dims=(6,), embed_dim=5, split=1, seed=17)


class TestThresholdFormula:
    def test_midpoint_is_margin_exactly(self):
        assert evaluation.ms_positivity_threshold(0.5, 18.0, 75.0, 0.77) == 0.77

    def test_paper_configuration_value(self):
        got = evaluation.ms_positivity_threshold(0.9, 18.0, 75.0, 0.77)
        assert got == pytest.approx(math.log(9.0) / 93.0 + 0.77, rel=1e-12)

    def test_strictly_increasing(self):
        grid = [0.05 * i for i in range(1, 20)]
        vals = [evaluation.ms_positivity_threshold(l, 18.0, 75.0, 0.77)
                for l in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_endpoint_conventions(self):
        assert evaluation.ms_positivity_threshold(0.0, 18, 75, 0.77) == -math.inf
        assert evaluation.ms_positivity_threshold(1.0, 18, 75, 0.77) == math.inf

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            evaluation.ms_positivity_threshold(1.5, 18, 75, 0.77)

    def test_sign_change_agrees_with_derivative_scan(self):
        # brute force: scan the mixed-loss derivative over similarity
        rng = np.random.default_rng(5)
        for _ in range(5):
            beta = float(rng.uniform(5.0, 60.0))
            gamma = float(rng.uniform(5.0, 60.0))
            margin = float(rng.uniform(-0.3, 0.5))
            lam = float(rng.uniform(0.1, 0.9))
            plugin = losses.multi_similarity(beta, gamma, margin)
            last_neg = None
            for i in range(2001):
                s = -1.0 + i * 1e-3
                tape = ad.Tape()
                sv = tape.var(s)
                out = losses.labeled_loss([(sv, lam)], plugin, tape)
                ad.backward(out)
                if sv.grad <= 0.0:
                    last_neg = s
            want = evaluation.ms_positivity_threshold(lam, beta, gamma, margin)
            assert last_neg is not None
            assert abs(last_neg - want) <= 2e-3


class TestPositivity:
    def test_endpoints_and_bounds(self, params):
        ds, _ = tiny_split()
        plugin = losses.multi_similarity(18.0, 75.0, 0.77)
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        curve = evaluation.positivity_curve(params, ds, plugin, grid, 200, seed=3)
        assert curve.empirical[0] == 0.0
        assert curve.empirical[-1] == 1.0
        assert curve.theoretical[0] == 0.0
        assert curve.theoretical[-1] == 1.0
        for col in (curve.empirical, curve.theoretical):
            assert all(0.0 <= v <= 1.0 for v in col)

    def test_band_on_default_setup(self):
        # mostly-positive behavior for lam >= 0.5 (within the loose band)
        ds = datasets.generate_gaussian(32, 20, 8, 2.0, 0.8, 42)
        params = encoder.init_encoder(8, hidden_dims=(32,), embed_dim=16,
                                      split=1, seed=1001)
        plugin = losses.multi_similarity(18.0, 75.0, 0.77)
        grid = [0.5, 0.7, 0.9]
        emp = evaluation.positivity_empirical(params, ds, plugin, grid, 500, seed=3)
        assert all(v >= 0.35 for v in emp)

    def test_empirical_matches_threshold_event_for_single_element_ms(self, params):
        # the derivative-sign event and the threshold event coincide here
        ds, _ = tiny_split()
        plugin = losses.multi_similarity(18.0, 75.0, 0.77)
        grid = [0.2, 0.5, 0.8]
        curve = evaluation.positivity_curve(params, ds, plugin, grid, 300, seed=9)
        for e, t in zip(curve.empirical, curve.theoretical):
            assert abs(e - t) <= 0.15

    def test_same_seed_same_curve(self, params):
        ds, _ = tiny_split()
        plugin = losses.multi_similarity(18.0, 75.0, 0.77)
        a = evaluation.positivity_curve(params, ds, plugin, [0.3, 0.6], 100, seed=4)
        b = evaluation.positivity_curve(params, ds, plugin, [0.3, 0.6], 100, seed=4)
        assert a == b

    def test_theoretical_requires_ms_family(self, params):
        ds, _ = tiny_split()
        with pytest.raises(ValueError):
            evaluation.positivity_theoretical(params, ds, losses.contrastive(),
                                              [0.5], 10, seed=1)

    def test_sample_count_validated(self, params):
        ds, _ = tiny_split()
        plugin = losses.multi_similarity(18.0, 75.0, 0.77)
        with pytest.raises(ValueError):
            evaluation.positivity_empirical(params, ds, plugin, [0.5], 0, seed=1)


def antipodal_setup():
    # one class whose two members embed at opposite poles
    p = encoder.init_encoder(1, hidden_dims=(1,), embed_dim=2, split=1, seed=0)
    p.weights[0] = np.array([[30.0]])
    p.biases[0] = np.array([0.0])
    p.weights[1] = np.array([[1.0], [0.0]])
    p.biases[1] = np.array([0.0, 0.0])
    examples = [datasets.Example(features=np.array([1.0]), class_id=0),
                datasets.Example(features=np.array([-1.0]), class_id=0)]
    return p, examples


class TestAlignment:
    def test_identical_embeddings_align_to_zero(self, params):
        x = np.array([0.3, -0.2, 0.5, 1.0])
        examples = [datasets.Example(features=x, class_id=0) for _ in range(3)]
        assert evaluation.alignment(params, examples) == pytest.approx(0.0, abs=1e-15)

    def test_antipodal_pair_scores_four(self):
        p, examples = antipodal_setup()
        assert evaluation.alignment(p, examples) == pytest.approx(4.0, abs=1e-6)

    def test_matches_brute_force(self, params):
        _, split = tiny_split()
        got = evaluation.alignment(params, split)
        emb = [encoder.embed(params, e.features) for e in split]
        total, count = 0.0, 0
        for i in range(len(split)):
            for j in range(i + 1, len(split)):
                if split[i].class_id == split[j].class_id:
                    total += float(np.sum((emb[i] - emb[j]) ** 2))
                    count += 1
        assert abs(got - total / count) <= 1e-10

    def test_no_pairs_rejected(self, params):
        examples = [datasets.Example(features=np.ones(4), class_id=c)
                    for c in range(3)]
        with pytest.raises(ValueError):
            evaluation.alignment(params, examples)


class TestUniformity:
    def test_identical_embeddings_score_zero(self, params):
        x = np.array([0.3, -0.2, 0.5, 1.0])
        examples = [datasets.Example(features=x, class_id=c) for c in range(3)]
        assert evaluation.uniformity(params, examples) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal_pair_scores_minus_eight(self):
        p, examples = antipodal_setup()
        assert evaluation.uniformity(p, examples) == pytest.approx(-8.0, abs=1e-5)

    def test_matches_brute_force(self, params):
        _, split = tiny_split()
        got = evaluation.uniformity(params, split)
        emb = [encoder.embed(params, e.features) for e in split]
        vals = []
        for i in range(len(split)):
            for j in range(i + 1, len(split)):
                vals.append(math.exp(-2.0 * float(np.sum((emb[i] - emb[j]) ** 2))))
        assert abs(got - math.log(sum(vals) / len(vals))) <= 1e-10


class TestUtilization:
    def test_queries_inside_pool_score_zero(self, params):
        _, split = tiny_split()
        assert evaluation.utilization(params, split, split) == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force(self, params):
        ds, split = tiny_split()
        train = ds.train_split()
        got = evaluation.utilization(params, split, train)
        want = 0.0
        for q in split:
            qe = encoder.embed(params, q.features)
            best = min(float(np.sum((qe - encoder.embed(params, t.features)) ** 2))
                       for t in train)
            want += best
        assert abs(got - want / len(split)) <= 1e-10

    def test_superset_monotonicity_exact(self, params):
        ds, split = tiny_split()
        train = ds.train_split()
        rng = np.random.default_rng(12)
        base = evaluation.utilization(params, split, train)
        for _ in range(50):
            extra = rng.normal(size=(int(rng.integers(1, 8)), 5))
            extra /= np.linalg.norm(extra, axis=1, keepdims=True)
            aug = evaluation.utilization(params, split, train, mixed_vectors=extra)
            assert aug <= base

    def test_mixed_vectors_can_cover_queries(self, params):
        _, split = tiny_split()
        q_emb = np.stack([encoder.embed(params, e.features) for e in split])
        got = evaluation.utilization(params, split, [], mixed_vectors=q_emb)
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_empty_inputs_rejected(self, params):
        _, split = tiny_split()
        with pytest.raises(ValueError):
            evaluation.utilization(params, [], split)
        with pytest.raises(ValueError):
            evaluation.utilization(params, split, [])


class TestRecallAtK:
    def test_perfectly_clustered_classes(self):
        # tight blobs, widely separated, nearly linear encoder
        ds = datasets.generate_gaussian(4, 6, 4, 5.0, 0.01, 3)
        p = encoder.init_encoder(4, hidden_dims=(6,), embed_dim=5, split=1,
                                 seed=2, init_scale=0.05)
        split = ds.test_split()
        got = evaluation.recall_at_k(p, split, (1,))
        assert got[1] == 1.0

    def test_chance_level_for_unstructured_labels(self, params):
        # features carry no class signal: 16 balanced pseudo-classes
        hits = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            examples = [datasets.Example(features=rng.normal(size=4),
                                         class_id=i % 16)
                        for i in range(320)]
            hits.append(evaluation.recall_at_k(params, examples, (1,))[1])
        assert abs(float(np.mean(hits)) - 1.0 / 16.0) <= 0.03

    def test_matches_brute_force(self, params):
        _, split = tiny_split()
        ks = (1, 2, 4)
        got = evaluation.recall_at_k(params, split, ks)
        emb = [encoder.embed(params, e.features) for e in split]
        want = {k: 0 for k in ks}
        for i in range(len(split)):
            sims = []
            for j in range(len(split)):
                if j != i:
                    sims.append((float(emb[i] @ emb[j]), -j))
            ranked = [(-negj) for _, negj in sorted(sims, reverse=True)]
            for k in ks:
                if any(split[j].class_id == split[i].class_id
                       for j in ranked[:k]):
                    want[k] += 1
        for k in ks:
            assert abs(got[k] - want[k] / len(split)) <= 1e-10

    def test_non_decreasing_in_k(self, params):
        _, split = tiny_split()
        got = evaluation.recall_at_k(params, split, (1, 2, 4, 8))
        vals = [got[k] for k in sorted(got)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_oversized_k_rejected(self, params):
        _, split = tiny_split()
        with pytest.raises(ValueError):
            evaluation.recall_at_k(params, split, (len(split),))

    def test_tie_break_by_index(self):
        p, _ = antipodal_setup()
        # four copies of the same point: all similarities tie at 1
        examples = [datasets.Example(features=np.array([1.0]), class_id=c)
                    for c in (0, 1, 0, 0)]
        got = evaluation.recall_at_k(p, examples, (1,))
        # ties resolve to the lowest index: queries 2 and 3 hit example 0,
        # query 0 hits example 1 (class 1) and query 1 hits example 0 (class 0)
        assert got[1] == pytest.approx(0.5)


class TestEvaluateModel:
    def test_report_bundle(self, params):
        ds, split = tiny_split()
        report = evaluation.evaluate_model(params, split, ds.train_split())
        assert set(report.recall) == {1, 2, 4}
        assert report.alignment >= 0.0
        assert report.utilization >= 0.0
        assert all(0.0 <= v <= 1.0 for v in report.recall.values())
