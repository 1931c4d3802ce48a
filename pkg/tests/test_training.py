"""Trainer mechanics: evaluation protocol, degenerate-weight equivalence,
schedules, determinism, and the probe."""

import numpy as np
import pytest

from os2e.datagen import (
    gen_aux_dataset,
    gen_vector_dataset,
    make_source_checkpoint,
    make_truth,
    preset_vector_benchmark,
)
from os2e.network import init_from_source
from os2e.training import (
    Dataset,
    SoftTargets,
    TransferConfig,
    data_transfer_train,
    evaluate,
    init_transfer_train,
    knowledge_transfer_train,
    linear_probe_train,
    probe_features,
)


def benchmark_parts(seed=0, n_train=None):
    config = preset_vector_benchmark(seed)
    if n_train is not None:
        from dataclasses import replace

        config = replace(config, n_train=n_train)
    truth = make_truth(config)
    train, test, soft = gen_vector_dataset(config, truth)
    source = make_source_checkpoint(
        config, truth, trunk=(64,), kind="planted", seed=seed
    )
    return config, truth, train, test, soft, source


def quick_config(mode="init", seed=0, **kw):
    defaults = dict(k_iters=40, batch_size=16, dropout_rate=0.0, seed=seed)
    defaults.update(kw)
    return TransferConfig(mode=mode, **defaults)


class TestEvaluate:
    def test_hand_computed_ap(self):
        # class-0 positives land at ranks 1 and 3: AP = (1/1 + 2/3) / 2 = 5/6
        scores = np.array([[0.9, 0.1], [0.5, 0.5], [0.4, 0.6], [0.1, 0.9]])
        labels = np.array([0, 1, 0, 1])
        result = evaluate(scores, labels)
        assert result.average_precision[0] == (1.0 + 2.0 / 3.0) / 2.0
        np.testing.assert_allclose(result.average_precision[0], 5.0 / 6.0, atol=1e-15)

    def test_perfect_scores(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        scores = np.eye(3)[labels]
        result = evaluate(scores, labels)
        assert result.accuracy == 1.0
        assert result.mean_ap == 1.0

    def test_identical_scores_tie_rule(self):
        labels = np.array([1, 0, 2, 0])
        result = evaluate(np.full((4, 3), 0.25), labels)
        # argmax resolves ties to index 0, so accuracy = frequency of class 0
        assert result.accuracy == 0.5

    def test_zero_positive_class_excluded(self):
        scores = np.random.default_rng(0).random((5, 3))
        labels = np.array([0, 0, 1, 1, 0])
        result = evaluate(scores, labels)
        assert result.skipped_classes == [2]
        assert np.isnan(result.average_precision[2])
        assert np.isfinite(result.mean_ap)

    def test_map_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.random((30, 4))
        labels = rng.integers(0, 4, size=30)
        base = evaluate(scores, labels)
        warped = scores.copy()
        warped[:, 2] = np.exp(3.0 * warped[:, 2]) + 5.0
        assert evaluate(warped, labels).average_precision[2] == base.average_precision[2]

    def test_descending_tie_broken_by_sample_index(self):
        # equal scores keep sample order; positive at index 0 outranks index 1
        scores = np.array([[0.5, 0.5], [0.5, 0.5]])
        result = evaluate(scores, np.array([0, 1]))
        assert result.average_precision[0] == 1.0
        assert result.average_precision[1] == 0.5


class TestInitTransfer:
    def test_overfit_sanity_small_train_set(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=3, n_train=32)
        tc = TransferConfig(
            mode="init", k_iters=200, batch_size=32, dropout_rate=0.0, lr=0.05, seed=3
        )
        report = init_transfer_train(source, train, test, tc)
        assert report.final.iteration == 500
        assert report.final.train_loss < 0.01

    def test_zero_iterations_reports_initialization(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=4)
        tc = quick_config(seed=4, k_iters=0)
        report = init_transfer_train(source, train, test, tc)
        assert len(report.records) == 1
        assert report.records[0].iteration == 0
        net = report.checkpoint.config
        expected = init_from_source(net, source.params, tc.seed)
        np.testing.assert_array_equal(report.checkpoint.params.values, expected.values)

    def test_planted_source_beats_random_source(self):
        diffs = []
        for seed in range(5):
            config, truth, train, test, soft, _ = benchmark_parts(seed=seed)
            tc = quick_config(seed=seed, k_iters=60)
            planted = make_source_checkpoint(config, truth, (64,), "planted", seed)
            random_src = make_source_checkpoint(config, truth, (64,), "random", seed)
            rep_p = init_transfer_train(planted, train, test, tc)
            rep_r = init_transfer_train(random_src, train, test, tc)
            diffs.append(rep_r.final.test_loss - rep_p.final.test_loss)
        assert np.mean(diffs) > 0.0

    def test_seeded_determinism_bitwise(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=5)
        tc = quick_config(seed=5)
        a = init_transfer_train(source, train, test, tc)
        b = init_transfer_train(source, train, test, tc)
        np.testing.assert_array_equal(
            a.checkpoint.params.values, b.checkpoint.params.values
        )

    def test_train_loss_decreases(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=6)
        report = init_transfer_train(source, train, test, quick_config(seed=6))
        assert report.final.train_loss <= report.records[0].train_loss

    def test_divergence_reported_with_iteration(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=7)
        tc = quick_config(seed=7, lr=1e6)
        with pytest.raises(ValueError, match="divergence at iteration"):
            init_transfer_train(source, train, test, tc)

    def test_lr_schedule_steps(self):
        tc = TransferConfig(mode="init", k_iters=100, lr=0.01)
        assert tc.total_iters == 250
        assert tc.lr_at(0) == 0.01
        assert tc.lr_at(99) == 0.01
        assert tc.lr_at(100) == pytest.approx(0.001)
        assert tc.lr_at(249) == pytest.approx(0.0001)


def _shared_slices(report):
    """Trunk and event-head parameter values, concatenated, per iteration."""
    params = report.checkpoint.params
    names = [n for n, _, _ in params.layout if n.startswith(("trunk", "head0"))]
    slices = [params.slice_of(n) for n in names]

    def extract(flat):
        return np.concatenate([flat[s] for s in slices])

    return [extract(step) for step in report.trajectory]


class TestDegenerateWeights:
    def test_alpha_zero_matches_init_bitwise(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=8)
        tc_init = quick_config("init", seed=8, track_params=True)
        tc_know = quick_config("knowledge", seed=8, alpha=0.0, track_params=True)
        rep_init = init_transfer_train(source, train, test, tc_init)
        rep_know = knowledge_transfer_train(source, train, test, soft, tc_know)
        for a, b in zip(_shared_slices(rep_init), _shared_slices(rep_know)):
            np.testing.assert_array_equal(a, b)

    def test_beta_zero_matches_init_bitwise(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=9)
        aux = gen_aux_dataset(config, truth)
        tc_init = quick_config("init", seed=9, track_params=True)
        tc_data = quick_config("data", seed=9, beta=0.0, track_params=True)
        rep_init = init_transfer_train(source, train, test, tc_init)
        rep_data = data_transfer_train(source, train, test, aux, tc_data)
        for a, b in zip(_shared_slices(rep_init), _shared_slices(rep_data)):
            np.testing.assert_array_equal(a, b)


class TestKnowledgeTransfer:
    def test_missing_soft_target_row_rejected(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=10)
        short = SoftTargets(values=soft.values[:-1], concept_ids=soft.concept_ids)
        with pytest.raises(ValueError, match="missing soft target row"):
            knowledge_transfer_train(source, train, test, short, quick_config("knowledge"))

    def test_one_hot_soft_targets_act_as_labels(self):
        # teacher rows that are exact one-hots make the imitation loss a
        # second classification loss; training still runs and improves
        config, truth, train, test, soft, source = benchmark_parts(seed=11)
        onehot = np.zeros_like(soft.values)
        onehot[np.arange(len(train)), soft.values.argmax(axis=1)] = 1.0
        report = knowledge_transfer_train(
            source, train, test,
            SoftTargets(values=onehot, concept_ids=soft.concept_ids),
            quick_config("knowledge", seed=11, alpha=0.25),
        )
        assert report.final.train_loss <= report.records[0].train_loss


class TestDataTransfer:
    def test_empty_aux_rejected(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=12)
        empty = Dataset(np.zeros((0, config.feature_dim)), np.zeros(0, dtype=int), 4)
        with pytest.raises(ValueError, match="empty aux dataset"):
            data_transfer_train(source, train, test, empty, quick_config("data"))

    def test_runs_and_improves(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=13)
        aux = gen_aux_dataset(config, truth)
        report = data_transfer_train(
            source, train, test, aux, quick_config("data", seed=13)
        )
        assert report.final.train_loss <= report.records[0].train_loss
        assert report.checkpoint.config.heads == (4, aux.num_classes)


class TestLinearProbe:
    def test_separable_two_class_toy(self):
        rng = np.random.default_rng(14)
        protos = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
        labels = rng.integers(0, 2, size=120)
        features = probe_features(protos[labels])
        train = Dataset(features[:60], labels[:60], 2)
        test = Dataset(features[60:], labels[60:], 2)
        report = linear_probe_train(train, test, quick_config("probe", k_iters=80))
        assert report.final.test_accuracy == 1.0

    def test_shuffled_labels_give_chance_accuracy(self):
        config, truth, train, test, soft, source = benchmark_parts(seed=15)
        rng = np.random.default_rng(15)
        shuffled = train.labels.copy()
        rng.shuffle(shuffled)
        probe_train = Dataset(probe_features(train.features), shuffled, 4)
        probe_test = Dataset(probe_features(test.features), test.labels, 4)
        report = linear_probe_train(
            probe_train, probe_test, quick_config("probe", seed=15, k_iters=150)
        )
        assert abs(report.final.test_accuracy - 0.25) <= 0.1

    def test_rejects_unnormalized_rows(self):
        train = Dataset(np.full((4, 3), 2.0), [0, 1, 0, 1], 2)
        with pytest.raises(ValueError, match="l2-normalized"):
            linear_probe_train(train, train, quick_config("probe"))


class TestProbeFeatures:
    def test_rows_unit_or_zero(self):
        rng = np.random.default_rng(16)
        raw = rng.random((10, 6))
        raw[3] = 0.0
        norms = np.linalg.norm(probe_features(raw), axis=1)
        assert norms[3] == 0.0
        np.testing.assert_allclose(np.delete(norms, 3), 1.0, atol=1e-12)
