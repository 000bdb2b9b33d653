import numpy as np
import pytest

from ktreg.augment import AugmentConfig
from ktreg.core import Dataset, InteractionSequence, SkillMap
from ktreg.losses import LossWeights
from ktreg.model import DktParams, backward, xavier_init
from ktreg.train import (
    AdamState,
    AugSpec,
    TrainConfig,
    _batch_objective,
    adam_step,
    draw_augmentation,
    grid_run,
    kfold_split,
    loss_and_grads,
    make_batches,
    noam_lr,
    subset_by_students,
    train_run,
)

SKILLS = SkillMap({q: {q % 3} for q in range(8)})


def seq_of(pairs, student="s"):
    return InteractionSequence(student, tuple(pairs))


def small_dataset(n_students=12, n_questions=8, length=10, seed=0):
    rng = np.random.default_rng(seed)
    seqs = [
        seq_of([(int(rng.integers(n_questions)), int(rng.integers(2)))
                for _ in range(length)], student=f"stu{i}")
        for i in range(n_students)
    ]
    return Dataset(tuple(seqs), n_questions)


class TestNoamLr:
    def test_peak_at_warmup(self):
        assert abs(noam_lr(4000, 0.001, 4000) - 0.001) < 1e-15

    def test_first_step(self):
        assert abs(noam_lr(1, 0.001, 4000) - 2.5e-7) < 1e-18

    def test_quarter_decay(self):
        assert abs(noam_lr(16000, 0.001, 4000) - 0.0005) < 1e-15

    def test_step_zero_rejected(self):
        with pytest.raises(ValueError):
            noam_lr(0, 0.001, 4000)

    def test_linear_ramp_then_decay(self):
        values = [noam_lr(s, 0.001, 100) for s in range(1, 400)]
        peak = int(np.argmax(values)) + 1
        assert peak == 100


def params_with_bout(x):
    base = {k: np.zeros_like(v)
            for k, v in xavier_init(1, 2, 2, seed=0).as_dict().items()}
    base["b_out"] = np.array([float(x)])
    return DktParams.from_dict(base)


def zero_grads(params):
    return {k: np.zeros_like(v) for k, v in params.as_dict().items()}


class TestAdamStep:
    def test_zero_gradient_leaves_params(self):
        p = xavier_init(2, 4, 4, seed=1)
        new_p, state = adam_step(p, zero_grads(p), AdamState.zeros(p), lr=0.1)
        for k, v in p.as_dict().items():
            assert np.array_equal(v, new_p.as_dict()[k])

    def test_first_step_is_signed_lr(self):
        p = params_with_bout(1.0)
        grads = zero_grads(p)
        grads["b_out"] = np.array([2.0])
        new_p, _ = adam_step(p, grads, AdamState.zeros(p), lr=0.1)
        # bias-corrected first step: m_hat/(sqrt(v_hat)+eps) = g/(|g|+eps) ~ sign(g)
        assert abs(new_p.b_out[0] - (1.0 - 0.1)) < 1e-8

    def test_three_steps_match_hand_rolled_oracle(self):
        # f(x) = x^2 from x = 1, constant lr 0.1; straight-line Adam arithmetic
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        x, m, v = 1.0, 0.0, 0.0
        expected = []
        for t in (1, 2, 3):
            g = 2 * x
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            m_hat = m / (1 - beta1**t)
            v_hat = v / (1 - beta2**t)
            x = x - 0.1 * m_hat / (np.sqrt(v_hat) + eps)
            expected.append(x)

        p = params_with_bout(1.0)
        state = AdamState.zeros(p)
        got = []
        for _ in range(3):
            grads = zero_grads(p)
            grads["b_out"] = np.array([2.0 * p.b_out[0]])
            p, state = adam_step(p, grads, state, lr=0.1)
            got.append(p.b_out[0])
        assert np.max(np.abs(np.array(got) - np.array(expected))) < 1e-12

    def test_nan_gradient_aborts(self):
        p = xavier_init(2, 4, 4, seed=1)
        grads = zero_grads(p)
        grads["w_x"][0, 0] = np.nan
        with pytest.raises(ValueError, match="w_x"):
            adam_step(p, grads, AdamState.zeros(p), lr=0.1)

    def test_shape_mismatch_rejected(self):
        p = xavier_init(2, 4, 4, seed=1)
        grads = zero_grads(p)
        grads["b"] = np.zeros(3)
        with pytest.raises(ValueError):
            adam_step(p, grads, AdamState.zeros(p), lr=0.1)


class TestMakeBatches:
    def test_sizes(self):
        seqs = [seq_of([(0, 1), (1, 0)], student=i) for i in range(130)]
        batches = make_batches(seqs, 64, seed=0)
        assert [len(b) for b in batches] == [64, 64, 2]

    def test_deterministic(self):
        seqs = [seq_of([(0, 1)], student=i) for i in range(20)]
        a = make_batches(seqs, 8, seed=5)
        b = make_batches(seqs, 8, seed=5)
        assert a == b
        c = make_batches(seqs, 8, seed=6)
        assert a != c

    def test_partition(self):
        seqs = [seq_of([(0, 1)], student=i) for i in range(45)]
        batches = make_batches(seqs, 10, seed=1)
        students = sorted(s.student_id for b in batches for s in b)
        assert students == list(range(45))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            make_batches([], 4, seed=0)


class TestKfoldSplit:
    def test_even_sizes(self):
        splits = kfold_split(list(range(10)), k=5, seed=0)
        assert all(len(test) == 2 for _, test in splits)

    def test_partition_properties(self):
        students = [f"s{i}" for i in range(23)]
        splits = kfold_split(students, k=5, seed=3)
        all_test = [s for _, test in splits for s in test]
        assert sorted(all_test) == sorted(students)  # union = all, disjoint
        sizes = sorted(len(test) for _, test in splits)
        assert sizes[-1] - sizes[0] <= 1
        for train, test in splits:
            assert not (set(train) & set(test))
            assert sorted(train + test) == sorted(students)

    def test_deterministic(self):
        assert kfold_split(list(range(15)), 5, seed=2) == \
            kfold_split(list(range(15)), 5, seed=2)

    def test_too_few_students(self):
        with pytest.raises(ValueError):
            kfold_split([1, 2, 3], k=5, seed=0)


class TestDrawAugmentation:
    def test_epoch_steps_the_stream(self):
        spec = AugSpec("insertion", AugmentConfig(0.5, target_response=1, seed=4),
                       LossWeights(1.0, 1.0))
        seq = seq_of([(i % 8, i % 2) for i in range(20)])
        a = draw_augmentation(spec, seq, None, 8, epoch=0)
        b = draw_augmentation(spec, seq, None, 8, epoch=1)
        assert a.touched != b.touched

    def test_same_epoch_is_stable(self):
        spec = AugSpec("deletion", AugmentConfig(0.5, target_response=1, seed=4),
                       LossWeights(1.0, 1.0))
        seq = seq_of([(i % 8, 1) for i in range(20)])
        assert draw_augmentation(spec, seq, None, 8, epoch=3) == \
            draw_augmentation(spec, seq, None, 8, epoch=3)


def all_kind_specs():
    return (
        AugSpec("replacement", AugmentConfig(0.5, "skill", seed=1),
                LossWeights(1.0, 10.0)),
        AugSpec("replacement", AugmentConfig(0.4, "question_random", seed=2),
                LossWeights(0.0, 5.0), variant="full"),
        AugSpec("replacement", AugmentConfig(0.4, "question_random", seed=7),
                LossWeights(1.0, 2.0), variant="replaced_only"),
        AugSpec("insertion", AugmentConfig(0.3, target_response=1, seed=3),
                LossWeights(1.0, 10.0), reversed_reg=True),
        AugSpec("insertion", AugmentConfig(0.3, target_response=0, seed=5),
                LossWeights(1.0, 1.0)),
        AugSpec("deletion", AugmentConfig(0.4, target_response=0, seed=4),
                LossWeights(1.0, 3.0)),
    )


class TestBatchedObjectiveMatchesSequenceObjective:
    def test_values_and_gradients(self):
        rng = np.random.default_rng(8)
        seqs = [
            seq_of([(int(rng.integers(8)), int(rng.integers(2)))
                    for _ in range(int(rng.integers(3, 12)))], student=f"b{i}")
            for i in range(5)
        ]
        params = xavier_init(8, 6, 6, seed=2)
        specs = all_kind_specs()
        draws = [[draw_augmentation(spec, s, SKILLS, 8) for s in seqs]
                 for spec in specs]

        batch_loss, batch_grads = backward(
            params, lambda pt: _batch_objective(pt, seqs, draws, specs)
        )

        seq_losses = []
        seq_grads = []
        for b, seq in enumerate(seqs):
            terms = [(draws[j][b], specs[j]) for j in range(len(specs))]
            value, grads = loss_and_grads(params, seq, terms)
            seq_losses.append(value)
            seq_grads.append(grads)

        assert abs(batch_loss - np.mean(seq_losses)) < 1e-12
        for k in batch_grads:
            mean_grad = np.mean([g[k] for g in seq_grads], axis=0)
            assert np.max(np.abs(batch_grads[k] - mean_grad)) < 1e-10

    def test_fully_replaced_sequence_contributes_zero_kt_loss(self):
        # alpha = 1 replaces every position: the augmented KT mask is empty
        seqs = [seq_of([(0, 1), (1, 0)], student="tiny")]
        spec = AugSpec("replacement", AugmentConfig(1.0, "question_random", seed=1),
                       LossWeights(1.0, 1.0))
        draws = [[draw_augmentation(spec, seqs[0], None, 8)]]
        assert draws[0][0].touched == frozenset({0, 1})
        params = xavier_init(8, 4, 4, seed=3)
        components = {}
        backward(params,
                 lambda pt: _batch_objective(pt, seqs, draws, (spec,), components))
        assert float(components[f"l_aug_{spec.label}"].value) == 0.0

        terms = [(draws[0][0], spec)]
        value, _ = loss_and_grads(params, seqs[0], terms)
        batch_value, _ = backward(
            params, lambda pt: _batch_objective(pt, seqs, draws, (spec,)))
        assert abs(value - batch_value) < 1e-12


class TestTrainRun:
    def test_no_augmentations_is_vanilla(self):
        data = small_dataset()
        cfg = TrainConfig(epochs=2, batch_size=6, base_lr=0.01, warmup_steps=10,
                          max_seq_len=20, seed=1, d_emb=4, d_hidden=4)
        result = train_run(data, None, cfg)
        for record in result.metrics:
            assert abs(record["loss"] - record["l_ori"]) < 1e-12

    def test_lambda_reg_zero_reduces_to_augmentation_only(self):
        data = small_dataset()
        spec = AugSpec("insertion", AugmentConfig(0.3, target_response=1, seed=2),
                       LossWeights(lambda_aug=1.0, lambda_reg=0.0))
        cfg = TrainConfig(epochs=2, batch_size=6, base_lr=0.01, warmup_steps=10,
                          max_seq_len=20, seed=1, d_emb=4, d_hidden=4,
                          augmentations=(spec,))
        result = train_run(data, None, cfg)
        for record in result.metrics:
            expected = record["l_ori"] + record[f"l_aug_{spec.label}"]
            assert abs(record["loss"] - expected) < 1e-12

    def test_bitwise_reproducible(self):
        data = small_dataset()
        spec = AugSpec("replacement", AugmentConfig(0.3, "skill", seed=5),
                       LossWeights(1.0, 10.0))
        cfg = TrainConfig(epochs=3, batch_size=5, base_lr=0.01, warmup_steps=20,
                          max_seq_len=20, seed=9, d_emb=4, d_hidden=4,
                          augmentations=(spec,))
        r1 = train_run(data, SKILLS, cfg)
        r2 = train_run(data, SKILLS, cfg)
        assert r1.metrics == r2.metrics
        for k, v in r1.params.as_dict().items():
            assert np.array_equal(v, r2.params.as_dict()[k])

    def test_loss_non_increasing_on_separable_toy(self):
        # all-correct answers, full-batch updates: L_ori must not increase
        seqs = [seq_of([(i % 3, 1) for i in range(8)], student=f"t{j}")
                for j in range(6)]
        data = Dataset(tuple(seqs), 3)
        cfg = TrainConfig(epochs=50, batch_size=8, base_lr=0.01, warmup_steps=25,
                          max_seq_len=20, seed=3, d_emb=4, d_hidden=4)
        result = train_run(data, None, cfg)
        losses = [m["l_ori"] for m in result.metrics[:50]]
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-12)

    def test_dropped_short_sequences_counted(self):
        seqs = [seq_of([(0, 1)], student="one"),
                seq_of([(0, 1), (1, 0), (2, 1)], student="three")]
        data = Dataset(tuple(seqs), 3)
        cfg = TrainConfig(epochs=1, batch_size=2, base_lr=0.01, warmup_steps=5,
                          max_seq_len=10, seed=0, d_emb=4, d_hidden=4)
        result = train_run(data, None, cfg)
        assert result.n_dropped_short == 1

    def test_validation_auc_logged(self):
        data = small_dataset()
        cfg = TrainConfig(epochs=2, batch_size=6, base_lr=0.01, warmup_steps=10,
                          max_seq_len=20, seed=1, d_emb=4, d_hidden=4, eval_every=2)
        result = train_run(data, None, cfg, val_data=small_dataset(seed=99))
        assert any("val_auc" in m for m in result.metrics)

    def test_early_stopping_respects_patience(self):
        data = small_dataset()
        cfg = TrainConfig(epochs=30, batch_size=6, base_lr=0.01, warmup_steps=10,
                          max_seq_len=20, seed=1, d_emb=4, d_hidden=4,
                          eval_every=1, early_stop_patience=2)
        full = TrainConfig(epochs=30, batch_size=6, base_lr=0.01, warmup_steps=10,
                           max_seq_len=20, seed=1, d_emb=4, d_hidden=4)
        stopped = train_run(data, None, cfg, val_data=small_dataset(seed=99))
        budget = train_run(data, None, full)
        assert len(stopped.metrics) <= len(budget.metrics)


class TestGridRun:
    def test_rows_and_best_flags(self):
        data = small_dataset(n_students=10)
        spec = AugSpec("insertion", AugmentConfig(0.3, target_response=1, seed=1),
                       LossWeights(1.0, 1.0))
        cfg = TrainConfig(epochs=1, batch_size=8, base_lr=0.01, warmup_steps=5,
                          max_seq_len=20, seed=4, d_emb=4, d_hidden=4,
                          augmentations=(spec,))
        rows = grid_run(data, None, cfg, alphas=(0.1, 0.3), lambda_regs=(1.0,),
                        lambda_augs=(0.0, 1.0), k_folds=2)
        assert len(rows) == 2 * 1 * 2
        assert sum(r["best"] for r in rows) == 1
        for r in rows:
            assert len(r["fold_aucs"]) == 2
            assert 0.0 <= r["mean_auc"] <= 1.0

    def test_deterministic(self):
        data = small_dataset(n_students=8)
        spec = AugSpec("deletion", AugmentConfig(0.3, target_response=1, seed=1),
                       LossWeights(1.0, 1.0))
        cfg = TrainConfig(epochs=1, batch_size=8, base_lr=0.01, warmup_steps=5,
                          max_seq_len=20, seed=4, d_emb=4, d_hidden=4,
                          augmentations=(spec,))
        kwargs = dict(alphas=(0.3,), lambda_regs=(1.0,), lambda_augs=(1.0,),
                      k_folds=2)
        assert grid_run(data, None, cfg, **kwargs) == grid_run(data, None, cfg, **kwargs)


class TestSubset:
    def test_subset_by_students(self):
        data = small_dataset(n_students=6)
        sub = subset_by_students(data, ["stu1", "stu3"])
        assert [s.student_id for s in sub.sequences] == ["stu1", "stu3"]
        assert sub.n_questions == data.n_questions
