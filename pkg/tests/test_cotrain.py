import math

import numpy as np
import pytest

from vr2robot.cotrain import (
    CotrainWeights,
    HeightTask,
    HeightTaskSpec,
    STANDARD_SUBSETS,
    ToyPolicy,
    compute_weights,
    expected_weighted_loss,
    mean_abs_error,
    run_mechanism_experiment,
    sample_batch,
    train_toy,
)
from vr2robot.dataset import Domain
from vr2robot.synthetic import stub_index_with_counts


class TestWeights:
    def test_reference_dataset_counts(self):
        # the deployed dataset's demo split: 1705 human / 1508 robot
        w = CotrainWeights.from_counts(1705, 1508)
        assert abs(w.alpha - 1705 / 3213) < 1e-12
        mass_robot = (1508 / 3213) * w.per_sample_weight[Domain.ROBOT]
        mass_human = (1705 / 3213) * w.per_sample_weight[Domain.HUMAN]
        assert abs(mass_robot - w.alpha) < 1e-12
        assert abs(mass_human - (1 - w.alpha)) < 1e-12

    def test_equal_counts(self):
        w = CotrainWeights.from_counts(7, 7)
        assert w.alpha == 0.5
        assert w.per_sample_weight[Domain.ROBOT] == 1.0
        assert w.per_sample_weight[Domain.HUMAN] == 1.0

    def test_one_three_hand_computed(self):
        w = CotrainWeights.from_counts(1, 3)
        assert w.alpha == 0.25
        assert w.per_sample_weight[Domain.ROBOT] == pytest.approx(1 / 3)
        assert w.per_sample_weight[Domain.HUMAN] == pytest.approx(3.0)
        # expected domain mass under uniform sampling: alpha and 1 - alpha
        assert (3 / 4) * w.per_sample_weight[Domain.ROBOT] == pytest.approx(w.alpha)
        assert (1 / 4) * w.per_sample_weight[Domain.HUMAN] == pytest.approx(1 - w.alpha)

    def test_mean_per_sample_weight_is_one(self):
        w = CotrainWeights.from_counts(11, 4)
        total = 11 * w.per_sample_weight[Domain.HUMAN] + 4 * w.per_sample_weight[Domain.ROBOT]
        assert total / 15 == pytest.approx(1.0, abs=1e-12)

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError, match="both domains"):
            CotrainWeights.from_counts(0, 5)
        with pytest.raises(ValueError, match="both domains"):
            CotrainWeights.from_counts(5, 0)

    def test_compute_weights_from_index(self):
        idx = stub_index_with_counts(3, 5)
        w = compute_weights(idx)
        assert w.alpha == 3 / 8

    def test_invariants_enforced(self):
        with pytest.raises(ValueError, match="alpha"):
            CotrainWeights(0.4, {Domain.ROBOT: 1.0, Domain.HUMAN: 1.0}, (1, 1))


class TestSampler:
    def test_golden_sequence(self):
        idx = stub_index_with_counts(2, 2)
        w = CotrainWeights.from_counts(2, 2)
        assert sample_batch(idx, w, 8, 123) == [
            "human00000", "robot00001", "robot00001", "robot00001",
            "robot00000", "human00001", "human00000", "robot00000",
        ]

    def test_reproducible(self):
        idx = stub_index_with_counts(5, 7)
        w = compute_weights(idx)
        assert sample_batch(idx, w, 100, 7) == sample_batch(idx, w, 100, 7)

    def test_binomial_bounds_million_draws(self):
        w = CotrainWeights.from_counts(1705, 1508)
        big_idx = stub_index_with_counts(20, 20)
        ids = sample_batch(big_idx, w, 1_000_000, 2024)
        frac = sum(1 for s in ids if s.startswith("robot")) / len(ids)
        sigma = math.sqrt(w.alpha * (1 - w.alpha) / 1_000_000)
        assert abs(frac - w.alpha) < 3 * sigma

    def test_empty_domain_rejected(self):
        idx = stub_index_with_counts(3, 2)
        w = compute_weights(idx)
        idx.episodes = [e for e in idx.episodes if e.domain is Domain.HUMAN]
        with pytest.raises(ValueError, match="both domains"):
            sample_batch(idx, w, 4, 0)


def grad_check(policy, x, y, w=None, tol=1e-5):
    loss, gw, gb = policy.loss_and_grads(x, y, w)
    h = 1e-6
    worst = 0.0
    for params, grads in ((policy.weights_, gw), (policy.biases_, gb)):
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            for k in range(0, flat.size, max(1, flat.size // 5)):  # spot-check entries
                orig = flat[k]
                flat[k] = orig + h
                lp = policy.loss_and_grads(x, y, w)[0]
                flat[k] = orig - h
                lm = policy.loss_and_grads(x, y, w)[0]
                flat[k] = orig
                fd = (lp - lm) / (2 * h)
                a = g.reshape(-1)[k]
                worst = max(worst, abs(a - fd) / max(1.0, abs(a) + abs(fd)))
    return worst


class TestToyPolicy:
    def test_gradient_check_many_configs(self):
        worst = 0.0
        for trial in range(100):
            rng = np.random.default_rng(trial)
            n_in = int(rng.integers(2, 6))
            n_out = int(rng.integers(1, 3))
            hidden = tuple(rng.integers(3, 9) for _ in range(int(rng.integers(1, 3))))
            policy = ToyPolicy(layer_sizes=hidden, seed=trial).init(n_in, n_out)
            x = rng.normal(size=(8, n_in))
            y = rng.normal(size=(8, n_out))
            w = rng.uniform(0.2, 2.0, size=8) if trial % 2 else None
            worst = max(worst, grad_check(policy, x, y, w))
        assert worst < 1e-5, f"worst relative gradient error {worst}"

    def test_linear_target_realizable(self):
        # a linear target is exactly representable only by the linear head
        # (tanh hidden layers merely approximate affine maps), so that is the
        # configuration where zero-noise training must reach ~zero loss
        rng = np.random.default_rng(0)
        x = rng.normal(size=(256, 3))
        target_w = rng.normal(size=(3, 1))
        y = x @ target_w + 0.3
        policy = ToyPolicy(layer_sizes=(), seed=1)
        train_toy(policy, x, y, lr=0.05, steps=8000, batch_size=64, rng=2)
        loss = float(np.mean((policy.forward(x) - y) ** 2))
        assert loss < 1e-6

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(64, 4))
        y = rng.normal(size=(64, 2))
        outs = []
        for _ in range(2):
            policy = ToyPolicy(seed=9)
            train_toy(policy, x, y, steps=50, rng=11)
            outs.append(policy.forward(x))
        assert np.array_equal(outs[0], outs[1])

    def test_divergence_guard_names_step(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(64, 3)) * 10
        y = rng.normal(size=(64, 1)) * 10
        policy = ToyPolicy(seed=0)
        with pytest.raises(RuntimeError, match=r"diverged at step \d+"):
            train_toy(policy, x, y, lr=50.0, steps=2000, rng=0)

    def test_single_domain_flag(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(32, 3))
        y = rng.normal(size=(32, 1))
        policy = ToyPolicy(seed=0)
        curve = train_toy(policy, x, y, weights=None, steps=20, rng=1)
        assert len(curve) == 20

    def test_estimator_params(self):
        p = ToyPolicy(layer_sizes=(32, 32), seed=5)
        assert p.get_params() == {"layer_sizes": (32, 32), "seed": 5}


class TestModeEquivalence:
    def test_expectation_equality_fixed_set(self):
        rng = np.random.default_rng(6)
        losses = rng.uniform(0.0, 2.0, size=40)
        domains = np.array([Domain.HUMAN.value] * 25 + [Domain.ROBOT.value] * 15)
        w = CotrainWeights.from_counts(25, 15)
        a = expected_weighted_loss(losses, domains, w, "sampling")
        b = expected_weighted_loss(losses, domains, w, "weighting")
        assert a == pytest.approx(b, rel=1e-12)

    def test_training_both_modes_run(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(60, 3))
        y = rng.normal(size=(60, 1))
        domains = np.array([Domain.HUMAN.value] * 40 + [Domain.ROBOT.value] * 20)
        w = CotrainWeights.from_counts(40, 20)
        for mode in ("weighting", "sampling"):
            policy = ToyPolicy(seed=1)
            curve = train_toy(policy, x, y, domains=domains, weights=w, mode=mode,
                              steps=30, rng=2)
            assert len(curve) == 30 and all(np.isfinite(curve))


class TestHeightTaskSpec:
    def test_defaults_match_study_heights(self):
        spec = HeightTaskSpec()
        assert spec.task("h_bucket").height_cm == 15.3
        assert spec.task("r_pad").height_cm == 0.3
        assert spec.task("r_platform").height_cm == 20.7

    def test_disjoint_ids(self):
        with pytest.raises(ValueError, match="disjoint"):
            HeightTaskSpec(tasks=[
                HeightTask("x", Domain.HUMAN, 1.0), HeightTask("x", Domain.ROBOT, 2.0),
            ])

    def test_positive_heights(self):
        with pytest.raises(ValueError, match="positive"):
            HeightTaskSpec(tasks=[HeightTask("x", Domain.HUMAN, -1.0)])

    def test_unknown_task(self):
        spec = HeightTaskSpec()
        with pytest.raises(ValueError, match="unknown task"):
            run_mechanism_experiment(spec, ("h_bucket", "nope"), seed=0)

    def test_pp_set_extension(self):
        spec = HeightTaskSpec().with_pp_set()
        assert len(spec.tasks) == 7


class TestMechanism:
    def test_deterministic(self):
        spec = HeightTaskSpec(samples_per_task=64)
        a = run_mechanism_experiment(spec, STANDARD_SUBSETS[3], seed=0, steps=200)
        b = run_mechanism_experiment(spec, STANDARD_SUBSETS[3], seed=0, steps=200)
        assert a.predicted_height_cm == b.predicted_height_cm

    def test_full_subset_interpolates(self, mechanism_suite):
        results = mechanism_suite[STANDARD_SUBSETS[3]]
        assert mean_abs_error(results) < 2.0

    def test_single_robot_task_biases_low(self, mechanism_suite):
        # training with only the low robot task pulls the prediction toward it
        pad = np.mean([r.predicted_height_cm for r in mechanism_suite[STANDARD_SUBSETS[1]]])
        full = np.mean([r.predicted_height_cm for r in mechanism_suite[STANDARD_SUBSETS[3]]])
        assert pad < full

    def test_error_ordering(self, mechanism_suite):
        errs = {s: mean_abs_error(r) for s, r in mechanism_suite.items()}
        h_only = errs[STANDARD_SUBSETS[0]]
        pad = errs[STANDARD_SUBSETS[1]]
        plat = errs[STANDARD_SUBSETS[2]]
        full = errs[STANDARD_SUBSETS[3]]
        assert h_only >= pad >= full
        assert h_only >= plat >= full
