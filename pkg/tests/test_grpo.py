import math

import numpy as np
import pytest

from groundrl.grpo import (
    CandidateEnvironment,
    CandidatePolicy,
    GrpoConfig,
    PolicySnapshot,
    SampledGroup,
    compute_advantages,
    grpo_objective,
    kl_term,
    make_optimizer,
    make_rng,
    objective_and_gradient,
    sample_group,
    total_variation,
    train,
    train_step,
)
from groundrl.modulation import ModulationConfig
from groundrl.selftest import random_grpo_point
from groundrl.synthetic import GeneratorConfig, build_toy_task
from helpers import central_difference, naive_objective


class TestAdvantages:
    def test_one_two_three(self):
        # Sample std is 1, so only the 1e-6 guard separates the result from [-1, 0, 1].
        a = compute_advantages([1, 2, 3])
        np.testing.assert_allclose(a, [-1 / (1 + 1e-6), 0, 1 / (1 + 1e-6)], rtol=0, atol=1e-15)
        np.testing.assert_allclose(a, [-1, 0, 1], atol=1e-5)

    def test_two_rewards(self):
        a = compute_advantages([0, 4])
        np.testing.assert_allclose(a, [-2 / (2 * math.sqrt(2)), 2 / (2 * math.sqrt(2))], atol=1e-6)

    def test_constant(self):
        assert compute_advantages([2.5] * 8).tolist() == [0.0] * 8

    def test_population_mode(self):
        a = compute_advantages([1, 3], std_mode="population")
        np.testing.assert_allclose(a, [-1, 1], atol=1e-5)

    def test_sums_to_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            r = rng.uniform(0, 4, size=int(rng.integers(2, 17)))
            assert abs(compute_advantages(r).sum()) < 1e-9

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            r = rng.uniform(0, 4, size=8)
            c = float(rng.uniform(0.5, 5))
            # Exact up to the effect of the additive guard on the scaled std.
            np.testing.assert_allclose(compute_advantages(r * c), compute_advantages(r), atol=1e-5)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            compute_advantages([1.0])


class TestSampling:
    def test_uniform_frequencies(self):
        policy = CandidatePolicy.uniform({"q": 4})
        draws = sample_group(policy, "q", 40_000, 0)
        freq = np.bincount(draws, minlength=4) / len(draws)
        np.testing.assert_allclose(freq, 0.25, atol=0.01)

    def test_saturated(self):
        policy = CandidatePolicy({"q": [20.0, 0, 0, 0]})
        assert set(sample_group(policy, "q", 1000, 1)) == {0}

    def test_deterministic(self):
        policy = CandidatePolicy({"q": [0.3, -1.0, 2.0]})
        assert sample_group(policy, "q", 64, 42) == sample_group(policy, "q", 64, 42)

    def test_unknown_prompt(self):
        with pytest.raises(KeyError):
            sample_group(CandidatePolicy.uniform({"q": 3}), "missing", 4, 0)

    def test_snapshot_is_frozen(self):
        snap = CandidatePolicy({"q": [1.0, 2.0]}).snapshot()
        with pytest.raises(ValueError):
            snap.logits["q"][0] = 5.0

    def test_needs_two_candidates(self):
        with pytest.raises(ValueError):
            CandidatePolicy({"q": [1.0]})


class TestKL:
    def test_zero_at_equality(self):
        p = CandidatePolicy({"q": [0.1, 0.7, -0.2]})
        assert kl_term(p, p.snapshot(), "q", 1) == 0.0

    def test_positive(self):
        p = CandidatePolicy({"q": [0.1, 0.7, -0.2]})
        ref = PolicySnapshot({"q": [0.0, 0.0, 0.0]})
        assert all(kl_term(p, ref, "q", k) > 0 for k in range(3))

    def test_ratio_e(self):
        # pi = [1/(1+e), e/(1+e)] vs ref = [e/(1+e), 1/(1+e)] gives ratio e at index 0.
        p = CandidatePolicy({"q": [0.0, 1.0]})
        ref = PolicySnapshot({"q": [1.0, 0.0]})
        assert kl_term(p, ref, "q", 0) == pytest.approx(math.e - 2, abs=1e-12)

    def test_zero_probability(self):
        p = CandidatePolicy({"q": [0.0, 1e6]})
        with pytest.raises(ValueError):
            kl_term(p, p.snapshot(), "q", 0)


class TestObjective:
    def test_on_policy_beta_zero_is_mean_advantage(self):
        rng = np.random.default_rng(0)
        policy, _, _, groups, advs = random_grpo_point(rng)
        snap = policy.snapshot()
        value = grpo_objective(policy, snap, snap, groups, advs, GrpoConfig(beta=0.0))
        assert abs(value) < 1e-12

    def test_kl_vanishes_when_all_equal(self):
        rng = np.random.default_rng(1)
        policy, _, _, groups, _ = random_grpo_point(rng)
        advs = [rng.normal(size=len(g.indices)) for g in groups]
        snap = policy.snapshot()
        value = grpo_objective(policy, snap, snap, groups, advs, GrpoConfig(beta=0.04))
        expected = np.mean([np.mean(a) for a in advs])
        assert value == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("beta", [0.0, 0.04, 1.0])
    def test_matches_scalar_transcription(self, beta):
        rng = np.random.default_rng(2)
        for _ in range(10):
            point = random_grpo_point(rng)
            got = grpo_objective(*point, GrpoConfig(beta=beta))
            assert got == pytest.approx(naive_objective(*point, beta), abs=1e-12)

    @pytest.mark.parametrize("beta", [0.0, 0.04])
    def test_gradient_vs_central_difference(self, beta):
        rng = np.random.default_rng(3)
        for _ in range(20):
            point = random_grpo_point(rng)
            _, analytic = objective_and_gradient(*point, GrpoConfig(beta=beta))
            numeric = central_difference(*point, beta)
            a = np.concatenate([analytic[p] for p in numeric])
            b = np.concatenate(list(numeric.values()))
            assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-4

    def test_clipping_zeroes_gradient_outside_band(self):
        policy = CandidatePolicy({"q": [2.0, 0.0]})
        old = PolicySnapshot({"q": [0.0, 0.0]})
        groups = [SampledGroup("q", (0, 1))]
        cfg = GrpoConfig(beta=0.0, clip_epsilon=0.2)
        # Candidate 0 has ratio ~1.76 with positive advantage: clipped, no gradient.
        value, grads = objective_and_gradient(policy, old, old, groups, [[1.0, 0.0]], cfg)
        assert value == pytest.approx(1.2 / 2)
        np.testing.assert_allclose(grads["q"], 0.0)


def toy_env(n_prompts=16, seed=0):
    task = build_toy_task(GeneratorConfig(seed=seed), n_prompts)
    return task, CandidateEnvironment(task.prompts, task.candidates)


class TestTraining:
    def test_zero_learning_rate_is_bit_identical(self):
        _, env = toy_env(4)
        policy = CandidatePolicy({pid: np.linspace(-1, 1, k) for pid, k in env.sizes().items()})
        for opt in ("adam", "sgd"):
            cfg = GrpoConfig(learning_rate=0.0, steps=5, optimizer=opt)
            result = train(env, cfg, ModulationConfig(), policy=policy)
            for pid in env.prompt_ids:
                assert result.policy.logits[pid].tobytes() == policy.logits[pid].tobytes()

    def test_train_step_does_not_mutate_input(self):
        _, env = toy_env(2)
        policy = CandidatePolicy.uniform(env.sizes())
        before = {p: z.copy() for p, z in policy.logits.items()}
        new, report = train_step(
            policy, env, env.prompt_ids, GrpoConfig(), ModulationConfig(),
            ref=policy.snapshot(), rng=make_rng(0),
        )
        assert all(np.array_equal(policy.logits[p], before[p]) for p in before)
        assert 0.0 <= report.cot_proportion <= 1.0
        assert report.mean_naive_reward <= 4.0

    def test_large_beta_stays_near_reference(self):
        _, env = toy_env(8)
        result = train(env, GrpoConfig(beta=1e3, steps=200), ModulationConfig(), hybrid=False)
        worst = max(
            total_variation(result.policy.probs(p), result.initial.probs(p)) for p in env.prompt_ids
        )
        assert worst <= 0.05

    def test_learns_best_candidate(self):
        task, env = toy_env(16)
        result = train(env, GrpoConfig(steps=200), ModulationConfig())
        start, end = env.expected_reward(result.initial), env.expected_reward(result.policy)
        assert end - start >= 0.5 * (4.0 - start)
        hits = [result.policy.probs(p)[task.best[p]] > 0.9 for p in env.prompt_ids]
        assert np.mean(hits) >= 0.95

    def test_best_probability_trends_up_without_kl(self):
        task, env = toy_env(8, seed=3)
        trace = []
        policy = CandidatePolicy.uniform(env.sizes())
        cfg = GrpoConfig(beta=0.0, steps=200)
        rng, opt, ref = make_rng(0), make_optimizer(cfg), policy.snapshot()
        for step in range(cfg.steps):
            policy, _ = train_step(
                policy, env, env.prompt_ids, cfg, ModulationConfig(), ref=ref, rng=rng, optimizer=opt, step=step
            )
            trace.append(np.mean([policy.probs(p)[task.best[p]] for p in env.prompt_ids]))
        window = np.convolve(trace, np.ones(50) / 50, mode="valid")
        assert np.all(np.diff(window) >= -1e-12)

    def test_deterministic_given_seed(self):
        _, env = toy_env(4)
        a = train(env, GrpoConfig(steps=10, seed=5), ModulationConfig())
        b = train(env, GrpoConfig(steps=10, seed=5), ModulationConfig())
        assert [r.to_dict() for r in a.reports] == [r.to_dict() for r in b.reports]


@pytest.mark.parametrize(
    "kwargs", [{"group_size": 1}, {"beta": -1}, {"std_mode": "mad"}, {"clip_epsilon": -0.1}, {"optimizer": "rmsprop"}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GrpoConfig(**kwargs)
