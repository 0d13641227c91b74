import logging

import numpy as np
import pytest
from scipy.stats import chisquare

from app.core.errors import CoverageError
from app.models.scenario import Cell, ContingencyTable
from app.services.bandit_env import (
    NoiseMode,
    apply_noise,
    env_step,
    make_interactive_env,
    sample_logged_record,
    sample_logged_stream,
)
from app.services.scenario_service import table_marginals


def _table(cells, instances=("n0", "n1"), arms=("a0", "a1")):
    return ContingencyTable(instance_names=list(instances), arm_names=list(arms), cells=cells)


class TestApplyNoise:
    def test_zero_sigma_keeps_exact_rates(self, kidney, rng):
        noisy = apply_noise(kidney, 0.0, rng)
        assert np.array_equal(noisy.rates, table_marginals(kidney).success_rate)

    def test_noise_is_logged(self, kidney, rng, caplog):
        with caplog.at_level(logging.DEBUG, logger="app.services.bandit_env"):
            apply_noise(kidney, 0.1, rng, NoiseMode.SAMPLE)
        assert [r.getMessage() for r in caplog.records if r.name == "app.services.bandit_env"] == ["Applied sample noise with sigma 0.1 to a 2x2 table"]

    def test_cell_perturbation_statistics(self, kidney):
        exact = table_marginals(kidney).success_rate
        deltas = []
        for seed in range(1000):
            noisy = apply_noise(kidney, 0.1, np.random.default_rng(seed))
            assert ((noisy.rates >= 0) & (noisy.rates <= 1)).all()
            assert (np.abs(noisy.rates - exact) <= 0.5).all()
            interior = exact < 0.7
            deltas.extend(np.abs(noisy.rates - exact)[interior].tolist())
        assert np.mean(deltas) == pytest.approx(0.1 * np.sqrt(2 / np.pi), abs=0.006)

    def test_clamped_to_one(self):
        table = _table([Cell(instance=0, arm=0, successes=98, trials=100)], instances=("n0",), arms=("a0",))
        clamped = [apply_noise(table, 0.5, np.random.default_rng(s)).rates[0, 0] for s in range(200)]
        assert max(clamped) == 1.0
        assert min(clamped) >= 0.0

    def test_sample_mode_keeps_table_rates(self, kidney, rng):
        noisy = apply_noise(kidney, 0.1, rng, NoiseMode.SAMPLE)
        assert noisy.mode is NoiseMode.SAMPLE
        assert np.array_equal(noisy.rates, table_marginals(kidney).success_rate)

    def test_negative_sigma(self, kidney, rng):
        with pytest.raises(ValueError):
            apply_noise(kidney, -0.1, rng)


class TestLoggedStream:
    def test_pairs_follow_the_table(self, kidney, rng):
        stream = sample_logged_stream(apply_noise(kidney, 0.0, rng), 100_000, rng)
        observed = np.zeros((2, 2))
        np.add.at(observed, (stream.instances, stream.arms), 1)
        expected = kidney.trials_matrix() / 700 * 100_000
        assert chisquare(observed.ravel(), expected.ravel()).pvalue > 1e-4

        small, closed = kidney.instance_index("small"), kidney.arm_index("closed")
        assert observed[small, closed] / 100_000 == pytest.approx(270 / 700, abs=0.01)

    def test_success_rate_of_a_cell(self, kidney, rng):
        stream = sample_logged_stream(apply_noise(kidney, 0.0, rng), 100_000, rng)
        small, open_ = kidney.instance_index("small"), kidney.arm_index("open")
        mask = (stream.instances == small) & (stream.arms == open_)
        assert stream.rewards[mask].mean() == pytest.approx(81 / 87, abs=0.01)

    def test_single_cell_table(self, rng):
        table = _table([Cell(instance=0, arm=0, successes=1, trials=3)], instances=("n0",), arms=("a0",))
        noisy = apply_noise(table, 0.0, rng)
        for _ in range(20):
            record = sample_logged_record(noisy, rng)
            assert (record.instance, record.arm) == (0, 0)

    def test_sample_noise_is_unbiased_away_from_bounds(self, rng):
        table = _table([Cell(instance=0, arm=0, successes=50, trials=100)], instances=("n0",), arms=("a0",))
        stream = sample_logged_stream(apply_noise(table, 0.1, rng, NoiseMode.SAMPLE), 100_000, rng)
        assert stream.rewards.mean() == pytest.approx(0.5, abs=0.01)

    def test_same_seed_same_stream(self, kidney):
        a = sample_logged_stream(apply_noise(kidney, 0.1, np.random.default_rng(3)), 1000, np.random.default_rng(4))
        b = sample_logged_stream(apply_noise(kidney, 0.1, np.random.default_rng(3)), 1000, np.random.default_rng(4))
        assert np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.instances, b.instances)


class TestInteractiveEnv:
    def test_instance_follows_arm_column(self, kidney, rng):
        env = make_interactive_env(apply_noise(kidney, 0.0, rng))
        open_, large = kidney.arm_index("open"), kidney.instance_index("large")
        records = [env_step(env, open_, rng) for _ in range(20_000)]
        share_large = np.mean([r.instance == large for r in records])
        assert share_large == pytest.approx(263 / 350, abs=0.015)

    def test_mean_reward_is_confounded_value(self, kidney, rng):
        env = make_interactive_env(apply_noise(kidney, 0.0, rng))
        rewards = [env_step(env, kidney.arm_index("open"), rng).reward for _ in range(50_000)]
        assert np.mean(rewards) == pytest.approx(0.78, abs=0.01)

    def test_deterministic_table(self, rng):
        table = _table([Cell(instance=i, arm=a, successes=10, trials=10) for i in range(2) for a in range(2)])
        env = make_interactive_env(apply_noise(table, 0.0, rng))
        assert all(env_step(env, 1, rng).reward == 1.0 for _ in range(100))

    def test_uncovered_arm(self, rng):
        table = _table([Cell(instance=0, arm=0, successes=1, trials=2)])
        env = make_interactive_env(apply_noise(table, 0.0, rng))
        with pytest.raises(CoverageError):
            env_step(env, 1, rng)
        with pytest.raises(ValueError, match="outside arm set"):
            env_step(env, 5, rng)
