"""
Tests for experiment orchestration: skews, replay buffers, selectors and full runs.
"""

import json
from unittest.mock import patch

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import CoverageError
from app.models.experiment import ExperimentConfig, SkewSpec
from app.services import harness_service
from app.services.candidate_service import SyntheticSource
from app.services.harness_service import (
    builtin_skews,
    collect_buffer,
    deploy,
    resolve_master_seed,
    resolve_skew,
    run_experiment,
    seed_rng,
    train_selector,
    validate_skew,
)
from app.services.learners import make_learner
from app.services.report_service import report_csv

TRAINING = ["K1", "K2"]
ARMS = ["pi1", "pi2", "pi3", "pi4"]


def _skew(name):
    return resolve_skew(name, TRAINING, ARMS)


def _row(report, learner, arm, panel=None, T=None):
    return next(
        r for r in report.rows
        if r.learner == learner and r.arm == arm and (panel is None or r.panel == panel) and r.T == T
    )


class TestSkews:
    def test_builtin_masses(self):
        skews = {s.name: s for s in builtin_skews()}
        assert list(skews) == ["uniform", "favor-pi2", "favor-pi3", "favor-pi4"]
        assert np.allclose(skews["uniform"].as_array(), 1 / 8)

        p = skews["favor-pi3"].as_array()
        assert p[1, 2] == pytest.approx(0.35)
        assert p[0, 0] == pytest.approx(0.35)
        assert p[0, 2] == pytest.approx(0.02)
        assert p[1, 0] == pytest.approx(0.02)
        assert p[0, 1] == pytest.approx(0.065)
        assert skews["favor-pi3"].target == "pi3"
        # both training instances keep half the mass
        assert np.allclose(p.sum(axis=1), 0.5)

    def test_resolve_skew_from_file(self, tmp_path):
        skew = SkewSpec(name="custom", instance_names=TRAINING, arm_names=ARMS, probabilities=[[0.125] * 4] * 2)
        path = tmp_path / "custom.json"
        path.write_text(skew.model_dump_json())
        assert resolve_skew(str(path), TRAINING, ARMS) == skew
        with pytest.raises(ValueError, match="unknown skew"):
            resolve_skew("favor-pi9", TRAINING, ARMS)

    def test_uniform_report(self, reference_matrix):
        report = validate_skew(reference_matrix, _skew("uniform"))
        assert report.confounded == pytest.approx([0.68, 0.465, 0.38, 0.29])
        assert report.backdoor == pytest.approx([0.68, 0.465, 0.38, 0.29])
        assert report.confounded_argmax == "pi1"
        assert report.target_is_confounded_argmax
        assert report.backdoor_prefers_first

    @pytest.mark.parametrize("name, target", [("favor-pi2", "pi2"), ("favor-pi3", "pi3"), ("favor-pi4", "pi4")])
    def test_favor_presets_confound_toward_target(self, reference_matrix, name, target):
        report = validate_skew(reference_matrix, _skew(name))
        assert report.confounded_argmax == target
        assert report.target_is_confounded_argmax
        assert report.backdoor_argmax == "pi1"
        assert report.backdoor_prefers_first

    def test_uncovered_skew(self, reference_matrix):
        probabilities = [[0.0] * 4, [1.0, 0.0, 0.0, 0.0]]
        skew = SkewSpec(name="narrow", instance_names=TRAINING, arm_names=ARMS, probabilities=probabilities)
        with pytest.raises(CoverageError, match="no mass on arm 'pi2'"):
            validate_skew(reference_matrix, skew)
        partial = SkewSpec(
            name="partial",
            instance_names=TRAINING,
            arm_names=ARMS,
            probabilities=[[0.0, 0.25, 0.25, 0.0], [0.25, 0.0, 0.0, 0.25]],
        )
        with pytest.raises(CoverageError, match=r"\(K1, pi1\)"):
            validate_skew(reference_matrix, partial)


class TestBuffersAndSelectors:
    def test_uniform_buffer_counts(self, reference_matrix):
        buffer = collect_buffer(SyntheticSource(reference_matrix), _skew("uniform"), 10_000, seed_rng(0, 1))
        assert len(buffer) == 10_000
        counts = buffer.pair_counts()
        assert counts.shape == (2, 4)
        assert np.all(np.abs(counts - 1250) < 150)
        assert set(np.unique(buffer.stream.rewards)) <= {-1.0, 1.0}

    def test_buffer_is_deterministic(self, reference_matrix):
        source = SyntheticSource(reference_matrix)
        a = collect_buffer(source, _skew("favor-pi2"), 500, seed_rng(3, 0))
        b = collect_buffer(source, _skew("favor-pi2"), 500, seed_rng(3, 0))
        assert np.array_equal(a.stream.arms, b.stream.arms)
        assert np.array_equal(a.stream.rewards, b.stream.rewards)

    def test_empty_buffer(self, reference_matrix, rng):
        buffer = collect_buffer(SyntheticSource(reference_matrix), _skew("uniform"), 0, rng)
        assert len(buffer) == 0
        with pytest.raises(ValueError, match="empty buffer"):
            train_selector(buffer, "ctcat_q")

    @pytest.mark.parametrize("name, target", [("favor-pi2", "pi2"), ("favor-pi3", "pi3")])
    def test_selectors_on_skewed_buffer(self, reference_matrix, name, target):
        buffer = collect_buffer(SyntheticSource(reference_matrix), _skew(name), 10_000, seed_rng(0, 2))
        ctcat = train_selector(buffer, "ctcat_q")
        vanilla = train_selector(buffer, "vanilla_q")
        assert ARMS[ctcat.greedy_arm()] == "pi1"
        assert ARMS[vanilla.greedy_arm()] == target

    def test_deploy_success(self, reference_matrix, rng):
        selector = make_learner("vanilla_q", 4)
        selector.q[:] = [1.0, 0.0, 0.0, 0.0]
        source = SyntheticSource(reference_matrix)
        proportions, success = deploy(selector, source, reference_matrix.instance_index("U"), 5, 10_000, rng)
        assert proportions.tolist() == [1.0, 0.0, 0.0, 0.0]
        assert success == pytest.approx(0.73, abs=0.02)

        proportions, _ = deploy(selector, source, 2, 1, 4000, rng, readout_epsilon=1.0)
        assert np.allclose(proportions, 0.25, atol=0.03)
        with pytest.raises(ValueError, match="T"):
            deploy(selector, source, 2, 0, 10, rng)


class TestMasterSeed:
    def test_precedence(self, monkeypatch):
        config = ExperimentConfig(seed=3)
        monkeypatch.setattr(settings, "SEED", None)
        assert resolve_master_seed(None) == 0
        assert resolve_master_seed(None, config) == 3
        monkeypatch.setattr(settings, "SEED", 5)
        assert resolve_master_seed(None, config) == 5
        assert resolve_master_seed(7, config) == 7


class TestRunExperiment:
    def test_kidney_flip(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(scenario="kidney", noise_mode="sample", noise_sigma=0.1, seeds=10, stream_length=100_000)
        report = run_experiment(config)
        assert report.arm_names == ["open", "closed"]
        assert _row(report, "vanilla_q", "open").mean == pytest.approx(0.78, abs=0.03)
        assert _row(report, "vanilla_q", "closed").mean == pytest.approx(0.826, abs=0.03)
        assert _row(report, "ctcat_q", "open").mean == pytest.approx(0.8325, abs=0.03)
        assert _row(report, "ctcat_q", "closed").mean == pytest.approx(0.7789, abs=0.03)
        assert _row(report, "vanilla_q", "closed").proportion == 1.0
        assert _row(report, "ctcat_q", "open").proportion == 1.0
        assert not report.errors

    def test_magazine_flip(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(scenario="magazine", noise_mode="sample", noise_sigma=0.1, seeds=10, stream_length=100_000)
        report = run_experiment(config)
        assert _row(report, "vanilla_q", "january").mean == pytest.approx(0.512, abs=0.03)
        assert _row(report, "vanilla_q", "february").mean == pytest.approx(0.641, abs=0.03)
        assert _row(report, "ctcat_q", "january").mean == pytest.approx(0.541, abs=0.03)
        assert _row(report, "ctcat_q", "february").mean == pytest.approx(0.493, abs=0.03)
        assert _row(report, "vanilla_q", "february").proportion == 1.0
        assert _row(report, "ctcat_q", "january").proportion == 1.0

    def test_interactive_stream(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(scenario="kidney", learners=["ucb1", "ctcat_q"], stream_mode="interactive", stream_length=2000, seeds=2)
        report = run_experiment(config, master_seed=1)
        assert report.master_seed == 1
        assert not report.errors
        assert all(len(r.estimates) == 2 for r in report.records)

    def test_predprey_synthetic_selection(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(scenario="predprey-synthetic", seeds=10)
        report = run_experiment(config)
        assert report.panels() == ["uniform", "favor-pi2", "favor-pi3", "favor-pi4"]
        for skew in builtin_skews():
            by_t = []
            for T in config.windows:
                assert _row(report, "ctcat_q", "pi1", skew.name, T).proportion >= 0.9
                assert _row(report, "vanilla_q", skew.target, skew.name, T).proportion >= 0.9
                by_t.append(_row(report, "ctcat_q", "pi1", skew.name, T).proportion)
                if skew.name != "uniform":
                    assert _row(report, "vanilla_q", "pi1", skew.name, T).proportion <= by_t[-1]
            assert max(by_t) - min(by_t) < 0.05

    def test_same_seed_same_csv(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(scenario="predprey-synthetic", seeds=2, buffer_size=500, deploy_episodes=20, skews=["favor-pi2"])
        assert report_csv(run_experiment(config, 11)) == report_csv(run_experiment(config, 11))

    def test_failing_units_are_recorded(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(
            scenario="predprey-synthetic",
            learners=["thompson", "ctcat_q"],
            seeds=2,
            buffer_size=200,
            deploy_episodes=10,
            skews=["uniform"],
        )
        report = run_experiment(config)
        assert len(report.errors) == 2
        assert all(r.learner == "thompson" and r.error.startswith("UnsupportedRewardError") for r in report.errors)
        assert {r.learner for r in report.rows} == {"ctcat_q"}
        json.loads(report.model_dump_json())

    def test_failing_buffer_draw_aborts_only_that_seed(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(scenario="predprey-synthetic", seeds=2, buffer_size=200, deploy_episodes=10, skews=["uniform"])
        real = harness_service.collect_buffer
        calls = []

        def first_draw_fails(*args, **kwargs):
            calls.append(args)
            if len(calls) == 1:
                raise CoverageError("buffer draw failed")
            return real(*args, **kwargs)

        with patch("app.services.harness_service.collect_buffer", side_effect=first_draw_fails):
            report = run_experiment(config, 0)
        assert [(r.seed, r.learner) for r in report.errors] == [(0, "vanilla_q"), (0, "ctcat_q")]
        assert all(r.error == "CoverageError: buffer draw failed" for r in report.errors)
        assert {r.seed for r in report.records if r.error is None} == {1}
        assert {r.learner for r in report.rows} == {"vanilla_q", "ctcat_q"}

    def test_failing_stream_aborts_only_that_seed(self, monkeypatch):
        monkeypatch.setattr(settings, "SEED", None)
        config = ExperimentConfig(scenario="kidney", seeds=3, stream_length=500)
        real = harness_service.sample_logged_stream
        calls = []

        def second_stream_fails(*args, **kwargs):
            calls.append(args)
            if len(calls) == 2:
                raise ValueError("stream draw failed")
            return real(*args, **kwargs)

        with patch("app.services.harness_service.sample_logged_stream", side_effect=second_stream_fails):
            report = run_experiment(config, 0)
        assert len(report.records) == 6
        assert {(r.seed, r.learner) for r in report.errors} == {(1, "vanilla_q"), (1, "ctcat_q")}
        assert {r.seed for r in report.records if r.error is None} == {0, 2}
        assert report.rows
