import csv

import numpy as np
import pytest

from cogradar.experiment import (
    EpisodeConfig,
    MetricsReport,
    RunResult,
    StepRecord,
    SuccessHistogram,
    calibrate_discretizer,
    evaluate,
    mean_windowed_mse,
    overall_windowed_mse,
    run_episode,
    save_histogram_csv,
    save_metrics_csv,
    save_run_csv,
    success_histogram,
    train_qlearning,
    windowed_min,
)
from cogradar.policy import (
    BandwidthScalingPolicy,
    Discretizer,
    FixedPolicy,
    QLearningPolicy,
    QTable,
)
from cogradar.radar import RadarConfig
from cogradar.tracker import ProcessModel
from cogradar.trajectory import Phase, TruthPoint

QUIET_SIGMA = {Phase.BOOST: 1e-3, Phase.MID_COURSE: 1e-3, Phase.TERMINAL: 1e-3}


def stationary_trajectory(n, position=(18_000.0, -9_000.0, 6_000.0), dt=0.5):
    position = np.asarray(position, float)
    return [
        TruthPoint(
            t=i * dt,
            position=position,
            velocity=np.zeros(3),
            phase=Phase.MID_COURSE,
        )
        for i in range(n)
    ]


def linear_trajectory(n, position, velocity, dt=0.5):
    position = np.asarray(position, float)
    velocity = np.asarray(velocity, float)
    return [
        TruthPoint(
            t=i * dt,
            position=position + velocity * (i * dt),
            velocity=velocity,
            phase=Phase.MID_COURSE,
        )
        for i in range(n)
    ]


def teleport_trajectory(n, start=(10_000.0, 0.0, 5_000.0), offset=(0.0, 8_000.0, 0.0)):
    """First sample at start, every later sample displaced by offset: the
    initialized track can never correlate again."""
    start = np.asarray(start, float)
    rest = start + np.asarray(offset, float)
    points = [
        TruthPoint(t=0.0, position=start, velocity=np.zeros(3), phase=Phase.MID_COURSE)
    ]
    for i in range(1, n):
        points.append(
            TruthPoint(
                t=i * 0.5, position=rest, velocity=np.zeros(3), phase=Phase.MID_COURSE
            )
        )
    return points


def quiet_radar():
    """Noise low enough (range and angle) that the gate never misses.

    Angle noise must shrink with the range noise: cross-range error leaks
    into predicted range at second order (sigma_az^2 * r / 2), which would
    swamp a millimetric gate window at the default 2 mrad.
    """
    return RadarConfig(
        position=(0.0, 0.0, 0.0),
        snr_ref=1.0e9,
        range_ref=22_000.0,
        angle_noise_std=1.0e-4,
    )


def moderate_radar():
    return RadarConfig(position=(0.0, 0.0, 0.0), snr_ref=150.0, range_ref=22_000.0)


def quiet_process(dt=0.5):
    return ProcessModel(dt=dt, accel_noise_std=QUIET_SIGMA)


def fake_run(errors, lost=False):
    records = tuple(
        StepRecord(
            step=i,
            bandwidth=1e6,
            range_error_true=float(e),
            range_innovation=0.0,
            range_window=1.0,
            correlated=True,
            reward=0.0,
            state_index=None,
            action_index=None,
            pred_var=1.0,
            meas_var=1.0,
        )
        for i, e in enumerate(errors)
    )
    return RunResult(records=records, lost_at=len(records) if lost else None)


def wide_edges():
    return Discretizer(
        pred_var_edges=tuple(np.geomspace(1e-2, 1e4, 9)),
        meas_var_edges=tuple(np.geomspace(1e-2, 1e4, 7)),
    )


class TestWindowedMin:
    def test_hand_example(self):
        assert windowed_min([5.0, 1.0, 9.0, 2.0], 3) == pytest.approx([1.0, 1.0])

    def test_window_one_is_identity(self):
        series = [3.0, 7.0, 2.0]
        assert windowed_min(series, 1) == pytest.approx(series)

    def test_constant_series(self):
        assert windowed_min([4.0] * 10, 3) == pytest.approx([4.0] * 8)

    def test_length(self):
        assert len(windowed_min(np.arange(160.0), 3)) == 158

    def test_short_series_empty(self):
        assert windowed_min([1.0, 2.0], 3).size == 0

    def test_bad_window_rejected(self):
        with pytest.raises(ValueError):
            windowed_min([1.0], 0)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(1)
        series = rng.random(50)
        for window in (1, 2, 3, 7):
            brute = [
                min(series[i : i + window]) for i in range(len(series) - window + 1)
            ]
            assert windowed_min(series, window) == pytest.approx(brute)


class TestMeanWindowedMse:
    def test_single_run_equals_own_series(self):
        run = fake_run([3.0, 1.0, 2.0, 5.0])
        expected = windowed_min(np.array([3.0, 1.0, 2.0, 5.0]) ** 2, 3)
        assert mean_windowed_mse([run]) == pytest.approx(expected)

    def test_zero_error_run(self):
        assert mean_windowed_mse([fake_run([0.0] * 10)]) == pytest.approx([0.0] * 8)

    def test_two_constant_runs_average(self):
        runs = [fake_run([2.0] * 6), fake_run([4.0] * 6)]
        expected = (4.0 + 16.0) / 2.0
        assert mean_windowed_mse(runs) == pytest.approx([expected] * 4)

    def test_alive_counting_after_loss(self):
        # second run dies early: later steps average over the survivor only
        runs = [fake_run([2.0] * 8), fake_run([4.0] * 5, lost=True)]
        out = mean_windowed_mse(runs)
        assert len(out) == 6
        assert out[:3] == pytest.approx([(4.0 + 16.0) / 2.0] * 3)
        assert out[3:] == pytest.approx([4.0] * 3)

    def test_window_one_equals_raw_series(self):
        run = fake_run([1.0, 2.0, 3.0])
        assert mean_windowed_mse([run], window=1) == pytest.approx([1.0, 4.0, 9.0])

    def test_overall_scalar(self):
        runs = [fake_run([2.0] * 6), fake_run([4.0] * 6)]
        assert overall_windowed_mse(runs) == pytest.approx(10.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_windowed_mse([])


class TestSuccessHistogram:
    def test_all_successful(self):
        runs = [fake_run([1.0] * 160) for _ in range(10)]
        hist = success_histogram(runs, 20, n_transmissions=160)
        assert hist.full_track_count == 10
        assert sum(hist.counts) == 0

    def test_lost_at_twelve(self):
        runs = [fake_run([1.0] * 12, lost=True)]
        hist = success_histogram(runs, 20, n_transmissions=160)
        assert hist.counts[0] == 1
        assert hist.bin_lows[0] == 0
        assert hist.full_track_count == 0

    def test_counts_conserved(self):
        runs = [
            fake_run([1.0] * 12, lost=True),
            fake_run([1.0] * 77, lost=True),
            fake_run([1.0] * 160),
            fake_run([1.0] * 160, lost=True),
        ]
        hist = success_histogram(runs, 20, n_transmissions=160)
        assert sum(hist.counts) + hist.full_track_count == 4
        assert hist.counts[77 // 20] >= 1
        assert hist.counts[-1] == 1  # loss on the final transmission

    def test_invariant_enforced(self):
        with pytest.raises(ValueError):
            SuccessHistogram(
                bin_width=20,
                bin_lows=(0,),
                counts=(1,),
                full_track_count=1,
                n_runs=1,
            )


class TestRunEpisode:
    def test_stationary_quiet_scenario_is_successful(self):
        trajectory = stationary_trajectory(161)
        episode = EpisodeConfig(n_transmissions=160)
        result = run_episode(
            trajectory,
            FixedPolicy(1e6),
            quiet_radar(),
            quiet_process(),
            episode,
            np.random.default_rng(0),
        )
        assert result.successful
        assert result.lost_at is None
        assert len(result.records) == 160
        assert all(rec.correlated for rec in result.records)
        assert all(rec.bandwidth == 1e6 for rec in result.records)

    def test_linear_target_converges_with_moderate_noise(self):
        trajectory = linear_trajectory(
            161, position=(20_000.0, 5_000.0, 8_000.0), velocity=(-60.0, 20.0, -10.0)
        )
        result = run_episode(
            trajectory,
            FixedPolicy(1e6),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            np.random.default_rng(3),
        )
        assert result.successful
        # after convergence the range error settles well under the early one
        early = np.mean([r.range_error_true for r in result.records[:5]])
        late = np.mean([r.range_error_true for r in result.records[-40:]])
        assert late < early

    def test_offset_start_loses_at_miss_limit(self):
        trajectory = teleport_trajectory(161)
        result = run_episode(
            trajectory,
            FixedPolicy(0.5e6),
            quiet_radar(),
            quiet_process(),
            EpisodeConfig(miss_limit=5),
            np.random.default_rng(1),
        )
        assert not result.successful
        assert result.lost_at == 5
        assert len(result.records) == 5
        assert not any(rec.correlated for rec in result.records)

    def test_deterministic_given_seed(self):
        trajectory = stationary_trajectory(161)
        args = (trajectory, FixedPolicy(2.5e6), moderate_radar(), quiet_process())
        one = run_episode(*args, EpisodeConfig(), np.random.default_rng(7))
        two = run_episode(*args, EpisodeConfig(), np.random.default_rng(7))
        assert one == two

    def test_rng_defaults_to_episode_seed(self):
        trajectory = stationary_trajectory(161)
        args = (trajectory, FixedPolicy(2.5e6), moderate_radar(), quiet_process())
        implicit = run_episode(*args, EpisodeConfig(seed=11))
        explicit = run_episode(*args, EpisodeConfig(seed=11), np.random.default_rng(11))
        assert implicit == explicit

    def test_causality_prefix_replay(self):
        trajectory = stationary_trajectory(161)
        table = QTable.zeros(wide_edges(), epsilon=0.3)
        for policy_factory in (
            lambda: FixedPolicy(1e6),
            lambda: BandwidthScalingPolicy(),
            lambda: QLearningPolicy(table.copy()),
        ):
            full = run_episode(
                trajectory,
                policy_factory(),
                moderate_radar(),
                quiet_process(),
                EpisodeConfig(n_transmissions=160),
                np.random.default_rng(5),
            )
            prefix = run_episode(
                trajectory,
                policy_factory(),
                moderate_radar(),
                quiet_process(),
                EpisodeConfig(n_transmissions=60),
                np.random.default_rng(5),
            )
            assert full.records[:60] == prefix.records

    def test_policy_context_fields_flow(self):
        trajectory = stationary_trajectory(161)
        result = run_episode(
            trajectory,
            FixedPolicy(1e6),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            np.random.default_rng(2),
        )
        # meas_var recorded at step k becomes the context of step k+1; all
        # transmissions here share one bandwidth so R_rr is range-driven
        assert all(rec.pred_var > 0.0 for rec in result.records)
        assert all(rec.meas_var > 0.0 for rec in result.records)

    def test_initial_bandwidth_override(self):
        trajectory = stationary_trajectory(161)
        episode = EpisodeConfig(initial_bandwidth=7.5e6)
        result = run_episode(
            trajectory,
            FixedPolicy(1e6),
            quiet_radar(),
            quiet_process(),
            episode,
            np.random.default_rng(0),
        )
        # the override affects only the initiation dwell, not the loop
        assert all(rec.bandwidth == 1e6 for rec in result.records)

    def test_trajectory_too_short_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            run_episode(
                stationary_trajectory(100),
                FixedPolicy(1e6),
                quiet_radar(),
                quiet_process(),
                EpisodeConfig(n_transmissions=160),
                np.random.default_rng(0),
            )

    def test_nontabular_records_have_no_indices(self):
        result = run_episode(
            stationary_trajectory(21),
            BandwidthScalingPolicy(),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(n_transmissions=20),
            np.random.default_rng(0),
        )
        assert all(rec.state_index is None for rec in result.records)

    def test_tabular_records_have_indices(self):
        result = run_episode(
            stationary_trajectory(21),
            QLearningPolicy(QTable.zeros(wide_edges()), epsilon=0.0),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(n_transmissions=20),
            np.random.default_rng(0),
        )
        assert all(0 <= rec.state_index < 80 for rec in result.records)
        assert all(0 <= rec.action_index < 6 for rec in result.records)


class TestTrainQlearning:
    def test_zero_runs_leaves_table_unchanged(self):
        table = QTable.zeros(wide_edges())
        before = table.values.copy()
        out = train_qlearning(
            stationary_trajectory(161),
            table,
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            n_runs=0,
        )
        assert out is table
        assert np.array_equal(table.values, before)

    def test_training_touches_table_within_bounds(self):
        table = QTable.zeros(wide_edges(), epsilon=0.2, L=1)
        train_qlearning(
            stationary_trajectory(161),
            table,
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            n_runs=10,
            base_seed=42,
        )
        assert np.count_nonzero(table.values) > 0
        assert np.all(table.values <= 0.0)
        assert np.all(table.values >= -20.0)

    def test_training_deterministic(self):
        def train_once():
            table = QTable.zeros(wide_edges(), epsilon=0.2, L=5)
            train_qlearning(
                stationary_trajectory(161),
                table,
                moderate_radar(),
                quiet_process(),
                EpisodeConfig(),
                n_runs=5,
                base_seed=7,
            )
            return table.values

        assert np.array_equal(train_once(), train_once())


class TestEvaluate:
    def test_aggregates_all_runs(self):
        results, report = evaluate(
            stationary_trajectory(161),
            FixedPolicy(1e6),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            n_runs=8,
            base_seed=0,
        )
        assert len(results) == 8
        assert report.n_runs == 8
        assert sum(report.histogram.counts) + report.full_track_count == 8

    def test_single_run_report_matches_run(self):
        results, report = evaluate(
            stationary_trajectory(161),
            FixedPolicy(1e6),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            n_runs=1,
            base_seed=3,
        )
        assert report.mean_windowed_min_mse == pytest.approx(
            windowed_min(results[0].squared_errors(), 3)
        )

    def test_never_mutates_qtable(self):
        table = QTable.zeros(wide_edges())
        table.values[:] = -np.random.default_rng(0).random((80, 6))
        before = table.values.copy()
        evaluate(
            stationary_trajectory(161),
            QLearningPolicy(table, epsilon=0.0),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            n_runs=4,
        )
        assert np.array_equal(table.values, before)

    def test_deterministic_across_invocations(self):
        def once():
            return evaluate(
                stationary_trajectory(161),
                BandwidthScalingPolicy(),
                moderate_radar(),
                quiet_process(),
                EpisodeConfig(),
                n_runs=5,
                base_seed=9,
            )

        first_results, first_report = once()
        second_results, second_report = once()
        assert first_results == second_results
        assert first_report.mean_windowed_min_mse == pytest.approx(
            second_report.mean_windowed_min_mse, abs=0.0
        )


class TestCalibrateDiscretizer:
    def test_produces_valid_discretizer(self):
        d = calibrate_discretizer(
            stationary_trajectory(161),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            n_runs=12,
            base_seed=0,
        )
        assert len(d.pred_var_edges) == 9
        assert len(d.meas_var_edges) == 7

    def test_deterministic(self):
        args = (
            stationary_trajectory(161),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
        )
        assert calibrate_discretizer(*args, n_runs=6) == calibrate_discretizer(
            *args, n_runs=6
        )


class TestCsvExport:
    def make_result(self):
        return run_episode(
            stationary_trajectory(41),
            FixedPolicy(1e6),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(n_transmissions=40),
            np.random.default_rng(4),
        )

    def test_run_csv_round_trips_floats(self, tmp_path):
        result = self.make_result()
        path = tmp_path / "run.csv"
        save_run_csv(result, str(path))
        with open(path) as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == len(result.records)
        for row, rec in zip(rows, result.records):
            assert int(row["step"]) == rec.step
            assert float(row["bandwidth_hz"]) == rec.bandwidth
            assert float(row["range_error_m"]) == rec.range_error_true
            assert float(row["innovation_m"]) == rec.range_innovation
            assert float(row["window_m"]) == rec.range_window
            assert int(row["correlated"]) == int(rec.correlated)
            assert float(row["reward"]) == rec.reward
            assert row["state"] == ""
            assert row["action"] == ""

    def test_run_csv_header(self, tmp_path):
        path = tmp_path / "run.csv"
        save_run_csv(self.make_result(), str(path))
        first = path.read_text().splitlines()[0]
        assert first == (
            "step,bandwidth_hz,range_error_m,innovation_m,window_m,"
            "correlated,reward,state,action"
        )

    def test_byte_identical_rewrites(self, tmp_path):
        result = self.make_result()
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_run_csv(result, str(a))
        save_run_csv(result, str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_metrics_csv(self, tmp_path):
        _, report = evaluate(
            stationary_trajectory(161),
            FixedPolicy(1e6),
            moderate_radar(),
            quiet_process(),
            EpisodeConfig(),
            n_runs=3,
        )
        path = tmp_path / "metrics.csv"
        save_metrics_csv(report, str(path))
        with open(path) as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == len(report.mean_windowed_min_mse)
        for i, row in enumerate(rows):
            assert int(row["step"]) == i
            assert float(row["mean_windowed_min_mse"]) == (
                report.mean_windowed_min_mse[i]
            )

    def test_histogram_csv_final_row_labeled(self, tmp_path):
        runs = [fake_run([1.0] * 12, lost=True), fake_run([1.0] * 160)]
        hist = success_histogram(runs, 20, n_transmissions=160)
        path = tmp_path / "hist.csv"
        save_histogram_csv(hist, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count"
        assert lines[1] == "0,20,1"
        assert lines[-1] == "full_track,,1"
        assert len(lines) == 2 + len(hist.counts)

    def test_no_stray_tmp_files(self, tmp_path):
        path = tmp_path / "run.csv"
        save_run_csv(self.make_result(), str(path))
        save_run_csv(self.make_result(), str(path))
        assert [p.name for p in tmp_path.iterdir()] == ["run.csv"]


class TestConfigValidation:
    def test_episode_config_rejects(self):
        with pytest.raises(ValueError):
            EpisodeConfig(n_transmissions=0)
        with pytest.raises(ValueError):
            EpisodeConfig(miss_limit=0)
        with pytest.raises(ValueError):
            EpisodeConfig(initial_bandwidth=0.0)

    def test_run_result_invariant(self):
        with pytest.raises(ValueError):
            RunResult(records=(), lost_at=3)

    def test_metrics_report_exposes_full_track_count(self):
        runs = [fake_run([1.0] * 10)]
        report = MetricsReport(
            mean_windowed_min_mse=mean_windowed_mse(runs),
            histogram=success_histogram(runs, 20),
            n_runs=1,
        )
        assert report.full_track_count == 1
