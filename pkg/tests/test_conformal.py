#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
单元测试 - 一致性校准
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from conformal import (
    AciState, ConformalMethod, ConformalParams, LengthGrid, ScoreSet, WaciState, WeightScheme,
    aci_step, augmented_quantile, calibration_quantile, cqr_conformalize, cqr_score,
    miscoverage, run_conformal_stream, scp_step, waci_step,
)
from models import Interval, IntervalKind, IntervalStream
from synthgen import SyntheticConfig, generate_run, run_to_stream, two_regime_stream
from synthgen import conformal_params as synthetic_params
from utils import DataError, InsufficientDataError, ScoreUndefinedError, derive_seeds


def filled_scores(values, capacity=None):
    store = ScoreSet(capacity)
    for value in values:
        store.add(value)
    return store


class TestScores:
    """一致性分数与增广分位数测试"""

    def test_cqr_score_examples(self):
        """测试 CQR 分数"""
        interval = Interval.finite(10.0, 20.0, 0.2)
        assert cqr_score(15.0, interval) == -5.0
        assert cqr_score(25.0, interval) == 5.0
        assert cqr_score(10.0, interval) == 0.0

    def test_cqr_score_undefined_for_non_finite(self):
        """测试空区间、无限区间没有分数"""
        with pytest.raises(ScoreUndefinedError):
            cqr_score(1.0, Interval.infinite(0.2))
        with pytest.raises(ScoreUndefinedError):
            cqr_score(1.0, Interval.empty(0.0, 0.2))

    def test_augmented_quantile_examples(self):
        """测试增广分位数"""
        assert augmented_quantile([1.0, 2.0, 3.0, 4.0], 0.8) == 4.0
        assert augmented_quantile([1.0, 2.0, 3.0, 4.0], 0.95) == math.inf
        assert augmented_quantile([], 0.3) == math.inf
        assert augmented_quantile([1.0, 2.0], -0.1) == -math.inf
        assert calibration_quantile([1.0, 2.0, 3.0, 4.0], 0.2) == 4.0

    def test_augmented_quantile_matches_order_statistic_oracle(self):
        """测试与按有理数计算的次序统计量一致，且关于 p 单调不减"""
        rng = np.random.default_rng(0)
        levels = ["0.01"] + [f"{0.05 * k:.2f}" for k in range(1, 20)] + ["0.99"]
        for n in range(13):
            scores = list(np.round(rng.normal(size=n), 3))
            augmented = sorted(scores) + [math.inf]
            previous = -math.inf
            for text in levels:
                k = math.ceil(Fraction(text) * (n + 1))
                expected = augmented[k - 1]
                value = augmented_quantile(scores, float(text))
                assert value == expected
                assert value >= previous
                previous = value

    def test_score_set_eviction_keeps_last_scores_in_order(self):
        """测试 FIFO 淘汰：插入 C+k 个后恰好保留最后 C 个"""
        store = filled_scores([5.0, 1.0, 4.0, 2.0, 3.0], capacity=3)
        assert store.values() == [4.0, 2.0, 3.0]
        assert store.sorted_values() == [2.0, 3.0, 4.0]
        assert len(store) == 3

    def test_score_set_rejects_non_finite(self):
        """测试分数必须有限"""
        with pytest.raises(ScoreUndefinedError):
            ScoreSet().add(math.inf)


class TestScp:
    """均值回归的分裂校准测试"""

    def test_symmetric_interval(self):
        """测试以点预测为中心的对称区间"""
        interval = scp_step(100.0, None, filled_scores([5.0]), 0.5)
        assert (interval.lower, interval.upper) == (95.0, 105.0)

    def test_empty_store_gives_infinite_interval(self):
        """测试空分数集合给出无限区间"""
        interval = scp_step(0.0, None, ScoreSet(), 0.1)
        assert interval.kind is IntervalKind.INFINITE

    def test_residual_order_statistic(self):
        """测试 9 个残差、α=0.1 时选中第 9 小的残差"""
        store = filled_scores([1, 2, 3, 4, 6, 7, 8, 9, 11])
        interval = scp_step(0.0, 3.0, store, 0.1)
        assert (interval.lower, interval.upper) == (-11.0, 11.0)
        assert len(store) == 10


class TestCqrConformalize:
    """区间平移测试"""

    def setup_method(self):
        """初始化"""
        self.interval = Interval.finite(10.0, 20.0, 0.2)

    def test_outward_shift(self):
        """测试向外平移"""
        result = cqr_conformalize(self.interval, 2.0)
        assert (result.lower, result.upper) == (8.0, 22.0)

    def test_over_shrink_is_empty(self):
        """测试过度收缩得到空区间"""
        result = cqr_conformalize(self.interval, -6.0)
        assert result.kind is IntervalKind.EMPTY
        assert miscoverage(result, 15.0) == 1

    def test_infinite_quantiles(self):
        """测试 Q=±∞"""
        assert cqr_conformalize(self.interval, math.inf).kind is IntervalKind.INFINITE
        assert cqr_conformalize(self.interval, -math.inf).kind is IntervalKind.EMPTY
        assert miscoverage(cqr_conformalize(self.interval, math.inf), 1e9) == 0

    def test_static_split_coverage(self):
        """测试静态划分的 CQR 在 500 个独立同分布数据集上的平均覆盖率达到名义水平"""
        rng = np.random.default_rng(8)
        interval = Interval.finite(-1.0, 1.0, 0.2)
        coverages = []
        for _ in range(500):
            x_cal, x_test = rng.uniform(-2.0, 2.0, 500), rng.uniform(-2.0, 2.0, 500)
            r_cal = (0.5 + np.abs(x_cal)) * rng.standard_normal(500)
            r_test = (0.5 + np.abs(x_test)) * rng.standard_normal(500)
            calibration = [cqr_score(r, interval) for r in r_cal]
            conformalized = cqr_conformalize(interval, calibration_quantile(calibration, 0.2))
            coverages.append(np.mean((conformalized.lower <= r_test) & (r_test <= conformalized.upper)))
        assert 0.79 <= np.mean(coverages) <= 0.812


class TestAci:
    """ACI 测试"""

    def setup_method(self):
        """初始化"""
        self.state = AciState.create(alpha_star=0.2, gamma=0.01)
        for _ in range(10):
            self.state.scores.add(0.0)
        self.interval = Interval.finite(10.0, 20.0, 0.2)

    def test_covered_step_increases_alpha(self):
        """测试覆盖时 α 增加 γ·α*"""
        _, state = aci_step(self.state, self.interval, 15.0)
        assert state.alpha_t == pytest.approx(0.202)
        assert state.err_history == [0]

    def test_missed_step_decreases_alpha(self):
        """测试未覆盖时 α 减少 γ·(1-α*)"""
        _, state = aci_step(self.state, self.interval, 30.0)
        assert state.alpha_t == pytest.approx(0.192)
        assert state.err_history == [1]
        assert len(state.scores) == 11

    def test_long_run_error_bound(self, synthetic_stream):
        """测试 ACI 的长期误覆盖率界"""
        gamma = 0.05
        state = AciState.create(alpha_star=0.2, gamma=gamma, capacity=50)
        for record in synthetic_stream.records():
            aci_step(state, record.interval, record.y)
        T = len(state.err_history)
        bound = (max(0.2, 0.8) + gamma) / (T * gamma)
        assert abs(np.mean(state.err_history) - 0.2) <= bound

    @pytest.mark.parametrize("seed", derive_seeds(31, 3))
    def test_long_run_error_bound_on_synthetic_runs(self, seed):
        """测试每次合成运行上 ACI 的长期误覆盖率界"""
        self.assert_synthetic_bound(seed)

    @pytest.mark.slow
    def test_long_run_error_bound_on_many_synthetic_runs(self):
        """测试 100 次合成运行逐次满足长期误覆盖率界"""
        for seed in derive_seeds(2024, 100):
            self.assert_synthetic_bound(seed)

    @staticmethod
    def assert_synthetic_bound(seed):
        cfg = SyntheticConfig()
        result = run_conformal_stream(run_to_stream(generate_run(cfg, seed)), "ACI",
                                      synthetic_params(cfg), cfg.warmup)
        err = next(iter(result.states.values())).err_history
        T = len(err)
        assert T == cfg.length - cfg.warmup
        bound = (max(cfg.alpha, 1.0 - cfg.alpha) + cfg.gamma) / (T * cfg.gamma)
        assert abs(np.mean(err) - cfg.alpha) <= bound

    def test_alpha_above_one_gives_empty_interval(self):
        """测试有效水平越过 1 时输出空区间"""
        self.state.alpha_t = 1.05
        result, state = aci_step(self.state, self.interval, 15.0)
        assert result.kind is IntervalKind.EMPTY
        assert state.err_history == [1]


class TestLengthGrid:
    """长度网格测试"""

    def test_points(self):
        """测试网格点与末点截断"""
        grid = LengthGrid(0.0, 0.4, 1.0)
        np.testing.assert_allclose(grid.points, [0.0, 0.4, 0.8, 1.0])
        assert len(LengthGrid(0.0, 0.5, 1.0)) == 3

    def test_nearest_index_ties_and_clamping(self):
        """测试最近点取较小下标，越界长度落到端点"""
        grid = LengthGrid(0.0, 1.0, 2.0)
        assert grid.nearest_index(0.5) == 0
        assert grid.nearest_index(1.6) == 2
        assert grid.nearest_index(-5.0) == 0
        assert grid.nearest_index(50.0) == 2
        assert not grid.contains(50.0)

    def test_from_lengths_widens_range(self):
        """测试按极差放宽 10%"""
        grid = LengthGrid.from_lengths([2.0, 4.0, 3.0], step=0.1)
        assert grid.l_min == pytest.approx(1.8)
        assert grid.l_max == pytest.approx(4.2)
        constant = LengthGrid.from_lengths([3.0, 3.0], step=0.5)
        assert (constant.l_min, constant.l_max) == (2.5, 3.5)

    def test_invalid_grids(self):
        """测试非法网格"""
        with pytest.raises(DataError):
            LengthGrid(2.0, 0.1, 1.0)
        with pytest.raises(DataError):
            LengthGrid(0.0, 0.0, 1.0)
        with pytest.raises(InsufficientDataError):
            LengthGrid.from_lengths([], step=0.1)


class TestWaci:
    """WACI 测试"""

    def make_state(self, scheme, **kwargs):
        state = WaciState.create(LengthGrid(0.0, 1.0, 6.0), alpha_star=0.2, gamma=0.01,
                                 weight_scheme=scheme, **kwargs)
        for _ in range(10):
            state.scores.add(0.0)
        return state

    def test_gaussian_first_step_miss(self):
        """测试高斯权重下的首步更新"""
        state = self.make_state(WeightScheme.GAUSSIAN, sigma=1.0)
        _, state = waci_step(state, Interval.finite(0.0, 5.0, 0.2), 10.0)
        assert state.last_step.idx == 5
        assert state.alpha_vec[5] == pytest.approx(0.192)
        distances = np.arange(7) - 5
        np.testing.assert_allclose(state.alpha_vec - 0.2, -0.008 * np.exp(-distances ** 2 / 2.0))

    def test_geometric_first_step_miss(self):
        """测试几何权重 λ=0.5 时的更新模式"""
        state = self.make_state(WeightScheme.GEOMETRIC, decay=0.5)
        _, state = waci_step(state, Interval.finite(0.0, 5.0, 0.2), 10.0)
        expected = -0.008 * np.array([1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0, 1 / 2])
        np.testing.assert_allclose(state.alpha_vec - 0.2, expected)

    def test_gaussian_weight_maximum_is_one_at_nearest_point(self):
        """测试高斯权重最大值恰为 1 且在最近点取得，远处不会下溢为 NaN"""
        state = self.make_state(WeightScheme.GAUSSIAN, sigma=0.01)
        weights = state.weights(state.grid.nearest_index(3.3), 3.3)
        assert weights.max() == 1.0
        assert int(np.argmax(weights)) == 3
        assert np.all(np.isfinite(weights))

    def test_out_of_grid_lengths_are_counted(self):
        """测试网格外长度计数"""
        state = self.make_state(WeightScheme.GAUSSIAN)
        waci_step(state, Interval.finite(0.0, 9.0, 0.2), 1.0)
        assert state.clamped == 1
        assert state.last_step.idx == 6

    def test_single_point_grid_degenerates_to_aci(self, synthetic_stream):
        """测试单点网格的 WACI 与 ACI 逐位一致"""
        aci = run_conformal_stream(synthetic_stream, "ACI", ConformalParams(0.2, gamma=0.05, calibration_size=50), 20)
        params = ConformalParams(0.2, gamma=0.05, calibration_size=50, grid=LengthGrid.single(3.0))
        waci = run_conformal_stream(synthetic_stream, "WACI", params, 20)
        np.testing.assert_array_equal(aci.lower, waci.lower)
        np.testing.assert_array_equal(aci.upper, waci.upper)
        assert aci.kinds == waci.kinds
        np.testing.assert_array_equal(aci.trace['alpha_tilde'], waci.trace['alpha_tilde'])

    def test_two_regime_sign_pattern(self):
        """测试过覆盖区制的有效水平高于 α*，欠覆盖区制低于 α*"""
        stream, _ = two_regime_stream(20000, seed=0)
        params = ConformalParams(0.2, gamma=0.01, sigma=1.0, grid_step=0.25, calibration_size=500)
        result = run_conformal_stream(stream, "WACI", params, 500)
        state = result.states[0]
        points = state.grid.points
        regime_a = (points >= 3.8) & (points <= 4.2)
        regime_b = (points >= 9.5) & (points <= 10.5)
        assert regime_a.any() and regime_b.any()
        assert state.alpha_vec[regime_a].mean() > 0.2
        assert state.alpha_vec[regime_b].mean() < 0.2

    @pytest.mark.slow
    def test_per_bin_coverage_with_geometric_weights(self):
        """测试几何权重下，长程两区制流中访问不少于 500 次的网格点覆盖率接近 1-α*"""
        stream, _ = two_regime_stream(50000, seed=1)
        params = ConformalParams(0.2, gamma=0.01, weight_scheme=WeightScheme.GEOMETRIC, decay=0.5,
                                 grid=LengthGrid(3.0, 1.0, 11.0), calibration_size=500)
        result = run_conformal_stream(stream, "WACI", params, 500)
        trace = result.trace
        visits = trace.groupby('idx')['err'].agg(['count', 'mean'])
        frequent = visits[visits['count'] >= 500]
        assert len(frequent) >= 2
        assert np.all(np.abs((1.0 - frequent['mean']) - 0.8) <= 0.02)


class TestRunConformalStream:
    """区间流编排测试"""

    def make_grouped_stream(self, n_groups=3, per_group=60, seed=0):
        rng = np.random.default_rng(seed)
        n = n_groups * per_group
        half = rng.uniform(1.0, 2.0, n)
        return IntervalStream(
            t_index=np.arange(n),
            lower=-half,
            upper=half,
            y=rng.standard_normal(n) * (1.0 + np.arange(n) % n_groups),
            alpha=0.2,
            group_key=np.arange(n) % n_groups,
        )

    def test_none_is_identity(self, synthetic_stream):
        """测试 method=none 时输出等于输入"""
        result = run_conformal_stream(synthetic_stream, ConformalMethod.NONE, ConformalParams(0.2), 10)
        np.testing.assert_array_equal(result.lower, synthetic_stream.lower)
        np.testing.assert_array_equal(result.upper, synthetic_stream.upper)
        assert result.trace.empty
        assert result.warmup.sum() == 10
        assert not result.evaluation_record().conformalized

    def test_groups_are_independent(self):
        """测试每个分组的输出与单独运行该分组时相同"""
        stream = self.make_grouped_stream()
        params = ConformalParams(0.2, gamma=0.05, grid_step=0.1, calibration_size=30)
        result = run_conformal_stream(stream, "WACI", params, 10, max_workers=3)
        assert len(result.states) == 3
        for key, positions in stream.groups().items():
            alone = IntervalStream(
                t_index=stream.t_index[positions],
                lower=stream.lower[positions],
                upper=stream.upper[positions],
                y=stream.y[positions],
                alpha=0.2,
            )
            single = run_conformal_stream(alone, "WACI", params, 10)
            np.testing.assert_array_equal(result.lower[positions], single.lower)
            np.testing.assert_array_equal(result.upper[positions], single.upper)

    def test_warmup_outputs_base_intervals(self):
        """测试预热记录输出未校准区间并从评估中剔除"""
        stream = self.make_grouped_stream()
        result = run_conformal_stream(stream, "ACI", ConformalParams(0.2, calibration_size=30), 10)
        assert result.warmup.sum() == 30
        np.testing.assert_array_equal(result.lower[result.warmup], stream.lower[result.warmup])
        assert len(result.evaluation_record()) == len(stream) - 30
        assert len(result.trace) == len(stream) - 30
        assert set(result.trace.columns) >= {'t', 'group', 'base_length', 'idx', 'alpha_tilde', 'quantile', 'err'}

    def test_warmup_exceeding_group_length(self):
        """测试预热长度超过分组长度"""
        stream = self.make_grouped_stream(per_group=5)
        with pytest.raises(InsufficientDataError):
            run_conformal_stream(stream, "ACI", ConformalParams(0.2), 5)

    def test_cqr_keeps_alpha_fixed(self, synthetic_stream):
        """测试滑动 CQR 不更新有效水平"""
        result = run_conformal_stream(synthetic_stream, "CQR", ConformalParams(0.2, gamma=0.05), 20)
        assert (result.trace['alpha_tilde'] == 0.2).all()

    def test_no_look_ahead(self, synthetic_stream):
        """测试修改最后一个实际值不影响之前的输出"""
        params = ConformalParams(0.2, gamma=0.05, grid_step=0.1, calibration_size=50)
        base = run_conformal_stream(synthetic_stream, "WACI", params, 20)
        y = synthetic_stream.y.copy()
        y[-1] += 50.0
        changed_stream = IntervalStream(t_index=synthetic_stream.t_index, lower=synthetic_stream.lower,
                                        upper=synthetic_stream.upper, y=y, alpha=0.2)
        changed = run_conformal_stream(changed_stream, "WACI", params, 20)
        np.testing.assert_array_equal(base.lower, changed.lower)
        np.testing.assert_array_equal(base.upper, changed.upper)

    def test_unknown_method(self, synthetic_stream):
        """测试未知方法"""
        with pytest.raises(DataError):
            run_conformal_stream(synthetic_stream, "SF-OGD", ConformalParams(0.2), 10)
