#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
单元测试 - 错误分类与工具函数
"""

import os

import pytest

from config_validator import ConfigValidationError
from utils import (
    ERROR_EXPLANATIONS, DataError, InsufficientDataError, InvalidLevelError, NumericalError,
    SolverFailureError, UsageError, derive_seeds, ensure_dir, get_error_explanation,
)


class TestErrorTaxonomy:
    """错误类型与退出码测试"""

    @pytest.mark.parametrize("error_class,exit_code", [
        (UsageError, 1),
        (ConfigValidationError, 1),
        (DataError, 2),
        (InsufficientDataError, 2),
        (InvalidLevelError, 2),
        (NumericalError, 3),
        (SolverFailureError, 3),
    ])
    def test_exit_codes(self, error_class, exit_code):
        """测试各类错误的退出码"""
        assert error_class("x").exit_code == exit_code

    def test_every_keyword_has_explanation(self):
        """测试每种错误都有对应的解释"""
        for error_class in (UsageError, DataError, InsufficientDataError, InvalidLevelError,
                            NumericalError, SolverFailureError):
            assert error_class.keyword in ERROR_EXPLANATIONS

    def test_unknown_keyword_falls_back(self):
        """测试未知关键字使用通用解释"""
        assert get_error_explanation("no-such-kind") == get_error_explanation("unknown")
        assert "[解决方案]" in get_error_explanation("SOLVER")

    def test_solver_failure_carries_diagnostics(self):
        """测试求解器错误携带状态与迭代次数"""
        error = SolverFailureError("failed", status=2, iterations=17)
        assert (error.status, error.iterations) == (2, 17)


class TestHelpers:
    """工具函数测试"""

    def test_derive_seeds_is_reproducible(self):
        """测试子种子只依赖主种子与序号"""
        seeds = derive_seeds(12345, 5)
        assert seeds == derive_seeds(12345, 5)
        assert derive_seeds(12345, 3) == seeds[:3]
        assert len(set(seeds)) == 5
        assert seeds != derive_seeds(54321, 5)

    def test_ensure_dir(self, temp_dir):
        """测试创建嵌套目录"""
        path = os.path.join(temp_dir, "a", "b")
        assert ensure_dir(path) == path
        assert os.path.isdir(path)

    def test_ensure_dir_rejects_empty(self):
        """测试空路径"""
        with pytest.raises(ValueError):
            ensure_dir("")
