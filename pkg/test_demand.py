#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
수요 생성 / 날씨 일정 테스트
"""

import numpy as np
import pytest

from demand import DemandProfile, synthesize_demand, trapezoid_profile, weather_schedule, weather_series
from traffic_model import BAD_WEATHER, GOOD_WEATHER


def zero_profile() -> DemandProfile:
    zero = ((0.0,), (0.0,))
    return DemandProfile(breakpoints_h=(0.0,), base=(zero, zero, zero), noise_std=(0.0, 0.0, 0.0))


def test_trapezoid_base_series_breakpoints():
    base = trapezoid_profile().base_series(1980, 10.0)
    assert base.shape == (1980, 3, 2)
    assert base[0, 0, 0] == 1000.0
    # 1h = 360 스텝에서 첨두 도달
    assert base[360, 0, 0] == pytest.approx(3400.0)
    assert base[360, 0, 1] == pytest.approx(0.15 * 3400.0)
    assert base[720, 1, 0] == pytest.approx(800.0)
    assert base[180, 2, 0] == 200.0
    assert base[270, 2, 0] == pytest.approx(500.0)


def test_zero_noise_constant_base_passes_through_filter():
    flat = ((1500.0, 1500.0), (225.0, 225.0))
    profile = DemandProfile(breakpoints_h=(0.0, 6.0), base=(flat, flat, flat), noise_std=(0.0, 0.0, 0.0))
    d = synthesize_demand(profile, np.random.default_rng(0))
    assert np.allclose(d[:, :, 0], 1500.0, rtol=1e-9, atol=0)
    assert np.allclose(d[:, :, 1], 225.0, rtol=1e-9, atol=0)


def test_zero_profile_is_all_zero():
    d = synthesize_demand(zero_profile(), np.random.default_rng(1), n_steps=200)
    assert d.shape == (200, 3, 2)
    assert np.all(d == 0.0)


def test_demand_is_deterministic_per_seed_and_non_negative():
    profile = trapezoid_profile(noise_std=(900.0, 400.0, 400.0))
    a = synthesize_demand(profile, np.random.default_rng(42))
    b = synthesize_demand(profile, np.random.default_rng(42))
    c = synthesize_demand(profile, np.random.default_rng(43))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(a >= 0.0)
    assert np.all(np.isfinite(a))


def test_noise_is_low_pass_filtered():
    profile = trapezoid_profile()
    d = synthesize_demand(profile, np.random.default_rng(7))
    base = profile.base_series(1980, 10.0)
    residual = d[:, 0, 0] - base[:, 0, 0]
    # 스텝 간 변화는 원래 잡음 표준편차보다 훨씬 작다
    assert np.std(np.diff(residual)) < 0.1 * 75.0


def test_profile_validation():
    with pytest.raises(ValueError):
        trapezoid_profile(cutoff=1.5)
    with pytest.raises(ValueError):
        trapezoid_profile(cutoff=0.0)
    with pytest.raises(ValueError):
        trapezoid_profile(noise_std=(-1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        trapezoid_profile(breakpoints_h=(0.0, 1.0, 2.0))
    with pytest.raises(ValueError):
        DemandProfile(breakpoints_h=(1.0, 0.0), base=zero_profile().base)


def test_weather_schedule_switch_step():
    assert weather_schedule(0) == GOOD_WEATHER
    assert weather_schedule(995) == GOOD_WEATHER
    assert weather_schedule(996) == BAD_WEATHER
    assert weather_schedule(1979) == BAD_WEATHER
    w = weather_series(1980)
    assert w.sum() == 1980 - 996
    assert np.all(np.diff(w) >= 0)
