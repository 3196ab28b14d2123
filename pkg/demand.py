#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 기점 수요 생성과 날씨 일정
사다리꼴 기본 수요 + 기점별 가우시안 섭동 → 3차 버터워스 저역통과 → 0 이상으로 제한
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.signal import butter, lfilter, lfilter_zi

from traffic_model import BAD_WEATHER, GOOD_WEATHER, N_CLASSES, N_ORIGINS

logger = logging.getLogger(__name__)

WEATHER_SWITCH_MINUTE = 166.0


@dataclass(frozen=True)
class DemandProfile:
    """기점(O0, O1, O2) x 클래스(c1, c2)별 구간선형 기본 수요 (veh/h)"""
    breakpoints_h: Tuple[float, ...]
    base: Tuple[Tuple[Tuple[float, ...], ...], ...]
    noise_std: Tuple[float, float, float] = (75.0, 30.0, 30.0)
    cutoff: float = 0.02
    order: int = 3

    def __post_init__(self):
        times = np.asarray(self.breakpoints_h, dtype=float)
        if times.size < 1 or np.any(np.diff(times) < 0):
            raise ValueError(f"breakpoints_h는 오름차순이어야 합니다: {self.breakpoints_h}")
        if len(self.base) != N_ORIGINS or any(len(per_origin) != N_CLASSES for per_origin in self.base):
            raise ValueError(f"base는 기점 {N_ORIGINS}개 x 클래스 {N_CLASSES}개가 필요합니다")
        for j, per_origin in enumerate(self.base):
            for c, values in enumerate(per_origin):
                if len(values) != times.size:
                    raise ValueError(f"base[{j}][{c}] 값 개수가 breakpoints_h와 다릅니다")
                if min(values) < 0:
                    raise ValueError(f"base[{j}][{c}]에 음수 수요가 있습니다")
        if len(self.noise_std) != N_ORIGINS or min(self.noise_std) < 0:
            raise ValueError(f"noise_std는 기점별 0 이상의 값 {N_ORIGINS}개가 필요합니다: {self.noise_std}")
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError(f"차단 주파수는 나이퀴스트 대비 (0, 1) 범위여야 합니다: {self.cutoff}")
        if self.order < 1:
            raise ValueError(f"필터 차수는 1 이상이어야 합니다: {self.order}")

    def base_series(self, n_steps: int, step_s: float) -> np.ndarray:
        """T 간격으로 샘플링한 기본 수요 (n_steps, 기점, 클래스)"""
        t_h = np.arange(n_steps) * step_s / 3600.0
        out = np.empty((n_steps, N_ORIGINS, N_CLASSES))
        for j in range(N_ORIGINS):
            for c in range(N_CLASSES):
                out[:, j, c] = np.interp(t_h, self.breakpoints_h, self.base[j][c])
        return out


def trapezoid_profile(peak_main: float = 3400.0, low_main: float = 1000.0,
                      peak_ramp: float = 800.0, low_ramp: float = 200.0,
                      main_c2_share: float = 0.15, ramp_c2_share: float = 0.1,
                      breakpoints_h: Tuple[float, ...] = (0.0, 0.5, 1.0, 3.0, 3.5, 5.5),
                      noise_std: Tuple[float, float, float] = (75.0, 30.0, 30.0),
                      cutoff: float = 0.02, order: int = 3) -> DemandProfile:
    """기본 혼잡 시나리오: 0.5h 상승, 2h 첨두, 0.5h 하강"""
    def shape(low, peak):
        return (low, low, peak, peak, low, low)

    def origin(low, peak, share):
        c1 = shape(low, peak)
        return (c1, tuple(share * v for v in c1))

    if len(breakpoints_h) != 6:
        raise ValueError("사다리꼴 수요에는 구간점 6개가 필요합니다")
    base = (origin(low_main, peak_main, main_c2_share),
            origin(low_ramp, peak_ramp, ramp_c2_share),
            origin(low_ramp, peak_ramp, ramp_c2_share))
    return DemandProfile(breakpoints_h=tuple(breakpoints_h), base=base,
                         noise_std=tuple(noise_std), cutoff=cutoff, order=order)


def synthesize_demand(profile: DemandProfile, rng: np.random.Generator,
                      n_steps: int = 1980, step_s: float = 10.0) -> np.ndarray:
    """기본 수요 + 기점별 잡음을 저역통과한 스텝별 수요 (n_steps, 기점, 클래스)"""
    base = profile.base_series(n_steps, step_s)
    b, a = butter(profile.order, profile.cutoff, btype='low')
    zi = lfilter_zi(b, a)
    out = np.empty_like(base)
    for j in range(N_ORIGINS):
        # 잡음은 기점당 한 계열, 클래스에는 기본 수요 비율로 배분
        noise = rng.normal(0.0, profile.noise_std[j], size=n_steps) if profile.noise_std[j] > 0 else np.zeros(n_steps)
        total = base[:, j, :].sum(axis=1)
        share = np.divide(base[:, j, :], total[:, None], out=np.zeros_like(base[:, j, :]), where=total[:, None] > 0)
        for c in range(N_CLASSES):
            series = base[:, j, c] + noise * share[:, c]
            filtered, _ = lfilter(b, a, series, zi=zi * series[0])
            out[:, j, c] = np.maximum(filtered, 0.0)
    return out


def weather_schedule(k: int, step_s: float = 10.0, switch_minute: float = WEATHER_SWITCH_MINUTE) -> int:
    """166분 전에는 맑음(0), 이후 악천후(1)"""
    return GOOD_WEATHER if k * step_s < switch_minute * 60.0 else BAD_WEATHER


def weather_series(n_steps: int, step_s: float = 10.0, switch_minute: float = WEATHER_SWITCH_MINUTE) -> np.ndarray:
    return np.array([weather_schedule(k, step_s, switch_minute) for k in range(n_steps)], dtype=int)
