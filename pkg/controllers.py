#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 파라미터화된 상태 피드백 제어기
PI-DTA (경로 유도) + PI-ALINEA (램프 미터링), 출력은 항상 [0, 1]
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

U_DTA_INIT = 0.5
U_RM_INIT = 1.0


@dataclass(frozen=True)
class DtaParams:
    k_p: float
    k_i: float

    def __post_init__(self):
        if not 0.0 <= self.k_p <= 0.5:
            raise ValueError(f"K_P는 [0, 0.5] 범위여야 합니다: {self.k_p}")
        if not 0.0 <= self.k_i <= 0.1:
            raise ValueError(f"K_I는 [0, 0.1] 범위여야 합니다: {self.k_i}")

    def as_vector(self) -> Tuple[float, float]:
        return (self.k_p, self.k_i)


@dataclass(frozen=True)
class RmParams:
    rho_bar: float
    k_r: float
    k_a: float

    def __post_init__(self):
        if not 15.0 <= self.rho_bar <= 50.0:
            raise ValueError(f"목표 밀도는 [15, 50] 범위여야 합니다: {self.rho_bar}")
        if not 0.0 <= self.k_r <= 0.05:
            raise ValueError(f"K_R은 [0, 0.05] 범위여야 합니다: {self.k_r}")
        if not 0.0 <= self.k_a <= 0.1:
            raise ValueError(f"K_A는 [0, 0.1] 범위여야 합니다: {self.k_a}")

    def as_vector(self) -> Tuple[float, float, float]:
        return (self.rho_bar, self.k_r, self.k_a)


@dataclass(frozen=True)
class DtaState:
    u_prev: float = U_DTA_INIT
    dt_prev: float = 0.0


@dataclass(frozen=True)
class RmState:
    u_prev: float = U_RM_INIT
    rho_b_prev: float = 0.0


def clamp_control(u: float) -> float:
    """제어 입력을 [0, 1]로 제한"""
    return min(max(u, 0.0), 1.0)


def pi_dta_update(s: DtaState, dt_now: float, p: DtaParams) -> Tuple[float, DtaState]:
    """u(k) = u(k−1) + K_P(Δt(k) − Δt(k−1)) + K_I·Δt(k)"""
    if not math.isfinite(dt_now):
        raise ValueError(f"Δt가 유한하지 않습니다: {dt_now}")
    raw = s.u_prev + p.k_p * (dt_now - s.dt_prev) + p.k_i * dt_now
    u = clamp_control(raw)
    # 저장하는 값은 제한된 출력 (적분 와인드업 방지)
    return u, DtaState(u_prev=u, dt_prev=dt_now)


def pi_alinea_update(s: RmState, rho_b: float, p: RmParams) -> Tuple[float, RmState]:
    """u(k+1) = u(k) + K_R(ρ̄ − ρ_b(k)) − K_A(ρ_b(k) − ρ_b(k−1))"""
    if not math.isfinite(rho_b):
        raise ValueError(f"병목 밀도가 유한하지 않습니다: {rho_b}")
    if rho_b < 0:
        raise ValueError(f"병목 밀도는 음수일 수 없습니다: {rho_b}")
    raw = s.u_prev + p.k_r * (p.rho_bar - rho_b) - p.k_a * (rho_b - s.rho_b_prev)
    u = clamp_control(raw)
    return u, RmState(u_prev=u, rho_b_prev=rho_b)


FIXED_DTA = DtaParams(k_p=0.01, k_i=0.005)
FIXED_RM = RmParams(rho_bar=37.5, k_r=0.005, k_a=0.1)


@dataclass
class ControllerBank:
    """PI-DTA 1개 + PI-ALINEA 2개와 그 파라미터 θ

    retune()으로 들어온 새 θ는 해당 제어기의 다음 갱신 시점에 반영된다.
    """
    dta_params: DtaParams = FIXED_DTA
    rm_params: List[RmParams] = field(default_factory=lambda: [FIXED_RM, FIXED_RM])
    dta_state: DtaState = field(default_factory=DtaState)
    rm_states: List[RmState] = field(default_factory=lambda: [RmState(), RmState()])
    _pending_dta: Optional[DtaParams] = None
    _pending_rm: List[Optional[RmParams]] = field(default_factory=lambda: [None, None])

    @classmethod
    def start(cls, rho_b_initial: Tuple[float, float], dta_params: DtaParams = FIXED_DTA,
              rm_params: Tuple[RmParams, RmParams] = (FIXED_RM, FIXED_RM)) -> 'ControllerBank':
        """초기 상태: u_dta=0.5, u_rm=1, Δt_prev=0, ρ_b_prev=첫 측정값"""
        return cls(dta_params=dta_params, rm_params=list(rm_params),
                   rm_states=[RmState(rho_b_prev=float(r)) for r in rho_b_initial])

    def retune(self, dta: Optional[DtaParams] = None,
               rm1: Optional[RmParams] = None, rm2: Optional[RmParams] = None) -> None:
        if dta is not None:
            self._pending_dta = dta
        for i, p in enumerate((rm1, rm2)):
            if p is not None:
                self._pending_rm[i] = p

    def update_dta(self, dt_now: float) -> float:
        if self._pending_dta is not None:
            self.dta_params, self._pending_dta = self._pending_dta, None
        u, self.dta_state = pi_dta_update(self.dta_state, dt_now, self.dta_params)
        return u

    def update_rm(self, i: int, rho_b: float) -> float:
        if self._pending_rm[i] is not None:
            self.rm_params[i], self._pending_rm[i] = self._pending_rm[i], None
        u, self.rm_states[i] = pi_alinea_update(self.rm_states[i], rho_b, self.rm_params[i])
        return u

    @property
    def u(self) -> np.ndarray:
        """현재 제어 입력 [u_dta, u_rm1, u_rm2]"""
        return np.array([self.dta_state.u_prev, self.rm_states[0].u_prev, self.rm_states[1].u_prev])

    def theta(self) -> np.ndarray:
        """현재 적용 중인 파라미터 [K_P, K_I, ρ̄1, K_R1, K_A1, ρ̄2, K_R2, K_A2]"""
        return np.array(self.dta_params.as_vector() + self.rm_params[0].as_vector()
                        + self.rm_params[1].as_vector())
