#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 다중 클래스 METANET 고속도로 네트워크 모델
본선 기점(O0) → 분기 → 주경로/보조경로(미터링 램프 O1/O2) → 목적지(D0)

단위 규칙
- 밀도: veh/km/lane, 속도: km/h, 유량: veh/h (전 차로 합)
- 대기열: veh, 스텝 T: 초 (유량 계산 시 시간 단위로 변환)
- 구간 길이 L_m: 미터 (계산 시 km로 변환)
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

N_CLASSES = 2
N_ORIGINS = 3
GOOD_WEATHER = 0
BAD_WEATHER = 1
LINK_NAMES = ('main', 'primary', 'secondary')
ROUTE_LINKS = {1: 'primary', 2: 'secondary'}


class SimulationFault(FloatingPointError):
    """시뮬레이터 입력/상태에 비유한 값이 들어온 경우"""


@dataclass(frozen=True)
class VehicleClassParams:
    """차량 클래스별 기본 다이어그램 파라미터"""
    rho_cr: float
    v_free: float
    a_m: float
    pce: float

    def __post_init__(self):
        for name in ('rho_cr', 'v_free', 'a_m', 'pce'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"VehicleClassParams.{name}는 양수여야 합니다: {value}")


@dataclass(frozen=True)
class GlobalModelParams:
    """날씨와 무관한 파라미터 + 날씨별 표(맑음/악천후)"""
    nu: float = 60.0
    chi: float = 40.0
    delta: float = 0.0122
    rho_max: float = 180.0
    c_main: float = 2000.0
    c_onramp: float = 2000.0
    segment_length_m: float = 1000.0
    step_s: float = 10.0
    v_min: float = 7.0
    rho_cr_good: Tuple[float, float] = (40.0, 32.65)
    rho_cr_bad: Tuple[float, float] = (24.0, 16.65)
    v_free_good: Tuple[float, float] = (110.0, 86.5)
    v_free_bad: Tuple[float, float] = (92.0, 61.4)
    tau_good: float = 18.0
    tau_bad: float = 21.6
    a_m: Tuple[float, float] = (1.8, 2.0)
    # c2 환산계수 = 맑은 날 임계밀도 비율, 날씨와 무관하게 고정
    pce: Tuple[float, float] = (1.0, 40.0 / 32.65)

    def __post_init__(self):
        for name in ('rho_cr_good', 'rho_cr_bad', 'v_free_good', 'v_free_bad', 'a_m', 'pce'):
            values = getattr(self, name)
            if len(values) != N_CLASSES:
                raise ValueError(f"{name}는 클래스 수({N_CLASSES})만큼 값이 필요합니다: {values}")
            object.__setattr__(self, name, tuple(float(v) for v in values))
        if self.step_s <= 0:
            raise ValueError(f"step_s는 양수여야 합니다: {self.step_s}")
        if self.segment_length_m <= 0:
            raise ValueError(f"segment_length_m는 양수여야 합니다: {self.segment_length_m}")
        if self.v_min <= 0:
            raise ValueError(f"v_min은 양수여야 합니다: {self.v_min}")
        if min(self.tau_good, self.tau_bad, self.chi, self.c_main, self.c_onramp) <= 0:
            raise ValueError("tau, chi, 용량은 양수여야 합니다")
        if self.nu < 0 or self.delta < 0:
            raise ValueError("nu, delta는 음수일 수 없습니다")
        if self.rho_max <= max(self.rho_cr_good + self.rho_cr_bad):
            raise ValueError(f"rho_max({self.rho_max})는 모든 임계밀도보다 커야 합니다")
        if self.v_min >= min(self.v_free_good + self.v_free_bad):
            raise ValueError(f"v_min({self.v_min})은 모든 자유속도보다 작아야 합니다")
        # 한 스텝에 구간을 통과해 버리면 밀도가 음수가 된다
        courant = max(self.v_free_good + self.v_free_bad) * self.step_h / self.length_km
        if courant >= 1.0:
            raise ValueError(f"CFL 조건 위반: v_free*T/L = {courant:.3f} >= 1")

    @property
    def step_h(self) -> float:
        return self.step_s / 3600.0

    @property
    def length_km(self) -> float:
        return self.segment_length_m / 1000.0


DEFAULT_PARAMS = GlobalModelParams()


@lru_cache(maxsize=64)
def _weather_table(w: int, params: GlobalModelParams):
    if w == GOOD_WEATHER:
        rho_cr, v_free, tau = params.rho_cr_good, params.v_free_good, params.tau_good
    else:
        rho_cr, v_free, tau = params.rho_cr_bad, params.v_free_bad, params.tau_bad
    classes = tuple(
        VehicleClassParams(rho_cr=rho_cr[c], v_free=v_free[c], a_m=params.a_m[c], pce=params.pce[c])
        for c in range(N_CLASSES)
    )
    return classes, tau


def weather_params(w: int, params: GlobalModelParams = DEFAULT_PARAMS):
    """날씨 지표 w(0=맑음, 1=악천후)에 해당하는 클래스 파라미터와 tau 반환"""
    if w not in (GOOD_WEATHER, BAD_WEATHER):
        raise ValueError(f"날씨 지표는 0 또는 1이어야 합니다: {w}")
    return _weather_table(int(w), params)


@dataclass
class SegmentState:
    rho: np.ndarray
    v: np.ndarray


@dataclass
class OriginState:
    w_q: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class LinkSpec:
    """링크 구성: 구간 수, 차로 수, 램프 접속 구간, 병목 측정 구간"""
    name: str
    n_segments: int
    lanes: int
    onramp_segment: Optional[int] = None
    bottleneck_segment: Optional[int] = None
    # 병목 구간부터 링크 끝까지의 차로 수 (차로 감소)
    bottleneck_lanes: Optional[int] = None
    onramp_lanes: int = 1

    def __post_init__(self):
        if self.n_segments < 1 or self.lanes < 1 or self.onramp_lanes < 1:
            raise ValueError(f"링크 {self.name}: 구간/차로 수는 1 이상이어야 합니다")
        for name in ('onramp_segment', 'bottleneck_segment'):
            idx = getattr(self, name)
            if idx is not None and not 0 <= idx < self.n_segments:
                raise ValueError(f"링크 {self.name}: {name}={idx}가 구간 범위를 벗어났습니다")
        if self.bottleneck_segment is not None and self.onramp_segment is not None:
            if self.bottleneck_segment <= self.onramp_segment:
                raise ValueError(f"링크 {self.name}: 병목은 램프 접속 구간보다 하류여야 합니다")
        if self.bottleneck_lanes is not None:
            if self.bottleneck_segment is None or self.bottleneck_lanes < 1:
                raise ValueError(f"링크 {self.name}: bottleneck_lanes에는 유효한 병목 구간이 필요합니다")

    def lanes_per_segment(self) -> np.ndarray:
        lanes = np.full(self.n_segments, float(self.lanes))
        if self.bottleneck_lanes is not None:
            lanes[self.bottleneck_segment:] = float(self.bottleneck_lanes)
        return lanes


@dataclass(frozen=True)
class Topology:
    main: LinkSpec
    primary: LinkSpec
    secondary: LinkSpec

    def __post_init__(self):
        if self.main.onramp_segment is not None:
            raise ValueError("본선 링크에는 램프가 없습니다 (O0가 첫 구간으로 유입)")
        for route in (self.primary, self.secondary):
            if route.onramp_segment is None or route.bottleneck_segment is None:
                raise ValueError(f"경로 링크 {route.name}에는 램프와 병목 구간이 필요합니다")
        if self.primary.n_segments != self.secondary.n_segments:
            raise ValueError("주경로와 보조경로의 구간 수가 같아야 합니다")
        # lanes_per_segment는 스텝마다 쓰이므로 한 번만 계산
        object.__setattr__(self, '_lanes', {name: self.link(name).lanes_per_segment() for name in LINK_NAMES})

    def link(self, name: str) -> LinkSpec:
        return {'main': self.main, 'primary': self.primary, 'secondary': self.secondary}[name]

    def route(self, route: int) -> LinkSpec:
        if route not in ROUTE_LINKS:
            raise ValueError(f"경로는 1 또는 2여야 합니다: {route}")
        return self.link(ROUTE_LINKS[route])

    def lanes(self, name: str) -> np.ndarray:
        return self._lanes[name]


def default_topology() -> Topology:
    """기본 배치: 본선 2구간/2차로, 경로별 4구간/2차로, 램프는 2번째 구간, 병목은 3번째 구간(1차로)"""
    return Topology(
        main=LinkSpec('main', n_segments=2, lanes=2),
        primary=LinkSpec('primary', n_segments=4, lanes=2, onramp_segment=1,
                         bottleneck_segment=2, bottleneck_lanes=1),
        secondary=LinkSpec('secondary', n_segments=4, lanes=2, onramp_segment=1,
                           bottleneck_segment=2, bottleneck_lanes=1),
    )


class Controls(NamedTuple):
    u_dta: float
    u_rm1: float
    u_rm2: float


@dataclass
class NetworkState:
    """x(k): 링크별 (구간 x 클래스) 밀도/속도, 기점별 대기열/수요, 스텝 카운터"""
    density: Dict[str, np.ndarray]
    speed: Dict[str, np.ndarray]
    queue: np.ndarray
    demand: np.ndarray
    k: int = 0

    def segment(self, link: str, i: int) -> SegmentState:
        return SegmentState(rho=self.density[link][i], v=self.speed[link][i])

    def origin(self, j: int) -> OriginState:
        return OriginState(w_q=self.queue[j], d=self.demand[j])

    def copy(self) -> 'NetworkState':
        return NetworkState(
            density={k: v.copy() for k, v in self.density.items()},
            speed={k: v.copy() for k, v in self.speed.items()},
            queue=self.queue.copy(),
            demand=self.demand.copy(),
            k=self.k,
        )


@dataclass
class StepFlows:
    """한 스텝 동안 실제로 통과한 경계 유량 (veh/h)"""
    origin_flow: np.ndarray
    exit_flow: np.ndarray
    diverge_flow: Dict[str, np.ndarray] = field(default_factory=dict)


def initial_state(topo: Topology, params: GlobalModelParams = DEFAULT_PARAMS,
                  w: int = GOOD_WEATHER) -> NetworkState:
    """빈 네트워크: 밀도/대기열 0, 속도는 클래스별 자유속도"""
    classes, _ = weather_params(w, params)
    v_free = np.array([c.v_free for c in classes])
    density, speed = {}, {}
    for name in LINK_NAMES:
        n = topo.link(name).n_segments
        density[name] = np.zeros((n, N_CLASSES))
        speed[name] = np.tile(v_free, (n, 1))
    return NetworkState(density=density, speed=speed,
                        queue=np.zeros((N_ORIGINS, N_CLASSES)),
                        demand=np.zeros((N_ORIGINS, N_CLASSES)))


def effective_density(seg: SegmentState, params: GlobalModelParams = DEFAULT_PARAMS) -> float:
    """pce 가중 유효 밀도"""
    return float(np.dot(seg.rho, params.pce))


def equilibrium_speed(rho_eff: float, cls: VehicleClassParams, v_min: float = DEFAULT_PARAMS.v_min) -> float:
    """V(ρ) = v_free·exp(−(1/a)(ρ/ρ_cr)^a), v_min 하한"""
    v = cls.v_free * math.exp(-(1.0 / cls.a_m) * (rho_eff / cls.rho_cr) ** cls.a_m)
    return max(v, v_min)


def _equilibrium_speeds(rho_eff: np.ndarray, classes, v_min: float) -> np.ndarray:
    out = np.empty((rho_eff.shape[0], N_CLASSES))
    for c, cls in enumerate(classes):
        out[:, c] = cls.v_free * np.exp(-(1.0 / cls.a_m) * (rho_eff / cls.rho_cr) ** cls.a_m)
    return np.maximum(out, v_min)


def origin_outflow(o: OriginState, r: float, downstream: SegmentState,
                   params: GlobalModelParams = DEFAULT_PARAMS, w: int = GOOD_WEATHER,
                   *, capacity: Optional[float] = None, lanes: int = 1) -> np.ndarray:
    """기점 유출량 = min(수요+대기열, 미터링 용량, 하류 수용량), 클래스별로 비례 배분"""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"미터링 비율은 [0, 1] 범위여야 합니다: {r}")
    capacity = params.c_onramp if capacity is None else capacity
    wanted = np.asarray(o.d, dtype=float) + np.asarray(o.w_q, dtype=float) / params.step_h
    total_wanted = float(wanted.sum())
    if total_wanted <= 0.0:
        return np.zeros(N_CLASSES)
    classes, _ = weather_params(w, params)
    rho_cr = classes[0].rho_cr
    full = capacity * lanes
    supply = full * (params.rho_max - effective_density(downstream, params)) / (params.rho_max - rho_cr)
    supply = min(max(supply, 0.0), full)
    total = min(total_wanted, full * r, supply)
    return wanted * (total / total_wanted)


def _check_finite(x: NetworkState, d: np.ndarray, controls: Sequence[float]) -> None:
    arrays = list(x.density.values()) + list(x.speed.values()) + [x.queue, d, np.asarray(controls)]
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise SimulationFault(f"비유한 입력 감지 (k={x.k})")


def _limit_link(rho_eff, sending, upstream_in, ramp, lanes, last_out, pce, params):
    """하류부터 상류로 수용량(ρ_max)을 넘지 않도록 경계 유량을 줄인다"""
    room_scale = params.length_km / params.step_h
    out = sending.copy()
    out[-1] = last_out
    ramp = ramp.copy()
    inflow = np.zeros_like(sending)
    for i in range(sending.shape[0] - 1, -1, -1):
        upstream = upstream_in if i == 0 else out[i - 1]
        room = (params.rho_max - rho_eff[i]) * lanes[i] * room_scale + float(pce @ out[i])
        wanted = float(pce @ (upstream + ramp[i]))
        if wanted > room:
            scale = max(room, 0.0) / wanted
            upstream = upstream * scale
            ramp[i] = ramp[i] * scale
            if i > 0:
                out[i - 1] = upstream
        inflow[i] = upstream
    return inflow, out, ramp


def step_network_detailed(x: NetworkState, u: Sequence[float], d, w: int,
                          topo: Topology, params: GlobalModelParams = DEFAULT_PARAMS):
    """한 스텝(T) 진행, 새 상태와 경계 유량을 함께 반환"""
    u_dta, u_rm1, u_rm2 = (float(c) for c in u)
    d = np.asarray(d, dtype=float).reshape(N_ORIGINS, N_CLASSES)
    _check_finite(x, d, (u_dta, u_rm1, u_rm2))
    if np.any(d < 0):
        raise ValueError("수요는 음수일 수 없습니다")
    for value in (u_dta, u_rm1, u_rm2):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"제어 입력은 미리 [0, 1]로 제한되어야 합니다: {value}")

    classes, tau = weather_params(w, params)
    pce = np.asarray(params.pce)
    v_free = np.array([c.v_free for c in classes])
    T_h, L = params.step_h, params.length_km
    lanes = {name: topo.lanes(name) for name in LINK_NAMES}
    rho_eff = {name: x.density[name] @ pce for name in LINK_NAMES}
    sending = {name: x.density[name] * x.speed[name] * lanes[name][:, None] for name in LINK_NAMES}

    # 기점 희망 유출량
    rates = (1.0, u_rm1, u_rm2)
    desired = np.zeros((N_ORIGINS, N_CLASSES))
    for j in range(N_ORIGINS):
        if j == 0:
            target = x.segment('main', 0)
            capacity, origin_lanes = params.c_main, topo.main.lanes
        else:
            route = topo.route(j)
            target = x.segment(route.name, route.onramp_segment)
            capacity, origin_lanes = params.c_onramp, route.onramp_lanes
        desired[j] = origin_outflow(OriginState(x.queue[j], d[j]), rates[j], target, params, w,
                                    capacity=capacity, lanes=origin_lanes)

    inflow, outflow, ramp_in = {}, {}, {}
    origin_flow = np.zeros_like(desired)
    main_out = sending['main'][-1]
    split = {'primary': u_dta, 'secondary': 1.0 - u_dta}
    for j, name in ROUTE_LINKS.items():
        route = topo.route(j)
        ramp = np.zeros_like(sending[name])
        ramp[route.onramp_segment] = desired[j]
        inflow[name], outflow[name], ramp_in[name] = _limit_link(
            rho_eff[name], sending[name], split[name] * main_out, ramp,
            lanes[name], sending[name][-1], pce, params)
        origin_flow[j] = ramp_in[name][route.onramp_segment]

    diverge_flow = {name: inflow[name][0] for name in ROUTE_LINKS.values()}
    inflow['main'], outflow['main'], ramp_in['main'] = _limit_link(
        rho_eff['main'], sending['main'], desired[0], np.zeros_like(sending['main']),
        lanes['main'], diverge_flow['primary'] + diverge_flow['secondary'], pce, params)
    origin_flow[0] = inflow['main'][0]

    new_density, new_speed = {}, {}
    for name in LINK_NAMES:
        rho, v, lam = x.density[name], x.speed[name], lanes[name]
        new_rho = rho + T_h / (L * lam[:, None]) * (inflow[name] + ramp_in[name] - outflow[name])
        new_density[name] = np.clip(new_rho, 0.0, params.rho_max)

        eff = rho_eff[name]
        v_eq = _equilibrium_speeds(eff, classes, params.v_min)
        v_up = np.vstack((v[:1], v[:-1]))
        eff_down = np.append(eff[1:], eff[-1])
        relax = (params.step_s / tau) * (v_eq - v)
        convection = (T_h / L) * v * (v_up - v)
        # T/τ 무차원, ν/L → km/h
        anticipation = (params.nu * params.step_s / (tau * L)) * ((eff_down - eff) / (eff + params.chi))[:, None]
        new_v = v + relax + convection - anticipation
        link = topo.link(name)
        if link.onramp_segment is not None:
            i = link.onramp_segment
            q_ramp = float(ramp_in[name][i].sum())
            new_v[i] -= params.delta * T_h * q_ramp * v[i] / (L * lam[i] * (eff[i] + params.chi))
        new_speed[name] = np.clip(new_v, params.v_min, v_free)

    new_queue = np.maximum(x.queue + T_h * (d - origin_flow), 0.0)
    exit_flow = outflow['primary'][-1] + outflow['secondary'][-1]
    state = NetworkState(density=new_density, speed=new_speed, queue=new_queue,
                         demand=d.copy(), k=x.k + 1)
    return state, StepFlows(origin_flow=origin_flow, exit_flow=exit_flow, diverge_flow=diverge_flow)


def step_network(x: NetworkState, u: Sequence[float], d, w: int,
                 topo: Topology, params: GlobalModelParams = DEFAULT_PARAMS) -> NetworkState:
    """x(k+1) = f(x(k), u(k), d(k), w(k))"""
    state, _ = step_network_detailed(x, u, d, w, topo, params)
    return state


def stored_vehicles(x: NetworkState, topo: Topology, params: GlobalModelParams = DEFAULT_PARAMS) -> float:
    """구간 + 대기열에 있는 전체 차량 수 (veh)"""
    total = float(x.queue.sum())
    for name in LINK_NAMES:
        total += float((x.density[name].sum(axis=1) * topo.lanes(name)).sum() * params.length_km)
    return total


def compute_step_tts(x: NetworkState, topo: Topology, params: GlobalModelParams = DEFAULT_PARAMS) -> float:
    """J_TTS(k) = T·(Σ ρ·λ·L + Σ w) [veh·h]"""
    return params.step_h * stored_vehicles(x, topo, params)


def _route_vehicles(x: NetworkState, route: int, topo: Topology, params: GlobalModelParams) -> float:
    name = ROUTE_LINKS[route]
    on_link = float((x.density[name].sum(axis=1) * topo.lanes(name)).sum() * params.length_km)
    return on_link + float(x.queue[route].sum())


def route_tts_difference(x: NetworkState, topo: Topology, params: GlobalModelParams = DEFAULT_PARAMS) -> float:
    """Δt = 주경로(구간+램프 대기열) TTS − 보조경로 TTS"""
    return params.step_h * (_route_vehicles(x, 1, topo, params) - _route_vehicles(x, 2, topo, params))


def bottleneck_density(x: NetworkState, route: int, topo: Topology,
                       params: GlobalModelParams = DEFAULT_PARAMS) -> float:
    link = topo.route(route)
    return effective_density(x.segment(link.name, link.bottleneck_segment), params)
