#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 계층형 제어 환경과 학습 루프
시뮬레이션(T) → PI 제어기(T_rm, T_dta) → RL 파라미터 튜닝(T_rl) 세 주기를 한 에피소드로 묶는다.
"""

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from controllers import ControllerBank, DtaParams, RmParams, U_DTA_INIT, U_RM_INIT
from demand import synthesize_demand, weather_series
from rl_core import (ActionBounds, Agent, InsufficientExperience, TrainingDivergence, Transition,
                     actor_act, ddpg_train_step, explore, make_agent, replay_push, replay_sample)
from traffic_model import (NetworkState, bottleneck_density, compute_step_tts, initial_state,
                           route_tts_difference, step_network)

if TYPE_CHECKING:
    from scenario_config import ScenarioConfig

logger = logging.getLogger(__name__)

MODES = ('no_control', 'fixed', 'multi', 'single')
FRAMEWORKS = ('multi', 'single')

DTA_BOUNDS = ActionBounds(lo=(0.0, 0.0), hi=(0.5, 0.1))
RM_BOUNDS = ActionBounds(lo=(15.0, 0.0, 0.0), hi=(50.0, 0.05, 0.1))
SINGLE_BOUNDS = ActionBounds(lo=DTA_BOUNDS.lo + RM_BOUNDS.lo + RM_BOUNDS.lo,
                             hi=DTA_BOUNDS.hi + RM_BOUNDS.hi + RM_BOUNDS.hi)

# 정규화 스케일
DEMAND_SCALE = 2000.0
QUEUE_SCALE = 100.0
DT_SCALE = 10.0
DENSITY_SCALE = 180.0
# o_dta에서 잡음이 걸리는 성분 수: d(2) + q(2) + Δt + Δt_prev + u_dta
DTA_NOISY_FEATURES = 7


def _tag(name: str) -> int:
    return zlib.crc32(name.encode('utf-8'))


def stream(base_seed: int, tag: str, key: Sequence[int]) -> np.random.Generator:
    """(기본 시드, 용도 태그, 실행 키)로 결정되는 독립 난수 스트림"""
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), _tag(tag)] + [int(k) for k in key]))


@dataclass(frozen=True)
class TimingConfig:
    step_s: float = 10.0
    dta_s: float = 300.0
    rm_s: float = 60.0
    rl_s: float = 1800.0
    episode_s: float = 19800.0

    def __post_init__(self):
        if self.step_s <= 0:
            raise ValueError(f"step_s는 양수여야 합니다: {self.step_s}")
        for name in ('dta_s', 'rm_s', 'rl_s', 'episode_s'):
            ratio = getattr(self, name) / self.step_s
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name}={getattr(self, name)}는 T={self.step_s}의 정수배여야 합니다")
        for name in ('dta_s', 'rm_s'):
            ratio = self.rl_s / getattr(self, name)
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"rl_s={self.rl_s}는 {name}={getattr(self, name)}의 정수배여야 합니다")
        if self.n_steps % self.m_rl != 0:
            raise ValueError(f"episode_s={self.episode_s}는 rl_s={self.rl_s}의 정수배여야 합니다")

    def _every(self, period_s: float) -> int:
        return int(round(period_s / self.step_s))

    @property
    def n_steps(self) -> int:
        return self._every(self.episode_s)

    @property
    def m_rl(self) -> int:
        return self._every(self.rl_s)

    @property
    def dta_every(self) -> int:
        return self._every(self.dta_s)

    @property
    def rm_every(self) -> int:
        return self._every(self.rm_s)

    @property
    def n_intervals(self) -> int:
        return self.n_steps // self.m_rl


@dataclass(frozen=True)
class RewardConfig:
    w_tts: float = 3.33e-4
    w_u: float = 2.22e-5

    def __post_init__(self):
        if self.w_tts < 0 or self.w_u < 0:
            raise ValueError(f"보상 가중치는 음수일 수 없습니다: w_tts={self.w_tts}, w_u={self.w_u}")


@dataclass(frozen=True)
class ObservationSpec:
    features: Tuple[str, ...]
    scales: Tuple[float, ...]

    def __post_init__(self):
        if len(self.features) != len(self.scales):
            raise ValueError("특징 이름과 스케일 개수가 다릅니다")
        if any(s <= 0 for s in self.scales):
            raise ValueError(f"정규화 스케일은 양수여야 합니다: {self.scales}")

    @property
    def dim(self) -> int:
        return len(self.features)

    @classmethod
    def multi(cls, agent: int) -> 'ObservationSpec':
        if agent == 1:
            tail = (('dt', DT_SCALE), ('dt_prev', DT_SCALE), ('u_dta', 1.0))
        elif agent in (2, 3):
            r = agent - 1
            tail = ((f'rho_b{r}', DENSITY_SCALE), (f'rho_b{r}_prev', DENSITY_SCALE), (f'u_rm{r}', 1.0))
        else:
            raise ValueError(f"에이전트 번호는 1~3이어야 합니다: {agent}")
        j = agent - 1
        head = ((f'd{j}_c1', DEMAND_SCALE), (f'd{j}_c2', DEMAND_SCALE),
                (f'q{j}_c1', QUEUE_SCALE), (f'q{j}_c2', QUEUE_SCALE))
        pairs = head + tail + (('w', 1.0),)
        return cls(features=tuple(p[0] for p in pairs), scales=tuple(p[1] for p in pairs))

    @classmethod
    def single(cls) -> 'ObservationSpec':
        parts = [cls.multi(i) for i in (1, 2, 3)]
        return cls(features=sum((p.features[:-1] for p in parts), ()) + ('w',),
                   scales=sum((p.scales[:-1] for p in parts), ()) + (1.0,))


@dataclass(frozen=True)
class EnvSnapshot:
    """튜닝 경계에서 에이전트가 보는 원시 측정값 (제어기 갱신 전)"""
    demand: np.ndarray
    queue: np.ndarray
    dt_now: float
    dt_prev: float
    u_dta: float
    rho_b: Tuple[float, float]
    rho_b_prev: Tuple[float, float]
    u_rm: Tuple[float, float]
    w: int


def take_snapshot(x: NetworkState, d: np.ndarray, bank: ControllerBank, w: int,
                  scenario: 'ScenarioConfig') -> EnvSnapshot:
    topo, params = scenario.topology, scenario.params
    return EnvSnapshot(
        demand=np.asarray(d, dtype=float).copy(),
        queue=x.queue.copy(),
        dt_now=route_tts_difference(x, topo, params),
        dt_prev=bank.dta_state.dt_prev,
        u_dta=bank.dta_state.u_prev,
        rho_b=(bottleneck_density(x, 1, topo, params), bottleneck_density(x, 2, topo, params)),
        rho_b_prev=(bank.rm_states[0].rho_b_prev, bank.rm_states[1].rho_b_prev),
        u_rm=(bank.rm_states[0].u_prev, bank.rm_states[1].u_prev),
        w=int(w),
    )


def build_obs_multi(agent: int, snap: EnvSnapshot) -> np.ndarray:
    """o_1 = [d_0, q_0, Δt, Δt_prev, u_dta, w], o_{i+1} = [d_i, q_i, ρ_b,i, ρ_b,i_prev, u_rm,i, w]"""
    if agent == 1:
        tail = [snap.dt_now, snap.dt_prev, snap.u_dta]
    elif agent in (2, 3):
        r = agent - 2
        tail = [snap.rho_b[r], snap.rho_b_prev[r], snap.u_rm[r]]
    else:
        raise ValueError(f"에이전트 번호는 1~3이어야 합니다: {agent}")
    j = agent - 1
    return np.concatenate((snap.demand[j], snap.queue[j], tail, [float(snap.w)]))


def build_obs_single(snap: EnvSnapshot) -> np.ndarray:
    parts = [build_obs_multi(i, snap)[:-1] for i in (1, 2, 3)]
    return np.concatenate(parts + [[float(snap.w)]])


def normalize(o, spec: ObservationSpec) -> np.ndarray:
    o = np.asarray(o, dtype=float)
    if o.shape != (spec.dim,):
        raise ValueError(f"관측 차원 {o.shape}이(가) 사양 {spec.dim}과 다릅니다")
    return o / np.asarray(spec.scales)


def compute_reward(tts_slice, control_trace_slice, cfg: RewardConfig = RewardConfig(),
                   u_before: Optional[Sequence[float]] = None) -> float:
    """r = −Σ_k (w_tts·J_TTS(k) + w_u·‖u(k) − u(k−1)‖²), u_before는 구간 직전의 u"""
    tts = np.asarray(tts_slice, dtype=float)
    if tts.size == 0:
        return 0.0
    u = np.atleast_2d(np.asarray(control_trace_slice, dtype=float))
    if u.shape[0] != tts.shape[0]:
        raise ValueError(f"TTS 길이 {tts.shape[0]}와 제어 이력 길이 {u.shape[0]}가 다릅니다")
    first = u[:1] if u_before is None else np.asarray(u_before, dtype=float)[None, :]
    du = np.diff(np.vstack((first, u)), axis=0)
    return -float(cfg.w_tts * tts.sum() + cfg.w_u * np.sum(du * du))


def noise_multipliers(alpha) -> np.ndarray:
    """η = 1 + clip(α, −100, 100)/100"""
    return 1.0 + np.clip(np.asarray(alpha, dtype=float), -100.0, 100.0) / 100.0


def apply_obs_noise(o, sigma: float, k: int, rng: np.random.Generator, *, step_s: float = 10.0,
                    start_minute: float = 30.0, n_features: Optional[int] = None) -> np.ndarray:
    """정규화된 관측 앞쪽 n_features개 성분에 곱셈 잡음 (start_minute 이후에만)"""
    o = np.array(o, dtype=float)
    if sigma < 0:
        raise ValueError(f"잡음 표준편차는 음수일 수 없습니다: {sigma}")
    if sigma == 0 or k * step_s < start_minute * 60.0:
        return o
    n = o.size if n_features is None else n_features
    o[:n] *= noise_multipliers(rng.normal(0.0, sigma, size=n))
    return o


@dataclass
class EpisodeResult:
    mode: str
    tts: np.ndarray
    controls: np.ndarray
    weather: np.ndarray
    rewards: np.ndarray
    theta: np.ndarray
    # 튜닝 구간별 원시 관측 / raw 행동 (에이전트 순서)
    observations: List[List[np.ndarray]] = field(default_factory=list)
    actions: List[List[np.ndarray]] = field(default_factory=list)
    final_queue: Optional[np.ndarray] = None
    u_initial: Optional[np.ndarray] = None

    @property
    def total_tts(self) -> float:
        return float(self.tts.sum())

    @property
    def control_cost(self) -> float:
        first = self.controls[:1] if self.u_initial is None else self.u_initial[None, :]
        du = np.diff(np.vstack((first, self.controls)), axis=0)
        return float(np.sum(du * du))


def agent_specs(framework: str) -> List[Tuple[ObservationSpec, ActionBounds]]:
    if framework == 'multi':
        return [(ObservationSpec.multi(1), DTA_BOUNDS), (ObservationSpec.multi(2), RM_BOUNDS),
                (ObservationSpec.multi(3), RM_BOUNDS)]
    if framework == 'single':
        return [(ObservationSpec.single(), SINGLE_BOUNDS)]
    raise ValueError(f"알 수 없는 프레임워크: {framework}")


def make_agents(framework: str, scenario: 'ScenarioConfig', seed: int) -> List[Agent]:
    rng = stream(scenario.base_seed, 'agent-init', (seed,))
    return [make_agent(spec.dim, bounds, rng, scenario.ddpg) for spec, bounds in agent_specs(framework)]


def _raw_observations(framework: str, snap: EnvSnapshot) -> List[np.ndarray]:
    if framework == 'multi':
        return [build_obs_multi(i, snap) for i in (1, 2, 3)]
    return [build_obs_single(snap)]


def _agent_inputs(framework: str, raw_obs: List[np.ndarray], sigma: float, k: int,
                  rng: np.random.Generator, scenario: 'ScenarioConfig') -> List[np.ndarray]:
    """정규화 후 o_dta 성분(단일 에이전트는 앞쪽 동일 성분)에만 관측 잡음"""
    out = []
    for i, ((spec, _), o) in enumerate(zip(agent_specs(framework), raw_obs)):
        z = normalize(o, spec)
        if i == 0:
            z = apply_obs_noise(z, sigma, k, rng, step_s=scenario.timing.step_s,
                                start_minute=scenario.noise_start_minute, n_features=DTA_NOISY_FEATURES)
        out.append(z)
    return out


def _retune(bank: ControllerBank, framework: str, scaled: List[np.ndarray]) -> None:
    if framework == 'multi':
        dta, rm1, rm2 = scaled
    else:
        v = scaled[0]
        dta, rm1, rm2 = v[:2], v[2:5], v[5:8]
    bank.retune(DtaParams(*map(float, dta)), RmParams(*map(float, rm1)), RmParams(*map(float, rm2)))


def run_episode(mode: str, scenario: 'ScenarioConfig', key: Sequence[int], agents: Optional[List[Agent]] = None,
                sigma: float = 0.0, train_rng: Optional[np.random.Generator] = None) -> EpisodeResult:
    """한 에피소드 실행, train_rng가 있으면 탐색 + 전이 저장 + 행동마다 DDPG 1스텝"""
    if mode not in MODES:
        raise ValueError(f"알 수 없는 모드: {mode}")
    learning_mode = mode in FRAMEWORKS
    if learning_mode:
        expected = len(agent_specs(mode))
        if agents is None or len(agents) != expected:
            raise ValueError(f"{mode} 모드에는 에이전트 {expected}개가 필요합니다")
    topo, params, timing = scenario.topology, scenario.params, scenario.timing
    n, m = timing.n_steps, timing.m_rl

    demand = synthesize_demand(scenario.profile, stream(scenario.base_seed, 'demand', key), n, timing.step_s)
    noise_rng = stream(scenario.base_seed, 'obs-noise', key)
    weather = weather_series(n, timing.step_s, scenario.weather_switch_minute)

    x = initial_state(topo, params, int(weather[0]))
    bank = ControllerBank.start(
        (bottleneck_density(x, 1, topo, params), bottleneck_density(x, 2, topo, params)),
        scenario.fixed_dta, (scenario.fixed_rm, scenario.fixed_rm))
    fixed_u = np.array([U_DTA_INIT, U_RM_INIT, U_RM_INIT])
    u_prev = fixed_u if mode == 'no_control' else bank.u

    tts = np.empty(n)
    controls = np.empty((n, 3))
    theta = []
    observations, actions = [], []
    pending: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None

    def store_and_learn(next_inputs: List[np.ndarray], reward: float, terminal: bool) -> None:
        for agent, (obs, act), nxt in zip(agents, pending, next_inputs):
            replay_push(agent.buffer, Transition(obs, act, reward, nxt, terminal))
            if len(agent.buffer) >= agent.batch_size:
                try:
                    ddpg_train_step(agent, replay_sample(agent.buffer, agent.batch_size, rng=train_rng))
                except InsufficientExperience:
                    pass

    for k in range(n):
        w = int(weather[k])
        if learning_mode and k % m == 0:
            snap = take_snapshot(x, demand[k], bank, w, scenario)
            raw_obs = _raw_observations(mode, snap)
            inputs = _agent_inputs(mode, raw_obs, sigma, k, noise_rng, scenario)
            if pending is not None and train_rng is not None:
                j = k // m - 1
                store_and_learn(inputs, compute_reward(tts[j * m:k], controls[j * m:k], scenario.reward,
                                                       controls[j * m - 1] if j > 0 else u_prev), False)
            raw_actions, scaled = [], []
            for agent, z in zip(agents, inputs):
                raw, _ = actor_act(agent, z)
                if train_rng is not None:
                    raw = explore(agent, raw, train_rng)
                raw_actions.append(raw)
                scaled.append(agent.bounds.scale(raw))
            _retune(bank, mode, scaled)
            observations.append(raw_obs)
            actions.append(raw_actions)
            pending = list(zip(inputs, raw_actions))

        if mode != 'no_control':
            if k % timing.dta_every == 0:
                bank.update_dta(route_tts_difference(x, topo, params))
            if k % timing.rm_every == 0:
                for i in range(2):
                    bank.update_rm(i, bottleneck_density(x, i + 1, topo, params))
            u = bank.u
        else:
            u = fixed_u
        if k % m == 0:
            theta.append(bank.theta())

        tts[k] = compute_step_tts(x, topo, params)
        controls[k] = u
        x = step_network(x, u, demand[k], w, topo, params)

    rewards = np.array([
        compute_reward(tts[j * m:(j + 1) * m], controls[j * m:(j + 1) * m], scenario.reward,
                       controls[j * m - 1] if j > 0 else u_prev)
        for j in range(timing.n_intervals)
    ])
    if learning_mode and train_rng is not None and pending is not None:
        w_end = int(weather[-1])
        snap = take_snapshot(x, demand[-1], bank, w_end, scenario)
        inputs = _agent_inputs(mode, _raw_observations(mode, snap), sigma, n, noise_rng, scenario)
        store_and_learn(inputs, float(rewards[-1]), True)

    return EpisodeResult(mode=mode, tts=tts, controls=controls, weather=weather, rewards=rewards,
                         theta=np.array(theta), observations=observations, actions=actions,
                         final_queue=x.queue.copy(), u_initial=np.array(u_prev, dtype=float))


def replay_actions(framework: str, agents: List[Agent], observations: List[List[np.ndarray]],
                   sigma: float, scenario: 'ScenarioConfig', key: Sequence[int]) -> List[List[np.ndarray]]:
    """기록된 원시 관측 궤적에 잡음 σ를 적용했을 때의 탐욕 행동 (raw)"""
    noise_rng = stream(scenario.base_seed, 'obs-noise', key)
    m = scenario.timing.m_rl
    out = []
    for j, raw_obs in enumerate(observations):
        inputs = _agent_inputs(framework, raw_obs, sigma, j * m, noise_rng, scenario)
        out.append([actor_act(agent, z)[0] for agent, z in zip(agents, inputs)])
    return out


TRAIN_TAG = 'train'


def train(framework: str, scenario: 'ScenarioConfig', episodes: int, seed: int,
          agents: Optional[List[Agent]] = None) -> Tuple[List[Agent], List[float]]:
    """탐색을 켠 에피소드를 반복하며 에이전트 학습, (에이전트, 에피소드별 보상 합) 반환"""
    if framework not in FRAMEWORKS:
        raise ValueError(f"알 수 없는 프레임워크: {framework}")
    if episodes < 0:
        raise ValueError(f"에피소드 수는 0 이상이어야 합니다: {episodes}")
    agents = make_agents(framework, scenario, seed) if agents is None else agents
    train_rng = stream(scenario.base_seed, TRAIN_TAG, (seed,))
    curve: List[float] = []
    for e in range(episodes):
        try:
            result = run_episode(framework, scenario, (_tag(TRAIN_TAG), seed, e), agents, train_rng=train_rng)
        except TrainingDivergence as err:
            raise TrainingDivergence(f"episode {e}: {err}") from err
        total = float(result.rewards.sum())
        if not math.isfinite(total):
            raise TrainingDivergence(f"episode {e}: 보상 합이 유한하지 않습니다")
        curve.append(total)
        logger.debug(f"[{framework} seed={seed}] episode {e}: reward={total:.4f} TTS={result.total_tts:.1f}")
        if (e + 1) % 50 == 0 or e + 1 == episodes:
            logger.info(f"📊 [{framework} seed={seed}] {e + 1}/{episodes} 에피소드, 최근 보상 {total:.4f}")
    return agents, curve


def episode_summary(result: EpisodeResult) -> Dict[str, float]:
    return {
        'total_tts': result.total_tts,
        'control_cost': result.control_cost,
        'reward': float(result.rewards.sum()),
        'final_queue': float(result.final_queue.sum()) if result.final_queue is not None else 0.0,
    }
