#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 연속 행동 액터-크리틱 학습기 (DDPG)
numpy만으로 구현한 MLP 순전파/역전파, Adam, 리플레이 버퍼, 타깃 네트워크, 저장/불러오기
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

ACTIVATIONS = ('relu', 'tanh', 'linear')
NET_NAMES = ('actor', 'critic', 'actor_target', 'critic_target')


class TrainingDivergence(RuntimeError):
    """손실이 비유한 값이 되어 학습 스텝을 중단"""


class InsufficientExperience(ValueError):
    """리플레이 버퍼에 미니배치만큼의 경험이 없음"""


class AgentFileError(ValueError):
    """에이전트 파일 파싱 실패"""


class AgentShapeError(AgentFileError):
    """에이전트 파일에 선언된 차원이 맞지 않음"""


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------
@dataclass
class Mlp:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("가중치/편향/활성화 개수가 다릅니다")
        for i, (W, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"알 수 없는 활성화 함수: {act}")
            if b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: 편향 크기 {b.shape}가 출력 차원 {W.shape[0]}과 다릅니다")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: 입력 차원 {W.shape[1]} != 이전 출력 {self.weights[i - 1].shape[0]}")

    @property
    def dims(self) -> List[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def copy(self) -> 'Mlp':
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases], list(self.activations))

    def params(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out


@dataclass
class MlpGradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inputs: np.ndarray

    def params(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out


def init_mlp(dims: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
             final_scale: float = 1.0) -> Mlp:
    """층별 ±1/√fan_in 균등 초기화, 마지막 층은 final_scale 배"""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    weights[-1] *= final_scale
    biases[-1] *= final_scale
    return Mlp(weights, biases, list(activations))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == 'relu':
        return np.maximum(z, 0.0)
    if kind == 'tanh':
        return np.tanh(z)
    return z


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == 'relu':
        return (z > 0.0).astype(float)
    if kind == 'tanh':
        return 1.0 - a * a
    return np.ones_like(z)


def _as_batch(net: Mlp, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.dims[0]:
        raise ValueError(f"입력 차원 {x.shape}이(가) 네트워크 입력 {net.dims[0]}과 맞지 않습니다")
    return x2, single


def _forward_cache(net: Mlp, x2: np.ndarray):
    cache = []
    a = x2
    for W, b, kind in zip(net.weights, net.biases, net.activations):
        z = a @ W.T + b
        out = _activate(z, kind)
        cache.append((a, z, out))
        a = out
    return a, cache


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """아핀 변환 + 활성화의 합성 (1-D 입력 또는 배치)"""
    x2, single = _as_batch(net, x)
    out, _ = _forward_cache(net, x2)
    return out[0] if single else out


def mlp_gradients(net: Mlp, x, upstream_grad) -> MlpGradients:
    """Σ(출력·upstream_grad)의 파라미터/입력에 대한 역전파 기울기 (배치 합)"""
    x2, single = _as_batch(net, x)
    g = np.asarray(upstream_grad, dtype=float)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (x2.shape[0], net.dims[-1]):
        raise ValueError(f"상류 기울기 크기 {g.shape}이(가) 출력 {(x2.shape[0], net.dims[-1])}과 맞지 않습니다")
    _, cache = _forward_cache(net, x2)
    dW, db = [None] * len(net.weights), [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        a_in, z, a_out = cache[i]
        delta = g * _activate_grad(z, a_out, net.activations[i])
        dW[i] = delta.T @ a_in
        db[i] = delta.sum(axis=0)
        g = delta @ net.weights[i]
    return MlpGradients(weights=dW, biases=db, inputs=g[0] if single else g)


def soft_update(target: Mlp, online: Mlp, rate: float = 0.01) -> None:
    """θ_target ← rate·θ_online + (1−rate)·θ_target"""
    if target.dims != online.dims:
        raise ValueError(f"타깃 {target.dims}와 온라인 {online.dims} 네트워크 구조가 다릅니다")
    for t, o in zip(target.params(), online.params()):
        t *= (1.0 - rate)
        t += rate * o


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp) -> 'AdamState':
        return cls(m=[np.zeros_like(p) for p in net.params()], v=[np.zeros_like(p) for p in net.params()])


def adam_step(net: Mlp, grads: MlpGradients, state: AdamState, lr: float) -> None:
    """기울기 하강 방향으로 Adam 한 스텝 (제자리 갱신)"""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(net.params(), grads.params(), state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# 리플레이 버퍼
# ---------------------------------------------------------------------------
@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


class ReplayBuffer:
    """고정 용량 링 버퍼, 가득 차면 가장 오래된 경험을 덮어쓴다"""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.terminal = np.zeros(self.capacity)
        self.pushed = 0

    def __len__(self) -> int:
        return min(self.pushed, self.capacity)

    def push(self, t: Transition) -> None:
        obs, action, next_obs = (np.asarray(v, dtype=float) for v in (t.obs, t.action, t.next_obs))
        if obs.shape != self.obs.shape[1:] or next_obs.shape != self.obs.shape[1:]:
            raise ValueError(f"관측 차원 {obs.shape}/{next_obs.shape}이(가) 버퍼 {self.obs.shape[1:]}과 다릅니다")
        if action.shape != self.action.shape[1:]:
            raise ValueError(f"행동 차원 {action.shape}이(가) 버퍼 {self.action.shape[1:]}과 다릅니다")
        i = self.pushed % self.capacity
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = t.reward
        self.next_obs[i] = next_obs
        self.terminal[i] = 1.0 if t.terminal else 0.0
        self.pushed += 1

    def get(self, age: int) -> Transition:
        """age=0이 현재 남아 있는 가장 오래된 경험"""
        if not 0 <= age < len(self):
            raise IndexError(f"버퍼 인덱스 범위 초과: {age}")
        i = (self.pushed - len(self) + age) % self.capacity
        return Transition(self.obs[i].copy(), self.action[i].copy(), float(self.reward[i]),
                          self.next_obs[i].copy(), bool(self.terminal[i]))

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        if len(self) < batch:
            raise InsufficientExperience(f"insufficient experience: {len(self)} < {batch}")
        idx = rng.integers(0, len(self), size=batch)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.terminal[idx])


def replay_push(buf: ReplayBuffer, t: Transition) -> None:
    buf.push(t)


def replay_sample(buf: ReplayBuffer, batch: int = 64, *, rng: np.random.Generator) -> Batch:
    return buf.sample(batch, rng)


# ---------------------------------------------------------------------------
# 에이전트
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ActionBounds:
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("행동 범위 lo/hi 길이가 다릅니다")
        for lo, hi in zip(self.lo, self.hi):
            if not lo < hi:
                raise ValueError(f"행동 범위가 잘못되었습니다: [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def scale(self, raw: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.clip(lo + (np.asarray(raw) + 1.0) / 2.0 * (hi - lo), lo, hi)


@dataclass(frozen=True)
class DdpgConfig:
    """DDPG 학습 하이퍼파라미터 (기본값은 전체 규모 학습 설정)"""
    episodes: int = 5000
    batch_size: int = 64
    buffer_capacity: int = 10_000
    gamma: float = 0.99
    learning_rate: float = 0.001
    target_rate: float = 0.01
    noise_std: float = 0.3
    noise_decay: float = 5e-5
    noise_floor: float = 0.01
    hidden: Tuple[int, ...] = (64, 64)
    actor_final_scale: float = 0.1


@dataclass
class Agent:
    actor: Mlp
    critic: Mlp
    actor_target: Mlp
    critic_target: Mlp
    buffer: ReplayBuffer
    bounds: ActionBounds
    noise_std: float = 0.3
    noise_floor: float = 0.01
    noise_decay: float = 5e-5
    gamma: float = 0.99
    learning_rate: float = 0.001
    target_rate: float = 0.01
    batch_size: int = 64
    actor_opt: Optional[AdamState] = None
    critic_opt: Optional[AdamState] = None

    def __post_init__(self):
        if self.actor_target.dims != self.actor.dims or self.critic_target.dims != self.critic.dims:
            raise ValueError("타깃 네트워크 구조가 온라인 네트워크와 다릅니다")
        if self.actor_opt is None:
            self.actor_opt = AdamState.for_net(self.actor)
        if self.critic_opt is None:
            self.critic_opt = AdamState.for_net(self.critic)

    @property
    def obs_dim(self) -> int:
        return self.actor.dims[0]

    @property
    def action_dim(self) -> int:
        return self.actor.dims[-1]


def make_agent(obs_dim: int, bounds: ActionBounds, rng: np.random.Generator,
               config: DdpgConfig = DdpgConfig()) -> Agent:
    """액터: obs→64→64→n (ReLU, tanh), 크리틱: [obs, a]→64→64→1 (ReLU, 선형)"""
    hidden = list(config.hidden)
    actor = init_mlp([obs_dim] + hidden + [bounds.dim], ['relu'] * len(hidden) + ['tanh'], rng,
                     final_scale=config.actor_final_scale)
    critic = init_mlp([obs_dim + bounds.dim] + hidden + [1], ['relu'] * len(hidden) + ['linear'], rng)
    return Agent(actor=actor, critic=critic, actor_target=actor.copy(), critic_target=critic.copy(),
                 buffer=ReplayBuffer(config.buffer_capacity, obs_dim, bounds.dim), bounds=bounds,
                 noise_std=config.noise_std, noise_floor=config.noise_floor, noise_decay=config.noise_decay,
                 gamma=config.gamma, learning_rate=config.learning_rate, target_rate=config.target_rate,
                 batch_size=config.batch_size)


def actor_act(agent: Agent, obs) -> Tuple[np.ndarray, np.ndarray]:
    """탐욕 행동: (tanh 출력 raw ∈ [−1,1]^n, 범위로 스케일된 파라미터)"""
    obs = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(obs)):
        raise ValueError("관측값에 비유한 값이 있습니다")
    raw = mlp_forward(agent.actor, obs)
    return raw, agent.bounds.scale(raw)


def explore(agent: Agent, raw, rng: np.random.Generator) -> np.ndarray:
    """raw 행동에 가우시안 탐색 잡음을 더하고 [−1,1]로 자른 뒤 σ를 감쇠"""
    raw = np.asarray(raw, dtype=float)
    noisy = np.clip(raw + rng.normal(0.0, agent.noise_std, size=raw.shape), -1.0, 1.0)
    agent.noise_std = max(agent.noise_floor, agent.noise_std * (1.0 - agent.noise_decay))
    return noisy


def actor_gradients(agent: Agent, obs: np.ndarray) -> Tuple[MlpGradients, float]:
    """−mean Q(s, μ(s))의 액터 파라미터 기울기와 목적함수 값"""
    action = mlp_forward(agent.actor, obs)
    critic_in = np.hstack((obs, action))
    n = obs.shape[0]
    objective = float(mlp_forward(agent.critic, critic_in).mean())
    dq = mlp_gradients(agent.critic, critic_in, np.full((n, 1), 1.0 / n)).inputs[:, agent.obs_dim:]
    return mlp_gradients(agent.actor, obs, -dq), objective


def ddpg_train_step(agent: Agent, batch: Batch) -> Tuple[float, float]:
    """크리틱 TD 회귀 → 크리틱을 통한 액터 상승 → 타깃 소프트 업데이트"""
    n = len(batch)
    next_action = mlp_forward(agent.actor_target, batch.next_obs)
    q_next = mlp_forward(agent.critic_target, np.hstack((batch.next_obs, next_action)))[:, 0]
    y = batch.reward + agent.gamma * (1.0 - batch.terminal) * q_next

    critic_in = np.hstack((batch.obs, batch.action))
    err = mlp_forward(agent.critic, critic_in)[:, 0] - y
    critic_loss = float(np.mean(err * err))
    if not math.isfinite(critic_loss):
        raise TrainingDivergence(f"크리틱 손실이 발산했습니다: {critic_loss}")
    critic_grads = mlp_gradients(agent.critic, critic_in, (2.0 / n) * err[:, None])
    adam_step(agent.critic, critic_grads, agent.critic_opt, agent.learning_rate)

    grads, objective = actor_gradients(agent, batch.obs)
    if not math.isfinite(objective):
        raise TrainingDivergence(f"액터 목적함수가 발산했습니다: {objective}")
    adam_step(agent.actor, grads, agent.actor_opt, agent.learning_rate)

    soft_update(agent.actor_target, agent.actor, agent.target_rate)
    soft_update(agent.critic_target, agent.critic, agent.target_rate)
    return critic_loss, objective


# ---------------------------------------------------------------------------
# 저장 / 불러오기
# ---------------------------------------------------------------------------
def _fmt(values) -> str:
    return ' '.join(format(float(v), '.17g') for v in values)


def write_mlp(net: Mlp, path: Path) -> None:
    lines = ['# traffic-tuner mlp']
    for W, b, act in zip(net.weights, net.biases, net.activations):
        lines.append(f"layer {W.shape[1]} {W.shape[0]} {act}")
        lines.extend(_fmt(row) for row in W)
        lines.append(_fmt(b))
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def _parse_floats(text: str, expected: int, where: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != expected:
        raise AgentShapeError(f"{where}: 값 {expected}개가 필요하지만 {len(parts)}개입니다")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise AgentFileError(f"{where}: 숫자가 아닌 값 ({e})") from e


def read_mlp(path: Path) -> Mlp:
    """텍스트 네트워크 파일 파싱, 오류 시 문제 줄 번호를 알려준다"""
    path = Path(path)
    lines = path.read_text(encoding='utf-8').splitlines()
    weights, biases, acts = [], [], []
    i = 0

    def where(n):
        return f"{path.name}:{n + 1}"

    while i < len(lines):
        line = lines[i].strip()
        if not line or line.startswith('#'):
            i += 1
            continue
        head = line.split()
        if len(head) != 4 or head[0] != 'layer':
            raise AgentFileError(f"{where(i)}: 'layer <in> <out> <activation>' 헤더가 필요합니다: {line!r}")
        try:
            n_in, n_out = int(head[1]), int(head[2])
        except ValueError as e:
            raise AgentFileError(f"{where(i)}: 차원이 정수가 아닙니다") from e
        if head[3] not in ACTIVATIONS:
            raise AgentFileError(f"{where(i)}: 알 수 없는 활성화 함수 {head[3]!r}")
        if weights and n_in != weights[-1].shape[0]:
            raise AgentShapeError(f"{where(i)}: 입력 차원 {n_in}이(가) 이전 층 출력 {weights[-1].shape[0]}과 다릅니다")
        if i + n_out + 1 >= len(lines):
            raise AgentFileError(f"{where(len(lines) - 1)}: 파일이 층 도중에 끝났습니다 (layer @ {where(i)})")
        W = np.vstack([_parse_floats(lines[i + 1 + r], n_in, where(i + 1 + r)) for r in range(n_out)])
        b = _parse_floats(lines[i + 1 + n_out], n_out, where(i + 1 + n_out))
        weights.append(W)
        biases.append(b)
        acts.append(head[3])
        i += n_out + 2
    if not weights:
        raise AgentFileError(f"{path.name}: 층이 하나도 없습니다")
    return Mlp(weights, biases, acts)


def save_agent(agent: Agent, path) -> Path:
    """매니페스트(JSON) + 네트워크별 텍스트 파일 저장, 매니페스트 경로 반환"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    networks = {}
    for name in NET_NAMES:
        net_path = path.with_name(f"{path.stem}.{name}.net")
        write_mlp(getattr(agent, name), net_path)
        networks[name] = net_path.name
    manifest = {
        'format': 1,
        'obs_dim': agent.obs_dim,
        'action_dim': agent.action_dim,
        'networks': networks,
        'bounds': {'lo': list(agent.bounds.lo), 'hi': list(agent.bounds.hi)},
        'noise': {'std': agent.noise_std, 'floor': agent.noise_floor, 'decay': agent.noise_decay},
        'ddpg': {'gamma': agent.gamma, 'learning_rate': agent.learning_rate,
                 'target_rate': agent.target_rate, 'batch_size': agent.batch_size,
                 'buffer_capacity': agent.buffer.capacity},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"💾 에이전트 저장: {path}")
    return path


def load_agent(path) -> Agent:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise AgentFileError(f"{path.name}:{e.lineno}: 매니페스트 JSON 오류 ({e.msg})") from e
    try:
        nets = {name: read_mlp(path.with_name(manifest['networks'][name])) for name in NET_NAMES}
        bounds = ActionBounds(tuple(manifest['bounds']['lo']), tuple(manifest['bounds']['hi']))
        noise, ddpg = manifest['noise'], manifest['ddpg']
        obs_dim, action_dim = int(manifest['obs_dim']), int(manifest['action_dim'])
    except KeyError as e:
        raise AgentFileError(f"{path.name}: 매니페스트 항목 누락 {e}") from e
    if nets['actor'].dims[0] != obs_dim or nets['actor'].dims[-1] != action_dim or bounds.dim != action_dim:
        raise AgentShapeError(f"{path.name}: 선언된 차원(obs={obs_dim}, action={action_dim})이 네트워크와 다릅니다")
    if nets['critic'].dims[0] != obs_dim + action_dim:
        raise AgentShapeError(f"{path.name}: 크리틱 입력 차원이 obs+action과 다릅니다")
    try:
        return Agent(buffer=ReplayBuffer(ddpg['buffer_capacity'], obs_dim, action_dim), bounds=bounds,
                     noise_std=noise['std'], noise_floor=noise['floor'], noise_decay=noise['decay'],
                     gamma=ddpg['gamma'], learning_rate=ddpg['learning_rate'],
                     target_rate=ddpg['target_rate'], batch_size=ddpg['batch_size'], **nets)
    except (KeyError, ValueError) as e:
        raise AgentShapeError(f"{path.name}: {e}") from e
