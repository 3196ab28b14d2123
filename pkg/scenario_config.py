#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 시나리오 설정 로더
[section] key = value 형식의 INI 파일, 모든 키에 기본값이 있고 모르는 키는 거부한다.
"""

import configparser
import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from controllers import DtaParams, RmParams
from demand import DemandProfile, WEATHER_SWITCH_MINUTE, trapezoid_profile
from env_training import RewardConfig, TimingConfig
from rl_core import DdpgConfig
from traffic_model import GlobalModelParams, LinkSpec, Topology

logger = logging.getLogger(__name__)

_truthy = {"1", "true", "True", "yes", "on"}


class ConfigError(ValueError):
    """설정 파일 또는 설정값 오류"""


DEFAULTS: Dict[str, Dict[str, str]] = {
    'network': {
        'main_segments': '2',
        'main_lanes': '2',
        'route_segments': '4',
        'route_lanes': '2',
        'onramp_segment': '1',
        'bottleneck_segment': '2',
        'bottleneck_lanes': '1',
    },
    'model': {
        'nu': '60',
        'chi': '40',
        'delta': '0.0122',
        'rho_max': '180',
        'c_main': '2000',
        'c_onramp': '2000',
        'segment_length_m': '1000',
        'step_s': '10',
        'v_min': '7',
        'a_m': '1.8, 2.0',
        'pce': f"1.0, {40.0 / 32.65!r}",
    },
    'weather': {
        'rho_cr_good': '40, 32.65',
        'rho_cr_bad': '24, 16.65',
        'v_free_good': '110, 86.5',
        'v_free_bad': '92, 61.4',
        'tau_good': '18',
        'tau_bad': '21.6',
        'switch_minute': '166',
    },
    'demand': {
        'breakpoints_h': '0, 0.5, 1.0, 3.0, 3.5, 5.5',
        'main_low': '1000',
        'main_peak': '3400',
        'main_c2_share': '0.15',
        'ramp_low': '200',
        'ramp_peak': '800',
        'ramp_c2_share': '0.1',
        'std_main': '75',
        'std_ramp': '30',
        'cutoff': '0.02',
        'order': '3',
    },
    'timing': {
        'dta_s': '300',
        'rm_s': '60',
        'rl_s': '1800',
        'episode_s': '19800',
    },
    'reward': {
        'w_tts': '3.33e-4',
        'w_u': '2.22e-5',
    },
    'ddpg': {
        'episodes': '5000',
        'batch_size': '64',
        'buffer_capacity': '10000',
        'gamma': '0.99',
        'learning_rate': '0.001',
        'target_rate': '0.01',
        'noise_std': '0.3',
        'noise_decay': '5e-5',
        'noise_floor': '0.01',
        'hidden': '64, 64',
        'actor_final_scale': '0.1',
    },
    'fixed': {
        'k_p': '0.01',
        'k_i': '0.005',
        'rho_bar': '37.5',
        'k_r': '0.005',
        'k_a': '0.1',
    },
    'noise': {
        'start_minute': '30',
        'sigma': '0',
    },
    'bench': {
        'base_seed': '2024',
        'seeds': '1, 2',
        'episodes': '10',
        'runs': '5',
        'eval_runs': '3',
        'sigmas': '0, 25, 50, 75, 100',
        'window': '40',
        'workers': '1',
    },
    'output': {
        'dir': 'results',
    },
}

# --full-scale: 5000 에피소드 x 시드 10개 x 평가 100회
FULL_SCALE = {'seeds': tuple(range(1, 11)), 'runs': 100, 'eval_runs': 10}


@dataclass(frozen=True)
class BenchSettings:
    base_seed: int = 2024
    seeds: Tuple[int, ...] = (1, 2)
    episodes: int = 10
    runs: int = 5
    eval_runs: int = 3
    sigmas: Tuple[float, ...] = (0.0, 25.0, 50.0, 75.0, 100.0)
    window: int = 40
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds는 하나 이상이어야 합니다")
        if self.episodes < 0 or self.runs < 1 or self.eval_runs < 1 or self.window < 1 or self.workers < 1:
            raise ValueError("episodes ≥ 0, runs/eval_runs/window/workers ≥ 1이어야 합니다")
        if any(s < 0 for s in self.sigmas):
            raise ValueError(f"sigmas는 음수일 수 없습니다: {self.sigmas}")


@dataclass(frozen=True)
class ScenarioConfig:
    topology: Topology
    params: GlobalModelParams
    profile: DemandProfile
    timing: TimingConfig
    reward: RewardConfig = RewardConfig()
    ddpg: DdpgConfig = DdpgConfig()
    fixed_dta: DtaParams = DtaParams(k_p=0.01, k_i=0.005)
    fixed_rm: RmParams = RmParams(rho_bar=37.5, k_r=0.005, k_a=0.1)
    weather_switch_minute: float = WEATHER_SWITCH_MINUTE
    noise_start_minute: float = 30.0
    noise_sigma: float = 0.0
    bench: BenchSettings = BenchSettings()
    output_dir: str = 'results'
    # 해시 계산용 정규화된 값 (section -> key -> 문자열)
    values: Dict[str, Dict[str, str]] = field(default_factory=dict, compare=False, repr=False)

    @property
    def base_seed(self) -> int:
        return self.bench.base_seed


def _floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(p) for p in raw.replace(',', ' ').split())


def _ints(raw: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in raw.replace(',', ' ').split())


class _Reader:
    """타입 변환 오류를 section.key 이름과 함께 ConfigError로 바꾼다"""

    def __init__(self, parser: configparser.ConfigParser, source: str):
        self.parser = parser
        self.source = source

    def _get(self, section, key, convert):
        raw = self.parser.get(section, key)
        try:
            return convert(raw)
        except ValueError as e:
            raise ConfigError(f"{self.source}: [{section}] {key} = {raw!r} 값 오류 ({e})") from e

    def float(self, section, key):
        return self._get(section, key, float)

    def int(self, section, key):
        return self._get(section, key, int)

    def floats(self, section, key, n=None):
        values = self._get(section, key, _floats)
        if n is not None and len(values) != n:
            raise ConfigError(f"{self.source}: [{section}] {key}에는 값 {n}개가 필요합니다 ({len(values)}개)")
        return values

    def ints(self, section, key):
        return self._get(section, key, _ints)


def _validate_keys(user: configparser.ConfigParser, source: str) -> None:
    for section in user.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{source}: 알 수 없는 섹션 [{section}]")
        unknown = sorted(set(user.options(section)) - set(DEFAULTS[section]))
        if unknown:
            raise ConfigError(f"{source}: [{section}]에 알 수 없는 키 {', '.join(unknown)}")


def _build(parser: configparser.ConfigParser, source: str) -> ScenarioConfig:
    r = _Reader(parser, source)
    onramp = r.int('network', 'onramp_segment')
    bottleneck = r.int('network', 'bottleneck_segment')
    bottleneck_lanes = r.int('network', 'bottleneck_lanes')
    route_lanes = r.int('network', 'route_lanes')

    def route(name):
        return LinkSpec(name, n_segments=r.int('network', 'route_segments'), lanes=route_lanes,
                        onramp_segment=onramp, bottleneck_segment=bottleneck,
                        bottleneck_lanes=None if bottleneck_lanes == route_lanes else bottleneck_lanes)

    topology = Topology(
        main=LinkSpec('main', n_segments=r.int('network', 'main_segments'), lanes=r.int('network', 'main_lanes')),
        primary=route('primary'),
        secondary=route('secondary'),
    )
    params = GlobalModelParams(
        nu=r.float('model', 'nu'), chi=r.float('model', 'chi'), delta=r.float('model', 'delta'),
        rho_max=r.float('model', 'rho_max'), c_main=r.float('model', 'c_main'),
        c_onramp=r.float('model', 'c_onramp'), segment_length_m=r.float('model', 'segment_length_m'),
        step_s=r.float('model', 'step_s'), v_min=r.float('model', 'v_min'),
        a_m=r.floats('model', 'a_m', 2), pce=r.floats('model', 'pce', 2),
        rho_cr_good=r.floats('weather', 'rho_cr_good', 2), rho_cr_bad=r.floats('weather', 'rho_cr_bad', 2),
        v_free_good=r.floats('weather', 'v_free_good', 2), v_free_bad=r.floats('weather', 'v_free_bad', 2),
        tau_good=r.float('weather', 'tau_good'), tau_bad=r.float('weather', 'tau_bad'),
    )
    std_ramp = r.float('demand', 'std_ramp')
    profile = trapezoid_profile(
        peak_main=r.float('demand', 'main_peak'), low_main=r.float('demand', 'main_low'),
        peak_ramp=r.float('demand', 'ramp_peak'), low_ramp=r.float('demand', 'ramp_low'),
        main_c2_share=r.float('demand', 'main_c2_share'), ramp_c2_share=r.float('demand', 'ramp_c2_share'),
        breakpoints_h=r.floats('demand', 'breakpoints_h', 6),
        noise_std=(r.float('demand', 'std_main'), std_ramp, std_ramp),
        cutoff=r.float('demand', 'cutoff'), order=r.int('demand', 'order'),
    )
    timing = TimingConfig(step_s=params.step_s, dta_s=r.float('timing', 'dta_s'), rm_s=r.float('timing', 'rm_s'),
                          rl_s=r.float('timing', 'rl_s'), episode_s=r.float('timing', 'episode_s'))
    ddpg = DdpgConfig(
        episodes=r.int('ddpg', 'episodes'), batch_size=r.int('ddpg', 'batch_size'),
        buffer_capacity=r.int('ddpg', 'buffer_capacity'), gamma=r.float('ddpg', 'gamma'),
        learning_rate=r.float('ddpg', 'learning_rate'), target_rate=r.float('ddpg', 'target_rate'),
        noise_std=r.float('ddpg', 'noise_std'), noise_decay=r.float('ddpg', 'noise_decay'),
        noise_floor=r.float('ddpg', 'noise_floor'), hidden=r.ints('ddpg', 'hidden'),
        actor_final_scale=r.float('ddpg', 'actor_final_scale'),
    )
    if not 0.0 < ddpg.gamma <= 1.0 or not 0.0 < ddpg.target_rate <= 1.0 or ddpg.batch_size < 1:
        raise ConfigError(f"{source}: [ddpg] gamma/target_rate는 (0, 1], batch_size는 1 이상이어야 합니다")
    if ddpg.buffer_capacity < ddpg.batch_size or not ddpg.hidden:
        raise ConfigError(f"{source}: [ddpg] buffer_capacity ≥ batch_size, hidden은 비어 있을 수 없습니다")
    workers_env = os.environ.get('TRAFFIC_TUNER_WORKERS')
    workers = int(workers_env) if workers_env else r.int('bench', 'workers')
    bench = BenchSettings(
        base_seed=r.int('bench', 'base_seed'), seeds=r.ints('bench', 'seeds'),
        episodes=r.int('bench', 'episodes'), runs=r.int('bench', 'runs'),
        eval_runs=r.int('bench', 'eval_runs'), sigmas=r.floats('bench', 'sigmas'),
        window=r.int('bench', 'window'), workers=workers,
    )
    sigma = r.float('noise', 'sigma')
    if sigma < 0:
        raise ConfigError(f"{source}: [noise] sigma는 음수일 수 없습니다: {sigma}")
    values = {s: {k: parser.get(s, k) for k in DEFAULTS[s]} for s in DEFAULTS}
    return ScenarioConfig(
        topology=topology, params=params, profile=profile, timing=timing,
        reward=RewardConfig(w_tts=r.float('reward', 'w_tts'), w_u=r.float('reward', 'w_u')),
        ddpg=ddpg,
        fixed_dta=DtaParams(k_p=r.float('fixed', 'k_p'), k_i=r.float('fixed', 'k_i')),
        fixed_rm=RmParams(rho_bar=r.float('fixed', 'rho_bar'), k_r=r.float('fixed', 'k_r'),
                          k_a=r.float('fixed', 'k_a')),
        weather_switch_minute=r.float('weather', 'switch_minute'),
        noise_start_minute=r.float('noise', 'start_minute'), noise_sigma=sigma,
        bench=bench, output_dir=parser.get('output', 'dir'), values=values,
    )


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Dict[str, str]]] = None) -> ScenarioConfig:
    """기본값 위에 설정 파일과 overrides를 차례로 덮어써 ScenarioConfig 생성"""
    source = str(path) if path else '<defaults>'
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    layers = []
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"설정 파일이 없습니다: {path}")
        user = configparser.ConfigParser(interpolation=None)
        try:
            user.read(path, encoding='utf-8')
        except configparser.Error as e:
            raise ConfigError(f"{source}: 설정 파일 파싱 실패 ({e})") from e
        layers.append(user)
    if overrides:
        extra = configparser.ConfigParser(interpolation=None)
        extra.read_dict(overrides)
        layers.append(extra)
    for layer in layers:
        _validate_keys(layer, source)
        for section in layer.sections():
            for key in layer.options(section):
                parser.set(section, key, layer.get(section, key))
    try:
        config = _build(parser, source)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e
    logger.debug(f"📁 설정 로드 완료: {source} (hash={config_hash(config)[:12]})")
    return config


def dump_config(config: ScenarioConfig) -> str:
    """정규화된 INI 텍스트 (섹션/키 정렬)"""
    values = config.values or DEFAULTS
    lines = []
    for section in sorted(values):
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {values[section][key]}" for key in sorted(values[section]))
        lines.append('')
    return '\n'.join(lines)


def config_hash(config: ScenarioConfig) -> str:
    return hashlib.sha256(dump_config(config).encode('utf-8')).hexdigest()


def full_scale(config: ScenarioConfig) -> ScenarioConfig:
    """에피소드 수는 [ddpg] episodes, 시드/평가 횟수는 전체 규모 실험 값으로"""
    overrides = {
        'bench': {
            'seeds': ', '.join(str(s) for s in FULL_SCALE['seeds']),
            'episodes': str(config.ddpg.episodes),
            'runs': str(FULL_SCALE['runs']),
            'eval_runs': str(FULL_SCALE['eval_runs']),
        }
    }
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(config.values or DEFAULTS)
    for key, value in overrides['bench'].items():
        parser.set('bench', key, value)
    return _build(parser, '<full-scale>')


def debug_enabled() -> bool:
    return str(os.environ.get('TRAFFIC_TUNER_DEBUG', '')).strip() in _truthy


def log_level() -> int:
    name = str(os.environ.get('TRAFFIC_TUNER_LOG_LEVEL', 'INFO')).strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO
