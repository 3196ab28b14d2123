#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 실험 하니스
전략 비교(TTS 평균 ± 표준편차), 관측 잡음 강건성, 학습 곡선 평활화, CSV/SVG 출력
"""

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Template

from env_training import FRAMEWORKS, MODES, run_episode
from rl_core import Agent
from scenario_config import ScenarioConfig, config_hash

logger = logging.getLogger(__name__)

BENCH_HEADER = ['strategy', 'mean_tts', 'std_tts', 'runs']
RUNS_HEADER = ['strategy', 'run', 'total_tts']
ROBUSTNESS_HEADER = ['sigma', 'framework', 'mean_tts', 'std_tts', 'runs']


class MissingAgentError(FileNotFoundError):
    """RL 전략 평가에 필요한 에이전트 파일이 없음"""


@dataclass
class StrategyRow:
    strategy: str
    per_run: List[float]

    @property
    def runs(self) -> int:
        return len(self.per_run)

    @property
    def mean_tts(self) -> float:
        return float(np.mean(self.per_run)) if self.per_run else 0.0

    @property
    def std_tts(self) -> float:
        return float(np.std(self.per_run)) if self.per_run else 0.0


@dataclass
class RobustnessRow:
    sigma: float
    framework: str
    per_run: List[float]

    @property
    def runs(self) -> int:
        return len(self.per_run)

    @property
    def mean_tts(self) -> float:
        return float(np.mean(self.per_run)) if self.per_run else 0.0

    @property
    def std_tts(self) -> float:
        return float(np.std(self.per_run)) if self.per_run else 0.0


@dataclass
class BenchmarkReport:
    rows: List[StrategyRow] = field(default_factory=list)
    robustness: List[RobustnessRow] = field(default_factory=list)
    # 프레임워크 -> (시드 x 에피소드) 보상
    curves: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# 에피소드 분산 실행
# ---------------------------------------------------------------------------
def _episode_job(job: Tuple[str, ScenarioConfig, Tuple[int, ...], Optional[List[Agent]], float]) -> float:
    mode, scenario, key, agents, sigma = job
    return run_episode(mode, scenario, key, agents, sigma=sigma).total_tts


def run_jobs(jobs: List[tuple], workers: int = 1) -> List[float]:
    """작업 순서대로 총 TTS 반환 (완료 순서와 무관)"""
    if workers <= 1 or len(jobs) <= 1:
        return [_episode_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_episode_job, jobs))


def closest_to_mean(means: Sequence[float]) -> int:
    """전체 평균에 가장 가까운 인덱스, 동률이면 낮은 인덱스"""
    if len(means) == 0:
        raise ValueError("에이전트가 하나도 없습니다")
    values = np.asarray(means, dtype=float)
    return int(np.argmin(np.abs(values - values.mean())))


def evaluate_agents(framework: str, agent_sets: Sequence[List[Agent]], runs: int,
                    scenario: ScenarioConfig, workers: int = 1) -> List[List[float]]:
    """에이전트 세트별 평가 실행 총 TTS (세트 a의 r번째 실행 키는 (a, r))"""
    jobs = [(framework, scenario, (a, r), agents, 0.0) for a, agents in enumerate(agent_sets) for r in range(runs)]
    totals = run_jobs(jobs, workers)
    return [totals[a * runs:(a + 1) * runs] for a in range(len(agent_sets))]


def select_representative(framework: str, agent_sets: Sequence[List[Agent]], runs: int,
                          scenario: ScenarioConfig, workers: int = 1) -> Tuple[int, List[float]]:
    if not agent_sets:
        raise ValueError("에이전트가 하나도 없습니다")
    if runs < 1:
        raise ValueError(f"평가 횟수는 1 이상이어야 합니다: {runs}")
    means = [float(np.mean(t)) for t in evaluate_agents(framework, agent_sets, runs, scenario, workers)]
    index = closest_to_mean(means)
    logger.info(f"📊 [{framework}] 에이전트별 평균 TTS {['%.2f' % m for m in means]} → 대표 {index}")
    return index, means


def run_benchmark(strategies: Sequence[str], scenario: ScenarioConfig, runs: int,
                  agents: Optional[Dict[str, List[Agent]]] = None, workers: int = 1) -> BenchmarkReport:
    """전략별로 같은 실행 키(run)를 써서 동일한 수요 실현에서 비교"""
    agents = agents or {}
    jobs = []
    for strategy in strategies:
        if strategy not in MODES:
            raise ValueError(f"알 수 없는 전략: {strategy}")
        if strategy in FRAMEWORKS and strategy not in agents:
            raise MissingAgentError(f"{strategy} 전략에 사용할 에이전트가 없습니다")
        jobs.extend((strategy, scenario, (r,), agents.get(strategy), 0.0) for r in range(runs))
    totals = run_jobs(jobs, workers)
    report = BenchmarkReport()
    for i, strategy in enumerate(strategies):
        row = StrategyRow(strategy, totals[i * runs:(i + 1) * runs])
        report.rows.append(row)
        logger.info(f"📊 {strategy}: TTS {row.mean_tts:.2f} ± {row.std_tts:.2f} veh·h ({row.runs}회)")
    report.metadata.update(runs=runs, strategies=list(strategies))
    return report


def run_robustness(sigmas: Sequence[float], scenario: ScenarioConfig,
                   agent_sets: Dict[str, Sequence[List[Agent]]], runs_per_agent: int,
                   workers: int = 1) -> List[RobustnessRow]:
    """σ별, 프레임워크별 총 TTS (잡음은 start_minute부터 o_dta에만)"""
    jobs, order = [], []
    for sigma in sigmas:
        for framework in FRAMEWORKS:
            if framework not in agent_sets:
                continue
            sets = agent_sets[framework]
            if not sets:
                raise MissingAgentError(f"{framework} 프레임워크 에이전트가 없습니다")
            order.append((float(sigma), framework, len(sets) * runs_per_agent))
            jobs.extend((framework, scenario, (a, r), agents, float(sigma))
                        for a, agents in enumerate(sets) for r in range(runs_per_agent))
    totals = run_jobs(jobs, workers)
    rows, start = [], 0
    for sigma, framework, count in order:
        rows.append(RobustnessRow(sigma, framework, totals[start:start + count]))
        start += count
    return rows


def smooth_curve(series: Sequence[float], window: int = 40) -> np.ndarray:
    """후행 이동평균, 앞쪽 window−1개는 가능한 접두부 평균"""
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("빈 계열은 평활화할 수 없습니다")
    if window < 1:
        raise ValueError(f"window는 1 이상이어야 합니다: {window}")
    csum = np.concatenate(([0.0], np.cumsum(values)))
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


# ---------------------------------------------------------------------------
# 보고서 출력
# ---------------------------------------------------------------------------
SVG_TEMPLATE = '''<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" viewBox="0 0 {{ width }} {{ height }}">
  <rect x="0" y="0" width="{{ width }}" height="{{ height }}" fill="#ffffff"/>
  <text x="{{ width / 2 }}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{{ title }}</text>
  <line x1="{{ left }}" y1="{{ bottom }}" x2="{{ right }}" y2="{{ bottom }}" stroke="#333333"/>
  <line x1="{{ left }}" y1="{{ top }}" x2="{{ left }}" y2="{{ bottom }}" stroke="#333333"/>
  <text x="{{ left }}" y="{{ bottom + 16 }}" font-family="sans-serif" font-size="10">0</text>
  <text x="{{ right }}" y="{{ bottom + 16 }}" text-anchor="end" font-family="sans-serif" font-size="10">{{ n_episodes }}</text>
  <text x="{{ left - 4 }}" y="{{ top + 4 }}" text-anchor="end" font-family="sans-serif" font-size="10">{{ '%.3f'|format(y_max) }}</text>
  <text x="{{ left - 4 }}" y="{{ bottom }}" text-anchor="end" font-family="sans-serif" font-size="10">{{ '%.3f'|format(y_min) }}</text>
{% for b in bands %}
  <polygon fill="{{ b.color }}" fill-opacity="0.15" stroke="none" points="{{ b.points }}"/>
{% endfor %}
{% for s in series %}
  <polyline fill="none" stroke="{{ s.color }}" stroke-width="{{ s.width }}" stroke-opacity="{{ s.opacity }}" points="{{ s.points }}"/>
  <text x="{{ right - 4 }}" y="{{ top + 14 * loop.index }}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{{ s.color }}">{{ s.label }}</text>
{% endfor %}
</svg>
'''

COLORS = {'multi': '#1f77b4', 'single': '#d62728'}


def render_curve_svg(curves: Dict[str, np.ndarray], window: int = 40, title: str = 'episode reward') -> str:
    """프레임워크별 시드 평균 보상(원본 + 이동평균)과 ±표준편차 띠"""
    width, height = 720, 400
    left, right, top, bottom = 70, width - 20, 40, height - 40
    lines, spreads = [], []
    for name, matrix in sorted(curves.items()):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.size == 0:
            continue
        mean, std = matrix.mean(axis=0), matrix.std(axis=0)
        spreads.append((name, mean - std, mean + std))
        lines.append((name, 'raw', mean, 0.35, 1))
        lines.append((name, f'smoothed ({window})', smooth_curve(mean, window), 1.0, 2))
    all_values = np.concatenate([v for _, lo, hi in spreads for v in (lo, hi)]) if spreads else np.zeros(1)
    y_min, y_max = float(all_values.min()), float(all_values.max())
    span = (y_max - y_min) or 1.0
    n_episodes = max((v.size for _, _, v, _, _ in lines), default=1)

    def coords(values):
        xs = left + (right - left) * np.arange(values.size) / max(n_episodes - 1, 1)
        ys = bottom - (bottom - top) * (values - y_min) / span
        return [f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys)]

    # 위쪽 경계를 따라간 뒤 아래쪽 경계를 거꾸로 돌아 닫는다
    bands = [{'color': COLORS.get(name, '#2ca02c'), 'points': ' '.join(coords(hi) + coords(lo)[::-1])}
             for name, lo, hi in spreads]
    series = [{'label': f"{name} {kind}", 'color': COLORS.get(name, '#2ca02c'), 'opacity': opacity,
               'width': stroke, 'points': ' '.join(coords(values))}
              for name, kind, values, opacity, stroke in lines]
    return Template(SVG_TEMPLATE).render(width=width, height=height, left=left, right=right, top=top,
                                         bottom=bottom, title=title, series=series, bands=bands, y_min=y_min,
                                         y_max=y_max, n_episodes=n_episodes)


def _fmt(value: float) -> str:
    return format(float(value), '.17g')


def write_csv(path: Path, header: List[str], rows: List[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    return path


def emit_report(report: BenchmarkReport, out_dir, formats: Sequence[str] = ('csv', 'svg'),
                scenario: Optional[ScenarioConfig] = None, window: int = 40) -> List[Path]:
    """CSV 표 + SVG 학습 곡선 + 메타데이터(JSON) 저장, 작성한 파일 목록 반환"""
    out = Path(out_dir)
    written: List[Path] = []
    if 'csv' in formats:
        if report.rows:
            written.append(write_csv(out / 'benchmark.csv', BENCH_HEADER,
                                     [[r.strategy, _fmt(r.mean_tts), _fmt(r.std_tts), r.runs] for r in report.rows]))
            written.append(write_csv(out / 'benchmark_runs.csv', RUNS_HEADER,
                                     [[r.strategy, i, _fmt(t)] for r in report.rows for i, t in enumerate(r.per_run)]))
        if report.robustness or not report.rows:
            written.append(write_csv(out / 'robustness.csv', ROBUSTNESS_HEADER,
                                     [[_fmt(r.sigma), r.framework, _fmt(r.mean_tts), _fmt(r.std_tts), r.runs]
                                      for r in report.robustness]))
    if 'svg' in formats and report.curves:
        svg_path = out / 'learning_curves.svg'
        svg_path.parent.mkdir(parents=True, exist_ok=True)
        svg_path.write_text(render_curve_svg(report.curves, window), encoding='utf-8')
        written.append(svg_path)
    meta = dict(report.metadata)
    meta['generated_at'] = datetime.now().isoformat(timespec='seconds')
    if scenario is not None:
        meta.update(config_hash=config_hash(scenario), base_seed=scenario.base_seed)
    meta_path = out / 'report_meta.json'
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(json.dumps(meta, indent=2, ensure_ascii=False, sort_keys=True, default=str) + '\n',
                         encoding='utf-8')
    written.append(meta_path)
    for path in written:
        logger.info(f"📁 저장: {path}")
    return written
