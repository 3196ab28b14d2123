#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Traffic Tuner - 명령행 실행기
RL 기반 PI 제어기 파라미터 튜닝 실험 (simulate / train / evaluate / benchmark / robustness / report)
"""

import argparse
import csv
import logging
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from bench import (BenchmarkReport, MissingAgentError, RobustnessRow, closest_to_mean, emit_report,
                   evaluate_agents, render_curve_svg, run_benchmark, run_robustness, select_representative, smooth_curve,
                   write_csv)
from env_training import FRAMEWORKS, MODES, agent_specs, episode_summary, run_episode, train
from rl_core import Agent, AgentFileError, TrainingDivergence, load_agent, save_agent
from scenario_config import ConfigError, ScenarioConfig, debug_enabled, full_scale, load_config, log_level
from traffic_model import SimulationFault

logging.basicConfig(level=log_level(), format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# OSError: 출력 경로에 쓸 수 없음
RUNTIME_ERRORS = (SimulationFault, TrainingDivergence, AgentFileError, MissingAgentError, OSError)


class UsageParser(argparse.ArgumentParser):
    """사용법 오류는 종료 코드 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        values = [int(p) for p in text.replace(' ', '').split(',') if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"정수 목록이 아닙니다: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("빈 목록입니다")
    return values


def _float_list(text: str) -> List[float]:
    try:
        values = [float(p) for p in text.replace(' ', '').split(',') if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"실수 목록이 아닙니다: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("빈 목록입니다")
    return values


def _str_list(choices: Sequence[str]):
    def parse(text: str) -> List[str]:
        values = [p for p in text.replace(' ', '').split(',') if p]
        bad = [v for v in values if v not in choices]
        if bad or not values:
            raise argparse.ArgumentTypeError(f"허용 값: {', '.join(choices)} (입력: {text!r})")
        return values
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help='시나리오 설정 파일 (INI)')
    common.add_argument('--out', default=None, help='출력 디렉터리 (기본: [output] dir)')
    common.add_argument('--seeds', type=_int_list, default=None, help='시드 목록, 예: 1,2,3')
    common.add_argument('--format', type=_str_list(('csv', 'svg')), default=['csv', 'svg'])
    common.add_argument('--workers', type=int, default=None, help='병렬 에피소드 수')
    common.add_argument('--full-scale', action='store_true', help='5000 에피소드 x 시드 10개 x 100회 평가')

    parser = UsageParser(prog='traffic_tuner', description='RL 기반 교통 제어기 파라미터 튜닝')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=UsageParser)

    p = sub.add_parser('simulate', parents=[common], help='단일 전략 에피소드 실행 + 스텝별 기록')
    p.add_argument('--strategy', choices=MODES, default='fixed')
    p.add_argument('--agents', default=None, help='에이전트 디렉터리 (RL 전략)')
    p.add_argument('--sigma', type=float, default=None, help='관측 잡음 표준편차')

    p = sub.add_parser('train', parents=[common], help='에이전트 학습')
    p.add_argument('--framework', choices=FRAMEWORKS, default='multi')
    p.add_argument('--episodes', type=int, default=None)

    p = sub.add_parser('evaluate', parents=[common], help='시드별 에이전트 평가 + 대표 선택')
    p.add_argument('--framework', choices=FRAMEWORKS, default='multi')
    p.add_argument('--runs', type=int, default=None)
    p.add_argument('--agents', default=None)

    p = sub.add_parser('benchmark', parents=[common], help='전략별 TTS 비교')
    p.add_argument('--strategy', type=_str_list(MODES), default=['no_control', 'fixed'])
    p.add_argument('--runs', type=int, default=None)
    p.add_argument('--agents', default=None)

    p = sub.add_parser('robustness', parents=[common], help='관측 잡음 강건성')
    p.add_argument('--sigma', type=_float_list, default=None)
    p.add_argument('--runs', type=int, default=None, help='에이전트당 실행 횟수')
    p.add_argument('--framework', type=_str_list(FRAMEWORKS), default=list(FRAMEWORKS))
    p.add_argument('--agents', default=None)

    p = sub.add_parser('report', parents=[common], help='학습 곡선 SVG/CSV 생성')
    p.add_argument('--framework', type=_str_list(FRAMEWORKS), default=list(FRAMEWORKS))
    p.add_argument('--agents', default=None, help='학습 결과 디렉터리')
    return parser


# ---------------------------------------------------------------------------
# 에이전트 파일 배치
# ---------------------------------------------------------------------------
def agent_dir(root, framework: str, seed: int) -> Path:
    return Path(root) / 'train' / framework / f"seed_{seed}"


def save_agent_set(agents: List[Agent], root, framework: str, seed: int) -> List[Path]:
    folder = agent_dir(root, framework, seed)
    return [save_agent(agent, folder / f"agent_{i + 1}.json") for i, agent in enumerate(agents)]


def load_agent_set(root, framework: str, seed: int) -> List[Agent]:
    folder = agent_dir(root, framework, seed)
    agents = []
    for i, (spec, bounds) in enumerate(agent_specs(framework)):
        path = folder / f"agent_{i + 1}.json"
        if not path.is_file():
            raise MissingAgentError(f"에이전트 파일이 없습니다: {path}")
        agent = load_agent(path)
        if agent.obs_dim != spec.dim or agent.bounds != bounds:
            raise AgentFileError(f"{path.name}: {framework} 에이전트 {i + 1}의 관측/행동 구성과 다릅니다")
        agents.append(agent)
    return agents


def _representative(scenario: ScenarioConfig, root, framework: str, seeds: Sequence[int],
                    workers: int) -> List[Agent]:
    sets = [load_agent_set(root, framework, s) for s in seeds]
    if len(sets) == 1:
        return sets[0]
    index, _ = select_representative(framework, sets, scenario.bench.eval_runs, scenario, workers)
    return sets[index]


# ---------------------------------------------------------------------------
# 하위 명령
# ---------------------------------------------------------------------------
def cmd_simulate(args, scenario: ScenarioConfig, out: Path) -> None:
    agents = None
    if args.strategy in FRAMEWORKS:
        agents = _representative(scenario, args.agents or out, args.strategy, args.seeds_list, args.workers_n)
    sigma = scenario.noise_sigma if args.sigma is None else args.sigma
    for run in args.seeds_list:
        result = run_episode(args.strategy, scenario, (run,), agents, sigma=sigma)
        rows = [[k, int(result.weather[k]), format(result.tts[k], '.17g')]
                + [format(v, '.17g') for v in result.controls[k]] for k in range(result.tts.size)]
        path = write_csv(out / 'simulate' / f"{args.strategy}_run{run}.csv",
                         ['k', 'weather', 'tts', 'u_dta', 'u_rm1', 'u_rm2'], rows)
        summary = episode_summary(result)
        logger.info(f"✅ {args.strategy} run={run}: 총 TTS {summary['total_tts']:.2f} veh·h, "
                    f"보상 {summary['reward']:.4f}, 남은 대기열 {summary['final_queue']:.1f} veh → {path}")


def cmd_train(args, scenario: ScenarioConfig, out: Path) -> None:
    episodes = scenario.bench.episodes if args.episodes is None else args.episodes
    for seed in args.seeds_list:
        logger.info(f"🚀 [{args.framework}] seed={seed} 학습 시작 ({episodes} 에피소드)")
        agents, curve = train(args.framework, scenario, episodes, seed)
        save_agent_set(agents, out, args.framework, seed)
        smoothed = smooth_curve(curve, scenario.bench.window) if curve else []
        write_csv(agent_dir(out, args.framework, seed) / 'rewards.csv', ['episode', 'reward', 'smoothed'],
                  [[e, format(r, '.17g'), format(s, '.17g')] for e, (r, s) in enumerate(zip(curve, smoothed))])
        logger.info(f"✅ [{args.framework}] seed={seed} 학습 완료 → {agent_dir(out, args.framework, seed)}")


def cmd_evaluate(args, scenario: ScenarioConfig, out: Path) -> None:
    runs = scenario.bench.eval_runs if args.runs is None else args.runs
    root = args.agents or out
    sets = [load_agent_set(root, args.framework, s) for s in args.seeds_list]
    totals = evaluate_agents(args.framework, sets, runs, scenario, args.workers_n)
    means = [float(np.mean(t)) for t in totals]
    index = closest_to_mean(means)
    rows = [[seed, format(means[i], '.17g'), format(float(np.std(totals[i])), '.17g'), runs, int(i == index)]
            for i, seed in enumerate(args.seeds_list)]
    path = write_csv(out / f"evaluate_{args.framework}.csv",
                     ['seed', 'mean_tts', 'std_tts', 'runs', 'representative'], rows)
    logger.info(f"✅ 대표 에이전트: seed={args.seeds_list[index]} → {path}")


def cmd_benchmark(args, scenario: ScenarioConfig, out: Path) -> None:
    runs = scenario.bench.runs if args.runs is None else args.runs
    agents: Dict[str, List[Agent]] = {}
    for framework in FRAMEWORKS:
        if framework in args.strategy:
            agents[framework] = _representative(scenario, args.agents or out, framework,
                                                args.seeds_list, args.workers_n)
    report = run_benchmark(args.strategy, scenario, runs, agents, args.workers_n)
    report.metadata.update(seeds=list(args.seeds_list))
    emit_report(report, out / 'benchmark', [f for f in args.format if f == 'csv'], scenario)


def cmd_robustness(args, scenario: ScenarioConfig, out: Path) -> None:
    runs = scenario.bench.eval_runs if args.runs is None else args.runs
    sigmas = list(scenario.bench.sigmas) if args.sigma is None else args.sigma
    root = args.agents or out
    sets = {fw: [load_agent_set(root, fw, s) for s in args.seeds_list] for fw in args.framework}
    rows: List[RobustnessRow] = run_robustness(sigmas, scenario, sets, runs, args.workers_n)
    for row in rows:
        logger.info(f"📊 σ={row.sigma:g} {row.framework}: TTS {row.mean_tts:.2f} ± {row.std_tts:.2f}")
    report = BenchmarkReport(robustness=rows, metadata={'seeds': list(args.seeds_list), 'sigmas': sigmas,
                                                        'runs_per_agent': runs})
    emit_report(report, out / 'robustness', [f for f in args.format if f == 'csv'], scenario)


def read_curve(path: Path) -> List[float]:
    with open(path, newline='', encoding='utf-8') as f:
        return [float(row['reward']) for row in csv.DictReader(f)]


def cmd_report(args, scenario: ScenarioConfig, out: Path) -> None:
    root = args.agents or out
    curves = {}
    rows = []
    for framework in args.framework:
        series = []
        for seed in args.seeds_list:
            path = agent_dir(root, framework, seed) / 'rewards.csv'
            if not path.is_file():
                raise MissingAgentError(f"학습 곡선 파일이 없습니다: {path}")
            series.append(read_curve(path))
        n = min(len(s) for s in series)
        if n == 0:
            logger.warning(f"⚠️ [{framework}] 학습 곡선이 비어 있습니다")
            continue
        matrix = np.array([s[:n] for s in series])
        curves[framework] = matrix
        mean, std = matrix.mean(axis=0), matrix.std(axis=0)
        smoothed = smooth_curve(mean, scenario.bench.window)
        rows.extend([framework, e, format(mean[e], '.17g'), format(std[e], '.17g'), format(smoothed[e], '.17g')]
                    for e in range(n))
    report_dir = out / 'report'
    if 'csv' in args.format:
        write_csv(report_dir / 'curves.csv', ['framework', 'episode', 'mean_reward', 'std_reward', 'smoothed'], rows)
    if 'svg' in args.format and curves:
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / 'learning_curves.svg').write_text(render_curve_svg(curves, scenario.bench.window),
                                                        encoding='utf-8')
    logger.info(f"📁 보고서 생성 완료: {report_dir}")


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'benchmark': cmd_benchmark,
    'robustness': cmd_robustness,
    'report': cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        scenario = load_config(args.config)
        if args.full_scale:
            scenario = full_scale(scenario)
        args.seeds_list = list(args.seeds or scenario.bench.seeds)
        args.workers_n = scenario.bench.workers if args.workers is None else max(1, args.workers)
        out = Path(args.out or scenario.output_dir)
        COMMANDS[args.command](args, scenario, out)
        return EXIT_OK
    except ConfigError as e:
        logger.error(f"❌ 설정 오류: {e}")
        if debug_enabled():
            traceback.print_exc()
        return EXIT_CONFIG
    except RUNTIME_ERRORS as e:
        logger.error(f"❌ 실행 실패 ({type(e).__name__}): {e}")
        if debug_enabled():
            traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == '__main__':
    print("=" * 50)
    print("🚦 Traffic Tuner - RL 기반 교통 제어기 파라미터 튜닝")
    print("=" * 50)
    sys.exit(main())
