#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
명령행 실행기 테스트 (짧은 시나리오로 main() 직접 호출)
"""

import csv
import json

import pytest

from traffic_tuner import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, agent_dir, main

SHORT_CFG = """
[timing]
episode_s = 3600

[ddpg]
batch_size = 2
buffer_capacity = 100
hidden = 8, 8

[bench]
runs = 2
eval_runs = 1
"""


@pytest.fixture
def short_cfg(tmp_path, monkeypatch):
    monkeypatch.delenv('TRAFFIC_TUNER_WORKERS', raising=False)
    path = tmp_path / 'short.cfg'
    path.write_text(SHORT_CFG, encoding='utf-8')
    return path


def _read_rows(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def test_train_multi_writes_agents_and_rewards(short_cfg, tmp_path):
    out = tmp_path / 'out'
    code = main(['train', '--framework', 'multi', '--episodes', '10', '--seeds', '1',
                 '--config', str(short_cfg), '--out', str(out)])
    assert code == EXIT_OK
    folder = agent_dir(out, 'multi', 1)
    assert sorted(p.name for p in folder.glob('agent_*.json')) == ['agent_1.json', 'agent_2.json', 'agent_3.json']
    rows = _read_rows(folder / 'rewards.csv')
    assert [int(r['episode']) for r in rows] == list(range(10))
    assert json.loads((folder / 'agent_1.json').read_text(encoding='utf-8'))['action_dim'] == 2
    assert json.loads((folder / 'agent_2.json').read_text(encoding='utf-8'))['action_dim'] == 3


def test_training_output_is_reproducible(short_cfg, tmp_path):
    outputs = []
    for name in ('a', 'b'):
        out = tmp_path / name
        assert main(['train', '--framework', 'multi', '--episodes', '3', '--seeds', '2',
                     '--config', str(short_cfg), '--out', str(out)]) == EXIT_OK
        folder = agent_dir(out, 'multi', 2)
        outputs.append({p.name: p.read_bytes() for p in sorted(folder.iterdir())})
    assert outputs[0] == outputs[1]
    assert 'agent_1.actor.net' in outputs[0]


def test_train_single_has_eight_parameters(short_cfg, tmp_path):
    out = tmp_path / 'out'
    assert main(['train', '--framework', 'single', '--episodes', '1', '--seeds', '1',
                 '--config', str(short_cfg), '--out', str(out)]) == EXIT_OK
    manifest = json.loads((agent_dir(out, 'single', 1) / 'agent_1.json').read_text(encoding='utf-8'))
    assert manifest['action_dim'] == 8
    assert manifest['obs_dim'] == 22


def test_pipeline_from_training_to_report(short_cfg, tmp_path):
    out = tmp_path / 'out'
    common = ['--seeds', '1,2', '--config', str(short_cfg), '--out', str(out)]
    assert main(['train', '--framework', 'multi', '--episodes', '2'] + common) == EXIT_OK
    assert main(['evaluate', '--framework', 'multi'] + common) == EXIT_OK
    rows = _read_rows(out / 'evaluate_multi.csv')
    assert [r['seed'] for r in rows] == ['1', '2']
    assert sum(int(r['representative']) for r in rows) == 1

    assert main(['benchmark', '--strategy', 'no_control,fixed,multi'] + common) == EXIT_OK
    bench = _read_rows(out / 'benchmark' / 'benchmark.csv')
    assert [r['strategy'] for r in bench] == ['no_control', 'fixed', 'multi']
    assert all(r['runs'] == '2' for r in bench)

    assert main(['robustness', '--framework', 'multi', '--sigma', '0,50'] + common) == EXIT_OK
    rob = _read_rows(out / 'robustness' / 'robustness.csv')
    assert [(float(r['sigma']), r['framework']) for r in rob] == [(0.0, 'multi'), (50.0, 'multi')]

    assert main(['report', '--framework', 'multi'] + common) == EXIT_OK
    curves = _read_rows(out / 'report' / 'curves.csv')
    assert len(curves) == 2
    assert (out / 'report' / 'learning_curves.svg').read_text(encoding='utf-8').startswith('<?xml')


def test_simulate_writes_step_trace(short_cfg, tmp_path):
    out = tmp_path / 'out'
    assert main(['simulate', '--strategy', 'fixed', '--seeds', '4',
                 '--config', str(short_cfg), '--out', str(out)]) == EXIT_OK
    rows = _read_rows(out / 'simulate' / 'fixed_run4.csv')
    assert len(rows) == 360
    assert rows[0]['u_dta'] == '0.5'
    assert set(rows[0]) == {'k', 'weather', 'tts', 'u_dta', 'u_rm1', 'u_rm2'}


def test_bad_config_exits_with_config_code(tmp_path):
    bad = tmp_path / 'bad.cfg'
    bad.write_text('[model]\nnu = fast\n', encoding='utf-8')
    assert main(['simulate', '--config', str(bad), '--out', str(tmp_path)]) == EXIT_CONFIG
    assert main(['simulate', '--config', str(tmp_path / 'missing.cfg'), '--out', str(tmp_path)]) == EXIT_CONFIG


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(['train', '--bogus'])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(['benchmark', '--strategy', 'magic'])
    assert exc.value.code == 1


def test_benchmark_without_agents_exits_with_runtime_code(short_cfg, tmp_path):
    code = main(['benchmark', '--strategy', 'fixed,multi', '--seeds', '1',
                 '--config', str(short_cfg), '--out', str(tmp_path / 'empty')])
    assert code == EXIT_RUNTIME


def test_unwritable_output_exits_with_runtime_code(short_cfg, tmp_path):
    blocker = tmp_path / 'not_a_dir'
    blocker.write_text('x', encoding='utf-8')
    code = main(['benchmark', '--strategy', 'no_control', '--runs', '1', '--seeds', '1',
                 '--config', str(short_cfg), '--out', str(blocker / 'out')])
    assert code == EXIT_RUNTIME
