import csv
import json
from os import path

import pytest
from click.testing import CliRunner

from soda_rl.cli import cli
from soda_rl.manifest import read_manifest, sha256sum


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


TRAIN_OPTIONS = ('-K', 2, '--epochs', 1, '--batch-size', 20, '--hidden', 8, '--seed', 4, '--no-safety')


def read_rows(filename):
    with open(filename, newline='') as fhandle:
        return list(csv.reader(fhandle))


def pipeline(base, threads=1):
    """simulate -> fit-behavior -> train, returns the run directories"""

    base.mkdir(exist_ok=True)
    sim_cfg = base / 'sim.cfg'
    sim_cfg.write_text("horizon = 6\nseed = 11\n")
    sim, beh, run = str(base / 'sim'), str(base / 'behavior'), str(base / 'run')

    result = invoke('simulate', '--config', sim_cfg, '-n', 60, '--holdout', 0.25, '--out', sim)
    assert result.exit_code == 0, result.output

    result = invoke('--threads', threads, 'fit-behavior', path.join(sim, 'train.jsonl'), '-k', 10, '--out', beh)
    assert result.exit_code == 0, result.output

    result = invoke('--threads', threads, 'train', path.join(sim, 'train.jsonl'), path.join(beh, 'behavior.npz'),
                    *TRAIN_OPTIONS, '--out', run)
    assert result.exit_code == 0, result.output

    return sim, beh, run


@pytest.fixture(scope='module')
def pipeline_dirs(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp('pipeline'))


def test_simulate_outputs(pipeline_dirs):
    sim, _, _ = pipeline_dirs

    for name in ('dataset.jsonl', 'train.jsonl', 'test.jsonl'):
        assert path.exists(path.join(sim, name))
    assert not path.exists(path.join(sim, 'validation.jsonl'))

    manifest = read_manifest(sim)
    assert manifest.command == 'simulate' and manifest.seed == 11
    assert set(manifest.outputs) == {'dataset.jsonl', 'train.jsonl', 'test.jsonl'}
    assert manifest.configs['sim']['horizon'] == '6'
    assert manifest.verify(sim) == []


def test_fit_behavior_outputs(pipeline_dirs):
    _, beh, _ = pipeline_dirs

    assert set(read_manifest(beh).outputs) == {'behavior.npz', 'masks.jsonl'}


def test_train_outputs(pipeline_dirs):
    _, _, run = pipeline_dirs

    for name in ('policies.json', 'checkpoint.json', 'history.csv', 'train.cfg', 'status'):
        assert path.exists(path.join(run, name))

    with open(path.join(run, 'status')) as fhandle:
        assert fhandle.read().strip() == 'done'
    with open(path.join(run, 'policies.json')) as fhandle:
        data = json.load(fhandle)
    assert len(data['policies']) == 2 and data['safety_epsilon'] is None


def test_train_from_mask_cache(tmp_path, pipeline_dirs):
    sim, beh, run = pipeline_dirs
    out = str(tmp_path / 'cached')

    result = invoke('train', path.join(sim, 'train.jsonl'), path.join(beh, 'behavior.npz'),
                    '--mask-cache', path.join(beh, 'masks.jsonl'), *TRAIN_OPTIONS, '--out', out)
    assert result.exit_code == 0, result.output
    assert 'using the cached neighbor counts' in result.output

    assert sha256sum(path.join(out, 'policies.json')) == sha256sum(path.join(run, 'policies.json'))
    assert any(f.endswith('masks.jsonl') for f in read_manifest(out).inputs)


def test_train_recomputes_mismatched_mask_cache(tmp_path, pipeline_dirs):
    sim, beh, _ = pipeline_dirs

    result = invoke('train', path.join(sim, 'test.jsonl'), path.join(beh, 'behavior.npz'),
                    '--mask-cache', path.join(beh, 'masks.jsonl'), *TRAIN_OPTIONS, '--out', tmp_path / 'run')

    assert result.exit_code == 0, result.output
    assert 'does not match, recomputing' in result.output


def test_evaluate(tmp_path, pipeline_dirs):
    sim, beh, run = pipeline_dirs
    out = str(tmp_path / 'eval')

    result = invoke('evaluate', run, path.join(beh, 'behavior.npz'), path.join(sim, 'test.jsonl'),
                    '--ess-threshold', 1e-3, '--out', out)
    assert result.exit_code == 0, result.output

    rows = read_rows(path.join(out, 'evaluation.csv'))
    assert rows[0][:3] == ['collection', 'policy', 'CWPDIS Value']
    assert [r[1] for r in rows[1:]] == ['0', '1']

    summary = read_rows(path.join(out, 'summary.csv'))
    assert summary[-1][0] == 'behavior (empirical)'
    assert float(summary[-1][1]) > 0.

    assert read_manifest(out).verify(out) == []


def test_evaluate_csv_output(tmp_path, pipeline_dirs):
    sim, beh, run = pipeline_dirs

    result = invoke('evaluate', path.join(run, 'policies.json'), path.join(beh, 'behavior.npz'),
                    path.join(sim, 'test.jsonl'), '--out', str(tmp_path), '--csv-output')

    assert result.exit_code == 0, result.output
    lines = [l for l in result.output.splitlines() if l.startswith('run,')]
    assert [l.split(',')[1] for l in lines] == ['0', '1']
    assert 'collection,policy,CWPDIS Value' in result.output


def test_report(tmp_path, pipeline_dirs):
    sim, beh, run = pipeline_dirs
    eval_cfg = tmp_path / 'eval.cfg'
    eval_cfg.write_text("ess_threshold = 0.001\n")
    out = str(tmp_path / 'report')

    result = invoke('report', run, path.join(beh, 'behavior.npz'), path.join(sim, 'test.jsonl'),
                    '--filter', 'all', '--filter', 'MAP<55', '--top', 3, '--config', eval_cfg, '--out', out)
    assert result.exit_code == 0, result.output

    actions = read_rows(path.join(out, 'actions_all.csv'))
    assert len(actions[0]) == 22
    assert [r[0] for r in actions[1:]] == ['behavior', '.:0', '.:1']
    assert abs(sum(float(v) for v in actions[1][2:]) - 1.) < 1e-9

    assert path.exists(path.join(out, 'actions_map_lt_55.csv'))
    assert not path.exists(path.join(out, 'actions_vaso_taken.csv'))

    diverse = read_rows(path.join(out, 'diverse_states.csv'))
    assert [r[1] for r in diverse[1:]] == ['1'] * 3 + ['2'] * 3 + ['3'] * 3
    assert [r[5] for r in diverse[1:4]] == ['behavior', 'agent 0', 'agent 1']


def test_missing_config_is_a_usage_error(tmp_path):
    result = invoke('simulate', '--config', tmp_path / 'missing.cfg', '--out', tmp_path / 'out')

    assert result.exit_code == 2
    assert 'does not exist' in result.output


def test_invalid_config_is_a_usage_error(tmp_path):
    sim_cfg = tmp_path / 'sim.cfg'
    sim_cfg.write_text("horizon = 0\n")

    result = invoke('simulate', '--config', sim_cfg, '--out', tmp_path / 'out')

    assert result.exit_code == 2
    assert not path.exists(str(tmp_path / 'out'))


def test_k_larger_than_dataset(tmp_path, pipeline_dirs):
    sim, _, _ = pipeline_dirs

    result = invoke('fit-behavior', path.join(sim, 'test.jsonl'), '-k', 100000, '--out', tmp_path / 'beh')

    assert result.exit_code == 2


def test_evaluate_without_collections(tmp_path, pipeline_dirs):
    sim, beh, _ = pipeline_dirs
    empty = tmp_path / 'empty'
    empty.mkdir()

    result = invoke('evaluate', empty, path.join(beh, 'behavior.npz'), path.join(sim, 'test.jsonl'),
                    '--out', tmp_path / 'eval')

    assert result.exit_code == 2
    assert 'no policy collections' in result.output


def test_report_unknown_filter(tmp_path, pipeline_dirs):
    sim, beh, run = pipeline_dirs

    result = invoke('report', run, path.join(beh, 'behavior.npz'), path.join(sim, 'test.jsonl'),
                    '--filter', 'heart-rate', '--out', tmp_path / 'report')

    assert result.exit_code == 2


def test_pipeline_is_reproducible(tmp_path, pipeline_dirs):
    sim, beh, run = pipeline(tmp_path / 'again', threads=2)

    for first, second, name in ((pipeline_dirs[0], sim, 'dataset.jsonl'),
                                (pipeline_dirs[1], beh, 'masks.jsonl'),
                                (pipeline_dirs[2], run, 'policies.json')):
        assert sha256sum(path.join(first, name)) == sha256sum(path.join(second, name))
