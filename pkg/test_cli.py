#!/usr/bin/env python3
"""
End-to-end tests of the sketchlab command suite on a tiny toy setup
"""

import json

import numpy as np
import pytest

from src.cli import main
from src.photo2sketch import render_edge_raster, write_pgm
from src.sketch_io import read_ndjson

TINY = ['--set', 'corpus.n_per_class=4', '--set', 'classifier.hidden=4', '--set', 'classifier.layers=1',
        '--set', 'classifier.epochs=1', '--set', 'agent.hidden=3', '--set', 'agent.mlp_hidden=3',
        '--set', 'trainer.eval_size=2', '--set', 'p2s.variants=2']


@pytest.fixture(scope='module')
def workspace(tmp_path_factory):
    """Toy corpus, classifier and agent produced through the CLI once per module"""
    root = tmp_path_factory.mktemp('cli')
    base = ['--seed', '1', '--set', f"run.out_dir={root}"] + TINY
    assert main(base + ['gen-toy']) == 0
    assert main(base + ['train-classifier']) == 0
    assert main(base + ['train-agent', '--classifier', str(root / 'train-classifier' / 'classifier.ckpt'),
                        '--episodes', '4', '--N', '2', '--eval-every', '2']) == 0
    return root, base


def test_help_exits_zero(capsys):
    assert main(['--help']) == 0
    assert 'train-agent' in capsys.readouterr().out


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(['abstract', '--bogus']) == 1
    assert '--bogus' in capsys.readouterr().err


def test_unknown_config_key_is_a_usage_error():
    assert main(['--set', 'reward.nope=1', 'gen-toy']) == 1


def test_runtime_failure_exits_two(workspace, tmp_path):
    root, base = workspace
    classifier = root / 'train-classifier' / 'classifier.ckpt'
    toy = root / 'gen-toy' / 'toy.ndjson'
    code = main(base + ['abstract', '--agent', str(classifier), '--in', str(toy), '--run-dir', str(tmp_path)])
    assert code == 2


def test_runs_write_config_and_meta(workspace):
    root, _ = workspace
    for command in ('gen-toy', 'train-classifier', 'train-agent'):
        assert (root / command / 'run_config.env').is_file()
        meta = json.loads((root / command / 'run_meta.json').read_text())
        assert meta['command'] == command
        assert meta['seed'] == 1
    assert 'classifier.hidden=4' in (root / 'train-agent' / 'run_config.env').read_text()
    sketches, errors = read_ndjson(root / 'gen-toy' / 'toy.ndjson')
    assert len(sketches) == 12 and not errors


def test_training_outputs(workspace):
    root, _ = workspace
    out = root / 'train-agent'
    assert (out / 'agent.ckpt').is_file()
    assert (out / 'training_curve.csv').read_text().startswith('episode,')
    assert (root / 'train-classifier' / 'classifier_history.csv').is_file()


def test_replay_check_on_trainer_trace(workspace, capsys):
    root, base = workspace
    code = main(base + ['replay-check', '--trace', str(root / 'train-agent' / 'trace.ndjson'),
                        '--classifier', str(root / 'train-classifier' / 'classifier.ckpt')])
    assert code == 0
    assert 'rewards match' in capsys.readouterr().out


def test_replay_check_reports_mismatch(workspace, tmp_path):
    root, base = workspace
    lines = (root / 'train-agent' / 'trace.ndjson').read_text().splitlines()
    tampered = []
    for line in lines:
        item = json.loads(line)
        if item['type'] == 'transition':
            item['reward'] += 1.0
        tampered.append(json.dumps(item))
    path = tmp_path / 'tampered.ndjson'
    path.write_text('\n'.join(tampered) + '\n')
    code = main(base + ['replay-check', '--trace', str(path),
                        '--classifier', str(root / 'train-classifier' / 'classifier.ckpt')])
    assert code == 2


def test_abstract_and_saliency(workspace, tmp_path):
    root, base = workspace
    agent = str(root / 'train-agent' / 'agent.ckpt')
    toy = str(root / 'gen-toy' / 'toy.ndjson')
    assert main(base + ['abstract', '--agent', agent, '--in', toy, '--delta', '-1',
                        '--out', str(tmp_path / 'kept.ndjson'), '--svg', str(tmp_path / 'svg')]) == 0
    original, _ = read_ndjson(toy)
    kept, _ = read_ndjson(tmp_path / 'kept.ndjson')
    assert all(np.array_equal(a.points, b.points) for a, b in zip(original, kept))
    assert len(list((tmp_path / 'svg').glob('*.svg'))) == len(original)

    assert main(base + ['saliency', '--agent', agent, '--in', toy, '--svg', str(tmp_path / 'heat.svg'),
                        '--run-dir', str(tmp_path / 'sal')]) == 0
    assert (tmp_path / 'sal' / 'saliency.csv').read_text().startswith('sketch,stroke,saliency')
    assert (tmp_path / 'heat-0000.svg').is_file()


def test_eval_commands(workspace):
    root, base = workspace
    agent = str(root / 'train-agent' / 'agent.ckpt')
    classifier = str(root / 'train-classifier' / 'classifier.ckpt')
    assert main(base + ['eval-classifier', '--classifier', classifier]) == 0
    assert (root / 'eval-classifier' / 'classifier_eval.csv').is_file()
    assert main(base + ['eval-abstraction', '--agent', agent, '--classifier', classifier,
                        '--deltas', '-0.1,0.1']) == 0
    assert len((root / 'eval-abstraction' / 'abstraction_eval.csv').read_text().splitlines()) == 3


def test_photo_commands(workspace, tmp_path):
    root, base = workspace
    sketches, _ = read_ndjson(root / 'gen-toy' / 'toy.ndjson')
    edges = tmp_path / 'edges.pgm'
    write_pgm(edges, render_edge_raster(sketches[0], 64))
    agent = str(root / 'train-agent' / 'agent.ckpt')

    assert main(base + ['trace', '--edges', str(edges), '--out', str(tmp_path / 'traced.ndjson'),
                        '--svg', str(tmp_path / 'traced.svg'), '--run-dir', str(tmp_path / 'r1')]) == 0
    assert main(base + ['distort', '--in', str(tmp_path / 'traced.ndjson'), '--variants', '2',
                        '--out', str(tmp_path / 'distorted.ndjson'), '--run-dir', str(tmp_path / 'r2')]) == 0
    assert len(read_ndjson(tmp_path / 'distorted.ndjson')[0]) == 2
    assert main(base + ['resample', '--in', str(tmp_path / 'traced.ndjson'), '--step', '3',
                        '--out', str(tmp_path / 'resampled.ndjson'), '--run-dir', str(tmp_path / 'r3')]) == 0
    assert main(base + ['p2s', '--edges', str(edges), '--agent', agent, '--dump-stages', str(tmp_path / 'stages'),
                        '--run-dir', str(tmp_path / 'r4')]) == 0
    assert len(read_ndjson(tmp_path / 'r4' / 'p2s.ndjson')[0]) == 2
    assert (tmp_path / 'stages' / 'variant1_simplified.ndjson').is_file()


def test_sbir_eval(workspace, tmp_path):
    root, base = workspace
    sketches, _ = read_ndjson(root / 'gen-toy' / 'toy.ndjson')
    gallery = tmp_path / 'gallery'
    for s in sketches[:4]:
        write_pgm(gallery / f"{s.key}.pgm", render_edge_raster(s, 64))
    queries = tmp_path / 'queries.ndjson'
    queries.write_text((root / 'gen-toy' / 'toy.ndjson').read_text().splitlines()[0] + '\n')
    code = main(base + ['sbir-eval', '--gallery', str(gallery), '--queries', str(queries),
                        '--agent', str(root / 'train-agent' / 'agent.ckpt'), '--k', '1,4',
                        '--run-dir', str(tmp_path / 'r')])
    assert code == 0
    summary = (tmp_path / 'r' / 'sbir_summary.csv').read_text().splitlines()
    assert summary[0] == 'k,single_topk,fused_topk'
    assert summary[2].startswith('4,1.0,1.0')


def test_documented_command_lines(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(TINY + ['gen-toy', '--classes', 'square,circle,zigzag', '--n', '5', '--seed', '7',
                        '--out', 'toy.ndjson', '--run-dir', 'gen']) == 0
    sketches, errors = read_ndjson(tmp_path / 'toy.ndjson')
    assert len(sketches) == 15 and not errors
    assert {s.category for s in sketches} == {'square', 'circle', 'zigzag'}
    assert json.loads((tmp_path / 'gen' / 'run_meta.json').read_text())['seed'] == 7

    assert main(TINY + ['train-classifier', '--data', 'toy.ndjson', '--seed', '7', '--out', 'ckpt',
                        '--run-dir', 'cls']) == 0
    assert json.loads((tmp_path / 'cls' / 'run_meta.json').read_text())['seed'] == 7

    assert main(TINY + ['train-agent', '--scheme', 'ranked', '--episodes', '2', '--N', '2', '--gamma', '0.9',
                        '--seed', '7', '--classifier', 'ckpt', '--out', 'agent.ckpt', '--run-dir', 'agent']) == 0
    assert (tmp_path / 'agent.ckpt').is_file()
    resolved = (tmp_path / 'agent' / 'run_config.env').read_text()
    assert 'run.seed=7' in resolved and 'reward.scheme=ranked' in resolved and 'reward.gamma=0.9' in resolved


def test_subcommand_seed_matches_global_seed(tmp_path):
    assert main(TINY + ['--seed', '3', 'gen-toy', '--out', str(tmp_path / 'a.ndjson'),
                        '--run-dir', str(tmp_path / 'a')]) == 0
    assert main(TINY + ['gen-toy', '--seed', '3', '--out', str(tmp_path / 'b.ndjson'),
                        '--run-dir', str(tmp_path / 'b')]) == 0
    assert (tmp_path / 'a.ndjson').read_bytes() == (tmp_path / 'b.ndjson').read_bytes()


def test_unknown_toy_class_is_a_usage_error(tmp_path):
    assert main(['gen-toy', '--classes', 'square,hexagon', '--run-dir', str(tmp_path)]) == 1
