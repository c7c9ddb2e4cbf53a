import json
import os
import time

import pandas as pd
import pytest

from utils.committee import load_committee, votes_by_split
from utils.data_model import load_manifest
from utils.errors import ConfigError
from utils.metrics import f1_scores
from utils.pipeline import PipelineRunner
from utils.settings_manager import SettingsManager
from utils.synthetic import make_synthetic_fixture


def _small_fixture(directory, seed=0, **overrides):
    """Synthetic fixture with a short swarm so a full run stays quick"""
    config_path = make_synthetic_fixture(str(directory), seed=seed, n_videos=60)
    with open(config_path, encoding='utf-8') as f:
        config = json.load(f)
    config['pso'] = {'particles': 8, 'epochs': 6}
    config['learners']['mlp']['epochs'] = 5
    config['learners']['logistic'] = {'epochs': 20}
    config.update(overrides)
    SettingsManager(config_path).save_settings(config)
    return config_path


@pytest.fixture(scope='module')
def completed_run(tmp_path_factory):
    directory = tmp_path_factory.mktemp("fixture")
    config_path = _small_fixture(directory)
    result = PipelineRunner(config_path, command=['ambivote', 'pipeline', 'run']).run()
    return directory, config_path, result


def test_every_stage_runs(completed_run):
    directory, _, result = completed_run
    assert result['stages'] == {'features': 'ran', 'candidates': 'ran',
                                'committee': 'ran', 'sweep': 'ran'}
    out = directory / "out"
    for name in ("features/text.csv", "features/audio.csv", "features/video.csv",
                 "features/stats.csv", "features/video_pca.json", "committee.json",
                 "sweep.json", "sweep_summary.csv", "run_manifest.json"):
        assert (out / name).exists(), name


def test_committee_has_one_member_per_combination(completed_run):
    directory, _, _ = completed_run
    with open(directory / "out" / "committee.json", encoding='utf-8') as f:
        members = json.load(f)['members']
    assert [m['mask'] for m in members] == list(range(1, 16))
    for member in members:
        assert {c['algorithm'] for c in member['candidates']} == {'mlp', 'logistic', 'gbdt'}
        assert member['val_bce'] == min(c['val_bce'] for c in member['candidates'])


def test_sweep_runs_every_lambda(completed_run):
    directory, _, _ = completed_run
    with open(directory / "out" / "sweep.json", encoding='utf-8') as f:
        sweep = json.load(f)
    runs = sweep['runs']
    assert [r['lambda'] for r in runs] == [0.0, 0.2, 0.4, 0.6, 0.8]
    assert [r['seed'] for r in runs] == [0, 1, 2, 3, 4]
    for run in runs:
        assert len(run['weights']) == 15
        assert all(0.0 <= w <= 1.0 for w in run['weights'])
        assert set(run['splits']) == {'train', 'val', 'test'}
        assert run['fitness_trace'] == sorted(run['fitness_trace'])

    summary = pd.read_csv(directory / "out" / "sweep_summary.csv")
    assert list(summary['lambda']) == [0.0, 0.2, 0.4, 0.6, 0.8]


def _best_member_val_f1(directory) -> float:
    members = load_committee(str(directory / "out" / "committee.json"))
    votes, labels = votes_by_split(members, load_manifest(str(directory / "manifest.jsonl")))
    return max(f1_scores(labels['val'], row)[0] for row in votes['val'])


def test_ensemble_matches_or_beats_best_member_on_validation(completed_run):
    directory, _, _ = completed_run
    best_member = _best_member_val_f1(directory)
    with open(directory / "out" / "sweep.json", encoding='utf-8') as f:
        runs = json.load(f)['runs']
    for run in runs:
        assert run['splits']['val']['f1_macro'] >= best_member - 1e-12


def test_run_manifest(completed_run):
    _, _, result = completed_run
    with open(result['run_manifest'], encoding='utf-8') as f:
        manifest = json.load(f)
    assert manifest['command'] == ['ambivote', 'pipeline', 'run']
    assert manifest['seed'] == 0
    assert manifest['stages']['sweep'] == 'ran'
    assert any(path.endswith("sweep.json") for path in manifest['outputs'])


def test_rerun_reuses_every_stage(completed_run):
    directory, config_path, _ = completed_run
    with open(directory / "out" / "sweep.json", encoding='utf-8') as f:
        before = f.read()
    result = PipelineRunner(config_path).run()
    assert set(result['stages'].values()) == {'cached'}
    with open(directory / "out" / "sweep.json", encoding='utf-8') as f:
        assert f.read() == before


def test_same_seed_gives_identical_sweep(completed_run, tmp_path):
    directory, _, _ = completed_run
    config_path = _small_fixture(tmp_path)
    PipelineRunner(config_path).run()
    with open(directory / "out" / "sweep.json", encoding='utf-8') as f:
        first = f.read()
    with open(tmp_path / "out" / "sweep.json", encoding='utf-8') as f:
        assert f.read() == first


def test_changed_lambdas_rerun_only_the_sweep(tmp_path):
    config_path = _small_fixture(tmp_path, learners={'algorithms': []})
    PipelineRunner(config_path).run()
    with open(config_path, encoding='utf-8') as f:
        config = json.load(f)
    config['lambdas'] = [0.4]
    SettingsManager(config_path).save_settings(config)

    result = PipelineRunner(config_path).run()
    assert result['stages'] == {'features': 'skipped', 'candidates': 'skipped',
                                'committee': 'cached', 'sweep': 'ran'}
    with open(tmp_path / "out" / "sweep.json", encoding='utf-8') as f:
        assert [r['lambda'] for r in json.load(f)['runs']] == [0.4]


def test_external_candidates_only(tmp_path):
    config_path = _small_fixture(tmp_path, learners={'algorithms': []})
    result = PipelineRunner(config_path, seed=5).run()
    assert result['stages']['features'] == 'skipped'
    with open(tmp_path / "out" / "sweep.json", encoding='utf-8') as f:
        sweep = json.load(f)
    assert sweep['seed'] == 5
    assert [m['algorithm'] for m in sweep['committee']] == ['gbdt'] * 15
    assert not (tmp_path / "out" / "features").exists()


def test_missing_manifest_fails_before_writing(tmp_path):
    config_path = _small_fixture(tmp_path)
    os.remove(tmp_path / "manifest.jsonl")
    with pytest.raises(ConfigError) as excinfo:
        PipelineRunner(config_path).run()
    assert excinfo.value.exit_code == 2
    assert not (tmp_path / "out").exists()


def test_missing_embedding_fails_before_writing(tmp_path):
    config_path = _small_fixture(tmp_path)
    os.remove(tmp_path / "embeddings" / "audio" / "v007.csv")
    with pytest.raises(ConfigError, match="v007"):
        PipelineRunner(config_path).run()
    assert not (tmp_path / "out").exists()


def test_dropped_algorithm_leaves_no_stale_candidates(tmp_path):
    config_path = _small_fixture(tmp_path)
    PipelineRunner(config_path).run()
    assert len(list((tmp_path / "out" / "candidates").glob("*_logistic.csv"))) == 15

    with open(config_path, encoding='utf-8') as f:
        config = json.load(f)
    config['learners']['algorithms'] = ['mlp']
    SettingsManager(config_path).save_settings(config)
    result = PipelineRunner(config_path).run()

    assert result['stages']['candidates'] == 'ran'
    assert result['stages']['committee'] == 'ran'
    assert not list((tmp_path / "out" / "candidates").glob("*_logistic.csv"))
    assert not list((tmp_path / "out" / "models").glob("*_logistic.json"))
    with open(tmp_path / "out" / "committee.json", encoding='utf-8') as f:
        members = json.load(f)['members']
    for member in members:
        assert {c['algorithm'] for c in member['candidates']} == {'mlp', 'gbdt'}


@pytest.mark.slow
def test_default_fixture_and_swarm_end_to_end(tmp_path):
    config_path = make_synthetic_fixture(str(tmp_path))
    started = time.perf_counter()
    result = PipelineRunner(config_path).run()
    elapsed = time.perf_counter() - started

    assert set(result['stages'].values()) == {'ran'}
    assert elapsed < 60
    with open(tmp_path / "out" / "sweep.json", encoding='utf-8') as f:
        sweep = json.load(f)
    best_member = _best_member_val_f1(tmp_path)
    for run in sweep['runs']:
        assert len(run['fitness_trace']) == 101
        assert run['splits']['val']['f1_macro'] >= best_member - 1e-12
