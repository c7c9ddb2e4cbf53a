import json
import logging

import numpy as np
import pytest

import app
from utils.data_model import SampleSet, load_matrix, write_manifest, write_matrix, write_scores
from utils.logger import LOGGER_NAME


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    root = logging.getLogger(LOGGER_NAME)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    root.propagate = True


@pytest.fixture
def scored(tmp_path):
    samples = SampleSet(('a', 'b', 'c', 'd', 'e', 'f'),
                        ('train', 'train', 'val', 'val', 'val', 'val'),
                        np.array([0, 1, 0, 1, 0, 1]))
    manifest = tmp_path / "manifest.jsonl"
    scores = tmp_path / "scores.csv"
    write_manifest(str(manifest), samples)
    write_scores(str(scores), samples.ids, np.array([0.3, 0.7, 0.1, 0.9, 0.2, 0.8]))
    return manifest, scores


def _error_line(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_features_pool_writes_one_row_and_run_manifest(tmp_path):
    source = tmp_path / "chunks.csv"
    write_matrix(str(source), np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    out = tmp_path / "pooled.csv"

    assert app.run(['features', 'pool', '--in', str(source), '--out', str(out)]) == 0

    pooled = load_matrix(str(out))
    assert pooled.shape == (1, 8)
    np.testing.assert_allclose(pooled[0, :6], [1, 2, 5, 6, 3, 4])
    with open(f"{out}.run.json", encoding='utf-8') as f:
        manifest = json.load(f)
    assert manifest['command'][:3] == ['ambivote', 'features', 'pool']
    assert manifest['outputs'] == [str(out)]
    assert manifest['seed'] == 0
    assert str(source) in manifest['inputs']


@pytest.mark.parametrize('position', ['before', 'after'])
def test_global_flags_before_or_after_command(tmp_path, position):
    source = tmp_path / "chunks.csv"
    write_matrix(str(source), np.ones((2, 3)))
    out = tmp_path / "pooled.csv"
    command = ['features', 'pool', '--in', str(source), '--out', str(out)]
    flags = ['--seed', '4', '--quiet']
    argv = flags + command if position == 'before' else command + flags

    assert app.run(argv) == 0
    with open(f"{out}.run.json", encoding='utf-8') as f:
        assert json.load(f)['seed'] == 4


def test_unknown_subcommand_is_usage_error(capsys):
    assert app.run(['features', 'bogus']) == 1
    error = _error_line(capsys)
    assert error['error'] == "usage_error"


def test_missing_command_is_usage_error(capsys):
    assert app.run([]) == 1
    assert _error_line(capsys)['error'] == "usage_error"


def test_invalid_threads(tmp_path, capsys, scored):
    manifest, scores = scored
    assert app.run(['evaluate', '--scores', str(scores), '--manifest', str(manifest),
                    '--threads', '0']) == 1
    assert _error_line(capsys)['error'] == "usage_error"


def test_version_exits_cleanly(capsys):
    assert app.run(['--version']) == 0
    assert "ambivote" in capsys.readouterr().out


def test_evaluate_reports_each_split(capsys, scored):
    manifest, scores = scored
    assert app.run(['evaluate', '--scores', str(scores), '--manifest', str(manifest)]) == 0
    payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(payload) == {'train', 'val'}
    assert payload['val']['f1_macro'] == pytest.approx(1.0)
    assert payload['val']['confusion'] == {'tp': 2, 'fp': 0, 'tn': 2, 'fn': 0}


def test_evaluate_writes_output(tmp_path, scored):
    manifest, scores = scored
    out = tmp_path / "report.json"
    assert app.run(['evaluate', '--scores', str(scores), '--manifest', str(manifest),
                    '--split', 'val', '--threshold', '0.95', '--out', str(out)]) == 0
    with open(out, encoding='utf-8') as f:
        report = json.load(f)
    assert list(report) == ['val']
    assert report['val']['confusion']['tp'] == 0
    assert (tmp_path / "report.json.run.json").exists()


def test_score_out_of_range_is_data_error(tmp_path, capsys, scored):
    manifest, scores = scored
    scores.write_text("id,score\na,0.2\nb,1.3\nc,0.1\nd,0.9\ne,0.2\nf,0.8\n")
    assert app.run(['evaluate', '--scores', str(scores), '--manifest', str(manifest)]) == 2
    error = _error_line(capsys)
    assert error['error'] == "range_error"
    assert "line 3" in error['message']


def test_missing_manifest_is_data_error(tmp_path, capsys, scored):
    _, scores = scored
    assert app.run(['evaluate', '--scores', str(scores),
                    '--manifest', str(tmp_path / "missing.jsonl")]) == 2
    assert _error_line(capsys)['error'] == "parse_error"


def test_threshold_fit_on_validation(tmp_path, capsys, scored):
    manifest, scores = scored
    out = tmp_path / "threshold.json"
    assert app.run(['threshold', 'fit', '--scores', str(scores), '--manifest', str(manifest),
                    '--out', str(out)]) == 0
    with open(out, encoding='utf-8') as f:
        payload = json.load(f)
    assert payload['split'] == "val"
    assert payload['threshold'] == pytest.approx(0.5)
    assert payload['report']['f1_macro'] == pytest.approx(1.0)


def test_text_stats_single_transcript(tmp_path):
    transcript = tmp_path / "v1.txt"
    transcript.write_text("well well, I mean.", encoding='utf-8')
    out = tmp_path / "stats.json"
    assert app.run(['text', 'stats', '--transcripts', str(transcript), '--out', str(out)]) == 0
    with open(out, encoding='utf-8') as f:
        stats = json.load(f)
    assert stats['text_word_count'] == 4


def test_text_stats_directory_writes_feature_table(tmp_path):
    transcripts = tmp_path / "transcripts"
    transcripts.mkdir()
    (transcripts / "v2.txt").write_text("um, yes.", encoding='utf-8')
    (transcripts / "v1.txt").write_text("I think so.", encoding='utf-8')
    out = tmp_path / "text_stats.csv"
    assert app.run(['text', 'stats', '--transcripts', str(transcripts), '--out', str(out)]) == 0
    lines = out.read_text(encoding='utf-8').splitlines()
    assert lines[0].startswith("id,")
    assert [line.split(',')[0] for line in lines[1:]] == ['v1', 'v2']


def test_pipeline_run_fails_fast_on_missing_manifest(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({'manifest': "missing.jsonl", 'output_dir': "out",
                                  'learners': {'algorithms': []}, 'candidates_dir': "."}))
    assert app.run(['pipeline', 'run', '--config', str(config)]) == 2
    error = _error_line(capsys)
    assert error['error'] == "config_error"
    assert "Manifest not found" in error['message']
    assert not (tmp_path / "out").exists()
