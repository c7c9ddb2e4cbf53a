"""ambivote command line.

Every subcommand writes UTF-8 JSON/CSV outputs plus a ``<output>.run.json``
run manifest next to each of them. Errors are reported as one JSON line on
standard error and mapped to exit codes 1 (usage), 2 (data) and 3 (numeric).
"""
import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils import __version__
from utils.audio_stats import AudioConfig, audio_stats_table, compute_signal_features, load_wav
from utils.committee import (build_committee, committee_to_dict, fit_threshold, gather_candidates,
                             load_committee, save_committee, votes_by_split)
from utils.data_model import (SPLITS, Modality, load_embedding_sequence,
                              load_feature_table, load_manifest, load_matrix, load_scores,
                              write_feature_table, write_matrix, write_scores)
from utils.ensemble_pso import (DEFAULT_LAMBDAS, PsoConfig, ensemble_reports, lambda_sweep,
                                pso_optimize, pso_result_to_dict, sweep_summary)
from utils.errors import (AlignmentError, AmbivoteError, NumericError, ParameterError, ParseError,
                          UsageError)
from utils.export_manager import ExportManager
from utils.feature_ops import (DEFAULT_MAD_MULTIPLIER, DEFAULT_TEMPERATURE, apply_mad_filter,
                               apply_pca, apply_scaler, derivative_pool, fit_pca, fit_scaler,
                               inverse_scaler, l2_normalize, load_pca, load_scaler, mad_filter,
                               save_model_json, stat_pool)
from utils.file_handler import FileHandler
from utils.learners import MlpConfig, predict_proba, save_model, train_logistic, train_mlp
from utils.logger import Logger
from utils.metrics import metric_report
from utils.pipeline import PipelineRunner, run_manifest_for
from utils.synthetic import make_synthetic_fixture
from utils.text_behavior import (ambivalence_distribution, compute_text_stats, hesitancy_scores,
                                 load_lexicon, load_prompts, load_sentence_records,
                                 sentence_level_pool, stats_feature_row)

Outputs = Tuple[List[str], List[str]]


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with code 2"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- shared I/O ------------------------------------------------------------

def _read_rows(path: str) -> Tuple[Optional[List[str]], Optional[List[str]], np.ndarray]:
    """Read an ``id``-keyed feature table or a header-less matrix"""
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline()
    if first.split(',')[0].strip() == 'id':
        ids, columns, matrix = load_feature_table(path)
        return ids, columns, matrix
    return None, None, load_matrix(path)


def _write_rows(path: str, ids: Optional[List[str]], columns: Optional[List[str]],
                matrix: np.ndarray):
    if ids is None:
        write_matrix(path, matrix)
    else:
        write_feature_table(path, ids, columns, matrix)


def _write_json(path: str, payload) -> str:
    return FileHandler().write_json(path, payload)


def _emit(payload):
    """Print a result summary as one JSON line on standard output"""
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _split_ids(samples, split: str) -> np.ndarray:
    return np.array([s == split for s in samples.splits], dtype=bool)


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise UsageError(f"Expected a comma-separated list of numbers, got '{text}'")


def _parse_ints(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise UsageError(f"Expected a comma-separated list of integers, got '{text}'")


# -- features --------------------------------------------------------------

def cmd_features_mad_filter(args) -> Outputs:
    seq = load_embedding_sequence(args.input, Modality.VIDEO)
    report = mad_filter(seq, args.multiplier, args.reference)
    write_matrix(args.out, apply_mad_filter(seq, report).chunks)
    outputs = [args.out]
    if args.report:
        _write_json(args.report, {
            'video_id': seq.video_id,
            'kept': [bool(k) for k in report.kept],
            'scores': [float(s) for s in report.scores],
            'median': report.median,
            'mad': report.mad,
            'multiplier': report.multiplier,
            'kept_count': report.kept_count,
        })
        outputs.append(args.report)
    _emit({'chunks': len(report.kept), 'kept': report.kept_count})
    return [args.input], outputs


def cmd_features_pool(args) -> Outputs:
    matrix = load_matrix(args.input)
    write_matrix(args.out, stat_pool(matrix).as_vector()[None, :])
    return [args.input], [args.out]


def cmd_features_derivs(args) -> Outputs:
    seq = load_embedding_sequence(args.input, Modality.VIDEO)
    write_matrix(args.out, derivative_pool(seq)[None, :])
    return [args.input], [args.out]


def cmd_features_scale_fit(args) -> Outputs:
    _, _, matrix = _read_rows(args.input)
    save_model_json(args.out_model, fit_scaler(matrix))
    return [args.input], [args.out_model]


def cmd_features_scale_apply(args) -> Outputs:
    ids, columns, matrix = _read_rows(args.input)
    model = load_scaler(args.model)
    scaled = inverse_scaler(model, matrix) if args.inverse else apply_scaler(model, matrix)
    _write_rows(args.out, ids, columns, scaled)
    return [args.input, args.model], [args.out]


def cmd_features_pca_fit(args) -> Outputs:
    _, _, matrix = _read_rows(args.input)
    model = fit_pca(matrix, args.dim, args.variance)
    save_model_json(args.out_model, model)
    _emit({'k': model.k, 'explained_variance': float(model.explained_variance_ratio.sum())})
    return [args.input], [args.out_model]


def cmd_features_pca_apply(args) -> Outputs:
    ids, _, matrix = _read_rows(args.input)
    model = load_pca(args.model)
    projected = apply_pca(model, matrix)
    columns = [f"pc{i}" for i in range(projected.shape[1])]
    _write_rows(args.out, ids, columns, projected)
    return [args.input, args.model], [args.out]


# -- audio -----------------------------------------------------------------

def cmd_audio_stats(args) -> Outputs:
    config = AudioConfig(n_fft=args.n_fft, hop_length=args.hop_length)
    samples, sample_rate = load_wav(args.wav, args.decimation)
    features = compute_signal_features(samples, sample_rate, config, threads=args.threads)
    table = audio_stats_table(features)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    table.to_csv(args.out, index=False)
    _emit({'chunks': len(table), 'sample_rate': sample_rate})
    return [args.wav], [args.out]


# -- text ------------------------------------------------------------------

def _feature_rows(rows: Dict[str, Tuple[List[str], np.ndarray]], path: str):
    ids = sorted(rows)
    if not ids:
        raise ParameterError("No inputs found")
    columns = rows[ids[0]][0]
    write_feature_table(path, ids, columns, np.vstack([rows[i][1] for i in ids]))


def _stems(directory: str, extensions: Sequence[str]) -> Dict[str, str]:
    return FileHandler().scan_directory(directory, extensions)


def cmd_text_stats(args) -> Outputs:
    if os.path.isdir(args.transcripts):
        rows = {}
        for video_id, path in _stems(args.transcripts, ['.txt']).items():
            text = Path(path).read_text(encoding='utf-8')
            rows[video_id] = stats_feature_row(text_stats=compute_text_stats(text))
        _feature_rows(rows, args.out)
    else:
        text = Path(args.transcripts).read_text(encoding='utf-8')
        _write_json(args.out, compute_text_stats(text).as_dict())
    return [args.transcripts], [args.out]


def _hesitancy_pool(path: str, lexicon):
    per_sentence = [hesitancy_scores(record, lexicon)
                    for record in load_sentence_records(path)]
    return per_sentence, sentence_level_pool([scores.margin for scores in per_sentence])


def cmd_text_hesitancy(args) -> Outputs:
    lexicon = load_lexicon(args.lexicon)
    if os.path.isdir(args.sentences):
        rows = {}
        for video_id, path in _stems(args.sentences, ['.jsonl']).items():
            _, pooled = _hesitancy_pool(path, lexicon)
            rows[video_id] = stats_feature_row(hesitancy=pooled)
        _feature_rows(rows, args.out)
    else:
        per_sentence, pooled = _hesitancy_pool(args.sentences, lexicon)
        _write_json(args.out, {
            'sentences': [{'raw': s.raw, 'margin': s.margin} for s in per_sentence],
            'valid': pooled.valid,
            'pooled': {category: {'min': float(stats.min), 'max': float(stats.max),
                                  'mean': float(stats.mean), 'std': float(stats.std)}
                       for category, stats in pooled.stats.items()},
        })
    return [args.sentences, args.lexicon], [args.out]


def _text_embedding(path: str) -> np.ndarray:
    return l2_normalize(load_matrix(path)).mean(axis=0)


def cmd_text_ambivalence(args) -> Outputs:
    prompts = load_prompts(args.prompts, args.temperature)
    if os.path.isdir(args.embeddings):
        rows = {}
        for video_id, path in _stems(args.embeddings, ['.csv']).items():
            distribution = ambivalence_distribution(_text_embedding(path), prompts)
            rows[video_id] = stats_feature_row(ambivalence=distribution)
        _feature_rows(rows, args.out)
    else:
        distribution = ambivalence_distribution(_text_embedding(args.embeddings), prompts)
        _write_json(args.out, {category: [float(p) for p in values]
                               for category, values in distribution.items()})
    return [args.embeddings, args.prompts], [args.out]


# -- learners --------------------------------------------------------------

def _training_data(args):
    samples = load_manifest(args.manifest)
    ids, _, matrix = load_feature_table(args.train)
    order = {video_id: row for row, video_id in enumerate(ids)}
    missing = [i for i in samples.ids if i not in order]
    if missing:
        raise AlignmentError(f"{args.train}: no features for ids {', '.join(missing[:10])}")
    X = matrix[[order[i] for i in samples.ids]]
    return samples, X


def cmd_learn(args) -> Outputs:
    samples, X = _training_data(args)
    train = _split_ids(samples, "train")
    y = samples.labels[train]
    if args.algorithm == "mlp":
        cfg = MlpConfig(hidden_sizes=_parse_ints(args.hidden), input_noise_sigma=args.noise,
                        dropout_p=args.dropout, use_batch_norm=not args.no_batch_norm,
                        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                        seed=args.seed)
        model = train_mlp(X[train], y, cfg)
    else:
        model = train_logistic(X[train], y, l2=args.l2, epochs=args.epochs, lr=args.lr,
                               seed=args.seed, batch_size=args.batch_size)
    save_model(args.out_model, model)
    write_scores(args.out_scores, samples.ids, predict_proba(model, X))
    _emit({'algorithm': args.algorithm, 'final_loss': model.loss_history[-1]})
    return [args.train, args.manifest], [args.out_model, args.out_scores]


# -- committee -------------------------------------------------------------

def cmd_committee_select(args) -> Outputs:
    samples = load_manifest(args.manifest)
    grouped = gather_candidates(args.candidates, samples)
    members = build_committee(grouped, samples, threads=args.threads)
    save_committee(args.out, members)
    _emit({'members': [{'combo': m.combo.name, 'model': m.name, 'threshold': m.threshold}
                       for m in members]})
    return [args.manifest] + list(args.candidates), [args.out]


def cmd_threshold_fit(args) -> Outputs:
    samples = load_manifest(args.manifest)
    scores = load_scores(args.scores, samples.ids)
    mask = _split_ids(samples, args.split)
    threshold = fit_threshold(scores[mask], samples.labels[mask])
    report = metric_report(samples.labels[mask], (scores[mask] >= threshold).astype(int),
                           scores[mask])
    payload = {'split': args.split, 'threshold': threshold, 'report': report.as_dict()}
    if args.out:
        _write_json(args.out, payload)
    _emit(payload)
    return [args.scores, args.manifest], [args.out] if args.out else []


# -- ensemble --------------------------------------------------------------

def _pso_config(args, lam: float = 0.0) -> PsoConfig:
    return PsoConfig(particles=args.particles, epochs=args.epochs, inertia=args.inertia,
                     c1=args.c1, c2=args.c2, lam=lam, seed=args.seed,
                     velocity_clamp=args.velocity_clamp, threads=args.threads)


def _committee_payload(members) -> list:
    payload = committee_to_dict(members)['members']
    for member in payload:
        member.pop('scores_path', None)
    return payload


def cmd_ensemble_pso(args) -> Outputs:
    members = load_committee(args.committee)
    votes, labels = votes_by_split(members, load_manifest(args.manifest))
    result = pso_optimize(votes["train"], votes["val"], labels["train"], labels["val"],
                          _pso_config(args, args.lam))
    ensemble_reports(result, votes, labels)
    payload = {
        'version': __version__,
        'committee': _committee_payload(members),
        'run': pso_result_to_dict(result, [m.name for m in members],
                                  [m.threshold for m in members]),
    }
    _write_json(args.out, payload)
    _emit({'lambda': result.lam, 'fitness': result.best_fitness,
           'zero_weights': result.zero_weight_count})
    return [args.committee, args.manifest], [args.out]


def cmd_ensemble_sweep(args) -> Outputs:
    members = load_committee(args.committee)
    votes, labels = votes_by_split(members, load_manifest(args.manifest))
    results = lambda_sweep(votes, labels, _pso_config(args), _parse_floats(args.lambdas))
    names = [m.name for m in members]
    thresholds = [m.threshold for m in members]
    payload = {
        'version': __version__,
        'seed': args.seed,
        'committee': _committee_payload(members),
        'runs': [pso_result_to_dict(r, names, thresholds) for r in results],
    }
    _write_json(args.out, payload)
    outputs = [args.out]
    summary = sweep_summary(results)
    if args.summary:
        outputs.append(ExportManager().export_sweep_summary(summary, args.summary))
    _emit({'runs': [{'lambda': r.lam, 'fitness': r.best_fitness,
                     'zero_weights': r.zero_weight_count} for r in results]})
    return [args.committee, args.manifest], outputs


# -- evaluation ------------------------------------------------------------

def cmd_evaluate(args) -> Outputs:
    samples = load_manifest(args.manifest)
    scores = load_scores(args.scores, samples.ids)
    splits = [args.split] if args.split else [s for s in SPLITS if _split_ids(samples, s).any()]
    payload = {}
    for split in splits:
        mask = _split_ids(samples, split)
        predictions = (scores[mask] >= args.threshold).astype(int)
        payload[split] = metric_report(samples.labels[mask], predictions, scores[mask]).as_dict()
    if args.out:
        _write_json(args.out, payload)
    _emit(payload)
    return [args.scores, args.manifest], [args.out] if args.out else []


# -- pipeline --------------------------------------------------------------

def _run_pipeline(config: str, args, argv: Sequence[str]) -> dict:
    runner = PipelineRunner(config, seed=getattr(args, 'seed_given', None),
                            threads=getattr(args, 'threads_given', None), command=argv)
    result = runner.run()
    _emit(result)
    return result


def cmd_pipeline_run(args) -> Outputs:
    _run_pipeline(args.config, args, args.argv)
    return [], []


def cmd_pipeline_demo(args) -> Outputs:
    config = make_synthetic_fixture(args.out, seed=args.seed, n_videos=args.videos)
    _run_pipeline(config, args, args.argv)
    return [], []


# -- parser ----------------------------------------------------------------

def _global_flags() -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument('--seed', type=int, default=argparse.SUPPRESS, help="Random seed (default 0)")
    flags.add_argument('--threads', type=int, default=argparse.SUPPRESS,
                       help="Worker threads (default 1)")
    flags.add_argument('--quiet', action='store_true', default=argparse.SUPPRESS,
                       help="Only log warnings and errors")
    flags.add_argument('--log-file', default=argparse.SUPPRESS, help="Also log to this file")
    return flags


def build_parser() -> CliParser:
    common = _global_flags()
    parser = CliParser(prog='ambivote', parents=[common],
                       description="Ambivalence/hesitancy committee and ensemble pipeline")
    parser.add_argument('--version', action='version', version=f"ambivote {__version__}")
    commands = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)

    def group(name: str, help_text: str):
        sub = commands.add_parser(name, help=help_text)
        return sub.add_subparsers(dest='action', metavar='ACTION', required=True)

    def leaf(actions, name: str, handler, help_text: str):
        sub = actions.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(handler=handler)
        return sub

    # features
    features = group('features', "Embedding post-processing")
    sub = leaf(features, 'mad-filter', cmd_features_mad_filter, "Drop outlier chunks")
    sub.add_argument('--in', dest='input', required=True)
    sub.add_argument('--out', required=True)
    sub.add_argument('--multiplier', type=float, default=DEFAULT_MAD_MULTIPLIER)
    sub.add_argument('--reference', choices=['pairwise', 'mean'], default='pairwise')
    sub.add_argument('--report', help="Optional JSON filter report")
    for name, handler, help_text in (('pool', cmd_features_pool, "Min/max/mean/std pooling"),
                                     ('derivs', cmd_features_derivs, "Derivative pooling")):
        sub = leaf(features, name, handler, help_text)
        sub.add_argument('--in', dest='input', required=True)
        sub.add_argument('--out', required=True)
    sub = leaf(features, 'scale-fit', cmd_features_scale_fit, "Fit a standard scaler")
    sub.add_argument('--in', dest='input', required=True)
    sub.add_argument('--out-model', required=True)
    sub = leaf(features, 'scale-apply', cmd_features_scale_apply, "Apply a fitted scaler")
    sub.add_argument('--in', dest='input', required=True)
    sub.add_argument('--model', required=True)
    sub.add_argument('--out', required=True)
    sub.add_argument('--inverse', action='store_true')
    sub = leaf(features, 'pca-fit', cmd_features_pca_fit, "Fit PCA")
    sub.add_argument('--in', dest='input', required=True)
    sub.add_argument('--out-model', required=True)
    sub.add_argument('--dim', type=int, default=512)
    sub.add_argument('--variance', type=float, default=0.99)
    sub = leaf(features, 'pca-apply', cmd_features_pca_apply, "Project onto fitted PCA")
    sub.add_argument('--in', dest='input', required=True)
    sub.add_argument('--model', required=True)
    sub.add_argument('--out', required=True)

    # audio
    audio = group('audio', "Acoustic statistics")
    sub = leaf(audio, 'stats', cmd_audio_stats, "Per-chunk acoustic features of a WAV file")
    sub.add_argument('--wav', required=True)
    sub.add_argument('--out', required=True)
    sub.add_argument('--decimation', type=int, default=1)
    sub.add_argument('--n-fft', type=int, default=AudioConfig.n_fft)
    sub.add_argument('--hop-length', type=int, default=AudioConfig.hop_length)

    # text
    text = group('text', "Transcript statistics and embedding-similarity scores")
    sub = leaf(text, 'stats', cmd_text_stats, "Word, pause and repetition counts")
    sub.add_argument('--transcripts', required=True,
                     help="Transcript file (JSON output) or directory of <id>.txt (CSV output)")
    sub.add_argument('--out', required=True)
    sub = leaf(text, 'hesitancy', cmd_text_hesitancy, "Hesitancy category margins")
    sub.add_argument('--sentences', required=True,
                     help="Sentence JSONL file or directory of <id>.jsonl")
    sub.add_argument('--lexicon', required=True)
    sub.add_argument('--out', required=True)
    sub = leaf(text, 'ambivalence', cmd_text_ambivalence, "Ambivalence pole distributions")
    sub.add_argument('--embeddings', required=True,
                     help="Text embedding CSV or directory of <id>.csv")
    sub.add_argument('--prompts', required=True)
    sub.add_argument('--temperature', type=float, default=DEFAULT_TEMPERATURE)
    sub.add_argument('--out', required=True)

    # learners
    learn = group('learn', "Train a native candidate model")
    for algorithm in ('mlp', 'logistic'):
        sub = leaf(learn, algorithm, cmd_learn, f"Train a {algorithm} candidate")
        sub.set_defaults(algorithm=algorithm)
        sub.add_argument('--train', required=True, help="Feature table with an id column")
        sub.add_argument('--manifest', required=True)
        sub.add_argument('--out-model', required=True)
        sub.add_argument('--out-scores', required=True)
        sub.add_argument('--batch-size', type=int, default=32)
        if algorithm == 'mlp':
            sub.add_argument('--hidden', default="256,128,64")
            sub.add_argument('--noise', type=float, default=0.1)
            sub.add_argument('--dropout', type=float, default=0.3)
            sub.add_argument('--no-batch-norm', action='store_true')
            sub.add_argument('--lr', type=float, default=0.01)
            sub.add_argument('--epochs', type=int, default=50)
        else:
            sub.add_argument('--l2', type=float, default=0.01)
            sub.add_argument('--lr', type=float, default=0.1)
            sub.add_argument('--epochs', type=int, default=200)

    # committee and thresholds
    committee = group('committee', "Committee selection")
    sub = leaf(committee, 'select', cmd_committee_select, "Lowest-BCE member per combination")
    sub.add_argument('--manifest', required=True)
    sub.add_argument('--candidates', required=True, action='append',
                     help="Directory of <combo>_<algo>.csv (repeatable)")
    sub.add_argument('--out', default="committee.json")
    threshold = group('threshold', "Decision thresholds")
    sub = leaf(threshold, 'fit', cmd_threshold_fit, "Macro-F1 optimal threshold")
    sub.add_argument('--scores', required=True)
    sub.add_argument('--manifest', required=True)
    sub.add_argument('--split', choices=SPLITS, default='val')
    sub.add_argument('--out')

    # ensemble
    ensemble = group('ensemble', "Weighted hard-voting ensemble")
    for name, handler, help_text in (('pso', cmd_ensemble_pso, "One swarm run"),
                                     ('sweep', cmd_ensemble_sweep, "One swarm run per lambda")):
        sub = leaf(ensemble, name, handler, help_text)
        sub.add_argument('--committee', required=True)
        sub.add_argument('--manifest', required=True)
        sub.add_argument('--out', required=True)
        sub.add_argument('--particles', type=int, default=PsoConfig.particles)
        sub.add_argument('--epochs', type=int, default=PsoConfig.epochs)
        sub.add_argument('--inertia', type=float, default=PsoConfig.inertia)
        sub.add_argument('--c1', type=float, default=PsoConfig.c1)
        sub.add_argument('--c2', type=float, default=PsoConfig.c2)
        sub.add_argument('--velocity-clamp', type=float, default=PsoConfig.velocity_clamp)
        if name == 'pso':
            sub.add_argument('--lambda', dest='lam', type=float, default=0.0)
        else:
            sub.add_argument('--lambdas', default=",".join(str(v) for v in DEFAULT_LAMBDAS))
            sub.add_argument('--summary', help="Optional .csv, .json or .xlsx sweep table")

    # evaluation
    sub = commands.add_parser('evaluate', parents=[common], help="Metric report of a score file")
    sub.set_defaults(handler=cmd_evaluate)
    sub.add_argument('--scores', required=True)
    sub.add_argument('--manifest', required=True)
    sub.add_argument('--threshold', type=float, default=0.5)
    sub.add_argument('--split', choices=SPLITS)
    sub.add_argument('--out')

    # pipeline
    pipeline = group('pipeline', "End-to-end runs")
    sub = leaf(pipeline, 'run', cmd_pipeline_run, "Run the configured pipeline")
    sub.add_argument('--config', required=True)
    sub = leaf(pipeline, 'demo', cmd_pipeline_demo, "Generate the synthetic fixture and run it")
    sub.add_argument('--out', required=True)
    sub.add_argument('--videos', type=int, default=120)

    return parser


def _report_error(error: AmbivoteError):
    sys.stderr.write(json.dumps(error.to_dict()) + "\n")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Execute one command line

    Args:
        argv: Arguments without the program name; defaults to sys.argv[1:]

    Returns:
        Process exit code
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(parser.format_usage())
        _report_error(e)
        return e.exit_code
    except SystemExit as e:
        return int(e.code or 0)

    args.seed_given = getattr(args, 'seed', None)
    args.threads_given = getattr(args, 'threads', None)
    args.seed = args.seed_given if args.seed_given is not None else 0
    args.threads = args.threads_given if args.threads_given is not None else 1
    args.argv = ['ambivote'] + argv
    app_logger = Logger(getattr(args, 'log_file', None), getattr(args, 'quiet', False))
    name = f"{args.command} {getattr(args, 'action', '') or ''}".strip()

    started = time.time()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        try:
            inputs, outputs = args.handler(args)
        except (FloatingPointError, np.linalg.LinAlgError) as e:
            raise NumericError(str(e))
        except OSError as e:
            raise ParseError(f"{e.filename or 'input'}: {e.strerror or str(e)}")
    except AmbivoteError as e:
        app_logger.log_stage('command', name, False, e.message)
        _report_error(e)
        return e.exit_code

    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ('handler', 'argv', 'seed_given', 'threads_given')}
    for output in outputs:
        manifest = run_manifest_for(args.argv, config, args.seed, inputs, outputs, started)
        manifest.write(f"{output}.run.json")
        app_logger.log_file_operation(output, 'write', True)
    app_logger.log_stage('command', name, True, f"{time.time() - started:.2f}s")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
