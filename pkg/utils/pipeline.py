"""End-to-end runner: features -> candidates -> committee -> lambda sweep.

Each stage writes its outputs under ``output_dir`` and records a content key in
the cache metadata; a stage whose key is unchanged and whose outputs still exist
is reported as ``cached`` and skipped. Later stages always read their inputs
from the files of earlier stages, so a cached stage behaves like a fresh one.
"""
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils import __version__
from utils.cache_manager import CacheManager, stage_key
from utils.committee import (build_committee, committee_to_dict, enumerate_combos,
                             gather_candidates, load_committee, save_committee, votes_by_split)
from utils.data_model import (ComboMask, EmbeddingSequence, Modality, SampleSet, load_feature_table,
                              load_manifest, write_feature_table, write_scores)
from utils.ensemble_pso import (lambda_sweep, pso_config_from_dict, pso_result_to_dict,
                                sweep_summary)
from utils.errors import ConfigError
from utils.feature_ops import (apply_mad_filter, apply_pca, apply_scaler,
                               derivative_pool, fit_pca, fit_scaler, l2_normalize, mad_filter,
                               save_model_json)
from utils.audio_stats import pooled_audio_vector, read_audio_stats_table, video_audio_stats
from utils.file_handler import FileHandler
from utils.learners import config_from_dict, predict_proba, save_model, train_logistic, train_mlp
from utils.logger import get_logger
from utils.settings_manager import SettingsManager, text_feature_tables
from utils.text_behavior import stats_feature_row, visual_chunk_stats
from utils.validation import Validator

logger = get_logger(__name__)

STAGES = ("features", "candidates", "committee", "sweep")


@dataclass
class RunManifest:
    command: List[str]
    config: Dict[str, Any]
    seed: int
    version: str = __version__
    inputs: Dict[str, Optional[str]] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    wall_time_seconds: float = 0.0
    stages: Dict[str, str] = field(default_factory=dict)

    def write(self, path: str, file_handler: Optional[FileHandler] = None) -> str:
        return (file_handler or FileHandler()).write_json(path, asdict(self))


def run_manifest_for(command: Sequence[str], config: Dict[str, Any], seed: int,
                     inputs: Sequence[str], outputs: Sequence[str],
                     started: float) -> RunManifest:
    """RunManifest for a single CLI command with content digests of its inputs"""
    handler = FileHandler()
    digests = {path: handler.path_digest(path) for path in inputs if path and os.path.exists(path)}
    return RunManifest(command=list(command), config=config, seed=seed, inputs=digests,
                       outputs=list(outputs), wall_time_seconds=round(time.time() - started, 3))


class PipelineRunner:
    """Runs the configured pipeline with fail-fast validation and stage caching"""

    def __init__(self, config_path: str, seed: Optional[int] = None,
                 threads: Optional[int] = None, command: Optional[Sequence[str]] = None):
        self.config_path = config_path
        self.settings_manager = SettingsManager(config_path)
        self.seed_override = seed
        self.threads_override = threads
        self.command = list(command) if command is not None else list(sys.argv)
        self.validator = Validator()
        self.settings: Dict[str, Any] = {}
        self.samples: Optional[SampleSet] = None
        self.statuses: Dict[str, str] = {}

    # -- validation -------------------------------------------------------

    def validate(self) -> Dict[str, Any]:
        """
        Load the config and check every input before anything is written

        Returns:
            Resolved settings
        """
        settings = self.settings_manager.load_validated()
        if self.seed_override is not None:
            settings['seed'] = int(self.seed_override)
        if self.threads_override is not None:
            settings['threads'] = int(self.threads_override)

        samples = load_manifest(settings['manifest'])
        results = [self.validator.validate_sample_set(samples)]
        handler = FileHandler(settings['threads'])
        if settings['learners']['algorithms']:
            for modality in ('text', 'audio', 'video'):
                directory = settings['embeddings'][modality]
                results.append(self.validator.validate_coverage(
                    handler.scan_directory(directory), samples.ids, f"{modality} embeddings"))
            audio_dir = settings['stats']['audio_stats_dir']
            if audio_dir:
                results.append(self.validator.validate_coverage(
                    handler.scan_directory(audio_dir), samples.ids, "audio stats"))
            for table in text_feature_tables(settings):
                ids, _, _ = load_feature_table(table)
                results.append(self.validator.validate_coverage(
                    {i: table for i in ids}, samples.ids,
                    f"text features {os.path.basename(table)}"))

        merged = Validator.merge_results(results)
        for warning in merged['warnings']:
            logger.warning(warning)
        if not merged['valid']:
            raise ConfigError("Invalid pipeline inputs: " + "; ".join(merged['errors']))

        self.settings = settings
        self.samples = samples
        return settings

    # -- helpers ----------------------------------------------------------

    def _path(self, *parts: str) -> str:
        return os.path.join(self.settings['output_dir'], *parts)

    def _train_mask(self) -> np.ndarray:
        return np.array([s == "train" for s in self.samples.splits], dtype=bool)

    def _run_stage(self, cache: CacheManager, stage: str, inputs: Dict[str, Any],
                   action) -> str:
        key = stage_key(stage, inputs)
        if cache.is_cached(stage, key):
            self.statuses[stage] = "cached"
            logger.info(f"STAGE {stage.upper()} - CACHED")
        else:
            started = time.time()
            outputs = action()
            cache.record(stage, key, outputs)
            self.statuses[stage] = "ran"
            logger.info(f"STAGE {stage.upper()} - SUCCESS - {time.time() - started:.2f}s")
        return key

    # -- features ---------------------------------------------------------

    def _mean_pooled(self, sequences: Dict[str, EmbeddingSequence]) -> np.ndarray:
        return np.vstack([l2_normalize(sequences[i].chunks).mean(axis=0) for i in self.samples.ids])

    def _video_features(self, sequences: Dict[str, EmbeddingSequence]):
        features = self.settings['features']
        rows, reports = [], {}
        for video_id in self.samples.ids:
            normalized = EmbeddingSequence(video_id, Modality.VIDEO,
                                           l2_normalize(sequences[video_id].chunks))
            report = mad_filter(normalized, features['mad_multiplier'], features['mad_reference'])
            reports[video_id] = report
            rows.append(derivative_pool(apply_mad_filter(normalized, report)))
        rows = np.vstack(rows)

        train = self._train_mask()
        scaler = fit_scaler(rows[train])
        scaled = apply_scaler(scaler, rows)
        target_dim = min(int(features['video_pca_dim']), scaled.shape[1])
        pca = fit_pca(scaled[train], target_dim, float(features['video_pca_variance']))
        save_model_json(self._path("features", "video_scaler.json"), scaler)
        save_model_json(self._path("features", "video_pca.json"), pca)
        return apply_pca(pca, scaled), reports

    def _stats_features(self, video_reports) -> Tuple[List[str], np.ndarray]:
        settings = self.settings
        frames_per_chunk = int(settings['features']['video_frames_per_chunk'])
        audio_dir = settings['stats']['audio_stats_dir']
        audio_files = FileHandler().scan_directory(audio_dir) if audio_dir else {}

        text_tables = []
        for table in text_feature_tables(settings):
            ids, table_columns, matrix = load_feature_table(table)
            text_tables.append((table_columns, dict(zip(ids, matrix))))

        columns: List[str] = []
        rows = []
        for video_id in self.samples.ids:
            visual = visual_chunk_stats(video_reports[video_id], frames_per_chunk)
            names, values = stats_feature_row(visual=visual)
            parts = [values]
            if audio_files:
                audio_names, audio_values = pooled_audio_vector(
                    video_audio_stats(read_audio_stats_table(audio_files[video_id])))
                names = names + audio_names
                parts.append(audio_values)
            for table_columns, table_rows in text_tables:
                names = names + table_columns
                parts.append(table_rows[video_id])
            columns = names
            rows.append(np.concatenate(parts))
        rows = np.vstack(rows)

        scaler = fit_scaler(rows[self._train_mask()])
        save_model_json(self._path("features", "stats_scaler.json"), scaler)
        return columns, apply_scaler(scaler, rows)

    def _features_stage(self) -> List[str]:
        handler = FileHandler(self.settings['threads'])
        embeddings = self.settings['embeddings']
        sequences = {m: handler.read_embedding_directory(embeddings[m.tag], m, self.samples.ids)
                     for m in (Modality.TEXT, Modality.AUDIO, Modality.VIDEO)}

        tables = {}
        for modality in (Modality.TEXT, Modality.AUDIO):
            pooled = self._mean_pooled(sequences[modality])
            tables[modality] = ([f"{modality.tag}_{i}" for i in range(pooled.shape[1])], pooled)
        video, reports = self._video_features(sequences[Modality.VIDEO])
        tables[Modality.VIDEO] = ([f"video_pc{i}" for i in range(video.shape[1])], video)
        tables[Modality.STATS] = self._stats_features(reports)

        outputs = [self._path("features", name) for name in
                   ("video_scaler.json", "video_pca.json", "stats_scaler.json")]
        for modality, (columns, matrix) in tables.items():
            path = self._path("features", f"{modality.tag}.csv")
            write_feature_table(path, self.samples.ids, columns, matrix)
            outputs.append(path)
        return outputs

    # -- candidates -------------------------------------------------------

    def _load_feature_tables(self) -> Dict[Modality, np.ndarray]:
        tables = {}
        for modality in Modality:
            ids, _, matrix = load_feature_table(self._path("features", f"{modality.tag}.csv"))
            order = {video_id: row for row, video_id in enumerate(ids)}
            tables[modality] = matrix[[order[i] for i in self.samples.ids]]
        return tables

    def _train_candidate(self, combo: ComboMask, algorithm: str, index: int,
                         tables: Dict[Modality, np.ndarray]) -> List[str]:
        learners = self.settings['learners']
        X = np.hstack([tables[m] for m in combo.modalities])
        train = self._train_mask()
        y = self.samples.labels[train]
        # Distinct, reproducible seed per (combination, algorithm)
        seed = int(self.settings['seed']) + 100 * combo.mask + index

        if algorithm == "mlp":
            cfg = config_from_dict({**learners['mlp'], 'seed': seed})
            model = train_mlp(X[train], y, cfg)
        else:
            params = learners['logistic']
            model = train_logistic(X[train], y, l2=params['l2'], epochs=params['epochs'],
                                   lr=params['lr'], seed=seed, batch_size=params['batch_size'])

        name = f"{combo.name}_{algorithm}"
        scores_path = self._path("candidates", f"{name}.csv")
        model_path = self._path("models", f"{name}.json")
        write_scores(scores_path, self.samples.ids, predict_proba(model, X))
        save_model(model_path, model)
        return [scores_path, model_path]

    def _candidates_stage(self) -> List[str]:
        handler = FileHandler()
        # Candidates from an earlier algorithm list must not reach the committee
        handler.clear_directory(self._path("candidates"))
        handler.clear_directory(self._path("models"))
        tables = self._load_feature_tables()
        algorithms = self.settings['learners']['algorithms']
        jobs = [(combo, algorithm, index)
                for combo in enumerate_combos()
                for index, algorithm in enumerate(algorithms)]
        with ThreadPoolExecutor(max_workers=self.settings['threads']) as pool:
            results = list(pool.map(lambda job: self._train_candidate(*job, tables), jobs))
        return [path for paths in results for path in paths]

    # -- committee --------------------------------------------------------

    def _committee_stage(self) -> List[str]:
        sources = []
        if self.settings['learners']['algorithms']:
            sources.append(self._path("candidates"))
        if self.settings['candidates_dir']:
            sources.append(self.settings['candidates_dir'])

        grouped = gather_candidates(sources, self.samples)
        members = build_committee(grouped, self.samples, threads=self.settings['threads'])
        path = self._path("committee.json")
        save_committee(path, members)
        return [path]

    # -- sweep ------------------------------------------------------------

    def _sweep_stage(self) -> List[str]:
        members = load_committee(self._path("committee.json"))
        votes, labels = votes_by_split(members, self.samples)

        base = pso_config_from_dict(self.settings['pso'], seed=int(self.settings['seed']),
                                    threads=int(self.settings['threads']))
        results = lambda_sweep(votes, labels, base, [float(v) for v in self.settings['lambdas']])

        names = [m.name for m in members]
        thresholds = [m.threshold for m in members]
        committee = committee_to_dict(members)
        for member in committee['members']:
            member.pop('scores_path', None)
        payload = {
            'version': __version__,
            'seed': int(self.settings['seed']),
            'committee': committee['members'],
            'runs': [pso_result_to_dict(r, names, thresholds) for r in results],
        }
        sweep_path = self._path("sweep.json")
        summary_path = self._path("sweep_summary.csv")
        FileHandler().write_json(sweep_path, payload)
        sweep_summary(results).to_csv(summary_path, index=False)
        return [sweep_path, summary_path]

    # -- entry point ------------------------------------------------------

    def run(self) -> Dict[str, Any]:
        """
        Validate, then execute the stages in order

        Returns:
            Dict with stage statuses and the run manifest path
        """
        started = time.time()
        settings = self.validate()
        os.makedirs(settings['output_dir'], exist_ok=True)
        cache = CacheManager(self._path(".cache"))
        handler = FileHandler()

        digests = {
            'manifest': handler.path_digest(settings['manifest']),
            'embeddings': {m: handler.path_digest(settings['embeddings'][m])
                           for m in ('text', 'audio', 'video')},
            'audio_stats': handler.path_digest(settings['stats']['audio_stats_dir']),
            'text_features': [handler.path_digest(t) for t in text_feature_tables(settings)],
            'candidates_dir': handler.path_digest(settings['candidates_dir']),
        }

        native = bool(settings['learners']['algorithms'])
        key = None
        if native:
            key = self._run_stage(cache, "features", {
                'manifest': digests['manifest'], 'embeddings': digests['embeddings'],
                'audio_stats': digests['audio_stats'], 'text_features': digests['text_features'],
                'settings': settings['features']}, self._features_stage)
            key = self._run_stage(cache, "candidates", {
                'previous': key, 'learners': settings['learners'], 'seed': settings['seed']},
                self._candidates_stage)
        else:
            self.statuses['features'] = self.statuses['candidates'] = "skipped"

        key = self._run_stage(cache, "committee", {
            'previous': key, 'manifest': digests['manifest'],
            'external': digests['candidates_dir']}, self._committee_stage)
        self._run_stage(cache, "sweep", {
            'previous': key, 'pso': settings['pso'], 'lambdas': settings['lambdas'],
            'seed': settings['seed']}, self._sweep_stage)

        outputs = sorted({path for stage in STAGES for path in cache.outputs(stage)})
        manifest = RunManifest(command=self.command, config=settings, seed=int(settings['seed']),
                               inputs={'config': handler.path_digest(self.config_path),
                                       'manifest': digests['manifest']},
                               outputs=outputs,
                               wall_time_seconds=round(time.time() - started, 3),
                               stages=dict(self.statuses))
        manifest_path = manifest.write(self._path("run_manifest.json"), handler)
        return {'stages': dict(self.statuses), 'run_manifest': manifest_path,
                'sweep': self._path("sweep.json")}
