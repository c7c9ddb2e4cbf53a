import copy
import json
import os
from typing import Any, Dict, List, Optional

from utils.errors import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)

PATH_KEYS = (
    ('manifest',),
    ('output_dir',),
    ('candidates_dir',),
    ('embeddings', 'text'),
    ('embeddings', 'audio'),
    ('embeddings', 'video'),
    ('stats', 'audio_stats_dir'),
    ('stats', 'text_features'),
)
NATIVE_ALGORITHMS = ('mlp', 'logistic')
MAD_REFERENCES = ('pairwise', 'mean')


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _lookup(settings: Dict[str, Any], keys) -> Any:
    value = settings
    for key in keys:
        if not isinstance(value, dict):
            return None
        value = value.get(key)
    return value


def text_feature_tables(settings: Dict[str, Any]) -> List[str]:
    """``stats.text_features`` as a list (it may be a single path)"""
    value = _lookup(settings, ('stats', 'text_features'))
    if not value:
        return []
    if isinstance(value, str):
        return [value]
    return list(value)


class SettingsManager:
    """Loads, resolves and validates the JSON pipeline configuration"""

    def __init__(self, settings_file: Optional[str] = None):
        self.settings_file = settings_file
        self.base_dir = os.path.dirname(os.path.abspath(settings_file)) if settings_file else os.getcwd()

    def _get_default_settings(self) -> Dict[str, Any]:
        """Get default settings"""
        return {
            'manifest': None,
            'output_dir': 'ambivote_out',
            'seed': 0,
            'threads': 1,
            'embeddings': {'text': None, 'audio': None, 'video': None},
            'stats': {'audio_stats_dir': None, 'text_features': None},
            'features': {
                'mad_multiplier': 50.0,
                'mad_reference': 'pairwise',
                'video_pca_dim': 512,
                'video_pca_variance': 0.99,
                'video_frames_per_chunk': 1,
            },
            'learners': {
                'algorithms': ['mlp', 'logistic'],
                'mlp': {
                    'hidden_sizes': [256, 128, 64],
                    'input_noise_sigma': 0.1,
                    'dropout_p': 0.3,
                    'use_batch_norm': True,
                    'learning_rate': 0.01,
                    'epochs': 50,
                    'batch_size': 32,
                },
                'logistic': {'l2': 0.01, 'epochs': 200, 'lr': 0.1, 'batch_size': 32},
            },
            'candidates_dir': None,
            'pso': {
                'particles': 50,
                'epochs': 100,
                'inertia': 0.9,
                'c1': 1.5,
                'c2': 2.1,
                'velocity_clamp': 0.2,
            },
            'lambdas': [0.0, 0.2, 0.4, 0.6, 0.8],
        }

    def load_settings(self) -> Dict[str, Any]:
        """
        Load the config file and merge it over the defaults

        Relative paths are resolved against the config file's directory.

        Returns:
            Dict containing the resolved settings
        """
        if not self.settings_file or not os.path.exists(self.settings_file):
            raise ConfigError(f"Config file not found: {self.settings_file}")
        try:
            with open(self.settings_file, 'r', encoding='utf-8') as f:
                user_settings = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config {self.settings_file} is not valid JSON: {e.msg}")
        if not isinstance(user_settings, dict):
            raise ConfigError("Config must be a JSON object")

        settings = _deep_merge(self._get_default_settings(), user_settings)
        return self.resolve_paths(settings)

    def _resolve(self, value: str) -> str:
        if os.path.isabs(value):
            return value
        return os.path.normpath(os.path.join(self.base_dir, value))

    def resolve_paths(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        resolved = copy.deepcopy(settings)
        for keys in PATH_KEYS:
            value = _lookup(resolved, keys)
            target = resolved
            for key in keys[:-1]:
                if not isinstance(target.get(key), dict):
                    break
                target = target[key]
            else:
                if isinstance(value, str) and value:
                    target[keys[-1]] = self._resolve(value)
                elif isinstance(value, list):
                    target[keys[-1]] = [self._resolve(v) if isinstance(v, str) and v else v
                                        for v in value]
        return resolved

    def save_settings(self, settings: Dict[str, Any], path: Optional[str] = None) -> str:
        """Write settings as indented JSON; returns the path written"""
        path = path or self.settings_file
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(settings, f, indent=2, ensure_ascii=False)
        return path

    def validate_settings(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """
        Validate settings dictionary

        Args:
            settings: Resolved settings to validate

        Returns:
            Dict containing validation results
        """
        validation_result = {
            'valid': True,
            'errors': [],
            'warnings': []
        }

        def error(message: str):
            validation_result['errors'].append(message)
            validation_result['valid'] = False

        manifest = settings.get('manifest')
        if not manifest:
            error("Required field 'manifest' is missing or empty")
        elif not os.path.isfile(manifest):
            error(f"Manifest not found: {manifest}")

        algorithms = _lookup(settings, ('learners', 'algorithms')) or []
        unknown = [a for a in algorithms if a not in NATIVE_ALGORITHMS]
        if unknown:
            error(f"Unknown learner algorithms: {', '.join(map(str, unknown))}")

        for modality in ('text', 'audio', 'video'):
            directory = _lookup(settings, ('embeddings', modality))
            if directory and not os.path.isdir(directory):
                error(f"Embedding directory for {modality} not found: {directory}")
            elif not directory and algorithms:
                error(f"Field 'embeddings.{modality}' is required when native learners are enabled")

        for keys in (('stats', 'audio_stats_dir'), ('candidates_dir',)):
            directory = _lookup(settings, keys)
            if directory and not os.path.isdir(directory):
                error(f"Directory '{'.'.join(keys)}' not found: {directory}")
        text_features = _lookup(settings, ('stats', 'text_features'))
        if text_features and not isinstance(text_features, (str, list)):
            error("Field 'stats.text_features' must be a path or a list of paths")
        else:
            for table in text_feature_tables(settings):
                if not isinstance(table, str) or not os.path.isfile(table):
                    error(f"Text feature table not found: {table}")

        if not algorithms and not settings.get('candidates_dir'):
            error("Either native learners or 'candidates_dir' must supply candidates")

        numeric_fields = {
            ('seed',): (0, None, int),
            ('threads',): (1, None, int),
            ('features', 'mad_multiplier'): (0, None, float),
            ('features', 'video_pca_dim'): (1, None, int),
            ('features', 'video_pca_variance'): (0, 1, float),
            ('features', 'video_frames_per_chunk'): (1, None, int),
            ('pso', 'particles'): (1, None, int),
            ('pso', 'epochs'): (1, None, int),
            ('pso', 'velocity_clamp'): (0, None, float),
        }
        for keys, (min_val, max_val, kind) in numeric_fields.items():
            value = _lookup(settings, keys)
            name = '.'.join(keys)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                error(f"Field '{name}' must be a number")
                continue
            if kind is int and int(value) != value:
                error(f"Field '{name}' must be an integer")
            if value < min_val or (max_val is not None and value > max_val):
                bound = f"[{min_val}, {max_val}]" if max_val is not None else f">= {min_val}"
                error(f"Field '{name}' value {value} is outside {bound}")
            elif kind is float and value == min_val:
                error(f"Field '{name}' must be positive")

        if _lookup(settings, ('features', 'mad_reference')) not in MAD_REFERENCES:
            error(f"Field 'features.mad_reference' must be one of {', '.join(MAD_REFERENCES)}")

        lambdas = settings.get('lambdas')
        if not isinstance(lambdas, list) or not lambdas:
            error("Field 'lambdas' must be a non-empty list")
        elif any(isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0 for v in lambdas):
            error("Every lambda must be a non-negative number")
        elif len(set(lambdas)) != len(lambdas):
            validation_result['warnings'].append("Duplicate lambda values will run twice")

        return validation_result

    def load_validated(self) -> Dict[str, Any]:
        """Load and validate; raises ConfigError listing every problem"""
        settings = self.load_settings()
        result = self.validate_settings(settings)
        for warning in result['warnings']:
            logger.warning(warning)
        if not result['valid']:
            raise ConfigError("Invalid config: " + "; ".join(result['errors']))
        return settings
