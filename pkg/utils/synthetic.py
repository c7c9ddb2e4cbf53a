"""Desk-scale synthetic fixture for the end-to-end pipeline.

Every video carries a latent label signal that leaks into each modality with
independent noise, so different modality combinations yield different (but
better than chance) native candidates. The external candidates make disjoint
mistakes.
"""
import os
from typing import Dict

import numpy as np
from scipy.special import expit

from utils.audio_stats import AudioChunkFeatures, audio_stats_table
from utils.data_model import (ComboMask, EmbeddingSequence, Modality, SampleSet,
                              write_embedding_sequence, write_feature_table, write_sample_set)
from utils.logger import get_logger
from utils.settings_manager import SettingsManager
from utils.text_behavior import compute_text_stats

logger = get_logger(__name__)

_FILLERS = ["um", "uh", "well", "like", "maybe", "perhaps", "i mean", "sort of"]
_WORDS = ["i", "think", "the", "plan", "works", "today", "we", "should", "try", "again",
          "it", "is", "good", "not", "sure", "about", "that", "really", "want", "to"]

_DIMS = {'text': 16, 'audio': 16, 'video': 24}
_CHUNKS = {'text': (3, 7), 'audio': (4, 9), 'video': (6, 13)}


def _splits(n_videos: int):
    n_train = int(round(0.6 * n_videos))
    n_val = int(round(0.2 * n_videos))
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n_videos - n_train - n_val)


def _transcript(rng: np.random.Generator, label: int) -> str:
    words = []
    for _ in range(int(rng.integers(12, 30))):
        if rng.random() < (0.25 if label else 0.08):
            words.append(str(rng.choice(_FILLERS)))
            if rng.random() < 0.3:
                words.append(words[-1])
        else:
            words.append(str(rng.choice(_WORDS)))
        if rng.random() < 0.1:
            words[-1] += ","
        elif rng.random() < 0.08:
            words[-1] += "."
    return " ".join(words) + "."


def _audio_rows(rng: np.random.Generator, label: int, signal: float, chunks: int):
    rows = []
    for _ in range(chunks):
        rows.append(AudioChunkFeatures(
            rms=float(rng.uniform(0.05, 0.3)),
            spectral_centroid=float(1200 + 150 * rng.standard_normal()),
            spectral_bandwidth=float(800 + 100 * rng.standard_normal()),
            spectral_rolloff=float(3000 + 300 * rng.standard_normal()),
            zero_crossing_rate=float(rng.uniform(0.02, 0.12)),
            silence_ratio=float(np.clip(0.2 + 0.1 * label + 0.1 * rng.standard_normal(), 0, 1)),
            pitch_mean=float(150 + 10 * signal + 15 * rng.standard_normal()),
            pitch_std=float(abs(12 + 4 * label + 3 * rng.standard_normal())),
        ))
    return rows


def make_synthetic_fixture(out_dir: str, seed: int = 0, n_videos: int = 120) -> str:
    """
    Write a complete pipeline input set and its config

    Args:
        out_dir: Target directory (created)
        seed: Generator seed
        n_videos: Number of videos (split 60/20/20 into train/val/test)

    Returns:
        Path of the written config.json
    """
    rng = np.random.default_rng(seed)
    ids = [f"v{index:03d}" for index in range(n_videos)]
    labels = np.arange(n_videos) % 2
    samples = SampleSet(tuple(ids), tuple(_splits(n_videos)), labels)

    # Latent per-video evidence shared by every modality
    latent = (2 * labels - 1) * 1.0 + 0.8 * rng.standard_normal(n_videos)

    bases = {m: 3.0 * rng.standard_normal(d) for m, d in _DIMS.items()}
    directions = {}
    for modality, dim in _DIMS.items():
        direction = rng.standard_normal(dim)
        directions[modality] = direction / np.linalg.norm(direction)

    audio_stats_dir = os.path.join(out_dir, "stats", "audio")
    text_rows = []
    for index, video_id in enumerate(ids):
        for modality, dim in _DIMS.items():
            low, high = _CHUNKS[modality]
            count = int(rng.integers(low, high))
            evidence = latent[index] + 0.7 * rng.standard_normal()
            chunks = (bases[modality] + 1.5 * evidence * directions[modality]
                      + 0.6 * rng.standard_normal((count, dim)))
            if modality == "video" and rng.random() < 0.2:
                # Occasional off-face frame for the MAD filter to reject
                chunks[int(rng.integers(count))] = 4.0 * rng.standard_normal(dim)
            write_embedding_sequence(
                os.path.join(out_dir, "embeddings", modality, f"{video_id}.csv"),
                EmbeddingSequence(video_id, Modality.from_tag(modality), chunks))

        audio_rows = _audio_rows(rng, int(labels[index]), float(latent[index]),
                                 int(rng.integers(4, 9)))
        table = audio_stats_table(audio_rows)
        os.makedirs(audio_stats_dir, exist_ok=True)
        table.to_csv(os.path.join(audio_stats_dir, f"{video_id}.csv"), index=False)

        stats = compute_text_stats(_transcript(rng, int(labels[index])))
        text_rows.append(stats.as_dict())

    columns = list(text_rows[0])
    write_feature_table(os.path.join(out_dir, "stats", "text_features.csv"), ids, columns,
                        np.array([[row[c] for c in columns] for row in text_rows]))

    # External candidates stand in for tree ensembles trained elsewhere. Each is
    # confident on most videos and mildly wrong on its own slice (index % 15),
    # so no video is misclassified by more than one of them.
    signs = 2 * labels - 1
    slices = np.arange(n_videos) % 15
    external = {}
    for mask in range(1, 16):
        combo = ComboMask(mask)
        margin = 3.0 + 0.5 * np.abs(rng.standard_normal(n_videos))
        margin[slices == mask - 1] = -0.2
        external[f"{combo.name}_gbdt"] = expit(signs * margin)
    write_sample_set(samples.with_scores(external), os.path.join(out_dir, "manifest.jsonl"),
                     os.path.join(out_dir, "external"))

    config: Dict = {
        'manifest': "manifest.jsonl",
        'output_dir': "out",
        'seed': seed,
        'threads': 1,
        'embeddings': {m: os.path.join("embeddings", m) for m in _DIMS},
        'stats': {'audio_stats_dir': os.path.join("stats", "audio"),
                  'text_features': os.path.join("stats", "text_features.csv")},
        'features': {'video_pca_dim': 16},
        'learners': {
            'algorithms': ['mlp', 'logistic'],
            'mlp': {'hidden_sizes': [32, 16, 8], 'epochs': 30, 'batch_size': 16,
                    'learning_rate': 0.05},
        },
        'candidates_dir': "external",
        'lambdas': [0.0, 0.2, 0.4, 0.6, 0.8],
    }
    config_path = os.path.join(out_dir, "config.json")
    SettingsManager(config_path).save_settings(config)
    logger.info(f"Synthetic fixture with {n_videos} videos written to {out_dir}")
    return config_path
