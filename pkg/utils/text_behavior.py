"""Transcript statistics and the embedding-similarity hesitancy / ambivalence scores.

Sentence and prompt embeddings are produced upstream; this module only compares
them. Lexicons and prompt sets are JSON sidecars of the form
``{"<category>": {"expressions": [...], "embeddings": [[...], ...]}}``.
"""
import json
import re
import string
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils.errors import ParameterError, ParseError, ShapeError
from utils.feature_ops import (DEFAULT_TEMPERATURE, MadFilterReport, PooledStats,
                               cosine_matrix, softmax_temperature, stat_pool)
from utils.logger import get_logger

logger = get_logger(__name__)

HESITANCY_CATEGORIES = ("filler_words", "filler_sounds", "hedging", "corrections")
AMBIVALENCE_CATEGORIES = ("sentiment", "capability", "excuse", "success", "motivation",
                          "opportunity")
POLES = ("neutral", "negative", "positive", "both")

# Terminal punctuation only ends a sentence before whitespace or the end of text
_SENTENCE_END = re.compile(r'[.!?]+(?=\s|$)')
_PUNCTUATION = string.punctuation + "’‘“”…"


@dataclass(frozen=True)
class TextStats:
    word_count: int
    short_pauses: int
    long_pauses: int
    consecutive_repetitions: int
    lexical_diversity: float

    def as_dict(self) -> Dict[str, float]:
        return {
            'text_word_count': float(self.word_count),
            'text_short_pauses': float(self.short_pauses),
            'text_long_pauses': float(self.long_pauses),
            'text_repetitions': float(self.consecutive_repetitions),
            'text_lexical_diversity': float(self.lexical_diversity),
        }


@dataclass(frozen=True)
class HesitancyLexicon:
    expressions: Mapping[str, Tuple[str, ...]]
    embeddings: Mapping[str, np.ndarray]

    @property
    def dim(self) -> int:
        return next(iter(self.embeddings.values())).shape[1]


@dataclass(frozen=True)
class AmbivalencePrompts:
    embeddings: Mapping[str, np.ndarray]
    temperature: float = DEFAULT_TEMPERATURE

    @property
    def dim(self) -> int:
        return next(iter(self.embeddings.values())).shape[1]


@dataclass(frozen=True)
class SentenceRecord:
    text: str
    embedding: np.ndarray


@dataclass(frozen=True)
class HesitancyScores:
    raw: Dict[str, float]
    margin: Dict[str, float]


@dataclass(frozen=True)
class SentencePool:
    stats: Dict[str, PooledStats]
    valid: int


def tokenize(transcript: str) -> List[str]:
    """Lowercased whitespace tokens with surrounding punctuation stripped"""
    tokens = (token.strip(_PUNCTUATION).lower() for token in transcript.split())
    return [token for token in tokens if token]


def split_sentences(transcript: str) -> List[str]:
    """Split on terminal punctuation (. ! ?), dropping empty pieces"""
    return [piece.strip() for piece in _SENTENCE_END.split(transcript) if piece.strip()]


def compute_text_stats(transcript: str) -> TextStats:
    words = tokenize(transcript)
    repetitions = sum(1 for previous, current in zip(words, words[1:]) if previous == current)
    diversity = len(set(words)) / len(words) if words else 0.0
    return TextStats(
        word_count=len(words),
        short_pauses=transcript.count(','),
        long_pauses=len(_SENTENCE_END.findall(transcript)),
        consecutive_repetitions=repetitions,
        lexical_diversity=diversity,
    )


def _read_sidecar(path: str) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"Error reading {path}: {str(e)}")
    if not isinstance(payload, dict) or not payload:
        raise ParseError(f"{path}: expected a non-empty JSON object of categories")
    return payload


def _category_matrix(path: str, category: str, entry: dict) -> Tuple[List[str], np.ndarray]:
    try:
        expressions = list(entry['expressions'])
        matrix = np.asarray(entry['embeddings'], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: category '{category}' is malformed ({str(e)})")
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ParseError(f"{path}: category '{category}' has no embeddings")
    if len(expressions) != matrix.shape[0]:
        raise ParseError(f"{path}: category '{category}' has {len(expressions)} expressions "
                         f"but {matrix.shape[0]} embeddings")
    return expressions, matrix


def load_lexicon(path: str) -> HesitancyLexicon:
    """
    Load the hesitancy lexicon sidecar

    Args:
        path: JSON file with one entry per hesitancy category

    Returns:
        HesitancyLexicon
    """
    payload = _read_sidecar(path)
    missing = [c for c in HESITANCY_CATEGORIES if c not in payload]
    if missing:
        raise ParseError(f"{path}: missing hesitancy categories {', '.join(missing)}")

    expressions, embeddings = {}, {}
    for category in HESITANCY_CATEGORIES:
        words, matrix = _category_matrix(path, category, payload[category])
        expressions[category] = tuple(words)
        embeddings[category] = matrix
    if len({m.shape[1] for m in embeddings.values()}) != 1:
        raise ShapeError(f"{path}: lexicon embeddings do not share one dimension")
    return HesitancyLexicon(expressions, embeddings)


def load_prompts(path: str, temperature: float = DEFAULT_TEMPERATURE) -> AmbivalencePrompts:
    """
    Load the ambivalence prompt sidecar

    Each category's ``expressions`` name the poles (neutral, negative, positive,
    both) and ``embeddings`` hold one prompt embedding per pole.
    """
    if temperature <= 0:
        raise ParameterError(f"Temperature must be positive, got {temperature}")
    payload = _read_sidecar(path)
    missing = [c for c in AMBIVALENCE_CATEGORIES if c not in payload]
    if missing:
        raise ParseError(f"{path}: missing ambivalence categories {', '.join(missing)}")

    embeddings = {}
    for category in AMBIVALENCE_CATEGORIES:
        poles, matrix = _category_matrix(path, category, payload[category])
        if sorted(poles) != sorted(POLES):
            raise ParseError(f"{path}: category '{category}' must list poles {', '.join(POLES)}")
        # Reorder rows to the canonical pole order
        embeddings[category] = matrix[[poles.index(p) for p in POLES]]
    if len({m.shape[1] for m in embeddings.values()}) != 1:
        raise ShapeError(f"{path}: prompt embeddings do not share one dimension")
    return AmbivalencePrompts(embeddings, float(temperature))


def hesitancy_scores(sentence: SentenceRecord, lexicon: HesitancyLexicon) -> HesitancyScores:
    """
    Per-category hesitancy of one sentence

    The raw score of a category is the best cosine similarity to any of its
    expressions; the margin subtracts the mean raw score of the other categories.
    """
    embedding = np.asarray(sentence.embedding, dtype=float)
    if embedding.shape != (lexicon.dim,):
        raise ShapeError(f"Sentence embedding has shape {embedding.shape}, "
                         f"lexicon dimension is {lexicon.dim}")

    raw = {category: float(cosine_matrix(embedding, lexicon.embeddings[category],
                                         what="sentence embedding").max())
           for category in HESITANCY_CATEGORIES}
    total = sum(raw.values())
    others = len(raw) - 1
    margin = {category: value - (total - value) / others for category, value in raw.items()}
    return HesitancyScores(raw=raw, margin=margin)


def ambivalence_distribution(text_embedding: np.ndarray,
                             prompts: AmbivalencePrompts) -> Dict[str, np.ndarray]:
    """Softmax over the four poles of each ambivalence category"""
    embedding = np.asarray(text_embedding, dtype=float)
    if embedding.shape != (prompts.dim,):
        raise ShapeError(f"Text embedding has shape {embedding.shape}, "
                         f"prompt dimension is {prompts.dim}")
    distributions = {}
    for category in AMBIVALENCE_CATEGORIES:
        sims = cosine_matrix(embedding, prompts.embeddings[category], what="text embedding")[0]
        distributions[category] = softmax_temperature(sims, prompts.temperature)
    return distributions


def sentence_level_pool(per_sentence: Sequence[Mapping[str, float]],
                        categories: Sequence[str] = HESITANCY_CATEGORIES) -> SentencePool:
    """
    Pool per-sentence category scores; an empty transcript yields zeros with valid=0
    """
    if not per_sentence:
        zero = PooledStats(min=np.float64(0.0), max=np.float64(0.0), mean=np.float64(0.0),
                           std=np.float64(0.0))
        return SentencePool(stats={c: zero for c in categories}, valid=0)
    stats = {c: stat_pool([scores[c] for scores in per_sentence]) for c in categories}
    return SentencePool(stats=stats, valid=1)


def visual_chunk_stats(report: MadFilterReport, frames_per_chunk: int = 1) -> np.ndarray:
    """
    One row per one-second chunk: [valid chunk, valid ratio, similarity mean]

    Args:
        report: MAD filter report over the video's frames
        frames_per_chunk: Consecutive frames grouped into one chunk

    Returns:
        (chunks x 3) array
    """
    if frames_per_chunk < 1:
        raise ParameterError(f"frames_per_chunk must be >= 1, got {frames_per_chunk}")
    rows = []
    for start in range(0, len(report.kept), frames_per_chunk):
        kept = report.kept[start:start + frames_per_chunk]
        scores = report.scores[start:start + frames_per_chunk]
        rows.append([float(kept.any()), float(kept.mean()), float(scores.mean())])
    return np.asarray(rows)


def stats_feature_row(text_stats: Optional[TextStats] = None,
                      hesitancy: Optional[SentencePool] = None,
                      ambivalence: Optional[Mapping[str, np.ndarray]] = None,
                      visual: Optional[np.ndarray] = None) -> Tuple[List[str], np.ndarray]:
    """
    Assemble the stats-modality feature row from whichever parts are available

    Returns:
        (column names, values)
    """
    columns: List[str] = []
    values: List[float] = []

    if text_stats is not None:
        for name, value in text_stats.as_dict().items():
            columns.append(name)
            values.append(value)

    if hesitancy is not None:
        columns.append('hesitancy_valid')
        values.append(float(hesitancy.valid))
        for category, stats in hesitancy.stats.items():
            for statistic in ('min', 'max', 'mean', 'std'):
                columns.append(f"hesitancy_{category}_{statistic}")
                values.append(float(getattr(stats, statistic)))

    if ambivalence is not None:
        for category, distribution in ambivalence.items():
            for pole, probability in zip(POLES, distribution):
                columns.append(f"ambivalence_{category}_{pole}")
                values.append(float(probability))

    if visual is not None:
        pooled = stat_pool(visual)
        for index, name in enumerate(('valid_chunk', 'valid_ratio', 'similarity_mean')):
            for statistic in ('min', 'max', 'mean', 'std'):
                columns.append(f"visual_{name}_{statistic}")
                values.append(float(getattr(pooled, statistic)[index]))

    return columns, np.asarray(values)


def load_sentence_records(path: str) -> List[SentenceRecord]:
    """Read sentence records from JSON lines ``{"text": str, "embedding": [...]}``"""
    records = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    item = json.loads(line)
                    records.append(SentenceRecord(str(item['text']),
                                                  np.asarray(item['embedding'], dtype=float)))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise ParseError(f"{path}: line {line_number}: malformed sentence record "
                                     f"({str(e)})")
    except OSError as e:
        raise ParseError(f"Error reading {path}: {str(e)}")
    return records
