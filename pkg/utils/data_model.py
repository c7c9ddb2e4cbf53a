"""Shared data types and plain-text file I/O for embeddings, labels and scores.

File formats:
    embedding / matrix CSV  - no header, one chunk (row) per line, ``dim`` floats
    feature table CSV       - header ``id,<feature>...``, one row per video
    manifest JSONL          - ``{"id": str, "split": "train"|"val"|"test", "label": 0|1}``
    score CSV               - header ``id,score``, one row per id
"""
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.errors import (AlignmentError, DuplicateIdError, EmptyInputError, LabelError,
                          NonFiniteError, ParameterError, ParseError, RangeError, ShapeError)
from utils.logger import get_logger

logger = get_logger(__name__)

SPLITS = ("train", "val", "test")


class Modality(Enum):
    """The four feature spaces; values are the ComboMask bits"""

    TEXT = 1
    AUDIO = 2
    VIDEO = 4
    STATS = 8

    @property
    def tag(self) -> str:
        return self.name.lower()

    @classmethod
    def from_tag(cls, tag: str) -> "Modality":
        try:
            return cls[tag.strip().upper()]
        except KeyError:
            raise ParameterError(f"Unknown modality '{tag}' (expected one of "
                                 f"{', '.join(m.tag for m in cls)})")


@dataclass(frozen=True, order=True)
class ComboMask:
    """Non-empty subset of modalities (Text=1, Audio=2, Video=4, Stats=8)"""

    mask: int

    def __post_init__(self):
        if not isinstance(self.mask, (int, np.integer)) or not 1 <= int(self.mask) <= 15:
            raise ParameterError(f"Combination mask must be in [1, 15], got {self.mask!r}")
        object.__setattr__(self, "mask", int(self.mask))

    @property
    def modalities(self) -> List[Modality]:
        return [m for m in Modality if self.mask & m.value]

    @property
    def name(self) -> str:
        return "+".join(m.tag for m in self.modalities)

    def __contains__(self, modality: Modality) -> bool:
        return bool(self.mask & modality.value)

    def __str__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, text: str) -> "ComboMask":
        """Parse ``"text+audio"`` style names or integer masks such as ``"3"``"""
        text = str(text).strip()
        if text.isdigit():
            return cls(int(text))
        parts = [p for p in text.split("+") if p]
        if not parts:
            raise ParameterError(f"Empty modality combination '{text}'")
        mask = 0
        for part in parts:
            mask |= Modality.from_tag(part).value
        return cls(mask)


@dataclass(frozen=True)
class EmbeddingSequence:
    """Ordered per-chunk feature vectors for one video and one modality"""

    video_id: str
    modality: Modality
    chunks: np.ndarray

    def __post_init__(self):
        chunks = np.array(self.chunks, dtype=float)
        if chunks.ndim == 1:
            chunks = chunks.reshape(-1, 1)
        if chunks.ndim != 2:
            raise ShapeError(f"{self.video_id}: chunks must be a 2-D array, got shape {chunks.shape}")
        if chunks.shape[0] < 1:
            raise EmptyInputError(f"{self.video_id}: embedding sequence has no chunks")
        if chunks.shape[1] < 1:
            raise ShapeError(f"{self.video_id}: embedding dimension must be positive")
        if not np.all(np.isfinite(chunks)):
            raise NonFiniteError(f"{self.video_id}: embedding contains non-finite values")
        chunks.setflags(write=False)
        object.__setattr__(self, "chunks", chunks)

    @property
    def chunk_index(self) -> np.ndarray:
        return np.arange(self.chunks.shape[0])

    @property
    def dim(self) -> int:
        return self.chunks.shape[1]

    def __len__(self) -> int:
        return self.chunks.shape[0]


@dataclass(frozen=True)
class SampleSet:
    """Aligned ids, split tags, binary labels and per-model probability scores"""

    ids: Tuple[str, ...]
    splits: Tuple[str, ...]
    labels: np.ndarray
    scores: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        splits = tuple(str(s) for s in self.splits)
        labels = np.asarray(self.labels)

        if len(splits) != len(ids) or labels.shape != (len(ids),):
            raise ShapeError(f"ids ({len(ids)}), splits ({len(splits)}) and labels "
                             f"({labels.shape}) must align")
        duplicates = _duplicates(ids)
        if duplicates:
            raise DuplicateIdError(f"Duplicate ids: {', '.join(duplicates)}")
        bad_splits = sorted({s for s in splits if s not in SPLITS})
        if bad_splits:
            raise LabelError(f"Unknown split tags: {', '.join(bad_splits)}")
        if labels.size and not np.all(np.isin(labels, (0, 1))):
            raise LabelError("Labels must be 0 or 1")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)

        scores = {}
        for name, values in dict(self.scores).items():
            values = np.asarray(values, dtype=float)
            if values.shape != (len(ids),):
                raise ShapeError(f"Scores for '{name}' have shape {values.shape}, "
                                 f"expected ({len(ids)},)")
            outside = np.flatnonzero(~((values >= 0.0) & (values <= 1.0)))
            if outside.size:
                raise RangeError(f"Scores for '{name}' outside [0, 1] at ids: "
                                 f"{', '.join(ids[i] for i in outside[:10])}")
            values.setflags(write=False)
            scores[name] = values

        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "splits", splits)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def model_names(self) -> List[str]:
        return list(self.scores)

    def score(self, name: str) -> np.ndarray:
        try:
            return self.scores[name]
        except KeyError:
            raise AlignmentError(f"No scores for model '{name}'")

    def with_scores(self, extra: Mapping[str, np.ndarray]) -> "SampleSet":
        """Return a copy with additional (or replaced) model scores"""
        merged = dict(self.scores)
        merged.update(extra)
        return SampleSet(self.ids, self.splits, self.labels, merged)

    def subset(self, mask: np.ndarray) -> "SampleSet":
        idx = np.flatnonzero(mask)
        return SampleSet(
            tuple(self.ids[i] for i in idx),
            tuple(self.splits[i] for i in idx),
            self.labels[idx],
            {name: values[idx] for name, values in self.scores.items()},
        )


def _duplicates(values: Sequence[str]) -> List[str]:
    seen, dupes = set(), []
    for value in values:
        if value in seen and value not in dupes:
            dupes.append(value)
        seen.add(value)
    return dupes


def _read_raw_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ParseError(f"File not found: {path}")
    try:
        return pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                           skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{path}: file is empty")
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: malformed row ({str(e).strip()})")


def load_matrix(path: str) -> np.ndarray:
    """
    Load a header-less CSV of floats into an (rows x columns) array

    A first row with no numeric cell is treated as a header and skipped.

    Args:
        path: CSV path

    Returns:
        2-D float array
    """
    frame = _read_raw_csv(path)
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    line_offset = 1

    if len(frame) and numeric.iloc[0].isna().all():
        frame, numeric = frame.iloc[1:], numeric.iloc[1:]
        line_offset = 2

    if frame.empty:
        raise EmptyInputError(f"{path}: no data rows")

    dim = frame.shape[1]
    missing = frame.isna() | (frame == '')
    for position, row_missing in enumerate(missing.to_numpy()):
        if row_missing.any():
            found = int((~row_missing).sum())
            raise ParseError(f"{path}: line {position + line_offset}: expected {dim} columns, "
                             f"found {found}")

    unparsable = numeric.isna().to_numpy() & ~missing.to_numpy()
    if unparsable.any():
        row, col = np.argwhere(unparsable)[0]
        raise ParseError(f"{path}: line {row + line_offset}: column {col + 1} is not a number "
                         f"({frame.iat[row, col]!r})")

    values = numeric.to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        row = int(np.argwhere(~np.isfinite(values))[0][0])
        raise NonFiniteError(f"{path}: line {row + line_offset}: non-finite value")
    return values


def write_matrix(path: str, matrix: np.ndarray):
    """Write a 2-D array as header-less CSV with round-trip float text"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    _ensure_parent(path)
    pd.DataFrame(matrix).to_csv(path, header=False, index=False)


def load_embedding_sequence(path: str, modality: Modality = Modality.VIDEO,
                            video_id: Optional[str] = None) -> EmbeddingSequence:
    """
    Load one video's per-chunk embeddings

    Args:
        path: Embedding CSV (no header, one chunk per row)
        modality: Modality the embeddings belong to
        video_id: Id of the video; defaults to the file stem

    Returns:
        EmbeddingSequence with validated dimensions
    """
    chunks = load_matrix(path)
    return EmbeddingSequence(video_id or Path(path).stem, modality, chunks)


def write_embedding_sequence(path: str, sequence: EmbeddingSequence):
    write_matrix(path, sequence.chunks)


def load_feature_table(path: str) -> Tuple[List[str], List[str], np.ndarray]:
    """
    Load a feature table with an ``id`` column followed by numeric features

    Returns:
        (ids, feature column names, feature matrix)
    """
    if not os.path.exists(path):
        raise ParseError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={'id': str})
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{path}: file is empty")
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: malformed row ({str(e).strip()})")

    if 'id' not in frame.columns:
        raise ParseError(f"{path}: missing 'id' column")
    if frame.empty:
        raise EmptyInputError(f"{path}: no data rows")

    ids = frame['id'].astype(str).tolist()
    duplicates = _duplicates(ids)
    if duplicates:
        raise DuplicateIdError(f"{path}: duplicate ids: {', '.join(duplicates)}")

    features = frame.drop(columns=['id'])
    numeric = features.apply(pd.to_numeric, errors='coerce')
    if numeric.isna().to_numpy().any():
        row = int(np.argwhere(numeric.isna().to_numpy())[0][0])
        raise ParseError(f"{path}: line {row + 2}: non-numeric feature value")
    return ids, [str(c) for c in features.columns], numeric.to_numpy(dtype=float)


def write_feature_table(path: str, ids: Sequence[str], columns: Sequence[str],
                        matrix: np.ndarray):
    frame = pd.DataFrame(np.asarray(matrix, dtype=float), columns=list(columns))
    frame.insert(0, 'id', list(ids))
    _ensure_parent(path)
    frame.to_csv(path, index=False)


def load_manifest(path: str) -> SampleSet:
    """
    Load a JSON-lines manifest into a SampleSet without scores

    Args:
        path: Manifest JSONL path

    Returns:
        SampleSet in manifest order
    """
    if not os.path.exists(path):
        raise ParseError(f"Manifest not found: {path}")

    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: line {line_number}: invalid JSON ({e.msg})")
            if not isinstance(record, dict) or not {'id', 'split', 'label'} <= set(record):
                raise ParseError(f"{path}: line {line_number}: expected keys id, split, label")
            label = record['label']
            if type(label) is not int or label not in (0, 1):
                raise LabelError(f"{path}: line {line_number}: label must be 0 or 1, got {label!r}")
            if record['split'] not in SPLITS:
                raise LabelError(f"{path}: line {line_number}: unknown split {record['split']!r}")
            records.append(record)

    if not records:
        raise EmptyInputError(f"{path}: manifest has no records")

    frame = pd.DataFrame.from_records(records, columns=['id', 'split', 'label'])
    frame['id'] = frame['id'].astype(str)
    duplicates = _duplicates(frame['id'].tolist())
    if duplicates:
        raise DuplicateIdError(f"{path}: duplicate ids: {', '.join(duplicates)}")

    return SampleSet(tuple(frame['id']), tuple(frame['split']),
                     frame['label'].to_numpy(dtype=np.int64))


def load_scores(path: str, ids: Sequence[str]) -> np.ndarray:
    """
    Load an ``id,score`` CSV and align it to ``ids`` by joining on id

    Args:
        path: Score CSV path
        ids: Target id ordering

    Returns:
        Scores in ``ids`` order
    """
    if not os.path.exists(path):
        raise ParseError(f"Score file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={'id': str})
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{path}: file is empty")
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: malformed row ({str(e).strip()})")

    if list(frame.columns[:2]) != ['id', 'score']:
        raise ParseError(f"{path}: expected header 'id,score'")

    duplicates = _duplicates(frame['id'].astype(str).tolist())
    if duplicates:
        raise DuplicateIdError(f"{path}: duplicate ids: {', '.join(duplicates)}")

    values = pd.to_numeric(frame['score'], errors='coerce')
    for position, value in enumerate(values):
        if np.isnan(value):
            raise ParseError(f"{path}: row {position + 1} (line {position + 2}): "
                             f"score is not a number")
        if not 0.0 <= value <= 1.0:
            raise RangeError(f"{path}: row {position + 1} (line {position + 2}): "
                             f"score {value} outside [0, 1]")

    series = pd.Series(values.to_numpy(dtype=float), index=frame['id'].astype(str))
    missing = [i for i in ids if i not in series.index]
    if missing:
        raise AlignmentError(f"{path}: missing ids: {', '.join(missing)}")
    extra = len(series) - len(ids)
    if extra > 0:
        logger.warning(f"{path}: ignoring {extra} ids not present in the manifest")
    return series.loc[list(ids)].to_numpy(dtype=float)


def load_sample_set(manifest: str, score_files: Sequence[str]) -> SampleSet:
    """
    Load a manifest and join each score file onto it by id

    Args:
        manifest: Manifest JSONL path
        score_files: Score CSV paths; each file's stem names the model

    Returns:
        Aligned SampleSet
    """
    samples = load_manifest(manifest)
    scores: Dict[str, np.ndarray] = {}
    for path in score_files:
        name = Path(path).stem
        if name in scores:
            raise DuplicateIdError(f"Two score files share the model name '{name}'")
        scores[name] = load_scores(path, samples.ids)
    logger.debug(f"Loaded {len(samples)} samples with {len(scores)} score files")
    return samples.with_scores(scores)


def write_manifest(path: str, samples: SampleSet):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        for id_, split, label in zip(samples.ids, samples.splits, samples.labels):
            f.write(json.dumps({'id': id_, 'split': split, 'label': int(label)}) + "\n")


def write_scores(path: str, ids: Sequence[str], scores: np.ndarray):
    _ensure_parent(path)
    pd.DataFrame({'id': list(ids), 'score': np.asarray(scores, dtype=float)}).to_csv(
        path, index=False)


def write_sample_set(samples: SampleSet, manifest_path: str, scores_dir: str) -> List[str]:
    """Write the manifest plus one ``<model>.csv`` per score vector; returns score paths"""
    write_manifest(manifest_path, samples)
    paths = []
    for name, values in samples.scores.items():
        path = os.path.join(scores_dir, f"{name}.csv")
        write_scores(path, samples.ids, values)
        paths.append(path)
    return paths


def split_view(samples: SampleSet, split: str) -> SampleSet:
    """
    Restrict a SampleSet to one split, preserving order

    Args:
        samples: Source samples
        split: One of train, val, test

    Returns:
        SampleSet (possibly empty)
    """
    if split not in SPLITS:
        raise ParameterError(f"Unknown split '{split}' (expected one of {', '.join(SPLITS)})")
    mask = np.array([s == split for s in samples.splits], dtype=bool)
    return samples.subset(mask)


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
