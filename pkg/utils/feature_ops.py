"""Embedding post-processing: normalization, MAD chunk filtering, derivative and
statistical pooling, standard scaling, PCA and temperature softmax."""
import json
import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import softmax
from sklearn.decomposition import PCA
from sklearn.preprocessing import StandardScaler

from utils.data_model import EmbeddingSequence
from utils.errors import (DimensionError, EmptyInputError, InsufficientDataError,
                          NonFiniteError, NumericError, ParameterError, ParseError,
                          ShapeError, UndefinedSimilarityError)
from utils.logger import get_logger

logger = get_logger(__name__)

# Deviations within this band count as zero when the MAD itself is zero
MAD_ZERO_TOLERANCE = 1e-9
DEFAULT_MAD_MULTIPLIER = 50.0
DEFAULT_TEMPERATURE = 10.0


@dataclass(frozen=True)
class MadFilterReport:
    kept: np.ndarray
    scores: np.ndarray
    median: float
    mad: float
    multiplier: float

    @property
    def kept_count(self) -> int:
        return int(np.count_nonzero(self.kept))


@dataclass(frozen=True)
class PooledStats:
    min: np.ndarray
    max: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def as_vector(self) -> np.ndarray:
        """Concatenate as [min | max | mean | std]"""
        return np.concatenate([np.atleast_1d(self.min), np.atleast_1d(self.max),
                               np.atleast_1d(self.mean), np.atleast_1d(self.std)])


@dataclass(frozen=True)
class ScalerModel:
    mean: np.ndarray
    scale: np.ndarray


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what} contains non-finite values")


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """
    Scale a vector (or each row of a matrix) to unit Euclidean norm

    Zero vectors are returned unchanged.
    """
    v = np.asarray(v, dtype=float)
    _check_finite(v, "vector")
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return v / safe


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"Vectors differ in length: {a.shape} vs {b.shape}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 and norm_b == 0:
        raise UndefinedSimilarityError("Cosine similarity of two zero vectors is undefined")
    if norm_a == 0 or norm_b == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def cosine_matrix(rows: np.ndarray, references: np.ndarray, what: str = "row") -> np.ndarray:
    """Cosine similarity of every row against every reference (rows x references)"""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    references = np.atleast_2d(np.asarray(references, dtype=float))
    if rows.shape[1] != references.shape[1]:
        raise ShapeError(f"Dimension mismatch: {rows.shape[1]} vs {references.shape[1]}")
    row_norms = np.linalg.norm(rows, axis=1)
    zero = np.flatnonzero(row_norms == 0)
    if zero.size:
        raise UndefinedSimilarityError(f"{what} {int(zero[0])} has zero norm")
    ref_norms = np.linalg.norm(references, axis=1)
    if np.any(ref_norms == 0):
        raise UndefinedSimilarityError(f"reference {int(np.flatnonzero(ref_norms == 0)[0])} "
                                       f"has zero norm")
    sims = (rows / row_norms[:, None]) @ (references / ref_norms[:, None]).T
    return np.clip(sims, -1.0, 1.0)


def chunk_similarity_scores(chunks: np.ndarray, reference: str = "pairwise") -> np.ndarray:
    """
    Per-chunk stability score used by the MAD filter

    Args:
        chunks: (n x dim) chunk embeddings
        reference: "pairwise" (mean similarity to every other chunk) or
            "mean" (similarity to the mean embedding)
    """
    chunks = np.atleast_2d(np.asarray(chunks, dtype=float))
    n = chunks.shape[0]
    if reference == "pairwise":
        if n == 1:
            cosine_matrix(chunks, chunks, what="chunk")
            return np.ones(1)
        sims = cosine_matrix(chunks, chunks, what="chunk")
        return (sims.sum(axis=1) - np.diag(sims)) / (n - 1)
    if reference == "mean":
        cosine_matrix(chunks, chunks[:1], what="chunk")
        centre = l2_normalize(chunks).mean(axis=0, keepdims=True)
        if np.linalg.norm(centre) == 0:
            raise UndefinedSimilarityError("mean embedding has zero norm")
        return cosine_matrix(chunks, centre, what="chunk")[:, 0]
    raise ParameterError(f"Unknown MAD reference '{reference}' (expected pairwise or mean)")


def mad_filter(seq: EmbeddingSequence, multiplier: float = DEFAULT_MAD_MULTIPLIER,
               reference: str = "pairwise") -> MadFilterReport:
    """
    Flag chunks whose similarity score lies within multiplier x MAD of the median

    When the MAD is zero only chunks at the median (within a 1e-9 band) are kept,
    which keeps every chunk of a perfectly stable video.

    Args:
        seq: Embedding sequence (at least one chunk)
        multiplier: MAD threshold multiplier
        reference: Score definition, see chunk_similarity_scores

    Returns:
        MadFilterReport
    """
    if multiplier <= 0:
        raise ParameterError(f"MAD multiplier must be positive, got {multiplier}")

    scores = chunk_similarity_scores(seq.chunks, reference=reference)
    median = float(np.median(scores))
    deviation = np.abs(scores - median)
    mad = float(np.median(deviation))

    if mad == 0.0:
        kept = deviation <= MAD_ZERO_TOLERANCE
    else:
        kept = deviation <= multiplier * mad

    logger.debug(f"MAD filter {seq.video_id}: median={median:.6f} mad={mad:.6g} "
                 f"kept={int(kept.sum())}/{len(kept)}")
    return MadFilterReport(kept=kept, scores=scores, median=median, mad=mad,
                           multiplier=float(multiplier))


def apply_mad_filter(seq: EmbeddingSequence, report: MadFilterReport) -> EmbeddingSequence:
    """Drop rejected chunks; a report that rejects everything leaves the sequence as is"""
    if not report.kept.any():
        return seq
    return EmbeddingSequence(seq.video_id, seq.modality, seq.chunks[report.kept])


def derivative_pool(seq: EmbeddingSequence) -> np.ndarray:
    """
    Concatenate the mean of the chunks, of their first and of their second differences

    Blocks that need more chunks than available are zero vectors.
    """
    chunks = seq.chunks
    blocks = [chunks.mean(axis=0)]
    for order in (1, 2):
        if chunks.shape[0] > order:
            blocks.append(np.diff(chunks, n=order, axis=0).mean(axis=0))
        else:
            blocks.append(np.zeros(seq.dim))
    return np.concatenate(blocks)


def stat_pool(stream: Union[Sequence[float], np.ndarray]) -> PooledStats:
    """
    Elementwise min / max / mean / population std over a stream

    Args:
        stream: Sequence of scalars or of equal-length vectors

    Returns:
        PooledStats (scalars for a scalar stream)
    """
    values = np.asarray(stream, dtype=float)
    if values.size == 0 or values.shape[0] == 0:
        raise EmptyInputError("Cannot pool an empty stream")
    _check_finite(values, "stream")
    return PooledStats(min=values.min(axis=0), max=values.max(axis=0),
                       mean=values.mean(axis=0), std=values.std(axis=0))


def fit_scaler(rows: np.ndarray) -> ScalerModel:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[0] < 2:
        raise InsufficientDataError(f"Scaler needs at least 2 rows, got {rows.shape[0]}")
    _check_finite(rows, "scaler input")
    scaler = StandardScaler().fit(rows)
    # StandardScaler already maps zero-variance columns to scale 1
    return ScalerModel(mean=scaler.mean_.copy(), scale=scaler.scale_.copy())


def apply_scaler(model: ScalerModel, rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.mean.shape[0]:
        raise ShapeError(f"Scaler expects {model.mean.shape[0]} columns, got {rows.shape[1]}")
    return (rows - model.mean) / model.scale


def inverse_scaler(model: ScalerModel, rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return rows * model.scale + model.mean


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make each component's largest-magnitude entry positive"""
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), pivots])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def fit_pca(rows: np.ndarray, target_dim: int, min_variance: float = 0.99) -> PcaModel:
    """
    Fit an exact PCA and keep k = min(target_dim, variance-k, rank) components

    Args:
        rows: (n x d) fit data, n >= 2
        target_dim: Upper bound on retained components (<= d)
        min_variance: Smallest cumulative explained-variance ratio to retain

    Returns:
        PcaModel
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    n, d = rows.shape
    if n < 2:
        raise InsufficientDataError(f"PCA needs at least 2 rows, got {n}")
    if target_dim < 1 or target_dim > d:
        raise DimensionError(f"target_dim {target_dim} must be in [1, {d}]")
    if not 0 < min_variance <= 1:
        raise ParameterError(f"min_variance must be in (0, 1], got {min_variance}")
    _check_finite(rows, "PCA input")

    pca = PCA(n_components=None, svd_solver="full").fit(rows)
    variance = pca.explained_variance_
    total = float(variance.sum())
    if total <= 0:
        raise NumericError("PCA input has zero total variance")

    ratios = variance / total
    rank = int(np.count_nonzero(ratios > 1e-12))
    cumulative = np.cumsum(ratios)
    k_variance = int(np.searchsorted(cumulative, min_variance - 1e-12) + 1)
    k = max(1, min(target_dim, k_variance, rank))

    components = _fix_signs(pca.components_[:k])
    logger.debug(f"PCA: d={d} n={n} k={k} retained={cumulative[k - 1]:.6f}")
    return PcaModel(mean=pca.mean_.copy(), components=components,
                    explained_variance_ratio=ratios[:k].copy())


def apply_pca(model: PcaModel, rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.mean.shape[0]:
        raise ShapeError(f"PCA expects {model.mean.shape[0]} columns, got {rows.shape[1]}")
    return (rows - model.mean) @ model.components.T


def reconstruct_pca(model: PcaModel, projected: np.ndarray) -> np.ndarray:
    return np.atleast_2d(projected) @ model.components + model.mean


def softmax_temperature(scores: np.ndarray, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Softmax of scores multiplied by the temperature multiplier"""
    if temperature <= 0:
        raise ParameterError(f"Temperature must be positive, got {temperature}")
    scores = np.asarray(scores, dtype=float)
    _check_finite(scores, "scores")
    return softmax(scores * temperature, axis=-1)


def save_model_json(path: str, model: Union[ScalerModel, PcaModel]):
    """Persist a fitted scaler or PCA model as JSON"""
    if isinstance(model, ScalerModel):
        payload = {'kind': 'scaler', 'mean': model.mean.tolist(), 'scale': model.scale.tolist()}
    else:
        payload = {'kind': 'pca', 'mean': model.mean.tolist(),
                   'components': model.components.tolist(),
                   'explained_variance_ratio': model.explained_variance_ratio.tolist()}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)


def _load_payload(path: str, kind: str) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"Error reading model {path}: {str(e)}")
    if payload.get('kind') != kind:
        raise ParseError(f"{path} is not a {kind} model")
    return payload


def load_scaler(path: str) -> ScalerModel:
    payload = _load_payload(path, 'scaler')
    return ScalerModel(mean=np.asarray(payload['mean'], dtype=float),
                       scale=np.asarray(payload['scale'], dtype=float))


def load_pca(path: str) -> PcaModel:
    payload = _load_payload(path, 'pca')
    return PcaModel(mean=np.asarray(payload['mean'], dtype=float),
                    components=np.atleast_2d(np.asarray(payload['components'], dtype=float)),
                    explained_variance_ratio=np.asarray(payload['explained_variance_ratio'],
                                                        dtype=float))
