"""Per-second acoustic statistics computed from mono PCM audio.

Spectral features come from librosa on a non-centred Hann STFT; pitch uses a YIN
estimator with explicit voicing so unvoiced frames can be excluded.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Sequence, Tuple

import librosa
import numpy as np
import pandas as pd
from scipy.io import wavfile
from scipy.signal import decimate

from utils.errors import EmptyInputError, InsufficientDataError, ParameterError, ParseError
from utils.feature_ops import PooledStats, stat_pool
from utils.logger import get_logger

logger = get_logger(__name__)

MIN_CHUNK_SAMPLES = 256
PARTIAL_CHUNK_SECONDS = 0.25

CSV_COLUMNS = ['chunk', 'rms', 'centroid', 'bandwidth', 'rolloff', 'zcr',
               'silence_ratio', 'pitch_mean', 'pitch_std']


@dataclass(frozen=True)
class AudioConfig:
    n_fft: int = 2048
    hop_length: int = 512
    rolloff_percent: float = 0.85
    silence_db: float = -30.0
    silence_frame_seconds: float = 0.010
    yin_threshold: float = 0.1
    fmin: float = 65.0
    fmax: float = 2093.0
    yin_frame_length: int = 2048

    def __post_init__(self):
        if self.n_fft < 2 or self.hop_length < 1:
            raise ParameterError("n_fft must be >= 2 and hop_length >= 1")
        if not 0 < self.rolloff_percent < 1:
            raise ParameterError(f"rolloff_percent must be in (0, 1), got {self.rolloff_percent}")
        if not 0 < self.fmin < self.fmax:
            raise ParameterError(f"Pitch search range must satisfy 0 < fmin < fmax")
        if not 0 < self.yin_threshold < 1:
            raise ParameterError(f"yin_threshold must be in (0, 1), got {self.yin_threshold}")


@dataclass(frozen=True)
class AudioChunkFeatures:
    rms: float
    spectral_centroid: float
    spectral_bandwidth: float
    spectral_rolloff: float
    zero_crossing_rate: float
    silence_ratio: float
    pitch_mean: float
    pitch_std: float


def load_wav(path: str, decimation: int = 1) -> Tuple[np.ndarray, int]:
    """
    Read a 16-bit PCM WAV file as mono floats in [-1, 1]

    Args:
        path: WAV file path
        decimation: Optional integer down-sampling factor

    Returns:
        (samples, sample_rate)
    """
    try:
        sample_rate, data = wavfile.read(path)
    except (OSError, ValueError) as e:
        raise ParseError(f"Error reading WAV file {path}: {str(e)}")

    if data.dtype != np.int16:
        raise ParseError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    samples = data.astype(np.float64) / 32768.0
    if samples.ndim == 2:
        # Stereo (or multichannel) is downmixed by averaging
        samples = samples.mean(axis=1)

    if decimation > 1:
        samples = decimate(samples, decimation, zero_phase=True)
        sample_rate = sample_rate // decimation
    elif decimation < 1:
        raise ParameterError(f"Decimation factor must be >= 1, got {decimation}")

    logger.debug(f"Loaded {path}: {len(samples)} samples at {sample_rate} Hz")
    return samples, int(sample_rate)


def chunk_audio(samples: np.ndarray, sample_rate: int) -> List[np.ndarray]:
    """
    Split a signal into consecutive one-second windows

    A trailing partial window is kept when it lasts at least 0.25 s.
    """
    if sample_rate <= 0:
        raise ParameterError(f"Sample rate must be positive, got {sample_rate}")
    samples = np.asarray(samples, dtype=float)
    chunks = [samples[start:start + sample_rate]
              for start in range(0, len(samples), sample_rate)]
    if chunks and len(chunks[-1]) < sample_rate and \
            len(chunks[-1]) < PARTIAL_CHUNK_SECONDS * sample_rate:
        chunks.pop()
    return chunks


def _pad_to(signal: np.ndarray, length: int) -> np.ndarray:
    if len(signal) >= length:
        return signal
    return np.pad(signal, (0, length - len(signal)))


def yin_pitch(chunk: np.ndarray, sample_rate: int,
              config: AudioConfig = AudioConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Frame-wise YIN fundamental frequency with voicing decisions

    A frame is voiced when its cumulative mean normalized difference dips below
    the threshold inside the lag search range; the period is the local minimum
    following the first dip, refined by parabolic interpolation.

    Args:
        chunk: Mono samples
        sample_rate: Sampling rate in Hz
        config: Frame length, threshold and search range

    Returns:
        (f0 per frame in Hz, 0 for unvoiced frames; voiced flags)
    """
    frame_length = config.yin_frame_length
    min_lag = max(2, int(np.floor(sample_rate / config.fmax)))
    max_lag = min(int(np.ceil(sample_rate / config.fmin)), frame_length // 2)
    if min_lag >= max_lag:
        raise ParameterError("Pitch search range is empty for this sample rate")
    window = frame_length - max_lag

    signal = _pad_to(np.asarray(chunk, dtype=float), frame_length)
    frames = librosa.util.frame(signal, frame_length=frame_length,
                                hop_length=config.hop_length).T

    # Difference function d(tau) = e(0) + e(tau) - 2 r(tau) over a fixed window
    n_fft = int(2 ** np.ceil(np.log2(frame_length + window)))
    spectrum_head = np.fft.rfft(frames[:, :window], n=n_fft)
    spectrum_full = np.fft.rfft(frames, n=n_fft)
    acf = np.fft.irfft(np.conj(spectrum_head) * spectrum_full, n=n_fft)[:, :max_lag + 1]

    energy = np.concatenate([np.zeros((frames.shape[0], 1)),
                             np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    energy_tau = energy[:, lags + window] - energy[:, lags]
    difference = np.maximum(energy_tau[:, :1] + energy_tau - 2.0 * acf, 0.0)

    cumulative = np.cumsum(difference[:, 1:], axis=1)
    cmnd = np.ones_like(difference)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = difference[:, 1:] * lags[1:] / cumulative
    cmnd[:, 1:] = np.where(cumulative > 0, ratio, 1.0)

    f0 = np.zeros(frames.shape[0])
    voiced = np.zeros(frames.shape[0], dtype=bool)
    for index, curve in enumerate(cmnd):
        below = np.flatnonzero(curve[min_lag:max_lag] < config.yin_threshold)
        if below.size == 0:
            continue
        tau = min_lag + int(below[0])
        while tau + 1 < max_lag and curve[tau + 1] < curve[tau]:
            tau += 1
        period = float(tau)
        if 0 < tau < max_lag:
            left, centre, right = curve[tau - 1], curve[tau], curve[tau + 1]
            denominator = left - 2.0 * centre + right
            if denominator > 0:
                period += 0.5 * (left - right) / denominator
        f0[index] = sample_rate / period
        voiced[index] = True
    return f0, voiced


def compute_chunk_features(chunk: np.ndarray, sample_rate: int,
                           config: AudioConfig = AudioConfig()) -> AudioChunkFeatures:
    """
    Compute the acoustic statistics of one chunk

    Args:
        chunk: Mono samples in [-1, 1] (at least 256)
        sample_rate: Sampling rate in Hz
        config: Frame, rolloff, silence and pitch parameters

    Returns:
        AudioChunkFeatures
    """
    chunk = np.asarray(chunk, dtype=float)
    if len(chunk) < MIN_CHUNK_SAMPLES:
        raise InsufficientDataError(f"Chunk has {len(chunk)} samples, "
                                    f"need at least {MIN_CHUNK_SAMPLES}")

    rms = float(np.sqrt(np.mean(chunk ** 2)))
    crossings = librosa.zero_crossings(chunk, threshold=0.0, pad=False, zero_pos=True)
    zcr = float(np.count_nonzero(crossings) / (len(chunk) - 1))

    padded = _pad_to(chunk, config.n_fft)
    magnitude = np.abs(librosa.stft(padded, n_fft=config.n_fft, hop_length=config.hop_length,
                                    window='hann', center=False))
    centroid = librosa.feature.spectral_centroid(S=magnitude, sr=sample_rate,
                                                 n_fft=config.n_fft)[0]
    bandwidth = librosa.feature.spectral_bandwidth(S=magnitude, sr=sample_rate,
                                                   n_fft=config.n_fft, centroid=centroid[None, :])[0]
    rolloff = librosa.feature.spectral_rolloff(S=magnitude, sr=sample_rate, n_fft=config.n_fft,
                                               roll_percent=config.rolloff_percent)[0]

    silence_frame = max(1, int(round(config.silence_frame_seconds * sample_rate)))
    frame_rms = librosa.feature.rms(y=_pad_to(chunk, silence_frame), frame_length=silence_frame,
                                    hop_length=silence_frame, center=False)[0]
    threshold = 10.0 ** (config.silence_db / 20.0)
    silence_ratio = float(np.mean(frame_rms < threshold))

    f0, voiced = yin_pitch(chunk, sample_rate, config)
    if voiced.any():
        pitch_mean = float(f0[voiced].mean())
        pitch_std = float(f0[voiced].std())
    else:
        pitch_mean = pitch_std = 0.0

    return AudioChunkFeatures(
        rms=rms,
        spectral_centroid=float(np.mean(centroid)),
        spectral_bandwidth=float(np.mean(bandwidth)),
        spectral_rolloff=float(np.mean(rolloff)),
        zero_crossing_rate=zcr,
        silence_ratio=silence_ratio,
        pitch_mean=pitch_mean,
        pitch_std=pitch_std,
    )


def compute_signal_features(samples: np.ndarray, sample_rate: int,
                            config: AudioConfig = AudioConfig(),
                            threads: int = 1) -> List[AudioChunkFeatures]:
    """Chunk a signal and compute features per chunk, preserving chunk order"""
    chunks = [c for c in chunk_audio(samples, sample_rate) if len(c) >= MIN_CHUNK_SAMPLES]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda c: compute_chunk_features(c, sample_rate, config), chunks))
    return [compute_chunk_features(c, sample_rate, config) for c in chunks]


def video_audio_stats(features: Sequence[AudioChunkFeatures]) -> Dict[str, PooledStats]:
    """Pool every per-chunk field to min / max / mean / std"""
    if not features:
        raise EmptyInputError("No audio chunks to pool")
    return {f.name: stat_pool([getattr(chunk, f.name) for chunk in features])
            for f in fields(AudioChunkFeatures)}


def pooled_audio_vector(pooled: Dict[str, PooledStats]) -> Tuple[List[str], np.ndarray]:
    """Flatten pooled audio stats to (column names, values)"""
    columns, values = [], []
    for name, stats in pooled.items():
        for statistic in ('min', 'max', 'mean', 'std'):
            columns.append(f"audio_{name}_{statistic}")
            values.append(float(getattr(stats, statistic)))
    return columns, np.asarray(values)


def audio_stats_table(features: Sequence[AudioChunkFeatures]) -> pd.DataFrame:
    """Per-chunk features with the CLI column names"""
    rows = []
    for index, chunk in enumerate(features):
        values = asdict(chunk)
        rows.append({
            'chunk': index,
            'rms': values['rms'],
            'centroid': values['spectral_centroid'],
            'bandwidth': values['spectral_bandwidth'],
            'rolloff': values['spectral_rolloff'],
            'zcr': values['zero_crossing_rate'],
            'silence_ratio': values['silence_ratio'],
            'pitch_mean': values['pitch_mean'],
            'pitch_std': values['pitch_std'],
        })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def read_audio_stats_table(path: str) -> List[AudioChunkFeatures]:
    """Read a per-chunk audio stats CSV written by audio_stats_table"""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Error reading audio stats {path}: {str(e)}")
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {', '.join(missing)}")
    return [AudioChunkFeatures(rms=row.rms, spectral_centroid=row.centroid,
                               spectral_bandwidth=row.bandwidth, spectral_rolloff=row.rolloff,
                               zero_crossing_rate=row.zcr, silence_ratio=row.silence_ratio,
                               pitch_mean=row.pitch_mean, pitch_std=row.pitch_std)
            for row in frame.itertuples(index=False)]
