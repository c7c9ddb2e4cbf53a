"""Native probabilistic classifiers used to produce committee candidates.

``MlpNetwork`` is a small numpy network: input Gaussian noise, three blocks of
[Linear -> BatchNorm -> ReLU -> Dropout] and a sigmoid output, trained with
plain mini-batch SGD on binary cross-entropy. Noise and dropout are active only
while training; batch norm switches to running statistics for inference.
"""
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from utils.errors import (DegenerateLabelsError, InsufficientDataError, NonFiniteError,
                          ParameterError, ParseError, ShapeError, UsageError)
from utils.logger import get_logger
from utils.metrics import PROB_EPS

logger = get_logger(__name__)

MODEL_KINDS = ("mlp", "logistic", "external")
BN_EPS = 1e-5


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: Tuple[int, int, int] = (256, 128, 64)
    input_noise_sigma: float = 0.1
    dropout_p: float = 0.3
    use_batch_norm: bool = True
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    bn_momentum: float = 0.9

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.hidden_sizes)
        if len(sizes) != 3 or any(s < 1 for s in sizes):
            raise ParameterError(f"hidden_sizes must be three positive integers, got {sizes}")
        object.__setattr__(self, "hidden_sizes", sizes)
        if self.input_noise_sigma < 0:
            raise ParameterError("input_noise_sigma must be >= 0")
        if not 0 <= self.dropout_p < 1:
            raise ParameterError("dropout_p must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if not 0 <= self.bn_momentum < 1:
            raise ParameterError("bn_momentum must be in [0, 1)")


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    parameters: Dict[str, np.ndarray]
    feature_dim: int
    hidden_sizes: Tuple[int, ...] = ()
    use_batch_norm: bool = False
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ParameterError(f"Unknown model kind '{self.kind}'")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


class MlpNetwork:
    """Three-hidden-layer perceptron with explicit forward / backward passes"""

    def __init__(self, feature_dim: int, hidden_sizes: Tuple[int, ...] = (256, 128, 64),
                 use_batch_norm: bool = True, input_noise_sigma: float = 0.0,
                 dropout_p: float = 0.0, bn_momentum: float = 0.9,
                 rng: Optional[np.random.Generator] = None):
        self.feature_dim = int(feature_dim)
        self.hidden_sizes = tuple(int(s) for s in hidden_sizes)
        self.use_batch_norm = use_batch_norm
        self.input_noise_sigma = input_noise_sigma
        self.dropout_p = dropout_p
        self.bn_momentum = bn_momentum
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._params: Dict[str, np.ndarray] = {}
        self._running: Dict[str, np.ndarray] = {}
        self._init_parameters()

    def _init_parameters(self):
        fan_in = self.feature_dim
        for layer, width in enumerate(self.hidden_sizes):
            # He initialisation for ReLU layers
            self._params[f"W{layer}"] = self.rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, width))
            self._params[f"b{layer}"] = np.zeros(width)
            if self.use_batch_norm:
                self._params[f"gamma{layer}"] = np.ones(width)
                self._params[f"beta{layer}"] = np.zeros(width)
                self._running[f"mean{layer}"] = np.zeros(width)
                self._running[f"var{layer}"] = np.ones(width)
            fan_in = width
        self._params["W_out"] = self.rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, 1))
        self._params["b_out"] = np.zeros(1)

    def params(self) -> Dict[str, np.ndarray]:
        """Trainable arrays by name (live references)"""
        return self._params

    def state(self) -> Dict[str, np.ndarray]:
        """Trainable parameters plus batch-norm running statistics"""
        merged = {name: value.copy() for name, value in self._params.items()}
        merged.update({f"running_{name}": value.copy() for name, value in self._running.items()})
        return merged

    @classmethod
    def from_state(cls, feature_dim: int, hidden_sizes: Tuple[int, ...], use_batch_norm: bool,
                   state: Dict[str, np.ndarray]) -> "MlpNetwork":
        network = cls(feature_dim, hidden_sizes, use_batch_norm)
        for name in list(network._params):
            network._params[name] = np.asarray(state[name], dtype=float).reshape(
                network._params[name].shape)
        for name in list(network._running):
            network._running[name] = np.asarray(state[f"running_{name}"], dtype=float)
        return network

    def _forward(self, X: np.ndarray, training: bool):
        cache = []
        x = X
        if training and self.input_noise_sigma > 0:
            x = x + self.rng.normal(0.0, self.input_noise_sigma, x.shape)

        for layer in range(len(self.hidden_sizes)):
            entry = {'input': x}
            z = x @ self._params[f"W{layer}"] + self._params[f"b{layer}"]
            if self.use_batch_norm:
                if training:
                    mean, var = z.mean(axis=0), z.var(axis=0)
                else:
                    mean, var = self._running[f"mean{layer}"], self._running[f"var{layer}"]
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                x_hat = (z - mean) * inv_std
                h = self._params[f"gamma{layer}"] * x_hat + self._params[f"beta{layer}"]
                entry.update(x_hat=x_hat, inv_std=inv_std, batch_mean=mean, batch_var=var)
            else:
                h = z
            entry['pre_activation'] = h
            a = np.maximum(h, 0.0)
            if training and self.dropout_p > 0:
                mask = (self.rng.random(a.shape) >= self.dropout_p) / (1.0 - self.dropout_p)
                a = a * mask
                entry['dropout_mask'] = mask
            cache.append(entry)
            x = a

        logits = (x @ self._params["W_out"] + self._params["b_out"])[:, 0]
        return logits, x, cache

    def logits(self, X: np.ndarray) -> np.ndarray:
        """Inference-mode logits"""
        logits, _, _ = self._forward(np.asarray(X, dtype=float), training=False)
        return logits

    def loss_and_gradients(self, X: np.ndarray, y: np.ndarray,
                           training: bool = True) -> Tuple[float, Dict[str, np.ndarray]]:
        """
        Mean BCE of one batch and its gradient for every trainable array

        Args:
            X: (n x feature_dim) batch
            y: (n,) binary labels
            training: Use batch statistics, noise and dropout

        Returns:
            (loss, gradients keyed like params())
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n = X.shape[0]
        logits, last, cache = self._forward(X, training)
        loss = _bce_from_logits(logits, y)

        grads: Dict[str, np.ndarray] = {}
        d_logits = ((_sigmoid(logits) - y) / n)[:, None]
        grads["W_out"] = last.T @ d_logits
        grads["b_out"] = d_logits.sum(axis=0)
        dx = d_logits @ self._params["W_out"].T

        for layer in reversed(range(len(self.hidden_sizes))):
            entry = cache[layer]
            if 'dropout_mask' in entry:
                dx = dx * entry['dropout_mask']
            dh = dx * (entry['pre_activation'] > 0)
            if self.use_batch_norm:
                x_hat = entry['x_hat']
                grads[f"gamma{layer}"] = (dh * x_hat).sum(axis=0)
                grads[f"beta{layer}"] = dh.sum(axis=0)
                d_xhat = dh * self._params[f"gamma{layer}"]
                if training:
                    dz = (entry['inv_std'] / n) * (n * d_xhat - d_xhat.sum(axis=0)
                                                   - x_hat * (d_xhat * x_hat).sum(axis=0))
                else:
                    dz = d_xhat * entry['inv_std']
            else:
                dz = dh
            grads[f"W{layer}"] = entry['input'].T @ dz
            grads[f"b{layer}"] = dz.sum(axis=0)
            dx = dz @ self._params[f"W{layer}"].T

        if training and self.use_batch_norm:
            self._last_batch_stats = [(e['batch_mean'], e['batch_var']) for e in cache]
        return loss, grads

    def update_running_stats(self):
        """Fold the statistics of the last training batch into the running averages"""
        if not self.use_batch_norm:
            return
        for layer, (mean, var) in enumerate(getattr(self, '_last_batch_stats', [])):
            m = self.bn_momentum
            self._running[f"mean{layer}"] = m * self._running[f"mean{layer}"] + (1 - m) * mean
            self._running[f"var{layer}"] = m * self._running[f"var{layer}"] + (1 - m) * var

    def sgd_step(self, grads: Dict[str, np.ndarray], learning_rate: float):
        for name, grad in grads.items():
            self._params[name] -= learning_rate * grad


def _check_training_data(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
    if X.shape[0] < 2:
        raise InsufficientDataError(f"Training needs at least 2 rows, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("Training features contain non-finite values")
    if not np.all(np.isin(y, (0, 1))):
        raise DegenerateLabelsError("Training labels must be 0 or 1")
    if np.unique(y).size < 2:
        raise DegenerateLabelsError("Training labels contain a single class")
    return X, y.astype(float)


def _batches(rng: np.random.Generator, n: int, batch_size: int) -> List[np.ndarray]:
    return np.array_split(rng.permutation(n), max(1, n // batch_size))


def train_mlp(X: np.ndarray, y: np.ndarray, cfg: MlpConfig = MlpConfig()) -> TrainedModel:
    """
    Train the MLP with mini-batch SGD on BCE

    Args:
        X: (n x d) features
        y: (n,) binary labels with both classes present
        cfg: Network and optimisation settings

    Returns:
        TrainedModel of kind "mlp" with the per-epoch mean training loss
    """
    X, y = _check_training_data(X, y)
    rng = np.random.default_rng(cfg.seed)
    network = MlpNetwork(X.shape[1], cfg.hidden_sizes, cfg.use_batch_norm,
                         cfg.input_noise_sigma, cfg.dropout_p, cfg.bn_momentum, rng)

    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for batch in _batches(rng, X.shape[0], cfg.batch_size):
            loss, grads = network.loss_and_gradients(X[batch], y[batch], training=True)
            network.sgd_step(grads, cfg.learning_rate)
            network.update_running_stats()
            total += loss * len(batch)
        history.append(total / X.shape[0])
        if not np.isfinite(history[-1]):
            raise NonFiniteError(f"MLP training diverged at epoch {epoch + 1}")

    logger.debug(f"MLP trained: dim={X.shape[1]} n={X.shape[0]} final loss={history[-1]:.6f}")
    return TrainedModel(kind="mlp", parameters=network.state(), feature_dim=X.shape[1],
                        hidden_sizes=cfg.hidden_sizes, use_batch_norm=cfg.use_batch_norm,
                        loss_history=history)


def train_logistic(X: np.ndarray, y: np.ndarray, l2: float = 0.0, epochs: int = 200,
                   lr: float = 0.1, seed: int = 0, batch_size: int = 32) -> TrainedModel:
    """L2-regularised logistic regression by mini-batch SGD from a zero start"""
    if l2 < 0:
        raise ParameterError(f"l2 must be >= 0, got {l2}")
    if epochs < 1 or lr <= 0 or batch_size < 1:
        raise ParameterError("epochs, lr and batch_size must be positive")
    X, y = _check_training_data(X, y)
    rng = np.random.default_rng(seed)
    w = np.zeros(X.shape[1])
    b = 0.0

    history = []
    for _ in range(epochs):
        total = 0.0
        for batch in _batches(rng, X.shape[0], batch_size):
            z = X[batch] @ w + b
            residual = (_sigmoid(z) - y[batch]) / len(batch)
            total += (_bce_from_logits(z, y[batch]) + 0.5 * l2 * float(w @ w)) * len(batch)
            w = w - lr * (X[batch].T @ residual + l2 * w)
            b = b - lr * float(residual.sum())
        history.append(total / X.shape[0])

    if not np.all(np.isfinite(w)) or not np.isfinite(b):
        raise NonFiniteError("Logistic regression diverged")
    return TrainedModel(kind="logistic", parameters={'w': w, 'b': np.array([b])},
                        feature_dim=X.shape[1], loss_history=history)


def predict_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Positive-class probabilities clipped to [1e-7, 1 - 1e-7]"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.feature_dim:
        raise ShapeError(f"Model expects {model.feature_dim} features, got {X.shape[1]}")
    if model.kind == "external":
        raise UsageError("External models have no native predictor; ingest their score files")
    if model.kind == "logistic":
        logits = X @ model.parameters['w'] + float(np.asarray(model.parameters['b']).ravel()[0])
    else:
        network = MlpNetwork.from_state(model.feature_dim, model.hidden_sizes,
                                        model.use_batch_norm, model.parameters)
        logits = network.logits(X)
    return np.clip(_sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)


def save_model(path: str, model: TrainedModel):
    payload = {
        'kind': model.kind,
        'feature_dim': model.feature_dim,
        'hidden_sizes': list(model.hidden_sizes),
        'use_batch_norm': model.use_batch_norm,
        'shapes': {name: list(np.shape(value)) for name, value in model.parameters.items()},
        'parameters': {name: np.asarray(value).ravel().tolist()
                       for name, value in model.parameters.items()},
        'loss_history': list(model.loss_history),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)


def load_model(path: str) -> TrainedModel:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
        parameters = {name: np.asarray(values, dtype=float).reshape(payload['shapes'][name])
                      for name, values in payload['parameters'].items()}
        return TrainedModel(kind=payload['kind'], parameters=parameters,
                            feature_dim=int(payload['feature_dim']),
                            hidden_sizes=tuple(payload.get('hidden_sizes', ())),
                            use_batch_norm=bool(payload.get('use_batch_norm', False)),
                            loss_history=list(payload.get('loss_history', [])))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise ParseError(f"Error reading model {path}: {str(e)}")


def config_from_dict(values: Dict) -> MlpConfig:
    """Build an MlpConfig from a settings dict, ignoring unknown keys"""
    known = {k: v for k, v in values.items() if k in asdict(MlpConfig())}
    if 'hidden_sizes' in known:
        known['hidden_sizes'] = tuple(known['hidden_sizes'])
    return MlpConfig(**known)
