"""Small classifiers with closed-form loss gradients.

Parameters are flat float64 vectors. ``Classifier.layout`` describes how the
vector is cut into weight matrices and bias vectors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DivergenceError

ARCHS = ("softmax_linear", "mlp1")


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    feature_dim: int
    num_classes: int
    hidden_units: int = 0
    init_seed: int = 0
    init_scale: float = 1.0

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ConfigError("feature_dim must be >= 1 and num_classes >= 2")
        if self.arch == "mlp1" and self.hidden_units < 1:
            raise ConfigError("mlp1 requires hidden_units >= 1")
        if not self.init_scale >= 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")


@dataclass(frozen=True)
class LogitAdjustment:
    """Additive logit shift ``temperature * log(prior)`` used inside the loss."""

    enabled: bool = False
    class_prior: tuple[float, ...] = ()
    temperature: float = 1.0

    @classmethod
    def from_labels(cls, labels: np.ndarray, num_classes: int, temperature: float = 1.0) -> LogitAdjustment:
        # one pseudo-count floor keeps log(prior) finite for absent classes
        counts = np.maximum(np.bincount(labels, minlength=num_classes).astype(float), 1.0)
        return cls(True, tuple((counts / counts.sum()).tolist()), temperature)

    def offsets(self, num_classes: int) -> np.ndarray | None:
        if not self.enabled:
            return None
        prior = np.asarray(self.class_prior, dtype=np.float64)
        if prior.shape != (num_classes,) or np.any(prior <= 0):
            raise ConfigError("class_prior must hold one positive entry per class")
        return self.temperature * np.log(prior / prior.sum())


NO_ADJUSTMENT = LogitAdjustment()


def check_finite(theta: np.ndarray, what: str = "parameters") -> np.ndarray:
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(f"non-finite {what}")
    return theta


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Classifier:
    """Stateless model: every method takes the parameter vector explicitly."""

    def __init__(self, spec: ModelSpec):
        spec.validate()
        self.spec = spec
        d, c, h = spec.feature_dim, spec.num_classes, spec.hidden_units
        if spec.arch == "softmax_linear":
            self.layout = (("W", (c, d)), ("b", (c,)))
        else:
            self.layout = (("W1", (h, d)), ("b1", (h,)), ("W2", (c, h)), ("b2", (c,)))
        self.size = sum(int(np.prod(shape)) for _, shape in self.layout)

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise DataError(f"parameter vector has shape {theta.shape}, expected ({self.size},)")
        out, offset = {}, 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            out[name] = theta[offset : offset + n].reshape(shape)
            offset += n
        return out

    def init(self) -> np.ndarray:
        """Weights ~ N(0, init_scale^2 / fan_in), biases zero."""
        rng = np.random.default_rng(self.spec.init_seed)
        parts = []
        for name, shape in self.layout:
            if len(shape) == 2:
                std = self.spec.init_scale / np.sqrt(shape[1])
                parts.append((rng.standard_normal(shape) * std).ravel())
            else:
                parts.append(np.zeros(shape))
        return np.concatenate(parts)

    def _check_features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.feature_dim:
            raise DataError(f"features have shape {x.shape}, expected (n, {self.spec.feature_dim})")
        return x

    def forward(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = self._check_features(x)
        p = self.unpack(theta)
        if self.spec.arch == "softmax_linear":
            return x @ p["W"].T + p["b"]
        hidden = np.tanh(x @ p["W1"].T + p["b1"])
        return hidden @ p["W2"].T + p["b2"]

    def adjust_logits(self, logits: np.ndarray, adj: LogitAdjustment | None) -> np.ndarray:
        shift = (adj or NO_ADJUSTMENT).offsets(self.spec.num_classes)
        return logits if shift is None else logits + shift

    def loss(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray, adj: LogitAdjustment | None = None) -> float:
        """Mean cross-entropy, optionally on logit-adjusted scores."""
        z = self.adjust_logits(self.forward(theta, x), adj)
        logp = _log_softmax(z)
        return float(-logp[np.arange(len(y)), y].mean())

    def loss_and_grad(
        self, theta: np.ndarray, x: np.ndarray, y: np.ndarray, adj: LogitAdjustment | None = None
    ) -> tuple[float, np.ndarray]:
        x = self._check_features(x)
        y = np.asarray(y)
        n = len(y)
        p = self.unpack(theta)
        rows = np.arange(n)
        if self.spec.arch == "softmax_linear":
            hidden = x
            logits = x @ p["W"].T + p["b"]
        else:
            hidden = np.tanh(x @ p["W1"].T + p["b1"])
            logits = hidden @ p["W2"].T + p["b2"]
        logp = _log_softmax(self.adjust_logits(logits, adj))
        loss = float(-logp[rows, y].mean())

        dz = np.exp(logp)
        dz[rows, y] -= 1.0
        dz /= n
        if self.spec.arch == "softmax_linear":
            return loss, np.concatenate([(dz.T @ x).ravel(), dz.sum(axis=0)])
        dh = (dz @ p["W2"]) * (1.0 - hidden**2)
        return loss, np.concatenate(
            [(dh.T @ x).ravel(), dh.sum(axis=0), (dz.T @ hidden).ravel(), dz.sum(axis=0)]
        )

    def grad(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray, adj: LogitAdjustment | None = None) -> np.ndarray:
        return self.loss_and_grad(theta, x, y, adj)[1]

    def predict(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(theta, x), axis=1)


def sgd_step(
    model: Classifier,
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    lr: float,
    adj: LogitAdjustment | None = None,
) -> np.ndarray:
    """One plain gradient-descent step."""
    if lr == 0:
        return theta.copy()
    return check_finite(theta - lr * model.grad(theta, x, y, adj))


def save_params(theta: np.ndarray, path: str | Path) -> None:
    """Write an 8-byte little-endian count followed by little-endian float64 values."""
    theta = np.ascontiguousarray(theta, dtype="<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(struct.pack("<Q", theta.size) + theta.tobytes())


def load_params(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated checkpoint header")
    (count,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * count:
        raise DataError(f"{path}: header says {count} values but payload has {(len(raw) - 8) / 8:g}")
    return np.frombuffer(raw, dtype="<f8", offset=8).astype(np.float64)
