"""Search-distance schedules, aggregation weights and named strategy presets.

FedAvg, FedISM and both FedISM+ variants differ only in three choices: the
local optimizer, the rho schedule and the aggregation rule. Presets are
plain ``StrategyConfig`` values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

LOCAL_OPTIMIZERS = ("gd", "salt")
SCHEDULE_KINDS = ("constant", "progressive")
AGG_KINDS = ("size", "sharpness_q", "perturbed_loss_q")

DEFAULT_RHO_MAX = 0.1
DEFAULT_TAU = 0.5
DEFAULT_Q = 2.0
DEFAULT_BETA = 0.5
DEFAULT_WEIGHT_FLOOR = 1e-8


@dataclass(frozen=True)
class RhoSchedule:
    kind: str = "constant"
    rho_fixed: float = 0.0
    rho_max: float = DEFAULT_RHO_MAX
    tau: float = DEFAULT_TAU

    def validate(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if not self.rho_fixed >= 0 or not self.rho_max >= 0:
            raise ConfigError("rho values must be >= 0")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")


def rho_at(schedule: RhoSchedule, t: int, total_rounds: int) -> float:
    """Search distance for round ``t`` (1-based) out of ``total_rounds``."""
    if not 1 <= t <= total_rounds:
        raise ConfigError(f"round {t} outside [1, {total_rounds}]")
    if schedule.kind == "constant":
        return schedule.rho_fixed
    return schedule.rho_max * (t / total_rounds) ** schedule.tau


@dataclass(frozen=True)
class AggRule:
    kind: str = "size"
    q: float = DEFAULT_Q
    weight_floor: float = DEFAULT_WEIGHT_FLOOR

    def validate(self) -> None:
        if self.kind not in AGG_KINDS:
            raise ConfigError(f"unknown aggregation rule {self.kind!r}; expected one of {AGG_KINDS}")
        if not (self.q > 0 and np.isfinite(self.q)):
            raise ConfigError(f"q must be finite and > 0, got {self.q}")
        if not self.weight_floor >= 0:
            raise ConfigError(f"weight_floor must be >= 0, got {self.weight_floor}")


@dataclass(frozen=True)
class ClientStats:
    """What a client reports to the server after local training."""

    n: int
    base_loss: float
    sharpness: float
    perturbed_loss: float


def _uniform(k: int) -> np.ndarray:
    return np.full(k, 1.0 / k)


def weights_raw(rule: AggRule, stats: list[ClientStats]) -> np.ndarray:
    """Per-round aggregation weights before smoothing."""
    rule.validate()
    k = len(stats)
    if k == 0:
        raise ConfigError("no client statistics supplied")
    if rule.kind == "size":
        n = np.array([s.n for s in stats], dtype=np.float64)
        if n.sum() <= 0:
            log.warning("all client sizes are zero; using uniform weights")
            return _uniform(k)
        return n / n.sum()

    attr = "sharpness" if rule.kind == "sharpness_q" else "perturbed_loss"
    values = np.array([getattr(s, attr) for s in stats], dtype=np.float64)
    values = np.maximum(values, rule.weight_floor)
    if not np.all(np.isfinite(values)) or not np.any(values > 0):
        log.warning("%s weights have no positive finite mass; using uniform weights", attr)
        return _uniform(k)
    # normalise in log space: x^q / sum(x^q) without overflow for large q
    with np.errstate(divide="ignore"):
        logw = rule.q * np.log(values)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def smooth(w_raw: np.ndarray, w_prev: np.ndarray | None, beta: float, t: int) -> np.ndarray:
    """Moving average of aggregation weights; round 1 takes the raw weights."""
    if not 0 < beta <= 1:
        raise ConfigError(f"beta must lie in (0, 1], got {beta}")
    w_raw = np.asarray(w_raw, dtype=np.float64)
    if t == 1 or w_prev is None:
        return w_raw.copy()
    w_prev = np.asarray(w_prev, dtype=np.float64)
    if w_prev.shape != w_raw.shape:
        raise ConfigError(f"weight vectors differ in length: {w_raw.shape} vs {w_prev.shape}")
    # written as a correction to w_prev so identical inputs stay bit-identical
    return w_prev + beta * (w_raw - w_prev)


def aggregate(thetas: list[np.ndarray], w: np.ndarray) -> np.ndarray:
    """Weighted sum of client parameter vectors, accumulated in client order."""
    if len(thetas) != len(w) or not thetas:
        raise ConfigError(f"{len(thetas)} models but {len(w)} weights")
    shape = thetas[0].shape
    for k, theta in enumerate(thetas):
        if theta.shape != shape:
            raise ConfigError(f"client {k} parameters have shape {theta.shape}, expected {shape}")
    out = w[0] * thetas[0]
    for wk, theta in zip(w[1:], thetas[1:]):
        out = out + wk * theta
    return out


@dataclass(frozen=True)
class StrategyConfig:
    local_optimizer: str = "gd"
    schedule: RhoSchedule = field(default_factory=RhoSchedule)
    agg: AggRule = field(default_factory=AggRule)
    beta: float = 1.0
    gsam_alpha: float = 0.0

    def validate(self) -> None:
        if self.local_optimizer not in LOCAL_OPTIMIZERS:
            raise ConfigError(
                f"unknown local_optimizer {self.local_optimizer!r}; expected one of {LOCAL_OPTIMIZERS}"
            )
        self.schedule.validate()
        self.agg.validate()
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.gsam_alpha >= 0:
            raise ConfigError(f"gsam_alpha must be >= 0, got {self.gsam_alpha}")

    def local_rho(self, rho_t: float) -> float:
        """Search distance used inside local steps (gd never perturbs)."""
        return rho_t if self.local_optimizer == "salt" else 0.0


PRESETS = (
    "fedavg",
    "fedism",
    "fedism_plus_s",
    "fedism_plus_l",
    "fairopt_loss",
    "salt_only",
    "saga_s_only",
    "saga_l_only",
)

# parameters a preset accepts as overrides
PRESET_PARAMS = ("rho_max", "tau", "rho_fixed", "q", "beta", "weight_floor", "gsam_alpha")


def preset(
    name: str,
    *,
    rho_max: float = DEFAULT_RHO_MAX,
    tau: float = DEFAULT_TAU,
    rho_fixed: float = DEFAULT_RHO_MAX,
    q: float = DEFAULT_Q,
    beta: float = DEFAULT_BETA,
    weight_floor: float = DEFAULT_WEIGHT_FLOOR,
    gsam_alpha: float = 0.0,
) -> StrategyConfig:
    """Resolve a named strategy.

    ``fedavg`` ignores the weighting parameters: size weights are fixed, so
    smoothing is a no-op and beta is pinned to 1.
    """
    progressive = RhoSchedule("progressive", 0.0, rho_max, tau)
    zero = RhoSchedule("constant", 0.0, rho_max, tau)
    size = AggRule("size", q, weight_floor)
    sharp = AggRule("sharpness_q", q, weight_floor)
    ploss = AggRule("perturbed_loss_q", q, weight_floor)
    table = {
        "fedavg": StrategyConfig("gd", zero, size, 1.0, 0.0),
        "fedism": StrategyConfig("salt", RhoSchedule("constant", rho_fixed, rho_max, tau), sharp, beta, gsam_alpha),
        "fedism_plus_s": StrategyConfig("salt", progressive, sharp, beta, gsam_alpha),
        "fedism_plus_l": StrategyConfig("salt", progressive, ploss, beta, gsam_alpha),
        "fairopt_loss": StrategyConfig("gd", zero, ploss, beta, 0.0),
        "salt_only": StrategyConfig("salt", progressive, size, beta, gsam_alpha),
        "saga_s_only": StrategyConfig("gd", progressive, sharp, beta, 0.0),
        "saga_l_only": StrategyConfig("gd", progressive, ploss, beta, 0.0),
    }
    if name not in table:
        raise ConfigError(f"unknown strategy preset {name!r}; expected one of {PRESETS}")
    cfg = table[name]
    cfg.validate()
    return cfg


def strategy_to_dict(cfg: StrategyConfig) -> dict:
    return {
        "local_optimizer": cfg.local_optimizer,
        "schedule": {f.name: getattr(cfg.schedule, f.name) for f in fields(RhoSchedule)},
        "agg": {f.name: getattr(cfg.agg, f.name) for f in fields(AggRule)},
        "beta": cfg.beta,
        "gsam_alpha": cfg.gsam_alpha,
    }
