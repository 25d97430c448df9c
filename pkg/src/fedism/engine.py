"""Round loop: broadcast, local training, assessment, weighting, aggregation."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .evaluation import EvalReport, evaluate
from .model import Classifier, LogitAdjustment, check_finite, sgd_step
from .sharpness import StateAssessment, client_assessment, salt_step
from .strategy import ClientStats, StrategyConfig, aggregate, rho_at, smooth, weights_raw
from .synthdata import ClientDataset, Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FederationConfig:
    rounds: int
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    eval_every: int = 1
    master_seed: int = 0
    logit_adjustment: bool = True
    temperature: float = 1.0

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        self.strategy.validate()


@dataclass(frozen=True)
class RoundRecord:
    t: int
    rho: float
    client_ids: tuple[int, ...]
    assessments: tuple[StateAssessment, ...]
    sizes: tuple[int, ...]
    w_raw: tuple[float, ...]
    w_smooth: tuple[float, ...]
    evaluation: EvalReport | None = None


@dataclass
class RunResult:
    theta: np.ndarray
    records: list[RoundRecord] = field(default_factory=list)

    @property
    def evaluations(self) -> dict[int, EvalReport]:
        return {r.t: r.evaluation for r in self.records if r.evaluation is not None}


def stream_seed(master_seed: int, client_id: int, t: int) -> int:
    """Per-(client, round) RNG seed, independent of scheduling order."""
    digest = hashlib.sha256(f"{master_seed}:{client_id}:{t}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def client_adjustment(client: ClientDataset, num_classes: int, cfg: FederationConfig) -> LogitAdjustment | None:
    if not cfg.logit_adjustment:
        return None
    return LogitAdjustment.from_labels(client.labels, num_classes, cfg.temperature)


def local_train(
    model: Classifier,
    theta_global: np.ndarray,
    client: ClientDataset,
    t: int,
    cfg: FederationConfig,
    adj: LogitAdjustment | None = None,
) -> np.ndarray:
    """Run ``local_epochs`` shuffled mini-batch passes from the global model."""
    rho = cfg.strategy.local_rho(rho_at(cfg.strategy.schedule, t, cfg.rounds))
    rng = np.random.default_rng(stream_seed(cfg.master_seed, client.client_id, t))
    theta = theta_global.copy()
    n = len(client)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = client.features[idx], client.labels[idx]
            if cfg.strategy.local_optimizer == "salt":
                theta = salt_step(model, theta, x, y, cfg.learning_rate, rho, adj, cfg.strategy.gsam_alpha)
            else:
                theta = sgd_step(model, theta, x, y, cfg.learning_rate, adj)
    return theta


def _client_round(model, theta_global, client, t, cfg, adj, rho):
    theta = local_train(model, theta_global, client, t, cfg, adj)
    state = client_assessment(model, theta, client.features, client.labels, rho, adj, cfg.batch_size)
    return theta, state


def run(
    model: Classifier,
    clients: list[ClientDataset],
    test_pair: tuple[Dataset, Dataset] | None,
    cfg: FederationConfig,
    workers: int = 1,
    theta_init: np.ndarray | None = None,
) -> RunResult:
    """Train a global model for ``cfg.rounds`` rounds.

    Clients may train on a thread pool; results are gathered and summed in
    client order, so the outcome does not depend on ``workers``.
    """
    cfg.validate()
    if not clients:
        raise ConfigError("at least one client is required")
    for c in clients:
        if c.features.shape[1] != model.spec.feature_dim:
            raise ConfigError(f"client {c.client_id} has feature_dim {c.features.shape[1]}")
        if len(c) == 0:
            raise ConfigError(f"client {c.client_id} has no samples")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    strategy = cfg.strategy
    num_classes = model.spec.num_classes
    adjustments = [client_adjustment(c, num_classes, cfg) for c in clients]
    # evaluation sees quality tags; nothing upstream of it does
    qualities = [c.quality for c in clients]
    theta = model.init() if theta_init is None else np.array(theta_init, dtype=np.float64)
    result = RunResult(theta)
    w_prev = None
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            rho = rho_at(strategy.schedule, t, cfg.rounds)
            jobs = [(model, theta, c, t, cfg, a, rho) for c, a in zip(clients, adjustments)]
            try:
                if pool is None:
                    outcomes = [_client_round(*job) for job in jobs]
                else:
                    outcomes = list(pool.map(lambda job: _client_round(*job), jobs))
            except DivergenceError as exc:
                raise DivergenceError(str(exc), round_index=t) from exc

            states = [s for _, s in outcomes]
            stats = [
                ClientStats(len(c), s.base_loss, s.sharpness, s.perturbed_loss)
                for c, s in zip(clients, states)
            ]
            w_raw = weights_raw(strategy.agg, stats)
            w = smooth(w_raw, w_prev, strategy.beta, t)
            w_prev = w
            theta = aggregate([th for th, _ in outcomes], w)
            try:
                check_finite(theta, "global parameters")
            except DivergenceError as exc:
                raise DivergenceError(str(exc), round_index=t) from exc

            report = None
            if test_pair is not None and (t % cfg.eval_every == 0 or t == cfg.rounds):
                report = evaluate(model, theta, test_pair[0], test_pair[1], qualities)
            result.records.append(
                RoundRecord(
                    t,
                    rho,
                    tuple(c.client_id for c in clients),
                    tuple(states),
                    tuple(len(c) for c in clients),
                    tuple(w_raw.tolist()),
                    tuple(w.tolist()),
                    report,
                )
            )
            log.debug("round %d rho=%.4g weights=%s", t, rho, np.round(w, 4))
    finally:
        if pool is not None:
            pool.shutdown()
    result.theta = theta
    return result
