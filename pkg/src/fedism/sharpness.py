"""Sharpness, perturbed loss and the sharpness-aware local update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError
from .model import Classifier, LogitAdjustment, check_finite

EPS_NORM = 1e-12


@dataclass(frozen=True)
class StateAssessment:
    rho: float
    sharpness: float
    perturbed_loss: float
    base_loss: float


def optimal_perturbation(g: np.ndarray, rho: float) -> np.ndarray:
    """Steepest-ascent step of length ``rho`` under the linearised loss.

    Returns zeros when ``rho`` is 0 or the gradient is (numerically) zero.
    """
    if rho < 0:
        raise ConfigError(f"rho must be >= 0, got {rho}")
    norm = float(np.linalg.norm(g))
    if rho == 0 or norm <= EPS_NORM:
        return np.zeros_like(g)
    return (rho / norm) * g


def _finish(model, theta, x, y, rho, adj, base, g) -> StateAssessment:
    if not math.isfinite(base):
        raise DivergenceError("non-finite loss")
    eps = optimal_perturbation(g, rho)
    if not eps.any():
        return StateAssessment(rho, 0.0, base, base)
    perturbed = model.loss(theta + eps, x, y, adj)
    if not math.isfinite(perturbed):
        raise DivergenceError(f"non-finite loss at perturbed point (rho={rho})")
    return StateAssessment(rho, perturbed - base, perturbed, base)


def assess(
    model: Classifier,
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    rho: float,
    adj: LogitAdjustment | None = None,
) -> StateAssessment:
    base, g = model.loss_and_grad(theta, x, y, adj)
    return _finish(model, theta, x, y, rho, adj, base, g)


def client_assessment(
    model: Classifier,
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    rho: float,
    adj: LogitAdjustment | None = None,
    batch_size: int | None = None,
) -> StateAssessment:
    """Assessment over a whole shard, streamed in mini-batches.

    A single perturbation is built from the shard-mean gradient, then the
    shard-mean loss is evaluated there.
    """
    n = len(y)
    if n == 0:
        raise ConfigError("cannot assess an empty dataset")
    step = n if not batch_size else batch_size
    if step >= n:
        return assess(model, theta, x, y, rho, adj)

    total_loss = 0.0
    total_grad = np.zeros_like(theta)
    for start in range(0, n, step):
        xb, yb = x[start : start + step], y[start : start + step]
        loss, g = model.loss_and_grad(theta, xb, yb, adj)
        total_loss += loss * len(yb)
        total_grad += g * len(yb)
    base, g = total_loss / n, total_grad / n
    if not math.isfinite(base):
        raise DivergenceError("non-finite loss")
    eps = optimal_perturbation(g, rho)
    if not eps.any():
        return StateAssessment(rho, 0.0, base, base)
    shifted = theta + eps
    perturbed = sum(
        model.loss(shifted, x[s : s + step], y[s : s + step], adj) * len(y[s : s + step])
        for s in range(0, n, step)
    ) / n
    if not math.isfinite(perturbed):
        raise DivergenceError(f"non-finite loss at perturbed point (rho={rho})")
    return StateAssessment(rho, perturbed - base, perturbed, base)


def salt_step(
    model: Classifier,
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    lr: float,
    rho: float,
    adj: LogitAdjustment | None = None,
    gsam_alpha: float = 0.0,
) -> np.ndarray:
    """Descend the gradient taken at the adversarially perturbed parameters.

    With ``gsam_alpha > 0`` the step additionally ascends along the part of
    the unperturbed gradient orthogonal to the perturbed one (GSAM).
    """
    g = model.grad(theta, x, y, adj)
    eps = optimal_perturbation(g, rho)
    if not eps.any():
        # no perturbation: identical arithmetic to sgd_step
        return check_finite(theta - lr * g)
    g_pert = model.grad(theta + eps, x, y, adj)
    if gsam_alpha > 0:
        denom = float(g_pert @ g_pert)
        if denom > EPS_NORM**2:
            g_orth = g - (float(g @ g_pert) / denom) * g_pert
            g_pert = g_pert - gsam_alpha * g_orth
    return check_finite(theta - lr * g_pert)
