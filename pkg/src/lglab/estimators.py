"""Surrogate gradient rules for the discrete latent argmax node.

Each rule is a pure function mapping (scores, pulled-back decoder
gradient, step size) to a replacement gradient in score space.  The
pulled-back gradient ``gamma`` is the gradient of the downstream loss in
the latent coordinates, evaluated by the model module; each rule
documents the latent point the caller must evaluate ``gamma`` at, because
the rules genuinely differ there:

* ``spigot_grad`` and ``ste_grad`` expect gamma at the decoded vertex;
* ``ce_grad_unstructured`` and ``eg_grad_unstructured`` expect gamma at
  the softmax point (their structured forms use the Gibbs mean);
* ``relaxed_grad`` expects gamma at the tempered softmax / Gibbs mean;
* ``minrisk_grad`` takes the full per-vertex loss table instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import DivergedGradient
from .polytope import (
    MeanPoint,
    StructureFamily,
    FamilyKind,
    gibbs_marginals,
    map_decode,
    project_polytope,
    project_simplex,
    softmax,
    sparsemap,
)

# Gradient of the downstream loss with respect to the latent point.
PullbackGradient = np.ndarray


class Rule(str, Enum):
    SPIGOT = "spigot"
    STE = "ste"
    SPIGOT_CE = "spigot_ce"
    EXP_GRAD = "exp_grad"
    RELAXED = "relaxed"
    MIN_RISK = "minrisk"
    NONE = "none"  # zero surrogate, the no-estimator control


class InitPoint(str, Enum):
    MAP_VERTEX = "map_vertex"
    MARGINAL = "marginal"
    ZERO_PROJECTED = "zero_projected"


@dataclass(frozen=True)
class EstimatorConfig:
    """Which surrogate rule to run and with what knobs.

    ``eta`` is the pullback step size, ``steps`` the number of projected
    (or mirror) descent pullback iterations, ``init`` the starting point
    of that descent, and ``temperature`` the Gibbs temperature used by
    the relaxed and minimum-risk rules.
    """

    rule: Rule
    eta: float = 1.0
    steps: int = 1
    init: InitPoint = InitPoint.MAP_VERTEX
    temperature: float = 1.0

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def to_dict(self) -> dict:
        return {
            "rule": self.rule.value,
            "eta": self.eta,
            "steps": self.steps,
            "init": self.init.value,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        return cls(
            rule=Rule(d["rule"]),
            eta=float(d.get("eta", 1.0)),
            steps=int(d.get("steps", 1)),
            init=InitPoint(d.get("init", "map_vertex")),
            temperature=float(d.get("temperature", 1.0)),
        )


def spigot_grad(
    family: StructureFamily, z_hat: np.ndarray, gamma: PullbackGradient, eta: float
) -> np.ndarray:
    """One projected pullback step from the decoded vertex.

    Returns ``z_hat``  minus the hull projection of ``z_hat - eta * gamma``;
    gamma must be evaluated at ``z_hat``.
    """
    return z_hat - sparsemap(family, z_hat - eta * gamma).mu


def ste_grad(gamma: PullbackGradient, eta: float) -> np.ndarray:
    """Straight-through: pass the pulled-back gradient scaled by eta."""
    return eta * np.asarray(gamma, dtype=np.float64)


def pullback_descend(
    family: StructureFamily,
    init_point: MeanPoint,
    gamma_fn: Callable[[np.ndarray], PullbackGradient],
    eta_schedule: Sequence[float],
) -> MeanPoint:
    """Projected gradient descent of the pulled-back loss over the hull.

    ``gamma_fn`` maps the current mean point to the loss gradient in
    latent coordinates and must be pure.  One step with the decoded
    vertex as the initial point is the spigot target.
    """
    if len(eta_schedule) < 1:
        raise ValueError("eta_schedule must contain at least one step size")
    point = init_point
    for eta_t in eta_schedule:
        gamma = np.asarray(gamma_fn(point.mu), dtype=np.float64)
        if not np.all(np.isfinite(gamma)):
            raise DivergedGradient("gamma_fn returned non-finite values")
        point = project_polytope(family, point.mu - eta_t * gamma)
    return point


def perceptron_grad(family: StructureFamily, s: np.ndarray, mu_tilde: MeanPoint) -> np.ndarray:
    """Prediction-minus-target gradient against a pulled-back target."""
    return map_decode(family, s) - mu_tilde.mu


def ce_grad_unstructured(s: np.ndarray, gamma_at_p: PullbackGradient, eta: float) -> np.ndarray:
    """Cross-entropy intermediate loss against a projected pullback target.

    gamma must be evaluated at the softmax point softmax(s).
    """
    p = softmax(s)
    return p - project_simplex(p - eta * np.asarray(gamma_at_p, dtype=np.float64))


def eg_grad_unstructured(s: np.ndarray, gamma_at_p: PullbackGradient, eta: float) -> np.ndarray:
    """One multiplicative-update pullback step: softmax minus perturbed softmax.

    gamma must be evaluated at the softmax point softmax(s).
    """
    return softmax(s) - softmax(s - eta * np.asarray(gamma_at_p, dtype=np.float64))


def softmax_jacobian(s: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Jacobian of softmax(s / temperature): (diag(p) - p p') / temperature."""
    p = softmax(np.asarray(s, dtype=np.float64) / temperature)
    return (np.diag(p) - np.outer(p, p)) / temperature


def relaxed_grad(
    s: np.ndarray,
    gamma_at_p: PullbackGradient,
    temperature: float = 1.0,
    family: StructureFamily | None = None,
) -> np.ndarray:
    """Exact chain rule through a continuous relaxation of the argmax.

    With no family (or a categorical one) the relaxation is the tempered
    softmax.  Otherwise it is the Gibbs mean over tempered scores, whose
    Jacobian is the vertex covariance divided by the temperature,
    computed by enumeration.  gamma must be evaluated at the relaxed
    point itself.
    """
    gamma = np.asarray(gamma_at_p, dtype=np.float64)
    if family is None or family.kind is FamilyKind.CATEGORICAL:
        return softmax_jacobian(s, temperature) @ gamma
    M = family.vertices
    t = M @ (np.asarray(s, dtype=np.float64) / temperature)
    w = np.exp(t - t.max())
    p = w / w.sum()
    mu = p @ M
    second_moment = (M * p[:, None]).T @ M
    jac = (second_moment - np.outer(mu, mu)) / temperature
    return jac @ gamma


def minrisk_grad(
    family: StructureFamily,
    s: np.ndarray,
    losses: np.ndarray,
    temperature: float = 1.0,
) -> np.ndarray:
    """Exact gradient of the Gibbs-expected loss with respect to the scores.

    ``losses[i]`` is the downstream loss at vertex ``i``.  The gradient is
    computed once as the weighted sum of probability gradients and once in
    score-function form as an expectation of loss times log-probability
    gradients; the two accumulations must agree to 1e-10.
    """
    losses = np.asarray(losses, dtype=np.float64)
    M = family.vertices
    if losses.shape != (M.shape[0],):
        raise ValueError(f"expected {M.shape[0]} per-vertex losses, got {losses.shape}")
    t = M @ (np.asarray(s, dtype=np.float64) / temperature)
    w = np.exp(t - t.max())
    p = w / w.sum()
    mu = p @ M
    direct = (M.T @ (p * losses) - (p @ losses) * mu) / temperature
    score_form = np.zeros(family.K)
    for i in range(M.shape[0]):
        score_form += p[i] * losses[i] * (M[i] - mu) / temperature
    if np.abs(direct - score_form).max() > 1e-10:
        raise AssertionError("risk-gradient accumulation routes disagree beyond 1e-10")
    return direct


def struct_ce_grad(
    family: StructureFamily, s: np.ndarray, gamma_at_mu: PullbackGradient, eta: float
) -> np.ndarray:
    """Structured form of the cross-entropy rule (experimental).

    Replaces softmax with the Gibbs mean and the simplex projection with
    the hull projection.  gamma must be evaluated at the Gibbs mean.
    """
    mu = gibbs_marginals(family, s)[1].mu
    target = project_polytope(family, mu - eta * np.asarray(gamma_at_mu, dtype=np.float64))
    return mu - target.mu


def struct_eg_grad(
    family: StructureFamily,
    s: np.ndarray,
    gamma_fn: Callable[[np.ndarray], PullbackGradient],
    eta: float,
    steps: int = 1,
) -> np.ndarray:
    """Structured mirror-descent rule over the vertex simplex (experimental).

    Starts from the Gibbs distribution of the scores and applies ``steps``
    multiplicative updates, re-evaluating ``gamma_fn`` at the current mean
    each time.  With one step and a categorical family this reduces to
    :func:`eg_grad_unstructured` exactly.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    M = family.vertices
    dist, start = gibbs_marginals(family, s)
    p = dist.probs
    for _ in range(steps):
        gamma = np.asarray(gamma_fn(p @ M), dtype=np.float64)
        if not np.all(np.isfinite(gamma)):
            raise DivergedGradient("gamma_fn returned non-finite values")
        logits = -eta * (M @ gamma)
        w = p * np.exp(logits - logits.max())
        total = w.sum()
        if total <= 0.0:
            raise DivergedGradient("mirror update annihilated the distribution")
        p = w / total
    return start.mu - p @ M


def make_init_point(
    family: StructureFamily, s: np.ndarray, init: InitPoint, z_hat: np.ndarray | None = None
) -> MeanPoint:
    """Starting point of the pullback descent for a given init choice."""
    if init is InitPoint.MAP_VERTEX:
        vertex = map_decode(family, s) if z_hat is None else z_hat
        idx = int(np.argmax(family.vertices @ vertex))
        return MeanPoint(vertex.copy(), ((idx, 1.0),))
    if init is InitPoint.MARGINAL:
        return gibbs_marginals(family, s)[1]
    return project_polytope(family, np.zeros(family.K))
