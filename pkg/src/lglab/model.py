"""Encoder, decoder and downstream losses with analytic gradients.

The pipeline is an affine encoder producing latent scores, a discrete or
relaxed latent point chosen by the caller, and a one-hidden-layer decoder
that accepts any point of the latent cube (vertices and convex
combinations alike).  This module is the only producer of the pulled-back
gradient: the gradient of the downstream loss in the latent coordinates.

Forward passes record a trace; backward passes over a trace are exact and
deterministic, and every gradient here is checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Tuple

import numpy as np

from .errors import ShapeMismatch
from .polytope import StructureFamily
from .rng import make_rng, uniform


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"


class Activation(str, Enum):
    TANH = "tanh"
    IDENTITY = "identity"


@dataclass
class LatentModel:
    """Parameters of the encoder and decoder plus loss/activation choices.

    The decoder consumes the concatenation of the input and the latent
    point unless ``decoder_uses_x`` is false, in which case it sees only
    the latent point (the controlled configuration where predictions
    cannot bypass the latent bottleneck).
    """

    family: StructureFamily
    W_enc: np.ndarray
    b_enc: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    loss_kind: LossKind
    activation: Activation = Activation.TANH
    decoder_uses_x: bool = True

    @property
    def d_x(self) -> int:
        return self.W_enc.shape[1]

    @property
    def n_parts(self) -> int:
        return self.W_enc.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def d_y(self) -> int:
        return self.W2.shape[0]

    def theta(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def phi(self) -> Dict[str, np.ndarray]:
        return {"W_enc": self.W_enc, "b_enc": self.b_enc}

    def copy(self) -> "LatentModel":
        return replace(
            self,
            W_enc=self.W_enc.copy(),
            b_enc=self.b_enc.copy(),
            W1=self.W1.copy(),
            b1=self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
        )


@dataclass(frozen=True)
class ForwardTrace:
    """Everything needed to replay one forward pass exactly."""

    x: np.ndarray
    s: np.ndarray
    latent: np.ndarray
    u: np.ndarray
    a1: np.ndarray
    h: np.ndarray
    y_hat: np.ndarray
    y_star: object
    loss: float


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    a = np.sqrt(6.0 / (rows + cols))
    return uniform(rng, -a, a, (rows, cols))


def init_model(
    family: StructureFamily,
    d_x: int,
    d_y: int,
    hidden: int,
    loss_kind: LossKind,
    seed: int,
    activation: Activation = Activation.TANH,
    decoder_uses_x: bool = True,
    decoder_init: str = "uniform",
    class_map: np.ndarray | None = None,
) -> LatentModel:
    """Seeded model with uniform(-a, a) fan-scaled initialization.

    ``decoder_init="aligned"`` overwrites the leading hidden units so the
    decoder starts out reading the latent coordinates directly, with unit
    ``j`` wired to output class ``class_map[j]``.  Latent recovery is
    otherwise unidentifiable (any relabeling of latent coordinates can be
    absorbed by a freely learned decoder), so controlled experiments that
    score latent accuracy need this warm start.
    """
    k = family.K
    rng = make_rng(seed, salt=1)
    W_enc = _glorot(rng, k, d_x)
    b_enc = np.zeros(k)
    d_u = (d_x if decoder_uses_x else 0) + k
    W1 = _glorot(rng, hidden, d_u)
    b1 = np.zeros(hidden)
    W2 = _glorot(rng, d_y, hidden)
    b2 = np.zeros(d_y)
    if decoder_init == "aligned":
        if class_map is None:
            raise ValueError("aligned decoder init needs a class map")
        if hidden < k or d_y < int(np.max(class_map)) + 1:
            raise ValueError("aligned decoder init needs hidden >= K and d_y > max class")
        beta, alpha = 0.5, 6.0
        offset = d_x if decoder_uses_x else 0
        W1[:k, :] = 0.0
        for j in range(k):
            W1[j, offset + j] = beta
        W2[:, k:] *= 0.1
        W2[:, :k] = 0.0
        for j in range(k):
            W2[int(class_map[j]), j] = alpha
    elif decoder_init != "uniform":
        raise ValueError(f"unknown decoder_init {decoder_init!r}")
    return LatentModel(
        family=family,
        W_enc=W_enc,
        b_enc=b_enc,
        W1=W1,
        b1=b1,
        W2=W2,
        b2=b2,
        loss_kind=loss_kind,
        activation=activation,
        decoder_uses_x=decoder_uses_x,
    )


def encoder_scores(model: LatentModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d_x,):
        raise ShapeMismatch(f"expected input of shape ({model.d_x},), got {x.shape}")
    return model.W_enc @ x + model.b_enc


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def loss_value(loss_kind: LossKind, y_hat: np.ndarray, y_star) -> float:
    if loss_kind is LossKind.SQUARED_ERROR:
        diff = y_hat - np.asarray(y_star, dtype=np.float64)
        return 0.5 * float(diff @ diff)
    return -float(_log_softmax(y_hat)[int(y_star)])


def loss_grad(loss_kind: LossKind, y_hat: np.ndarray, y_star) -> np.ndarray:
    if loss_kind is LossKind.SQUARED_ERROR:
        return y_hat - np.asarray(y_star, dtype=np.float64)
    probs = np.exp(_log_softmax(y_hat))
    probs[int(y_star)] -= 1.0
    return probs


def forward(
    model: LatentModel, x: np.ndarray, latent_point: np.ndarray, y_star
) -> ForwardTrace:
    """Run the full pipeline at a caller-chosen latent point and record it."""
    x = np.asarray(x, dtype=np.float64)
    latent_point = np.asarray(latent_point, dtype=np.float64)
    if latent_point.shape != (model.n_parts,):
        raise ShapeMismatch(
            f"expected latent point of shape ({model.n_parts},), got {latent_point.shape}"
        )
    s = encoder_scores(model, x)
    u = np.concatenate([x, latent_point]) if model.decoder_uses_x else latent_point
    a1 = model.W1 @ u + model.b1
    h = np.tanh(a1) if model.activation is Activation.TANH else a1
    y_hat = model.W2 @ h + model.b2
    return ForwardTrace(
        x=x,
        s=s,
        latent=latent_point,
        u=u,
        a1=a1,
        h=h,
        y_hat=y_hat,
        y_star=y_star,
        loss=loss_value(model.loss_kind, y_hat, y_star),
    )


def decoder_backward(
    model: LatentModel, trace: ForwardTrace
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of the loss in the decoder parameters and the latent.

    The second return value is the pulled-back gradient: the loss gradient
    with respect to the latent point the decoder was fed.
    """
    d_out = loss_grad(model.loss_kind, trace.y_hat, trace.y_star)
    dW2 = np.outer(d_out, trace.h)
    db2 = d_out
    dh = model.W2.T @ d_out
    da1 = dh * (1.0 - trace.h**2) if model.activation is Activation.TANH else dh
    dW1 = np.outer(da1, trace.u)
    db1 = da1
    mu_cols = model.W1[:, model.d_x :] if model.decoder_uses_x else model.W1
    gamma = mu_cols.T @ da1
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}, gamma


def encoder_backward(
    model: LatentModel, trace: ForwardTrace, surrogate_grad_s: np.ndarray
) -> Dict[str, np.ndarray]:
    """Chain a replacement score gradient through the affine encoder."""
    gs = np.asarray(surrogate_grad_s, dtype=np.float64)
    if not np.all(np.isfinite(gs)):
        raise ValueError("surrogate gradient must be finite")
    return {"W_enc": np.outer(gs, trace.x), "b_enc": gs.copy()}


def gamma_at(model: LatentModel, x: np.ndarray, y_star, latent_point: np.ndarray) -> np.ndarray:
    """Pulled-back loss gradient at an arbitrary latent point."""
    return decoder_backward(model, forward(model, x, latent_point, y_star))[1]


def finite_diff_check(
    fn: Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative disagreement between analytic and central differences.

    Per coordinate the error is |analytic - numeric| / max(1, |numeric|);
    the maximum over coordinates is returned.
    """
    point = np.asarray(point, dtype=np.float64)
    numeric = np.zeros_like(point)
    for i in range(point.size):
        bumped = point.copy()
        bumped[i] += step
        up = fn(bumped)
        bumped[i] -= 2.0 * step
        down = fn(bumped)
        numeric[i] = (up - down) / (2.0 * step)
    denom = np.maximum(1.0, np.abs(numeric))
    return float((np.abs(np.asarray(analytic) - numeric) / denom).max())


# Batched helpers used by the training harness.  Latent points vary per
# row; the model weights are shared.


def forward_batch(
    model: LatentModel, X: np.ndarray, latents: np.ndarray, ys
) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise forward pass; returns (losses, predictions)."""
    U = np.concatenate([X, latents], axis=1) if model.decoder_uses_x else latents
    A1 = U @ model.W1.T + model.b1
    H = np.tanh(A1) if model.activation is Activation.TANH else A1
    Yhat = H @ model.W2.T + model.b2
    if model.loss_kind is LossKind.SQUARED_ERROR:
        diffs = Yhat - np.asarray(ys, dtype=np.float64)
        losses = 0.5 * np.sum(diffs * diffs, axis=1)
    else:
        shifted = Yhat - Yhat.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        idx = np.asarray(ys, dtype=np.int64)
        losses = lse - shifted[np.arange(len(idx)), idx]
    return losses, Yhat


def vertex_losses(
    model: LatentModel, x: np.ndarray, y_star
) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Loss at every vertex of the family for one sample, plus caches."""
    M = model.family.vertices
    n = M.shape[0]
    X = np.broadcast_to(x, (n, x.size))
    ys = np.full(n, y_star) if model.loss_kind is LossKind.SOFTMAX_CROSS_ENTROPY else np.broadcast_to(y_star, (n, np.size(y_star)))
    U = np.concatenate([X, M], axis=1) if model.decoder_uses_x else M
    A1 = U @ model.W1.T + model.b1
    H = np.tanh(A1) if model.activation is Activation.TANH else A1
    Yhat = H @ model.W2.T + model.b2
    if model.loss_kind is LossKind.SQUARED_ERROR:
        diffs = Yhat - np.asarray(ys, dtype=np.float64)
        losses = 0.5 * np.sum(diffs * diffs, axis=1)
    else:
        shifted = Yhat - Yhat.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        idx = np.asarray(ys, dtype=np.int64)
        losses = lse - shifted[np.arange(n), idx]
    return losses, (U, H, Yhat)


def weighted_decoder_backward(
    model: LatentModel,
    caches: Tuple[np.ndarray, np.ndarray, np.ndarray],
    ys,
    weights: np.ndarray,
) -> Dict[str, np.ndarray]:
    """Decoder gradient of a weighted sum of per-vertex losses."""
    U, H, Yhat = caches
    n = U.shape[0]
    if model.loss_kind is LossKind.SQUARED_ERROR:
        D = Yhat - np.asarray(ys, dtype=np.float64)
    else:
        shifted = Yhat - Yhat.max(axis=1, keepdims=True)
        P = np.exp(shifted)
        P /= P.sum(axis=1, keepdims=True)
        D = P
        D[np.arange(n), np.asarray(ys, dtype=np.int64)] -= 1.0
    Dw = D * weights[:, None]
    dW2 = Dw.T @ H
    db2 = Dw.sum(axis=0)
    dH = Dw @ model.W2
    dA1 = dH * (1.0 - H**2) if model.activation is Activation.TANH else dH
    dW1 = dA1.T @ U
    db1 = dA1.sum(axis=0)
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


CHECKPOINT_MAGIC = "LGLAB-CHECKPOINT-V1"


def save_model(model: LatentModel, path) -> None:
    """Write a versioned textual record of named parameter tensors."""
    lines = [CHECKPOINT_MAGIC]
    cfg = model.family.to_config()
    lines.append("family " + " ".join(f"{k}={v}" for k, v in sorted(cfg.items())))
    lines.append(f"loss {model.loss_kind.value}")
    lines.append(f"activation {model.activation.value}")
    lines.append(f"decoder_uses_x {int(model.decoder_uses_x)}")
    for name, tensor in {**model.phi(), **model.theta()}.items():
        dims = " ".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {tensor.ndim} {dims}")
        lines.append(" ".join(f"{v:.17g}" for v in tensor.ravel()))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> LatentModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file (missing {CHECKPOINT_MAGIC} header)")
    meta = {}
    tensors = {}
    i = 1
    while i < len(lines) and lines[i] != "end":
        parts = lines[i].split()
        if parts[0] == "tensor":
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3 : 3 + ndim])
            values = np.array([float(v) for v in lines[i + 1].split()])
            tensors[name] = values.reshape(shape)
            i += 2
        else:
            meta[parts[0]] = parts[1:]
            i += 1
    fam_cfg = {}
    for kv in meta["family"]:
        k, v = kv.split("=")
        fam_cfg[k] = v if k == "family" else int(v)
    return LatentModel(
        family=StructureFamily.from_config(fam_cfg),
        W_enc=tensors["W_enc"],
        b_enc=tensors["b_enc"],
        W1=tensors["W1"],
        b1=tensors["b1"],
        W2=tensors["W2"],
        b2=tensors["b2"],
        loss_kind=LossKind(meta["loss"][0]),
        activation=Activation(meta["activation"][0]),
        decoder_uses_x=bool(int(meta["decoder_uses_x"][0])),
    )
