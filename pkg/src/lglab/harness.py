"""Synthetic tasks, the training loop, and run records.

Tasks are generated from seeded Philox streams in a fixed draw order
(task-level parameters first, then training samples, then evaluation
samples) so a (task seed, model seed, config) triple fully determines
every number a run produces.  The training loop wires any surrogate rule
into the encoder update while the decoder always receives its exact
gradient; evaluation always decodes the highest-scoring vertex so every
estimator is scored at the same discrete operating point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import estimators as est
from . import model as mdl
from .errors import ConfigError
from .polytope import StructureFamily, FamilyKind, gibbs_marginals
from .rng import make_rng, normals, permutation, randint

CSV_COLUMNS = [
    "run_id",
    "rule",
    "eta",
    "steps",
    "init",
    "temperature",
    "seed",
    "epoch",
    "train_loss",
    "eval_loss",
    "latent_exact",
    "latent_f1",
    "wall_ms",
]

DIVERGED = "diverged"


class TaskKind(str, Enum):
    CATEGORICAL_BOTTLENECK = "categorical_bottleneck"
    SUBSET_REGRESSION = "subset_regression"
    TREE_REGRESSION = "tree_regression"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    family: dict
    d_x: int
    d_y: int
    noise_sigma: float
    n_train: int
    n_eval: int
    seed: int

    def __post_init__(self):
        if min(self.d_x, self.d_y, self.n_train, self.n_eval) <= 0:
            raise ValueError("sizes must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y_star: object
    z_star: np.ndarray


@dataclass
class Dataset:
    X: np.ndarray
    ys: np.ndarray
    Z: np.ndarray
    z_index: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(self.X[i], self.ys[i], self.Z[i])


@dataclass
class Task:
    spec: TaskSpec
    family: StructureFamily
    loss_kind: mdl.LossKind
    train: Dataset
    eval: Dataset
    meta: dict


@dataclass(frozen=True)
class OptimizerConfig:
    """Plain SGD.  ``decoder_lr_scale`` multiplies the decoder update only.

    Setting it to 0 freezes the decoder; the controlled latent-recovery
    probe needs that, because with a freely trained decoder any
    relabeling of the latent coordinates is loss-equivalent and exact
    recovery of the generative latent is not identifiable.
    """

    algo: str = "sgd"
    lr: float = 0.1
    epochs: int = 100
    batch: int = 16
    decoder_lr_scale: float = 1.0

    def __post_init__(self):
        if self.algo != "sgd":
            raise ValueError(f"only plain sgd is supported, got {self.algo!r}")
        if self.lr <= 0 or self.epochs < 1 or self.batch < 1:
            raise ValueError("lr must be positive, epochs and batch at least 1")
        if self.decoder_lr_scale < 0.0:
            raise ValueError("decoder_lr_scale must be nonnegative")


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    activation: mdl.Activation = mdl.Activation.TANH
    decoder_uses_x: bool = True
    decoder_init: str = "uniform"
    loss: Optional[mdl.LossKind] = None


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    eval_loss: float
    latent_exact: float
    latent_f1: float


@dataclass
class RunRecord:
    run_id: str
    estimator: est.EstimatorConfig
    seed: int
    epochs: List[EpochMetrics] = field(default_factory=list)
    diverged: bool = False
    wall_ms: float = 0.0


def _draw_dataset(kind, family, rng, spec, meta, n) -> Dataset:
    k = family.K
    X = np.zeros((n, spec.d_x))
    Z = np.zeros((n, k))
    z_index = np.zeros(n, dtype=np.int64)
    if kind is TaskKind.CATEGORICAL_BOTTLENECK:
        ys = np.zeros(n, dtype=np.int64)
        for i in range(n):
            cls = randint(rng, k)
            z_index[i] = cls
            Z[i] = family.vertices[cls]
            X[i] = meta["centers"][cls] + spec.noise_sigma * normals(rng, spec.d_x)
            ys[i] = meta["class_map"][cls]
    else:
        ys = np.zeros((n, spec.d_y))
        for i in range(n):
            vi = randint(rng, family.n_vertices)
            z_index[i] = vi
            Z[i] = family.vertices[vi]
            X[i] = meta["A"] @ Z[i] + spec.noise_sigma * normals(rng, spec.d_x)
            ys[i] = meta["B"] @ Z[i] + spec.noise_sigma * normals(rng, spec.d_y)
    return Dataset(X, ys, Z, z_index)


def generate_task(spec: TaskSpec) -> Task:
    """Materialize a task: fixed generative parameters, then samples.

    Categorical bottleneck: inputs are noisy copies of per-class centers
    and the target is the class index under a fixed seeded relabeling.
    Subset and tree regression: a uniformly drawn vertex is pushed through
    fixed random linear maps to produce input and target.
    """
    family = StructureFamily.from_config(spec.family)
    rng = make_rng(spec.seed, salt=0)
    if spec.kind is TaskKind.CATEGORICAL_BOTTLENECK:
        if family.kind is not FamilyKind.CATEGORICAL:
            raise ConfigError("categorical_bottleneck requires a categorical family")
        centers = normals(rng, (family.K, spec.d_x))
        if spec.d_y == family.K:
            class_map = permutation(rng, family.K)
        else:
            class_map = np.array([randint(rng, spec.d_y) for _ in range(family.K)])
        meta = {"centers": centers, "class_map": class_map}
        loss_kind = mdl.LossKind.SOFTMAX_CROSS_ENTROPY
    else:
        A = normals(rng, (spec.d_x, family.K))
        B = normals(rng, (spec.d_y, family.K))
        meta = {"A": A, "B": B}
        loss_kind = mdl.LossKind.SQUARED_ERROR
        if spec.kind is TaskKind.SUBSET_REGRESSION and family.kind is not FamilyKind.K_SUBSET:
            raise ConfigError("subset_regression requires a k_subset family")
        if spec.kind is TaskKind.TREE_REGRESSION and family.kind is not FamilyKind.ARBORESCENCE:
            raise ConfigError("tree_regression requires an arborescence family")
    train = _draw_dataset(spec.kind, family, rng, spec, meta, spec.n_train)
    eval_set = _draw_dataset(spec.kind, family, rng, spec, meta, spec.n_eval)
    return Task(spec, family, loss_kind, train, eval_set, meta)


def evaluate_latent(
    family: StructureFamily, predicted: np.ndarray, true: np.ndarray
) -> Tuple[float, float]:
    """Exact-match rate and micro part F1 of predicted indicator vectors."""
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape:
        raise ValueError("predicted and true vertex arrays must have equal shape")
    exact = float(np.mean(np.all(predicted == true, axis=1)))
    tp = float(np.sum((predicted == 1) & (true == 1)))
    fp = float(np.sum((predicted == 1) & (true == 0)))
    fn = float(np.sum((predicted == 0) & (true == 1)))
    if tp + fp + fn == 0.0:
        return exact, 1.0
    if tp == 0.0:
        return exact, 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return exact, 2.0 * precision * recall / (precision + recall)


def build_model(task: Task, cfg: ModelConfig, seed: int) -> mdl.LatentModel:
    loss_kind = cfg.loss or task.loss_kind
    class_map = task.meta.get("class_map")
    return mdl.init_model(
        task.family,
        task.spec.d_x,
        task.spec.d_y,
        cfg.hidden,
        loss_kind,
        seed,
        activation=cfg.activation,
        decoder_uses_x=cfg.decoder_uses_x,
        decoder_init=cfg.decoder_init,
        class_map=class_map,
    )


def _designated_point(model, task, cfg: est.EstimatorConfig, s: np.ndarray) -> np.ndarray:
    family = task.family
    if cfg.rule in (est.Rule.SPIGOT, est.Rule.STE, est.Rule.NONE):
        return family.vertices[int(np.argmax(family.vertices @ s))]
    if cfg.rule is est.Rule.RELAXED or cfg.rule is est.Rule.MIN_RISK:
        return gibbs_marginals(family, s / cfg.temperature)[1].mu
    return gibbs_marginals(family, s)[1].mu


def _step(model, task, x, y, cfg: est.EstimatorConfig):
    """Per-sample gradients: (surrogate score grad, decoder grads, loss)."""
    family = task.family
    s = mdl.encoder_scores(model, x)
    rule = cfg.rule
    if rule in (est.Rule.SPIGOT, est.Rule.STE, est.Rule.NONE):
        z_hat = family.vertices[int(np.argmax(family.vertices @ s))]
        trace = mdl.forward(model, x, z_hat, y)
        grad_theta, gamma = mdl.decoder_backward(model, trace)
        if rule is est.Rule.STE:
            gs = est.ste_grad(gamma, cfg.eta)
        elif rule is est.Rule.NONE:
            gs = None
        elif cfg.steps == 1 and cfg.init is est.InitPoint.MAP_VERTEX:
            gs = est.spigot_grad(family, z_hat, gamma, cfg.eta)
        else:
            start = est.make_init_point(family, s, cfg.init, z_hat)
            target = est.pullback_descend(
                family,
                start,
                lambda mu: mdl.gamma_at(model, x, y, mu),
                [cfg.eta] * cfg.steps,
            )
            gs = z_hat - target.mu
        return gs, grad_theta, trace.loss
    if rule is est.Rule.SPIGOT_CE:
        start = gibbs_marginals(family, s)[1]
        trace = mdl.forward(model, x, start.mu, y)
        grad_theta, gamma = mdl.decoder_backward(model, trace)
        if cfg.steps == 1:
            gs = est.struct_ce_grad(family, s, gamma, cfg.eta)
        else:
            target = est.pullback_descend(
                family,
                start,
                lambda mu: mdl.gamma_at(model, x, y, mu),
                [cfg.eta] * cfg.steps,
            )
            gs = start.mu - target.mu
        return gs, grad_theta, trace.loss
    if rule is est.Rule.EXP_GRAD:
        mu = gibbs_marginals(family, s)[1].mu
        trace = mdl.forward(model, x, mu, y)
        grad_theta, _ = mdl.decoder_backward(model, trace)
        gs = est.struct_eg_grad(
            family, s, lambda m: mdl.gamma_at(model, x, y, m), cfg.eta, steps=cfg.steps
        )
        return gs, grad_theta, trace.loss
    if rule is est.Rule.RELAXED:
        mu = gibbs_marginals(family, s / cfg.temperature)[1].mu
        trace = mdl.forward(model, x, mu, y)
        grad_theta, gamma = mdl.decoder_backward(model, trace)
        gs = est.relaxed_grad(s, gamma, cfg.temperature, family=family)
        return gs, grad_theta, trace.loss
    if rule is est.Rule.MIN_RISK:
        losses, caches = mdl.vertex_losses(model, x, y)
        t = family.vertices @ (s / cfg.temperature)
        w = np.exp(t - t.max())
        p = w / w.sum()
        ys = np.full(family.n_vertices, y) if model.loss_kind is mdl.LossKind.SOFTMAX_CROSS_ENTROPY else np.broadcast_to(y, (family.n_vertices, np.size(y)))
        grad_theta = mdl.weighted_decoder_backward(model, caches, ys, p)
        gs = est.minrisk_grad(family, s, losses, cfg.temperature)
        return gs, grad_theta, float(p @ losses)
    raise ValueError(f"unknown rule {rule}")


def _evaluate(model, task: Task) -> Tuple[float, float, float]:
    """Eval loss and latent metrics at the decoded vertex."""
    data = task.eval
    S = data.X @ model.W_enc.T + model.b_enc
    idx = np.argmax(S @ task.family.vertices.T, axis=1)
    latents = task.family.vertices[idx]
    losses, _ = mdl.forward_batch(model, data.X, latents, data.ys)
    exact, f1 = evaluate_latent(task.family, latents, data.Z)
    return float(losses.mean()), exact, f1


def _designated_train_loss(model, task: Task, cfg: est.EstimatorConfig) -> float:
    data = task.train
    total = 0.0
    for i in range(data.n):
        x, y = data.X[i], data.ys[i]
        if cfg.rule is est.Rule.MIN_RISK:
            s = mdl.encoder_scores(model, x)
            losses, _ = mdl.vertex_losses(model, x, y)
            t = task.family.vertices @ (s / cfg.temperature)
            w = np.exp(t - t.max())
            total += float((w / w.sum()) @ losses)
        else:
            s = mdl.encoder_scores(model, x)
            point = _designated_point(model, task, cfg, s)
            total += mdl.forward(model, x, point, y).loss
    return total / data.n


def train_run(
    task: Task,
    model_seed: int,
    estimator: est.EstimatorConfig,
    optimizer: OptimizerConfig,
    model_cfg: ModelConfig = ModelConfig(),
    run_id: str = "run",
    model: Optional[mdl.LatentModel] = None,
) -> RunRecord:
    """One seeded training run; returns per-epoch metrics.

    Epoch 0 reports the untrained model.  The decoder is always updated
    with its exact gradient; the encoder is updated by chaining the
    estimator's surrogate score gradient through the affine encoder.  A
    non-finite loss marks the run diverged and stops it.  Callers may
    inject a prebuilt ``model`` (it is trained in place); by default one
    is initialized from ``model_seed``.
    """
    if model is None:
        model = build_model(task, model_cfg, model_seed)
    shuffle_rng = make_rng(model_seed, salt=2)
    record = RunRecord(run_id=run_id, estimator=estimator, seed=model_seed)
    t_start = time.perf_counter()

    train_loss0 = _designated_train_loss(model, task, estimator)
    eval_loss, exact, f1 = _evaluate(model, task)
    record.epochs.append(EpochMetrics(0, train_loss0, eval_loss, exact, f1))

    data = task.train
    params = {**model.phi(), **model.theta()}
    for epoch in range(1, optimizer.epochs + 1):
        order = permutation(shuffle_rng, data.n)
        epoch_loss = 0.0
        for lo in range(0, data.n, optimizer.batch):
            batch = order[lo : lo + optimizer.batch]
            acc = {name: np.zeros_like(p) for name, p in params.items()}
            for i in batch:
                x, y = data.X[i], data.ys[i]
                gs, grad_theta, loss = _step(model, task, x, y, estimator)
                epoch_loss += loss
                for name, g in grad_theta.items():
                    acc[name] += g
                if gs is not None:
                    acc["W_enc"] += np.outer(gs, x)
                    acc["b_enc"] += gs
            scale = optimizer.lr / len(batch)
            for name in params:
                if name in ("W_enc", "b_enc"):
                    params[name] -= scale * acc[name]
                else:
                    params[name] -= scale * optimizer.decoder_lr_scale * acc[name]
        train_loss = epoch_loss / data.n
        eval_loss, exact, f1 = _evaluate(model, task)
        if not (np.isfinite(train_loss) and np.isfinite(eval_loss)):
            record.epochs.append(EpochMetrics(epoch, np.nan, np.nan, np.nan, np.nan))
            record.diverged = True
            break
        record.epochs.append(EpochMetrics(epoch, train_loss, eval_loss, exact, f1))
    record.wall_ms = (time.perf_counter() - t_start) * 1000.0
    return record


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def records_to_csv(records: Sequence[RunRecord]) -> str:
    """Render run records into the stable CSV schema.

    Diverged epochs carry the ``diverged`` sentinel in the metric columns.
    The wall_ms column is written as 0 so that repeated runs of the same
    config produce byte-identical files; measured times live on the run
    records and in console summaries only.
    """
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        cfg = rec.estimator
        prefix = (
            f"{rec.run_id},{cfg.rule.value},{_fmt(cfg.eta)},{cfg.steps},"
            f"{cfg.init.value},{_fmt(cfg.temperature)},{rec.seed}"
        )
        for em in rec.epochs:
            if np.isnan(em.train_loss):
                metrics = ",".join([DIVERGED] * 4)
            else:
                metrics = (
                    f"{_fmt(em.train_loss)},{_fmt(em.eval_loss)},"
                    f"{_fmt(em.latent_exact)},{_fmt(em.latent_f1)}"
                )
            lines.append(f"{prefix},{em.epoch},{metrics},0")
    return "\n".join(lines) + "\n"


def summarize_records(records: Sequence[RunRecord]) -> str:
    """Per-cell mean and standard deviation of final-epoch metrics."""
    cells: Dict[tuple, list] = {}
    for rec in records:
        key = (
            rec.estimator.rule.value,
            rec.estimator.eta,
            rec.estimator.steps,
            rec.estimator.init.value,
            rec.estimator.temperature,
        )
        cells.setdefault(key, []).append(rec)
    header = (
        "rule,eta,steps,init,temperature,n_runs,n_diverged,"
        "eval_loss_mean,eval_loss_sd,latent_exact_mean,latent_exact_sd"
    )
    lines = [header]
    for key in sorted(cells, key=str):
        recs = cells[key]
        finals = [r.epochs[-1] for r in recs if not r.diverged]
        n_div = sum(r.diverged for r in recs)
        if finals:
            el = np.array([f.eval_loss for f in finals])
            le = np.array([f.latent_exact for f in finals])
            stats = f"{_fmt(el.mean())},{_fmt(el.std())},{_fmt(le.mean())},{_fmt(le.std())}"
        else:
            stats = ",".join([DIVERGED] * 4)
        rule, eta, steps, init, temp = key
        lines.append(
            f"{rule},{_fmt(eta)},{steps},{init},{_fmt(temp)},{len(recs)},{n_div},{stats}"
        )
    return "\n".join(lines) + "\n"
