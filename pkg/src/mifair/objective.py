"""Fairness-regularized training: loss terms, alternating updates, annealing and model selection.

The regularized objective is ``J = T + S + D`` where

* ``T`` is the negative log-likelihood of the true class,
* ``S = alpha * mean log q(group | outcome)`` under the sensitive decoder,
* ``D = alpha * mean(w_embed . outcome + w_group . s)`` over real pairs
  (one-hot true group) and generated pairs (Gumbel-Softmax sample from the
  decoder), in equal numbers.

Each batch runs three updates: the decoder maximizes its likelihood, the
linear estimator learns to tell real pairs from generated ones, and the
extractor plus target head minimize ``J`` with the other two frozen.
"""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from . import metrics
from . import tensor as T
from .data import EncodedDataset, batches
from .model import (
    GumbelConfig,
    ModelBundle,
    ModelConfig,
    density_ratio,
    extract,
    gumbel_sample,
    init_bundle,
    predict_sensitive,
    predict_target,
)
from .tensor import AdamState, NonFiniteError, Tensor

log = logging.getLogger(__name__)


class Variant(str, Enum):
    TSD = "tsd"
    TS = "ts"
    TD = "td"
    VANILLA = "vanilla"
    EO_TSD = "eo"

    @property
    def uses_s(self) -> bool:
        return self in (Variant.TSD, Variant.TS, Variant.EO_TSD)

    @property
    def uses_d(self) -> bool:
        return self in (Variant.TSD, Variant.TD, Variant.EO_TSD)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.1
    variant: Variant = Variant.TSD
    epochs: int = 100
    patience: int = 5
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 128
    tau0: float = 1.0
    anneal_period: int = 50
    anneal_factor: float = 2.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("epochs, patience and batch_size must be >= 1")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be > 0")
        if self.anneal_period < 1 or not self.anneal_factor > 0:
            raise ValueError("anneal_period must be >= 1 and anneal_factor > 0")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "variant": self.variant.value,
            "epochs": self.epochs,
            "patience": self.patience,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "tau0": self.tau0,
            "anneal_period": self.anneal_period,
            "anneal_factor": self.anneal_factor,
            "seeds": list(self.seeds),
        }


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    group: np.ndarray
    n_groups: int

    @classmethod
    def from_dataset(cls, ds: EncodedDataset, rows=None) -> "Batch":
        if rows is None:
            return cls(ds.X, ds.y, ds.group, ds.group_card)
        return cls(ds.X[rows], ds.y[rows], ds.group[rows], ds.group_card)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def onehot(self) -> np.ndarray:
        out = np.zeros((len(self), self.n_groups))
        out[np.arange(len(self)), self.group] = 1.0
        return out

    def positives(self) -> "Batch":
        keep = self.y == 1
        return Batch(self.x[keep], self.y[keep], self.group[keep], self.n_groups)


@dataclass
class EpochReport:
    epoch: int
    T: float
    S: float | None
    D: float | None
    tau: float
    val_fairness: float
    val_micro_f1: float

    def log_line(self) -> str:
        fmt = lambda v: "" if v is None else f"{v:.10g}"  # noqa: E731
        return "\t".join(
            [str(self.epoch), fmt(self.T), fmt(self.S), fmt(self.D), fmt(self.tau), fmt(self.val_fairness), fmt(self.val_micro_f1)]
        )

    LOG_HEADER = "epoch\tT\tS\tD\ttau\tval_imparity\tval_micro_f1"


# ---------------------------------------------------------------------------
# loss terms


def anneal(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.tau0 / cfg.anneal_factor ** (epoch // cfg.anneal_period)


def _term_s(log_q: Tensor, alpha: float) -> Tensor:
    return T.scale(T.mean(log_q), alpha)


def _term_d(embedding: Tensor, real_s: np.ndarray, fake_s: Tensor, bundle: ModelBundle, alpha: float) -> Tensor:
    both_y = T.concat([embedding, embedding])
    both_s = T.concat([Tensor(real_s), fake_s])
    return T.scale(T.mean(density_ratio(both_y, both_s, bundle)), alpha)


def loss_T(batch: Batch, bundle: ModelBundle) -> Tensor:
    return T.nll_loss(predict_target(extract(batch.x, bundle), bundle), batch.y)


def loss_S(batch: Batch, bundle: ModelBundle, alpha: float) -> Tensor:
    _, log_q = predict_sensitive(extract(batch.x, bundle), bundle, batch.group)
    return _term_s(log_q, alpha)


def loss_D(batch: Batch, bundle: ModelBundle, gumbel: GumbelConfig, alpha: float, noise=None) -> Tensor:
    emb = extract(batch.x, bundle)
    log_o, _ = predict_sensitive(emb, bundle)
    fake = gumbel_sample(log_o, gumbel, noise)
    return _term_d(emb, batch.onehot, fake, bundle, alpha)


def estimator_loss(batch: Batch, bundle: ModelBundle, gumbel: GumbelConfig, noise=None) -> Tensor:
    """Logistic loss of real pairs (label +1) against generated pairs (label -1)."""
    emb = extract(batch.x, bundle)
    log_o, _ = predict_sensitive(emb, bundle)
    fake = gumbel_sample(log_o, gumbel, noise)
    scores = density_ratio(T.concat([emb, emb]), T.concat([Tensor(batch.onehot), fake]), bundle)
    m = len(batch)
    return T.logistic_loss(scores, np.concatenate([np.ones(m), -np.ones(m)]))


def decoder_loss(batch: Batch, bundle: ModelBundle) -> Tensor:
    _, log_q = predict_sensitive(extract(batch.x, bundle), bundle, batch.group)
    return T.scale(T.mean(log_q), -1.0)


def eo_losses(batch: Batch, bundle: ModelBundle, gumbel: GumbelConfig, alpha: float, noise=None) -> tuple[Tensor, Tensor]:
    """The S and D terms restricted to positive (y = 1) rows; ``noise`` covers those rows only."""
    pos = batch.positives()
    if len(pos) == 0:
        log.warning("batch has no positive samples; equal-opportunity terms contribute 0")
        return Tensor(0.0), Tensor(0.0)
    return loss_S(pos, bundle, alpha), loss_D(pos, bundle, gumbel, alpha, noise)


@dataclass
class Terms:
    T: Tensor
    S: Tensor | None
    D: Tensor | None

    @property
    def J(self) -> Tensor:
        out = self.T
        for t in (self.S, self.D):
            if t is not None:
                out = T.add(out, t)
        return out


def objective_terms(
    batch: Batch, bundle: ModelBundle, variant: Variant, alpha: float, gumbel: GumbelConfig, noise=None
) -> Terms:
    """All terms of the chosen variant from a single forward pass."""
    variant = Variant(variant)
    emb = extract(batch.x, bundle)
    t = T.nll_loss(predict_target(emb, bundle), batch.y)
    s = d = None
    if variant == Variant.VANILLA:
        return Terms(t, None, None)
    if variant == Variant.EO_TSD:
        keep = np.flatnonzero(batch.y == 1)
        if keep.size == 0:
            log.warning("batch has no positive samples; equal-opportunity terms contribute 0")
            return Terms(t, Tensor(0.0), Tensor(0.0))
        emb = T.take_rows(emb, keep)
        batch = Batch(batch.x[keep], batch.y[keep], batch.group[keep], batch.n_groups)
    log_o, log_q = predict_sensitive(emb, bundle, batch.group)
    if variant.uses_s:
        s = _term_s(log_q, alpha)
    if variant.uses_d:
        d = _term_d(emb, batch.onehot, gumbel_sample(log_o, gumbel, noise), bundle, alpha)
    return Terms(t, s, d)


# ---------------------------------------------------------------------------
# training


@contextmanager
def trainable(bundle: ModelBundle, theta=False, decoder=False, estimator=False) -> Iterator[None]:
    saved = [p.requires_grad for p in bundle.parameters()]
    bundle.set_trainable(theta, decoder, estimator)
    try:
        yield
    finally:
        for p, flag in zip(bundle.parameters(), saved):
            p.requires_grad = flag


def _step(loss: Tensor, params: list[Tensor], state: AdamState) -> None:
    T.zero_grads(params)
    T.backward(loss)
    T.adam_step(params, [p.grad for p in params], state)
    T.zero_grads(params)


@dataclass
class Optimizers:
    theta: AdamState
    decoder: AdamState
    estimator: AdamState

    @classmethod
    def for_config(cls, cfg: TrainConfig) -> "Optimizers":
        mk = lambda: AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)  # noqa: E731
        return cls(mk(), mk(), mk())


def train_batch(batch: Batch, bundle: ModelBundle, cfg: TrainConfig, opt: Optimizers, gumbel: GumbelConfig) -> Terms:
    """Decoder step, estimator step, then the extractor/head step on ``J``."""
    adv = batch.positives() if cfg.variant == Variant.EO_TSD else batch
    if len(adv):
        with trainable(bundle, decoder=True):
            _step(decoder_loss(adv, bundle), bundle.decoder_params, opt.decoder)
        with trainable(bundle, estimator=True):
            _step(estimator_loss(adv, bundle, gumbel), bundle.estimator_params, opt.estimator)
    with trainable(bundle, theta=True):
        terms = objective_terms(batch, bundle, cfg.variant, cfg.alpha, gumbel)
        _step(terms.J, bundle.theta, opt.theta)
    return terms


def train_epoch(
    train: EncodedDataset,
    bundle: ModelBundle,
    cfg: TrainConfig,
    epoch: int,
    seed: int,
    opt: Optimizers,
    gumbel: GumbelConfig,
) -> dict[str, float | None]:
    """One pass over shuffled mini-batches; returns the mean T/S/D of the theta steps."""
    gumbel.temperature = anneal(epoch, cfg)
    sums = {"T": 0.0, "S": 0.0, "D": 0.0}
    count = 0
    for i, rows in enumerate(batches(train.n, cfg.batch_size, seed, epoch)):
        batch = Batch.from_dataset(train, rows)
        try:
            terms = train_batch(batch, bundle, cfg, opt, gumbel)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite value at epoch {epoch}, batch {i} (seed {seed}): {exc}") from exc
        for k in sums:
            t = getattr(terms, k)
            if t is not None:
                sums[k] += t.item() * len(batch)
        count += len(batch)
    return {
        "T": sums["T"] / count,
        "S": sums["S"] / count if cfg.variant.uses_s else None,
        "D": sums["D"] / count if cfg.variant.uses_d else None,
    }


def predict(bundle: ModelBundle, X: np.ndarray) -> np.ndarray:
    with trainable(bundle):
        return predict_target(extract(X, bundle), bundle).values.argmax(axis=1)


def evaluate_bundle(
    bundle: ModelBundle, ds: EncodedDataset, groups=None, n_groups=None, imparity_vanilla=None
) -> metrics.MetricsReport:
    groups = ds.group if groups is None else groups
    n_groups = ds.group_card if n_groups is None else n_groups
    pred = predict(bundle, ds.X)
    return metrics.evaluate_predictions(pred, ds.y, groups, ds.n_classes, n_groups, imparity_vanilla)


def validation_scores(bundle: ModelBundle, val: EncodedDataset, variant: Variant) -> tuple[float, float]:
    """(fairness gap, micro F1) on the validation split."""
    pred = predict(bundle, val.X)
    micro, _ = metrics.micro_macro_f1(pred, val.y, val.n_classes)
    if variant == Variant.EO_TSD:
        gap = metrics.eo_disparity(pred, val.group, val.y)
    else:
        gap = metrics.imparity(pred, val.group, val.n_classes, val.group_card)
    return gap, micro


class EarlyStopping:
    """Tracks the best value seen; stops after ``patience`` epochs without strict improvement."""

    def __init__(self, patience: int, mode: str = "min"):
        if mode not in ("min", "max"):
            raise ValueError("mode must be 'min' or 'max'")
        self.patience = patience
        self.mode = mode
        self.best: float | None = None
        self.best_index: int | None = None
        self.bad = 0
        self.seen = 0

    def update(self, value: float) -> bool:
        better = self.best is None or (value < self.best if self.mode == "min" else value > self.best)
        if better:
            self.best, self.best_index, self.bad = value, self.seen, 0
        else:
            self.bad += 1
        self.seen += 1
        return better

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience


@dataclass
class FitResult:
    bundle: ModelBundle
    reports: list[EpochReport]
    best_epoch: int
    seed: int
    stopped_early: bool = False
    history: list[str] = field(default_factory=list)

    @property
    def best_report(self) -> EpochReport:
        return self.reports[self.best_epoch]


def model_config_for(ds: EncodedDataset, hidden: Sequence[int] = (32,), embed_dim: int = 32) -> ModelConfig:
    return ModelConfig(ds.input_dim, ds.n_classes, ds.group_card, tuple(hidden), embed_dim)


def fit(
    train: EncodedDataset,
    val: EncodedDataset,
    cfg: TrainConfig,
    seed: int = 0,
    hidden: Sequence[int] = (32,),
    embed_dim: int = 32,
    on_epoch=None,
) -> FitResult:
    """Train one seed and return the checkpoint selected on validation.

    Debiasing variants keep the epoch with the lowest validation imparity
    (true-positive-rate gap for the equal-opportunity variant); the vanilla
    classifier keeps the highest validation micro F1.
    """
    if cfg.variant == Variant.EO_TSD and train.n_classes != 2:
        raise ValueError("the equal-opportunity variant needs a binary label")
    init_seq, gumbel_seq = np.random.SeedSequence(seed).spawn(2)
    bundle = init_bundle(model_config_for(train, hidden, embed_dim), np.random.default_rng(init_seq))
    gumbel = GumbelConfig(temperature=cfg.tau0, seed=gumbel_seq)
    opt = Optimizers.for_config(cfg)
    stopper = EarlyStopping(cfg.patience, "max" if cfg.variant == Variant.VANILLA else "min")
    reports: list[EpochReport] = []
    best = bundle.copy()
    stopped = False
    for epoch in range(cfg.epochs):
        tau = anneal(epoch, cfg)
        losses = train_epoch(train, bundle, cfg, epoch, seed, opt, gumbel)
        if not math.isfinite(losses["T"]):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} (seed {seed})")
        gap, micro = validation_scores(bundle, val, cfg.variant)
        rep = EpochReport(epoch, losses["T"], losses["S"], losses["D"], tau, gap, micro)
        reports.append(rep)
        if on_epoch is not None:
            on_epoch(rep)
        log.debug("seed %d %s", seed, rep.log_line())
        if stopper.update(micro if cfg.variant == Variant.VANILLA else gap):
            best = bundle.copy()
        if stopper.should_stop:
            stopped = True
            break
    return FitResult(best, reports, stopper.best_index, seed, stopped)
