"""Dropout training with momentum SGD, max-norm projection and the two
train-set completion protocols (continue on the full set, or retrain).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict, fields
from typing import Callable, Optional

import numpy as np

from .dataio import Dataset
from .network import (NetworkSpec, Parameters, backward, error_rate, forward,
                      init_params, log_likelihood, project_max_norm, scale_params)
from .numerics import DomainError, Prng, sample_bernoulli
from .serialization import write_csv

log = logging.getLogger(__name__)

# substream ids under TrainConfig.seed
INIT_STREAM, SHUFFLE_STREAM, MASK_STREAM = 0, 1, 2
EVAL_BATCH = 5000


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch, step, value):
        self.epoch, self.step, self.value = epoch, step, value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")


@dataclass
class MaskSet:
    """One binary array per layer input (visible input first)."""

    masks: list
    include_probs: tuple

    def __iter__(self):
        return iter(self.masks)

    def __len__(self):
        return len(self.masks)


def include_probs_for(spec: NetworkSpec, p_input: float, p_hidden: float) -> tuple:
    return (p_input,) + (p_hidden,) * (len(spec.layers) - 1)


def sample_masks(rng: Prng, spec: NetworkSpec, include_probs, batch_size: int,
                 share: bool = False) -> MaskSet:
    """Independent Bernoulli masks for every layer input of a batch.

    With ``share`` one mask row is drawn and repeated across the batch.
    """
    include_probs = tuple(float(p) for p in include_probs)
    widths = spec.input_widths()
    if len(include_probs) != len(widths):
        raise DomainError(f"need {len(widths)} inclusion probabilities, got {len(include_probs)}")
    masks = []
    for p, w in zip(include_probs, widths):
        if not 0.0 < p <= 1.0:
            raise DomainError(f"inclusion probability must lie in (0, 1], got {p}")
        if p == 1.0:
            masks.append(np.ones((batch_size, w)))
        elif share:
            masks.append(np.repeat(sample_bernoulli(rng, p, (1, w)), batch_size, axis=0))
        else:
            masks.append(sample_bernoulli(rng, p, (batch_size, w)))
    return MaskSet(masks, include_probs)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    lr_initial: float = 0.1
    lr_final: float = 0.01
    lr_decay_epochs: int = 10
    momentum_initial: float = 0.5
    momentum_final: float = 0.7
    momentum_ramp_epochs: int = 10
    norm_cap: Optional[float] = None
    norm_cap_bias: bool = False
    include_prob_input: float = 0.8
    include_prob_hidden: float = 0.5
    mask_sharing: str = "example"  # or "batch"
    init_sigma: float = 0.05
    init_bias: float = 0.0
    patience: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise DomainError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.lr_final <= self.lr_initial:
            raise DomainError("need 0 <= lr_final <= lr_initial")
        if not 0 <= self.momentum_initial <= self.momentum_final < 1:
            raise DomainError("need 0 <= momentum_initial <= momentum_final < 1")
        if self.norm_cap is not None and not self.norm_cap > 0:
            raise DomainError("norm_cap must be positive")
        if self.mask_sharing not in ("example", "batch"):
            raise DomainError("mask_sharing must be 'example' or 'batch'")
        for p in (self.include_prob_input, self.include_prob_hidden):
            if not 0 < p <= 1:
                raise DomainError("inclusion probabilities must lie in (0, 1]")

    def include_probs(self, spec: NetworkSpec) -> tuple:
        return include_probs_for(spec, self.include_prob_input, self.include_prob_hidden)

    def lr(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: linear decay, then floor."""
        t = 1.0 if self.lr_decay_epochs <= 0 else min(epoch / self.lr_decay_epochs, 1.0)
        return self.lr_initial + t * (self.lr_final - self.lr_initial)

    def momentum(self, epoch: int) -> float:
        t = 1.0 if self.momentum_ramp_epochs <= 0 else min(epoch / self.momentum_ramp_epochs, 1.0)
        return self.momentum_initial + t * (self.momentum_final - self.momentum_initial)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    train_err: float
    valid_nll: float = float("nan")
    valid_err: float = float("nan")
    lr: float = float("nan")
    momentum: float = float("nan")
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "extra"}
        d.update(self.extra)
        return d


METRIC_COLUMNS = ["epoch", "train_nll", "train_err", "valid_nll", "valid_err", "lr", "momentum"]


@dataclass
class FitResult:
    params: Parameters
    best_params: Parameters
    initial: EpochRecord
    records: list
    epoch_of_best_validation: int
    stopped_early: bool = False

    @property
    def best_record(self) -> EpochRecord:
        if self.epoch_of_best_validation == 0:
            return self.initial
        return self.records[self.epoch_of_best_validation - 1]

    def target_ll(self) -> float:
        """Training-subset log-likelihood at the best validation epoch."""
        return -self.best_record.train_nll

    def write_csv(self, path):
        write_metrics_csv(path, [self.initial] + self.records)


def write_metrics_csv(path, records):
    extra = []
    for r in records:
        extra += [k for k in r.extra if k not in extra]
    write_csv(path, METRIC_COLUMNS + extra, [r.row() for r in records])


def evaluate(params: Parameters, spec: NetworkSpec, include_probs, data: Dataset):
    """(mean NLL, error rate) under weight-scaling inference."""
    scaled = scale_params(params, include_probs)
    ll, errs = 0.0, 0
    for lo in range(0, len(data), EVAL_BATCH):
        x, y = data.inputs[lo:lo + EVAL_BATCH], data.labels[lo:lo + EVAL_BATCH]
        tr = forward(scaled, spec, x)
        ll += log_likelihood(tr, y) * len(y)
        errs += int(np.sum(np.argmax(tr.probs, axis=1) != y))
    return -ll / len(data), errs / len(data)


def train_step(params: Parameters, spec: NetworkSpec, batch, config: TrainConfig, rng: Prng,
               velocity: Optional[Parameters] = None, epoch: int = 0, step: int = 0):
    """One masked forward/backward pass and momentum update.

    Returns ``(params, velocity, metrics)``; the velocity starts at zero when
    not given.  Masks are fresh for every call.
    """
    x, y = batch
    if len(y) == 0:
        raise DomainError("empty batch")
    masks = sample_masks(rng, spec, config.include_probs(spec), len(y),
                         share=config.mask_sharing == "batch")
    trace = forward(params, spec, x, masks)
    ll = log_likelihood(trace, y)
    if not np.isfinite(ll):
        raise TrainingDiverged(epoch, step, -ll)
    grads = backward(params, spec, trace, y)
    lr, mom = config.lr(epoch), config.momentum(epoch)
    if velocity is None:
        velocity = params.zeros_like()
    new_v = Parameters([mom * v - lr * g for v, g in zip(velocity.W, grads.W)],
                       [mom * v - lr * g for v, g in zip(velocity.b, grads.b)])
    new_p = Parameters([p + v for p, v in zip(params.W, new_v.W)],
                       [p + v for p, v in zip(params.b, new_v.b)])
    if config.norm_cap is not None:
        new_p = project_max_norm(new_p, config.norm_cap, config.norm_cap_bias)
    metrics = {"nll": -ll, "err": error_rate(trace, y), "lr": lr, "momentum": mom}
    return new_p, new_v, metrics


def _run_epochs(params, spec, data: Dataset, config: TrainConfig, rng: Prng, start_epoch: int,
                n_epochs: int):
    """Yield ``(epoch, params)`` after each epoch of shuffled minibatch training."""
    shuffle = rng.substream(SHUFFLE_STREAM)
    masks = rng.substream(MASK_STREAM)
    velocity = None
    for e in range(start_epoch, start_epoch + n_epochs):
        order = shuffle.permutation(len(data))
        for step, lo in enumerate(range(0, len(data), config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            params, velocity, _ = train_step(params, spec, (data.inputs[idx], data.labels[idx]),
                                             config, masks, velocity, epoch=e, step=step)
        yield e + 1, params


def _record(epoch, params, spec, config, train_data, valid_data, callback):
    probs = config.include_probs(spec)
    tn, te = evaluate(params, spec, probs, train_data)
    vn, ve = evaluate(params, spec, probs, valid_data) if valid_data is not None else (np.nan, np.nan)
    lr_epoch = max(epoch - 1, 0)
    rec = EpochRecord(epoch, tn, te, vn, ve, config.lr(lr_epoch), config.momentum(lr_epoch))
    if callback is not None:
        rec.extra.update(callback(epoch, params) or {})
    return rec


def train(spec: NetworkSpec, train_data: Dataset, valid_data: Optional[Dataset],
          config: TrainConfig, callback: Optional[Callable] = None,
          params: Optional[Parameters] = None) -> FitResult:
    """Dropout training with per-epoch evaluation under weight scaling.

    ``callback(epoch, params)`` runs after evaluation at every epoch,
    including epoch 0 (the initial model), and may return extra columns.
    With ``config.patience`` set, training stops once the validation error
    has not improved for that many epochs.
    """
    rng = Prng(config.seed)
    if params is None:
        params = init_params(spec, rng.substream(INIT_STREAM), config.init_sigma, config.init_bias)
    initial = _record(0, params, spec, config, train_data, valid_data, callback)
    best_err, best_epoch, best_params = initial.valid_err, 0, params
    records, stopped = [], False
    for epoch, params in _run_epochs(params, spec, train_data, config, rng, 0, config.epochs):
        rec = _record(epoch, params, spec, config, train_data, valid_data, callback)
        records.append(rec)
        log.info("epoch %d train_nll %.4f valid_err %.4f", epoch, rec.train_nll, rec.valid_err)
        if valid_data is None or rec.valid_err < best_err or np.isnan(best_err):
            best_err, best_epoch, best_params = rec.valid_err, epoch, params
        if config.patience is not None and epoch - best_epoch >= config.patience:
            stopped = True
            break
    return FitResult(params, best_params, initial, records, best_epoch, stopped)


@dataclass
class CompletionResult:
    params: Parameters
    epochs_run: int
    reached: bool
    series: list  # monitored log-likelihood, index 0 = before any training


def _complete(params, spec, data, monitor_data, target_ll, config, rng, start_epoch, epoch_cap):
    probs = config.include_probs(spec)

    def monitored(p):
        return -evaluate(p, spec, probs, monitor_data)[0]

    series = [monitored(params)]
    if series[0] >= target_ll:
        return CompletionResult(params, 0, True, series)
    epochs = 0
    for epoch, params in _run_epochs(params, spec, data, config, rng, start_epoch, epoch_cap):
        epochs += 1
        series.append(monitored(params))
        if series[-1] >= target_ll:
            return CompletionResult(params, epochs, True, series)
    return CompletionResult(params, epochs, False, series)


def complete_by_continuation(fit: FitResult, spec: NetworkSpec, full_data: Dataset,
                             valid_data: Dataset, target_ll: float, config: TrainConfig,
                             monitor: str = "valid", epoch_cap: int = 100) -> CompletionResult:
    """Keep training the best model on the full set until the monitored
    log-likelihood reaches ``target_ll``.

    ``monitor="valid"`` tracks the validation-set likelihood (which is part
    of the full set now); ``"train"`` tracks the full training set.  The
    schedule resumes at the best epoch; velocity restarts at zero.
    """
    monitor_data = {"valid": valid_data, "train": full_data}[monitor]
    rng = Prng(config.seed).substream(10)
    return _complete(fit.best_params, spec, full_data, monitor_data, target_ll, config, rng,
                     fit.epoch_of_best_validation, epoch_cap)


def complete_by_retrain(spec: NetworkSpec, full_data: Dataset, target_ll: float,
                        config: TrainConfig, epoch_cap: int,
                        monitor_data: Optional[Dataset] = None) -> CompletionResult:
    """Train a fresh model on the full set, stopping once the monitored
    likelihood (full set by default) reaches ``target_ll`` or after
    ``epoch_cap`` epochs, whichever comes first."""
    rng = Prng(config.seed)
    params = init_params(spec, rng.substream(INIT_STREAM), config.init_sigma, config.init_bias)
    if epoch_cap == 0:
        return CompletionResult(params, 0, False, [])
    return _complete(params, spec, full_data, monitor_data or full_data, target_ll, config, rng,
                     0, epoch_cap)
