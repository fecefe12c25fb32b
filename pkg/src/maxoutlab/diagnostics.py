"""Measurements of how units behave during dropout training: sign classes
and saturation, sign transitions between snapshots, filter usage, gradient
variance across dropout masks, and the depth stress experiment."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dataio import Dataset
from .dropout import TrainConfig, TrainingDiverged, evaluate, sample_masks, train
from .network import (ZERO_WINS, ContractError, Maxout, NetworkSpec, Parameters, Rectifier,
                      RectifierPool, SoftmaxOutput, backward, forward, scale_params)
from .numerics import DomainError, Prng

log = logging.getLogger(__name__)

ZERO_TOL = 1e-12
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class ProbeSet:
    inputs: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_dataset(cls, data: Dataset, n: int = 1000) -> "ProbeSet":
        x = np.array(data.inputs[:n])
        y = np.array(data.labels[:n])
        x.flags.writeable = False
        y.flags.writeable = False
        return cls(x, y)


def _hidden_activations(params, spec, x, include_probs=None):
    if include_probs is not None:
        params = scale_params(params, include_probs)
    tr = forward(params, spec, x)
    n_hidden = len(spec.hidden)
    return tr, tr.h[:n_hidden]


def sign_classes(h: np.ndarray) -> np.ndarray:
    """-1 / 0 / +1 per activation; |a| <= 1e-12 counts as zero."""
    return np.where(np.abs(h) <= ZERO_TOL, 0, np.sign(h)).astype(np.int8)


def saturation_rates(params: Parameters, spec: NetworkSpec, probe, include_probs=None) -> list:
    """Per hidden layer, the fractions of (example, unit) activations that are
    zero, negative and positive."""
    _, hs = _hidden_activations(params, spec, probe.inputs, include_probs)
    out = []
    for h in hs:
        s = sign_classes(h)
        out.append({"zero": float(np.mean(s == 0)), "negative": float(np.mean(s < 0)),
                    "positive": float(np.mean(s > 0))})
    return out


@dataclass
class UnitStateSnapshot:
    """Sign class (n_probe, units) and winning piece per hidden layer."""

    signs: list
    argmax: list
    kinds: list

    def save(self, path):
        arrays = {"version": np.array(SNAPSHOT_VERSION), "kinds": np.array(self.kinds)}
        for l, (s, a) in enumerate(zip(self.signs, self.argmax)):
            arrays[f"signs{l}"] = s
            if a is not None:
                arrays[f"argmax{l}"] = a.astype(np.int16)
        with open(path, "wb") as f:  # a file handle keeps numpy from appending .npz
            np.savez_compressed(f, **arrays)

    @classmethod
    def load(cls, path) -> "UnitStateSnapshot":
        with np.load(path) as z:
            if int(z["version"]) != SNAPSHOT_VERSION:
                raise ContractError(f"snapshot version {int(z['version'])} not supported")
            kinds = [str(k) for k in z["kinds"]]
            signs = [z[f"signs{l}"] for l in range(len(kinds))]
            argmax = [z[f"argmax{l}"].astype(np.intp) if f"argmax{l}" in z else None
                      for l in range(len(kinds))]
        return cls(signs, argmax, kinds)


def snapshot(params: Parameters, spec: NetworkSpec, probe, include_probs=None) -> UnitStateSnapshot:
    tr, hs = _hidden_activations(params, spec, probe.inputs, include_probs)
    return UnitStateSnapshot([sign_classes(h) for h in hs], list(tr.argmax[:len(hs)]),
                             [k.name for k in spec.hidden])


def transition_rates(before: UnitStateSnapshot, after: UnitStateSnapshot) -> list:
    """Per layer, fractions of (example, unit) pairs that went from positive to
    non-positive and back.  For rectifiers non-positive means exactly 0."""
    if before.kinds != after.kinds or any(
            a.shape != b.shape for a, b in zip(before.signs, after.signs)):
        raise ContractError("snapshots cover different architectures or probe sets")
    out = []
    for s0, s1 in zip(before.signs, after.signs):
        out.append({"pos_to_nonpos": float(np.mean((s0 > 0) & (s1 <= 0))),
                    "nonpos_to_pos": float(np.mean((s0 <= 0) & (s1 > 0)))})
    return out


def filter_utilization(params: Parameters, spec: NetworkSpec, x, include_probs=None) -> list:
    """Per pooled hidden layer, the fraction of filters that never win their pool.

    A filter is used if it is the (lowest-index) maximum of its unit for at
    least one example.  When the constant 0 wins an include-zero pool no
    filter is credited.
    """
    kinds = spec.hidden
    if not any(k.pooled for k in kinds):
        raise ContractError("filter utilization needs pooled layers")
    tr, _ = _hidden_activations(params, spec, x, include_probs)
    out = []
    for kind, idx in zip(kinds, tr.argmax):
        if not kind.pooled:
            raise ContractError(f"layer kind {kind.name} has no filters to pool")
        used = np.zeros((kind.units, kind.pieces), dtype=bool)
        units = np.broadcast_to(np.arange(kind.units), idx.shape)
        hit = idx != ZERO_WINS
        used[units[hit], idx[hit]] = True
        out.append(float(1.0 - used.mean()))
    return out


def _sample_variance(g: np.ndarray) -> float:
    """Mean over coordinates of the ddof=1 variance along axis 0.

    Deviations are taken from the first sample so identical samples give
    exactly 0.
    """
    d = g - g[0]
    n = len(g)
    return float(np.mean((np.sum(d * d, axis=0) - np.sum(d, axis=0) ** 2 / n) / (n - 1)))


def gradient_mask_variance(params: Parameters, spec: NetworkSpec, x, y, n_masks: int,
                           rng: Prng, include_probs) -> list:
    """Per layer, ``{"W": ..., "b": ...}``: the mean over coordinates of the
    sample variance (ddof=1) of the batch gradient across ``n_masks`` masks.

    Mask ``s`` comes from ``rng.substream(s)``; accumulation is in that order.
    """
    if n_masks < 2:
        raise DomainError("need at least 2 masks")
    x = np.asarray(x, dtype=np.float64)
    grads = []
    for s in range(n_masks):
        masks = sample_masks(rng.substream(s), spec, include_probs, len(x))
        grads.append(backward(params, spec, forward(params, spec, x, masks), y))
    out = []
    for l in range(len(spec.layers)):
        gw = np.stack([g.W[l] for g in grads])
        gb = np.stack([g.b[l] for g in grads])
        out.append({"W": _sample_variance(gw), "b": _sample_variance(gb)})
    return out


DEPTH_UNITS, DEPTH_PIECES = 80, 5


def depth_spec(input_dim: int, classes: int, depth: int, kind: str,
               units: int = DEPTH_UNITS, pieces: int = DEPTH_PIECES) -> NetworkSpec:
    if kind == "maxout":
        layer = Maxout(units, pieces)
    elif kind == "rectifier_pool":
        layer = RectifierPool(units, pieces, include_zero=True)
    else:
        raise DomainError(f"unknown activation kind {kind!r}")
    return NetworkSpec(input_dim, (layer,) * depth + (SoftmaxOutput(classes),))


def depth_stress(base_config: TrainConfig, depths, seeds, train_data: Dataset,
                 kinds=("maxout", "rectifier_pool"), units: int = DEPTH_UNITS,
                 pieces: int = DEPTH_PIECES) -> list:
    """Train every (depth, kind, seed) network on ``train_data`` and report the
    final training error under weight scaling.

    Rows are dicts ``{depth, seed, kind, train_error}``; a diverged run gets
    ``train_error = None`` instead of aborting the table.
    """
    rows = []
    for depth in depths:
        if depth < 2:
            raise DomainError("depths must be >= 2")
        for seed in seeds:
            for kind in kinds:
                spec = depth_spec(train_data.dim, train_data.classes, depth, kind, units, pieces)
                cfg = replace(base_config, seed=seed)
                try:
                    fit = train(spec, train_data, None, cfg)
                    err = fit.records[-1].train_err if fit.records else fit.initial.train_err
                except TrainingDiverged as e:
                    log.warning("depth %d %s seed %d diverged: %s", depth, kind, seed, e)
                    err = None
                rows.append({"depth": depth, "seed": seed, "kind": kind, "train_error": err})
    return rows
