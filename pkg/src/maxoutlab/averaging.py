"""Dropout model averaging: weight scaling, sampled geometric means and
exhaustive mask enumeration."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dropout import sample_masks
from .network import (NetworkSpec, Parameters, SoftmaxOutput, forward, log_softmax,
                      scale_params)
from .numerics import DomainError, Prng

PROB_FLOOR = 1e-300
MAX_ENUM_DIM = 20


class CapacityError(ValueError):
    pass


def scaled_inference(params: Parameters, spec: NetworkSpec, include_probs, x) -> np.ndarray:
    """Predictive distribution of the full net with each layer's weights
    multiplied by the inclusion probability of that layer's input."""
    return forward(scale_params(params, include_probs), spec, x).probs


def _geo_logits(params, spec, x, n, rng, include_probs):
    """Sum of masked log-probabilities, yielded after each of ``n`` samples."""
    total = None
    for s in range(n):
        masks = sample_masks(rng.substream(s), spec, include_probs, len(x))
        lp = forward(params, spec, x, masks).log_probs
        total = lp if total is None else total + lp
        yield s + 1, total


def geometric_mean_sampled(params: Parameters, spec: NetworkSpec, x, n: int, rng: Prng,
                           include_probs) -> np.ndarray:
    """Renormalized geometric mean of ``n`` independently masked predictions.

    Sample ``s`` draws its masks from ``rng.substream(s)``, so the result is
    independent of evaluation order.  Log-probabilities come straight from
    log-softmax, so no class ever has probability exactly 0.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    for _, total in _geo_logits(params, spec, np.asarray(x, dtype=np.float64), n, rng, include_probs):
        pass
    return np.exp(log_softmax(total / n))


def _mask_table(d: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=d)))


def exact_mask_average(W, b, v, p: float) -> np.ndarray:
    """Weighted geometric mean of ``softmax(v*mu @ W + b)`` over all input masks.

    Each mask ``mu`` has weight ``prod p^mu (1-p)^(1-mu)``.  ``v`` may be a
    single vector or a batch of rows.
    """
    W = np.asarray(W, dtype=np.float64)
    d, c = W.shape
    spec = NetworkSpec(d, (SoftmaxOutput(c),))
    params = Parameters([W.reshape(d, c, 1)], [np.asarray(b, dtype=np.float64).reshape(c, 1)])
    return exact_input_mask_average(params, spec, v, p)


def exact_input_mask_average(params: Parameters, spec: NetworkSpec, v, p: float) -> np.ndarray:
    """Weighted geometric-mean prediction over all 2^d masks on the visible input.

    Hidden layers are not masked.  Exponential in ``d``; refuses d > 20.
    """
    d = spec.input_dim
    if d > MAX_ENUM_DIM:
        raise CapacityError(f"enumerating 2^{d} masks is too expensive (limit d <= {MAX_ENUM_DIM})")
    if not 0.0 <= p <= 1.0:
        raise DomainError("p must lie in [0, 1]")
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    V = v[None, :] if single else v
    mus = _mask_table(d)
    kept = mus.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # 0 * log(0) terms are 0: masks with zero weight drop out below
        logw = (np.where(kept > 0, kept * np.log(p), 0.0)
                + np.where(kept < d, (d - kept) * np.log1p(-p), 0.0))
    keep = np.isfinite(logw)
    mus, w = mus[keep], np.exp(logw[keep])
    out = np.empty((len(V), spec.layers[-1].units))
    for i, row in enumerate(V):
        lp = forward(params, spec, mus * row).log_probs
        out[i] = np.exp(log_softmax((w @ lp)[None, :]))[0]
    return out[0] if single else out


def kl_divergence(p, q) -> np.ndarray:
    """KL(p || q) along the last axis; ``q`` floored at 1e-300, 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), PROB_FLOOR)
    if p.shape != q.shape:
        raise DomainError(f"support sizes differ: {p.shape} vs {q.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


@dataclass
class AveragingRecord:
    sample_count: int
    test_error_geo: float
    test_error_scaled: float
    mean_kl: float
    kl_std: float = 0.0
    seed_count: int = 1
    mean_kl_reverse: float = 0.0


CURVE_COLUMNS = ["n", "error_geo", "error_scaled", "kl_mean", "kl_std", "seed_count"]


def averaging_runs(params: Parameters, spec: NetworkSpec, include_probs, x, y,
                   sample_counts, seeds) -> dict:
    """Per-seed records: ``{seed: [AveragingRecord per sample count]}``.

    For one seed the ensembles for all sample counts share a prefix of the
    same mask draws.  KL is KL(scaled || geometric mean), averaged over
    examples; the reverse direction is kept in ``mean_kl_reverse``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    counts = sorted(set(int(n) for n in sample_counts))
    if not counts or counts[0] < 1:
        raise DomainError("sample counts must be >= 1")
    scaled = scaled_inference(params, spec, include_probs, x)
    err_scaled = float(np.mean(np.argmax(scaled, axis=1) != y))
    out = {}
    for seed in seeds:
        recs = []
        for n, total in _geo_logits(params, spec, x, counts[-1], Prng(seed), include_probs):
            if n not in counts:
                continue
            geo = np.exp(log_softmax(total / n))
            recs.append(AveragingRecord(
                n, float(np.mean(np.argmax(geo, axis=1) != y)), err_scaled,
                float(kl_divergence(scaled, geo).mean()),
                mean_kl_reverse=float(kl_divergence(geo, scaled).mean())))
        out[seed] = recs
    return out


def averaging_curve(params: Parameters, spec: NetworkSpec, include_probs, x, y,
                    sample_counts, seeds) -> list:
    """Seed-averaged :class:`AveragingRecord` for every sample count."""
    runs = averaging_runs(params, spec, include_probs, x, y, sample_counts, seeds)
    per_seed = list(runs.values())
    out = []
    for i, first in enumerate(per_seed[0]):
        rs = [recs[i] for recs in per_seed]
        kls = np.array([r.mean_kl for r in rs])
        out.append(AveragingRecord(
            first.sample_count,
            float(np.mean([r.test_error_geo for r in rs])),
            first.test_error_scaled,
            float(kls.mean()),
            float(kls.std()),
            len(rs),
            float(np.mean([r.mean_kl_reverse for r in rs]))))
    return out


def curve_rows(records) -> list:
    return [[r.sample_count, r.test_error_geo, r.test_error_scaled, r.mean_kl, r.kl_std,
             r.seed_count] for r in records]
