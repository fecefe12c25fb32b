"""JSON experiment configs: validation, dataset assembly and the train pipeline.

A config has the sections ``dataset``, ``model``, ``training``, ``protocol``
plus ``output`` and ``seed``.  Every section is checked against a fixed key
set before any work starts; problems are reported with the line of the
offending key in the source file.
"""
from __future__ import annotations

import copy
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataio import Dataset, gcn, load_dataset, load_mnist, split, synth_teacher, zca_fit
from .dropout import (TrainConfig, complete_by_continuation, complete_by_retrain, evaluate, train,
                      write_metrics_csv)
from .network import Maxout, NetworkSpec, SoftmaxOutput, layer_from_dict
from .numerics import DomainError, Prng
from .serialization import save_model, write_csv

log = logging.getLogger(__name__)

RECIPE_DIR = Path(__file__).with_name("recipes")


class ConfigError(ValueError):
    """Invalid experiment config; ``line`` points into the source file when known."""

    def __init__(self, msg, source=None, line=None):
        self.source, self.line = source, line
        where = f"{source or '<config>'}:{line}: " if line else (f"{source}: " if source else "")
        super().__init__(where + msg)


DATASET_DEFAULTS = {
    "source": "synthetic",      # mnist | synthetic | file
    "root": None,               # mnist directory (defaults to $MAXOUTLAB_DATA)
    "path": None,               # dataset container for source=file
    "test_path": None,
    "train_n": None,            # keep only the first train_n examples before splitting
    "split": {"valid_n": None, "per_class": None, "seed": None},
    "preprocessing": {"gcn": None, "zca": None},
    "synthetic": {"n": 600, "test_n": 300, "input_dim": 20, "classes": 3, "units": 8,
                  "pieces": 3, "sigma": 1.0},
}
PROTOCOL_DEFAULTS = {"kind": "none", "monitor": "valid", "epoch_cap": 100, "target": "auto"}
TOP_KEYS = ("dataset", "model", "training", "protocol", "output", "seed")
GCN_KEYS = ("scale", "bias")
ZCA_KEYS = ("eps",)


def _line_of(text: Optional[str], *path) -> Optional[int]:
    """Best-effort line number of the last key in ``path`` inside ``text``."""
    if not text:
        return None
    pos = 0
    for key in path:
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


@dataclass
class ExperimentConfig:
    dataset: dict
    model: dict
    training: TrainConfig
    protocol: dict
    output: str = "runs/experiment"
    seed: int = 0
    source: Optional[str] = field(default=None, compare=False)

    # -- loading ---------------------------------------------------------
    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from None
        return cls.from_text(text, str(path))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", source, e.lineno) from None
        return cls.from_dict(raw, source, text)

    @classmethod
    def from_dict(cls, raw, source: str = "<config>", text: Optional[str] = None):
        def fail(msg, *path):
            raise ConfigError(msg, source, _line_of(text, *path))

        def check_keys(d, allowed, *path):
            if not isinstance(d, dict):
                fail(f"section '{'.'.join(path)}' must be an object", *path)
            for k in d:
                if k not in allowed:
                    where = f" in section '{'.'.join(path)}'" if path else ""
                    fail(f"unknown key '{k}'{where}", *path, k)

        def merged(defaults, given, *path):
            check_keys(given, defaults, *path)
            out = copy.deepcopy(defaults)
            for k, v in given.items():
                if isinstance(defaults[k], dict) and v is not None:
                    out[k] = merged(defaults[k], v, *path, k)
                else:
                    out[k] = v
            return out

        check_keys(raw, TOP_KEYS)
        for k in ("dataset", "model", "training"):
            if k not in raw:
                fail(f"missing section '{k}'")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            fail("seed must be a non-negative integer", "seed")

        dataset = merged(DATASET_DEFAULTS, raw["dataset"], "dataset")
        if dataset["source"] not in ("mnist", "synthetic", "file"):
            fail(f"unknown dataset source {dataset['source']!r}", "dataset", "source")
        if dataset["source"] == "file" and not dataset["path"]:
            fail("source 'file' needs a path", "dataset", "source")
        sp = dataset["split"]
        if (sp["valid_n"] is None) == (sp["per_class"] is None):
            fail("give exactly one of valid_n or per_class", "dataset", "split")
        if sp["seed"] is None:
            sp["seed"] = seed
        pre = dataset["preprocessing"]
        if pre["gcn"] is not None:
            check_keys(pre["gcn"], GCN_KEYS, "dataset", "preprocessing", "gcn")
            pre["gcn"] = {"scale": 55.0, "bias": 10.0, **pre["gcn"]}
        if pre["zca"] is not None:
            check_keys(pre["zca"], ZCA_KEYS, "dataset", "preprocessing", "zca")
            pre["zca"] = {"eps": 0.1, **pre["zca"]}

        model = raw["model"]
        check_keys(model, ("layers",), "model")
        if not isinstance(model.get("layers"), list) or not model["layers"]:
            fail("model.layers must be a non-empty list", "model")
        layers = []
        for i, l in enumerate(model["layers"]):
            try:
                layers.append(layer_from_dict(l))
            except (TypeError, ValueError, KeyError) as e:
                fail(f"layer {i}: {e}", "model", "layers")
        if not isinstance(layers[-1], SoftmaxOutput):
            fail("the last layer must be softmax", "model", "layers")

        training = raw["training"]
        check_keys(training, TrainConfig.field_names(), "training")
        if "seed" in training and training["seed"] != seed:
            fail("training.seed conflicts with the top-level seed", "training", "seed")
        try:
            tc = TrainConfig(**{**training, "seed": seed})
        except (TypeError, DomainError) as e:
            fail(str(e), "training")

        protocol = merged(PROTOCOL_DEFAULTS, raw.get("protocol", {}), "protocol")
        if protocol["kind"] not in ("none", "continuation", "retrain"):
            fail(f"unknown protocol {protocol['kind']!r}", "protocol", "kind")
        if protocol["monitor"] not in ("valid", "train"):
            fail("protocol.monitor must be 'valid' or 'train'", "protocol", "monitor")
        if not (protocol["target"] == "auto" or isinstance(protocol["target"], (int, float))):
            fail("protocol.target must be 'auto' or a number", "protocol", "target")

        cfg = cls(dataset, {"layers": [l.to_dict() for l in layers]}, tc, protocol,
                  str(raw.get("output", "runs/experiment")), seed, source)
        return cfg

    def to_dict(self) -> dict:
        return {"seed": self.seed, "output": self.output, "dataset": copy.deepcopy(self.dataset),
                "model": copy.deepcopy(self.model), "training": self.training.to_dict(),
                "protocol": dict(self.protocol)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **training) -> "ExperimentConfig":
        return replace(self, training=replace(self.training, **training))

    def network_spec(self, input_dim: int) -> NetworkSpec:
        return NetworkSpec(input_dim, tuple(layer_from_dict(l) for l in self.model["layers"]))


def load_recipe(name: str) -> ExperimentConfig:
    """A config shipped with the package, e.g. ``"mnist_desk"``."""
    return ExperimentConfig.from_file(RECIPE_DIR / f"{name}.json")


@dataclass
class Splits:
    train: Dataset
    valid: Dataset
    full: Dataset       # train + valid, for the completion protocols
    test: Optional[Dataset]


def _preprocess(pre: dict, fit_on: Dataset, parts):
    out = list(parts)
    steps = []
    if pre.get("gcn"):
        g = pre["gcn"]
        out = [None if d is None else Dataset(gcn(d.inputs, g["scale"], g["bias"]), d.labels, d.meta)
               for d in out]
        fit_on = Dataset(gcn(fit_on.inputs, g["scale"], g["bias"]), fit_on.labels)
        steps.append({"gcn": g})
    if pre.get("zca"):
        t = zca_fit(fit_on.inputs, pre["zca"]["eps"])
        out = [None if d is None else Dataset(t.apply(d.inputs), d.labels, d.meta) for d in out]
        steps.append({"zca": pre["zca"]})
    for d in out:
        if d is not None:
            d.meta = dict(d.meta, preprocessing=steps)
    return out


def build_datasets(ds: dict) -> Splits:
    """Load, split and preprocess as described by a dataset section.

    Preprocessing statistics (ZCA) are fitted on the training part only.
    """
    if ds["source"] == "mnist":
        base, test = load_mnist("train", ds["root"]), load_mnist("test", ds["root"])
    elif ds["source"] == "file":
        base = load_dataset(ds["path"])
        test = load_dataset(ds["test_path"]) if ds["test_path"] else None
    else:
        s = ds["synthetic"]
        spec = NetworkSpec(s["input_dim"], (Maxout(s["units"], s["pieces"]),
                                            SoftmaxOutput(s["classes"])))
        both = synth_teacher(Prng(ds["split"]["seed"]).substream(7), spec, s["n"] + s["test_n"],
                             s["sigma"])
        base, test = both.subset(slice(0, s["n"])), both.subset(slice(s["n"], None))
    if ds["train_n"] is not None:
        base = base.head(int(ds["train_n"]))
    sp = ds["split"]
    tr, va = split(base, valid_n=sp["valid_n"], per_class=sp["per_class"], seed=sp["seed"])
    full = Dataset(np.concatenate([tr.inputs, va.inputs]), np.concatenate([tr.labels, va.labels]),
                   dict(base.meta))
    tr, va, full, test = _preprocess(ds["preprocessing"], tr, [tr, va, full, test])
    return Splits(tr, va, full, test)


@dataclass
class RunResult:
    spec: NetworkSpec
    params: object
    fit: object
    completion: object
    splits: Splits
    test_nll: float = float("nan")
    test_err: float = float("nan")


def model_meta(cfg: ExperimentConfig, extra: Optional[dict] = None) -> dict:
    meta = {"config": cfg.to_dict(), "include_probs": None}
    meta.update(extra or {})
    return meta


def run_experiment(cfg: ExperimentConfig, out_dir=None, splits: Optional[Splits] = None,
                   callback=None) -> RunResult:
    """Train, apply the completion protocol, evaluate on test, write artifacts.

    ``out_dir`` receives ``metrics.csv``, ``model.mxo`` and
    ``config.resolved.json`` (plus ``completion.csv`` for a protocol run).
    Nothing is written when ``out_dir`` is None.
    """
    splits = splits or build_datasets(cfg.dataset)
    spec = cfg.network_spec(splits.train.dim)
    tc = cfg.training
    fit = train(spec, splits.train, splits.valid, tc, callback=callback)
    kind, completion = cfg.protocol["kind"], None
    target = cfg.protocol["target"]
    target = fit.target_ll() if target == "auto" else float(target)
    if kind == "continuation":
        completion = complete_by_continuation(fit, spec, splits.full, splits.valid, target, tc,
                                              cfg.protocol["monitor"], cfg.protocol["epoch_cap"])
    elif kind == "retrain":
        completion = complete_by_retrain(spec, splits.full, target, tc, cfg.protocol["epoch_cap"])
    params = completion.params if completion is not None else fit.best_params
    result = RunResult(spec, params, fit, completion, splits)
    probs = tc.include_probs(spec)
    if splits.test is not None:
        result.test_nll, result.test_err = evaluate(params, spec, probs, splits.test)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fit.write_csv(out / "metrics.csv")
        (out / "config.resolved.json").write_text(cfg.dumps())
        summary = {"best_epoch": fit.epoch_of_best_validation, "protocol": kind,
                   "test_err": result.test_err, "test_nll": result.test_nll}
        if completion is not None:
            summary.update(target_ll=target, completion_epochs=completion.epochs_run,
                           target_reached=completion.reached)
            write_csv(out / "completion.csv", ["epoch", "monitored_ll", "target_ll"],
                      [[i, v, target] for i, v in enumerate(completion.series)])
        save_model(out / "model.mxo", spec, params,
                   model_meta(cfg, {"include_probs": list(probs), "summary": summary}))
    return result


# -- sweep -------------------------------------------------------------------

ARCHITECTURES = ("maxout", "rectifier_pool", "rectifier", "rectifier_wide")
LR_RANGE = (1e-3, 1.0)           # log-uniform
MOMENTUM_FINAL_RANGE = (0.5, 0.9)  # uniform


def sample_schedules(n: int, seed: int) -> list:
    """``n`` tuples ``(lr_initial, momentum_final, dropout_seed)``."""
    rng = Prng(seed).substream(3)
    lo, hi = np.log(LR_RANGE[0]), np.log(LR_RANGE[1])
    out = []
    for _ in range(n):
        lr = float(np.exp(rng.uniform(lo, hi)))
        mom = float(rng.uniform(*MOMENTUM_FINAL_RANGE))
        out.append((lr, mom, int(rng.integers(0, 2**31 - 1))))
    return out


def architecture_variant(spec: NetworkSpec, arch: str) -> NetworkSpec:
    """Rewrite every maxout hidden layer of ``spec`` as one of the comparison
    architectures: rectifier pooling with the same units and pieces, a plain
    rectifier with the same unit count, or one with ``k`` times the units."""
    from .network import Rectifier, RectifierPool

    def swap(layer):
        if not isinstance(layer, Maxout):
            return layer
        if arch == "maxout":
            return layer
        if arch == "rectifier_pool":
            return RectifierPool(layer.units, layer.pieces, include_zero=True)
        if arch == "rectifier":
            return Rectifier(layer.units)
        if arch == "rectifier_wide":
            return Rectifier(layer.units * layer.pieces)
        raise DomainError(f"unknown architecture {arch!r}")

    if not any(isinstance(l, Maxout) for l in spec.layers):
        raise DomainError("sweep base model needs at least one maxout layer")
    return NetworkSpec(spec.input_dim, tuple(swap(l) for l in spec.layers))


LEADERBOARD_COLUMNS = ["run_id", "schedule", "architecture", "lr_initial", "lr_final",
                       "momentum_final", "dropout_seed", "best_valid_err", "best_epoch",
                       "epochs_run", "status"]


def sweep(cfg: ExperimentConfig, n: int, seed: int, window: int = 100,
          architectures=ARCHITECTURES, splits: Optional[Splits] = None) -> list:
    """Random schedule search run across the comparison architectures.

    Each run stops once validation error has not improved for ``window``
    epochs (or at ``training.epochs``).  The learning-rate floor keeps the
    base config's ratio ``lr_final / lr_initial``; a failed run is recorded
    with its status and the sweep continues.  Rows come back sorted by run id.
    """
    splits = splits or build_datasets(cfg.dataset)
    base_spec = cfg.network_spec(splits.train.dim)
    base = cfg.training
    ratio = base.lr_final / base.lr_initial
    rows = []
    for i, (lr, mom, dseed) in enumerate(sample_schedules(n, seed)):
        tc = replace(base, lr_initial=lr, lr_final=lr * ratio, momentum_final=mom,
                     momentum_initial=min(base.momentum_initial, mom), seed=dseed, patience=window)
        for a, arch in enumerate(architectures):
            row = {"run_id": i * len(architectures) + a, "schedule": i, "architecture": arch,
                   "lr_initial": lr, "lr_final": tc.lr_final, "momentum_final": mom,
                   "dropout_seed": dseed}
            try:
                fit = train(architecture_variant(base_spec, arch), splits.train, splits.valid, tc)
                row.update(best_valid_err=fit.best_record.valid_err,
                           best_epoch=fit.epoch_of_best_validation,
                           epochs_run=len(fit.records), status="ok")
            except (ArithmeticError, FloatingPointError) as e:
                log.warning("run %d (%s) failed: %s", row["run_id"], arch, e)
                row.update(status=f"failed: {type(e).__name__}")
            rows.append(row)
    return sorted(rows, key=lambda r: r["run_id"])
