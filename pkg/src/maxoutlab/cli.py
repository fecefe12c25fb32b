"""Command-line runner: ``maxoutlab {train,eval,avg,diagnose,pwl,sweep}``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
CSV output goes to ``--out`` when given, otherwise to stdout.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import averaging, diagnostics, pwlab
from .dataio import IdxError, load_dataset
from .dropout import evaluate, include_probs_for
from .experiment import (LEADERBOARD_COLUMNS, ConfigError, ExperimentConfig, build_datasets,
                         load_recipe, run_experiment, sweep)
from .network import ContractError, NetworkSpec, Parameters
from .numerics import DomainError, Prng
from .serialization import ContainerError, load_model, save_model, write_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------

def _config(arg: str) -> ExperimentConfig:
    """A config path, or ``recipe:NAME`` for a shipped recipe."""
    if arg.startswith("recipe:"):
        return load_recipe(arg.split(":", 1)[1])
    return ExperimentConfig.from_file(arg)


def _emit_csv(out, columns, rows):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        write_csv(out, columns, rows)
    else:
        write_csv(sys.stdout, columns, rows)


def _model_probs(spec: NetworkSpec, meta: dict, args=None) -> tuple:
    probs = meta.get("include_probs") or [1.0] * len(spec.layers)
    p_in = getattr(args, "include_prob_input", None)
    p_hid = getattr(args, "include_prob_hidden", None)
    if p_in is not None or p_hid is not None:
        probs = include_probs_for(spec, probs[0] if p_in is None else p_in,
                                  (probs[1] if len(probs) > 1 else 1.0) if p_hid is None else p_hid)
    return tuple(float(p) for p in probs)


def _eval_data(args, meta):
    """Dataset for a model command: ``--data-file`` or a split of the model's config."""
    if args.data_file:
        return load_dataset(args.data_file)
    if "config" not in meta:
        raise UsageError("model carries no dataset config; pass --data-file")
    cfg = ExperimentConfig.from_dict(meta["config"], "model config")
    splits = build_datasets(cfg.dataset)
    data = {"train": splits.train, "valid": splits.valid, "test": splits.test}[args.data]
    if data is None:
        raise UsageError(f"the model's dataset has no {args.data} split")
    if args.limit:
        data = data.head(args.limit)
    return data


def _add_data_args(p, default="test"):
    p.add_argument("--data", choices=("train", "valid", "test"), default=default,
                   help="split of the dataset the model was trained on")
    p.add_argument("--data-file", help="dataset container to use instead")
    p.add_argument("--limit", type=int, default=None, help="use only the first N examples")


def _add_prob_args(p):
    p.add_argument("--include-prob-input", type=float, default=None)
    p.add_argument("--include-prob-hidden", type=float, default=None)


# -- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args.config)
    out = args.out or cfg.output
    res = run_experiment(cfg, out)
    print(f"model={Path(out) / 'model.mxo'} best_epoch={res.fit.epoch_of_best_validation} "
          f"test_err={res.test_err:.6f} test_nll={res.test_nll:.6f}")
    if res.completion is not None:
        print(f"completion epochs={res.completion.epochs_run} reached={res.completion.reached}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, params, meta = load_model(args.model)
    data = _eval_data(args, meta)
    probs = _model_probs(spec, meta, args)
    mode = args.mode
    if mode == "scaled":
        nll, err = evaluate(params, spec, probs, data)
    elif mode.startswith("sampled:"):
        try:
            n = int(mode.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad mode {mode!r}; use scaled or sampled:N") from None
        geo = averaging.geometric_mean_sampled(params, spec, data.inputs, n, Prng(args.seed), probs)
        logp = np.log(np.maximum(geo, averaging.PROB_FLOOR))
        nll = float(-np.mean(logp[np.arange(len(data)), data.labels]))
        err = float(np.mean(np.argmax(geo, axis=1) != data.labels))
    else:
        raise UsageError(f"bad mode {mode!r}; use scaled or sampled:N")
    print(f"mode={mode} n={len(data)} error={err:.6f} nll={nll:.6f}")
    return EXIT_OK


def cmd_avg(args) -> int:
    spec, params, meta = load_model(args.model)
    data = _eval_data(args, meta)
    recs = averaging.averaging_curve(params, spec, _model_probs(spec, meta, args), data.inputs,
                                     data.labels, args.samples, args.seeds)
    _emit_csv(args.out, averaging.CURVE_COLUMNS, averaging.curve_rows(recs))
    return EXIT_OK


def _diag_sat(args):
    spec, params, meta = load_model(args.model)
    probe = diagnostics.ProbeSet.from_dataset(_eval_data(args, meta), args.probe_n)
    rates = diagnostics.saturation_rates(params, spec, probe, _model_probs(spec, meta, args))
    rows = [[l, spec.layers[l].name, r["zero"], r["negative"], r["positive"]]
            for l, r in enumerate(rates)]
    return ["layer", "kind", "zero", "negative", "positive"], rows


def _diag_snapshot(args):
    spec, params, meta = load_model(args.model)
    probe = diagnostics.ProbeSet.from_dataset(_eval_data(args, meta), args.probe_n)
    snap = diagnostics.snapshot(params, spec, probe, _model_probs(spec, meta, args))
    if not args.snapshot:
        raise UsageError("snapshot needs --snapshot PATH")
    snap.save(args.snapshot)
    return None, None


def _diag_trans(args):
    if len(args.snapshots) != 2:
        raise UsageError("trans needs two snapshot files: BEFORE AFTER")
    before, after = (diagnostics.UnitStateSnapshot.load(p) for p in args.snapshots)
    rates = diagnostics.transition_rates(before, after)
    rows = [[l, before.kinds[l], r["pos_to_nonpos"], r["nonpos_to_pos"]]
            for l, r in enumerate(rates)]
    return ["layer", "kind", "pos_to_nonpos", "nonpos_to_pos"], rows


def _diag_filters(args):
    spec, params, meta = load_model(args.model)
    data = _eval_data(args, meta)
    pooled = [l for l, k in enumerate(spec.hidden) if k.pooled]
    if not pooled:
        raise UsageError("model has no pooled hidden layers")
    sub = Parameters(params.W[:pooled[-1] + 1], params.b[:pooled[-1] + 1])
    sub_spec = NetworkSpec(spec.input_dim, spec.layers[:pooled[-1] + 1])
    probs = _model_probs(spec, meta, args)[:pooled[-1] + 1]
    fractions = diagnostics.filter_utilization(sub, sub_spec, data.inputs, probs)
    return ["layer", "kind", "unused_fraction"], [[l, spec.layers[l].name, f]
                                                  for l, f in enumerate(fractions)]


def _diag_gradvar(args):
    spec, params, meta = load_model(args.model)
    data = _eval_data(args, meta)
    out = diagnostics.gradient_mask_variance(params, spec, data.inputs, data.labels, args.n_masks,
                                             Prng(args.seed), _model_probs(spec, meta, args))
    return ["layer", "kind", "var_W", "var_b"], [[l, spec.layers[l].name, v["W"], v["b"]]
                                                 for l, v in enumerate(out)]


def _diag_depth(args):
    if not args.config:
        raise UsageError("depth needs --config")
    cfg = _config(args.config)
    if args.epochs is not None:
        cfg = cfg.with_overrides(epochs=args.epochs)
    splits = build_datasets(cfg.dataset)
    rows = diagnostics.depth_stress(cfg.training, args.depths, args.seeds, splits.train,
                                    units=args.units, pieces=args.pieces)
    return ["depth", "seed", "kind", "train_error"], rows


DIAGNOSE = {"sat": _diag_sat, "trans": _diag_trans, "filters": _diag_filters,
            "gradvar": _diag_gradvar, "depth": _diag_depth, "snapshot": _diag_snapshot}


def cmd_diagnose(args) -> int:
    needs_model = args.what in ("sat", "filters", "gradvar", "snapshot")
    if needs_model and not args.model:
        raise UsageError(f"{args.what} needs --model")
    columns, rows = DIAGNOSE[args.what](args)
    if columns is not None:
        _emit_csv(args.out, columns, rows)
    return EXIT_OK


def cmd_pwl(args) -> int:
    a, b = args.domain
    f = pwlab.target_function(args.target)
    rows = []
    out_dir = Path(args.model_dir) if args.model_dir else None
    for k in args.pieces:
        approx = pwlab.build_two_unit_approximator(f, a, b, k)
        rows.append([k, approx.sup_error])
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            save_model(out_dir / f"pwl_k{k}.mxo", approx.spec, approx.params,
                       {"target": args.target, "domain": [a, b], "pieces": k,
                        "sup_error": approx.sup_error})
    _emit_csv(args.out, ["k", "sup_error"], rows)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    if args.epochs is not None:
        cfg = cfg.with_overrides(epochs=args.epochs)
    rows = sweep(cfg, args.n, args.seed, window=args.window)
    _emit_csv(args.out, LEADERBOARD_COLUMNS, rows)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maxoutlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a JSON experiment config")
    t.add_argument("config", help="config path or recipe:NAME")
    t.add_argument("--out", help="output directory (default: the config's output)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="test error and NLL of a saved model")
    e.add_argument("model")
    e.add_argument("--mode", default="scaled", help="scaled or sampled:N")
    e.add_argument("--seed", type=int, default=0)
    _add_data_args(e)
    _add_prob_args(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("avg", help="scaled inference vs sampled geometric mean curve")
    a.add_argument("model")
    a.add_argument("--samples", type=int, nargs="+", default=[1, 10, 100, 1000])
    a.add_argument("--seeds", type=int, nargs="+", default=[0])
    a.add_argument("--out")
    _add_data_args(a)
    a.set_defaults(func=cmd_avg)

    d = sub.add_parser("diagnose", help="optimization diagnostics")
    d.add_argument("what", choices=sorted(DIAGNOSE))
    d.add_argument("snapshots", nargs="*", help="trans: BEFORE AFTER snapshot files")
    d.add_argument("--model")
    d.add_argument("--config", help="depth: base experiment config")
    d.add_argument("--snapshot", help="snapshot: output path")
    d.add_argument("--probe-n", type=int, default=1000)
    d.add_argument("--n-masks", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--depths", type=int, nargs="+", default=[2, 3, 4, 5])
    d.add_argument("--seeds", type=int, nargs="+", default=[0])
    d.add_argument("--units", type=int, default=diagnostics.DEPTH_UNITS)
    d.add_argument("--pieces", type=int, default=diagnostics.DEPTH_PIECES)
    d.add_argument("--epochs", type=int, default=None)
    d.add_argument("--out")
    _add_data_args(d, default="valid")
    _add_prob_args(d)
    d.set_defaults(func=cmd_diagnose)

    w = sub.add_parser("pwl", help="two-unit maxout approximation of a 1-D function")
    w.add_argument("--target", required=True, help="named target or expression in x")
    w.add_argument("--domain", type=float, nargs=2, metavar=("A", "B"), default=[-1.0, 1.0])
    w.add_argument("--pieces", type=int, nargs="+", required=True)
    w.add_argument("--model-dir", help="write pwl_k<k>.mxo model files here")
    w.add_argument("--out")
    w.set_defaults(func=cmd_pwl)

    s = sub.add_parser("sweep", help="random schedule search over four architectures")
    s.add_argument("config")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--window", type=int, default=100, help="stop after this many epochs "
                   "without validation improvement")
    s.add_argument("--epochs", type=int, default=None, help="override training.epochs")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IdxError, ContainerError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, FloatingPointError) as e:  # includes TrainingDiverged, NumericError
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
