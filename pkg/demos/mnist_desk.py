"""Permutation-invariant MNIST with a small maxout MLP.

Needs the four MNIST IDX files under $MAXOUTLAB_DATA (or ./data/mnist).
Takes about 11 CPU-minutes.

    python demos/mnist_desk.py [output-dir]
"""
import sys
import time

from maxoutlab.experiment import load_recipe, run_experiment

cfg = load_recipe("mnist_desk")
print("layers:", [(l["kind"], l["units"], l.get("pieces", 1)) for l in cfg.model["layers"]])
print("training:", {k: v for k, v in cfg.training.to_dict().items()
                    if k in ("epochs", "lr_initial", "lr_final", "norm_cap")})

# 50k/10k split; the best validation epoch sets the train-likelihood target,
# then training continues on all 60k until validation likelihood reaches it.
t0 = time.process_time()
res = run_experiment(cfg, sys.argv[1] if len(sys.argv) > 1 else cfg.output)
print("best validation epoch:", res.fit.epoch_of_best_validation,
      "valid error %.4f" % res.fit.best_record.valid_err)
print("continuation epochs:", res.completion.epochs_run, "target reached:", res.completion.reached)
print("test error %.4f   (%.1f CPU-min)" % (res.test_err, (time.process_time() - t0) / 60))
