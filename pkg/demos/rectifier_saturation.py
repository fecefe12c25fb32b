"""Rectifiers drift to 0, maxout units do not.

Trains a small rectifier net and a maxout net with dropout on synthetic
data, snapshotting unit signs on a fixed probe set after every epoch.

Run:  python demos/rectifier_saturation.py
"""
import numpy as np

from maxoutlab.dataio import synth_teacher
from maxoutlab.diagnostics import (ProbeSet, filter_utilization, saturation_rates, snapshot,
                                   transition_rates)
from maxoutlab.dropout import TrainConfig, train
from maxoutlab.network import Maxout, NetworkSpec, Rectifier, RectifierPool, SoftmaxOutput
from maxoutlab.numerics import Prng

data = synth_teacher(Prng(3), NetworkSpec(40, (Maxout(16, 3), SoftmaxOutput(4))), 4000)
train_set = data.head(3500)
probe = ProbeSet(data.inputs[3500:], data.labels[3500:])

def run(spec, init_bias=0.0):
    cfg = TrainConfig(epochs=12, lr_initial=0.5, lr_final=0.05, lr_decay_epochs=12,
                      norm_cap=2.0, init_bias=init_bias, init_sigma=0.1)
    probs = cfg.include_probs(spec)
    snaps, zero = [], []

    def watch(epoch, params):
        snaps.append(snapshot(params, spec, probe, probs))
        zero.append(np.mean([r["zero"] for r in saturation_rates(params, spec, probe, probs)]))

    fit = train(spec, train_set, None, cfg, callback=watch)
    moves = np.zeros(2)
    for a, b in zip(snaps, snaps[1:]):
        for r in transition_rates(a, b):
            moves += r["pos_to_nonpos"], r["nonpos_to_pos"]
    return fit, zero, moves

### Rectifiers, started with positive biases so few are off
spec = NetworkSpec(40, (Rectifier(60), Rectifier(60), SoftmaxOutput(4)))
_, zero, moves = run(spec, init_bias=1.0)
print("rectifier zero-rate per epoch:", np.round(zero, 3))
print("summed transitions  pos->0 %.3f   0->pos %.3f" % tuple(moves))

### Maxout
spec = NetworkSpec(40, (Maxout(60, 3), Maxout(60, 3), SoftmaxOutput(4)))
fit, zero, moves = run(spec)
print("\nmaxout zero-rate per epoch:", np.round(zero, 3))
print("summed transitions  pos->neg %.3f   neg->pos %.3f" % tuple(moves))
print("unused filters per layer:", filter_utilization(fit.params, spec, train_set.inputs))

### Same pools, but with 0 inside the max
spec = NetworkSpec(40, (RectifierPool(60, 3), RectifierPool(60, 3), SoftmaxOutput(4)))
fit, _, _ = run(spec)
print("rectifier-pool unused filters per layer:",
      filter_utilization(fit.params, spec, train_set.inputs))
