"""How well does weight scaling approximate the dropout ensemble?

With one softmax layer the scaled network is the ensemble's geometric mean,
exactly.  With hidden layers it is only an approximation; here we watch the
sampled geometric mean converge towards it as more masks are drawn.

Run:  python demos/dropout_averaging.py
"""
import numpy as np

from maxoutlab.averaging import averaging_curve, exact_mask_average
from maxoutlab.dataio import synth_teacher
from maxoutlab.dropout import TrainConfig, train
from maxoutlab.network import Maxout, NetworkSpec, SoftmaxOutput, Tanh, log_softmax
from maxoutlab.numerics import Prng

rng = np.random.default_rng(0)

### One layer: enumerate all 2^d masks
d, c = 10, 4
W, b, v = rng.standard_normal((d, c)), rng.standard_normal(c), rng.standard_normal(d)
geo = exact_mask_average(W, b, v, 0.5)
scaled = np.exp(log_softmax((v @ W / 2 + b)[None]))[0]
print("single layer, 1024 masks enumerated")
print("  geometric mean:", np.round(geo, 6))
print("  weights / 2   :", np.round(scaled, 6))
print("  max difference: %.1e" % np.max(np.abs(geo - scaled)))

### Two hidden layers: sample masks
teacher = NetworkSpec(30, (Maxout(10, 3), SoftmaxOutput(5)))
data = synth_teacher(Prng(1), teacher, 3000)
train_set, test_set = data.head(2500), data.subset(slice(2500, None))
# with dropout on 40-unit layers a small init and step size never leave chance
cfg = TrainConfig(epochs=15, lr_initial=0.5, lr_final=0.05, lr_decay_epochs=15, norm_cap=2.0,
                  init_sigma=0.1)

for name, layer in (("maxout", lambda: Maxout(40, 3)), ("tanh", lambda: Tanh(40))):
    spec = NetworkSpec(30, (layer(), layer(), SoftmaxOutput(5)))
    fit = train(spec, train_set, None, cfg)
    curve = averaging_curve(fit.params, spec, cfg.include_probs(spec), test_set.inputs,
                            test_set.labels, [1, 10, 100, 1000], seeds=[0, 1, 2])
    print(f"\n{name}: test error with scaled weights {curve[0].test_error_scaled:.3f}")
    print("   masks  error(geo)   KL(scaled || geo)")
    for r in curve:
        print(f"{r.sample_count:8d}  {r.test_error_geo:9.3f}   {r.mean_kl:.2e} +- {r.kl_std:.1e}")
