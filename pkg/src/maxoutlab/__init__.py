"""Maxout networks, dropout training and model-averaging experiments in numpy."""
from .numerics import Prng, matmul, max_over_axis, sample_bernoulli
from .network import (Linear, Maxout, NetworkSpec, Parameters, Rectifier, RectifierPool,
                      SoftmaxOutput, Tanh, backward, forward, init_params, log_likelihood,
                      project_max_norm)
from .dataio import Dataset
from .dropout import TrainConfig, train

__version__ = "0.1.0"
