"""
Checking the autodiff engine
============================

The transformer is built on a small reverse-mode engine. Here a two-layer
model in float64 is compared against central finite differences on randomly
sampled parameters.
"""
import numpy as np

from zsdae.nn import ModelConfig, Transformer, init_params, make_batch
from zsdae.nn.gradcheck import sample_gradcheck

cfg = ModelConfig(vocab_size=20, d_model=16, n_heads=4, d_ff=32, max_len=32)
params = init_params(cfg, seed=0, dtype=np.float64)
print(f"{params.n_params()} parameters")

rng = np.random.default_rng(0)
batch = make_batch([list(rng.integers(4, 20, size=n)) for n in (5, 3, 7)],
                   [list(rng.integers(4, 20, size=n)) for n in (4, 6, 2)])
model = Transformer(params)

###############################################################################
# Finite differences
# ------------------
# ``sample_gradcheck`` perturbs one scalar at a time by +-1e-5 and compares the
# slope with the gradient from ``backward``.

results = sample_gradcheck(lambda: model.loss(batch, label_smoothing=0.1), params, n=20)
for name, idx, ana, num, err in results[:8]:
    print(f"{name:>20}[{idx:>4}]  backward={ana:+.6e}  numeric={num:+.6e}  rel={err:.1e}")
print("max relative error:", max(r[-1] for r in results))
