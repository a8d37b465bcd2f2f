"""
The pivot bound on an enumerable chain
======================================

A tiny chain x -> h -> y, with h the English pivot, lets every term of the
variational bound be computed exactly. The denoiser's belief over h comes from a
noisy observation of h. The gap between log P(y|x) and the bound is
the KL divergence from that belief to the true posterior P(h|x,y).
"""
import numpy as np

from zsdae.boundlab import denoiser_posterior, gap, posterior, random_chain, verify

rng = np.random.default_rng(3)
chain = random_chain(rng, nx=3, nh=4, ny=3)
x, y = 0, 2

###############################################################################
# A single pair
# -------------

for h_bar in range(4):
    q = denoiser_posterior(chain, h_bar)
    rep = gap(chain, q, x, y)
    print(f"h_bar={h_bar}  log P(y|x)={rep.true_loglik:.4f}  bound={rep.elbo:.4f}  "
          f"gap={rep.gap:.4f}  KL(q||P(h|x,y))={rep.kl_posterior:.4f}  KL(q||P(h|y))={rep.kl_approx:.4f}")

q = posterior(chain, x, y)
print("bound at the true posterior:", gap(chain, q, x, y).gap)

###############################################################################
# Many random chains
# ------------------
# With a permutation P(y|h), conditioning on y pins down h, so the common
# approximation KL(q||P(h|y)) becomes exact.

for det in (False, True):
    _, summary = verify(trials=500, seed=1, deterministic_y=det)
    print("permutation" if det else "general", summary["checks"],
          f"max |gap - KL(q||P(h|y))| = {summary['max_approx_error']:.3g}")
