"""
The exact factor posterior for one respondent
=============================================

Under the probit model with a standard normal prior the posterior of a
respondent's latent traits is a unified skew-normal. Here we build it for
a single response vector and draw from it, then compare against the slow
but obvious route: propose from the prior, keep each draw with probability
equal to the likelihood.
"""
import time

import numpy as np

from pxlmirt.model import BINARY, CONTINUOUS, ordinal
from pxlmirt.sun import mixed_sun_params, sample_sun
from pxlmirt.tmvn import TruncationSpec, solve_tilting

rng = np.random.default_rng(1)

# two traits, four items of three kinds
B = np.array([[1.2, 0.0], [0.8, 0.6], [0.0, 1.5], [0.4, -0.7]])
D = [0.3, np.array([-0.8, 0.4]), -0.2, 0.1]
kinds = [BINARY, ordinal(2), BINARY, CONTINUOUS]
sigma2 = np.array([np.nan, np.nan, np.nan, 0.6])
y = [1, 2, 0, 0.9]

post = mixed_sun_params(B, D, sigma2, y, kinds)
print("skew dimension:", post.n_skew, "   Gaussian part mean:", post.xi.round(3))

t0 = time.perf_counter()
draws = sample_sun(post, 50_000, rng)
print(f"50k posterior draws in {time.perf_counter() - t0:.2f}s")
print("posterior mean", draws.mean(0).round(3))
print("posterior cov\n", np.cov(draws.T).round(3))

# %%
# Brute force: prior proposals thinned by the likelihood.
from scipy.special import ndtr


def likelihood(th):
    eta = th @ B.T
    lik = ndtr(eta[:, 0] + D[0])
    lik = lik * (1 - ndtr(eta[:, 1] + D[1][1]))          # top level of the ordinal item
    lik = lik * ndtr(-(eta[:, 2] + D[2]))
    r = y[3] - D[3] - eta[:, 3]
    return lik * np.exp(-0.5 * r * r / sigma2[3])


kept = []
while sum(len(k) for k in kept) < 50_000:
    th = rng.standard_normal((200_000, 2))
    kept.append(th[rng.random(len(th)) < likelihood(th)])
ref = np.concatenate(kept)[:50_000]
print("rejection mean", ref.mean(0).round(3))
print("rejection cov\n", np.cov(ref.T).round(3))

# %%
# The truncated-normal step behind the sampler: its log acceptance bound.
sol = solve_tilting(TruncationSpec(np.eye(3) + 0.5, -np.array([0.2, -0.4, 1.0])))
print("log acceptance bound:", round(float(sol.log_psi_star), 4), " saddlepoint residual:", f"{sol.residual:.1e}")
