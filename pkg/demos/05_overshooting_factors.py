"""
Asking for too many factors
===========================

With four true traits, overlapping pairs of items and fewer respondents
than items, we fit with ten candidate factors.  The IBP weights on the
spare columns collapse and their loadings are set exactly to zero as the
ladder proceeds.  The default is a reduced problem; ``--full`` runs
200 respondents on 300 items.
"""
import argparse
import time

import numpy as np

from pxlmirt.em import LadderConfig, dynamic_posterior_exploration
from pxlmirt.metrics import metrics_report
from pxlmirt.model import PriorConfig
from pxlmirt.synth import generate, overlap_preset

ap = argparse.ArgumentParser()
ap.add_argument("--full", action="store_true")
args = ap.parse_args()

spec = overlap_preset(seed=7) if args.full else overlap_preset(seed=7, n_obs=120, n_items=160)
data, truth, _ = generate(spec)
print(f"N={data.n_obs} < J={data.n_items}; items loading on two traits: "
      f"{int(np.sum((truth.loading != 0).sum(1) == 2))}")

prior = PriorConfig(k_star=10)
t0 = time.perf_counter()
path = dynamic_posterior_exploration(data, prior, LadderConfig.from_prior(prior), seed=1,
                                     evaluate=lambda p: metrics_report(p, truth))
print(f"{time.perf_counter() - t0:.0f}s\n")
print("lambda0  nonzero columns  IBP weights")
for r, res in zip(path.records, path):
    print(f"{r.lambda0:7g}  {r.metrics['nonzero_columns']:15d}  {np.round(res.params.ibp_weights, 2)}")
m = path.records[-1].metrics
print(f"\nfinal: FNR {m['fnr']:.3f}, FDR {m['fdr']:.3f}, loading MSE {m['loading_mse']:.4f}")
