"""Check the closed-form SINR coefficients against sample averages.

Every coefficient feeding the SINRs is an expectation over the small-scale
fading. Here we draw channels and estimates, build the actual precoders,
and average. Expect agreement to a percent or two at 10^5 samples.

    python demos/02_closed_form_vs_monte_carlo.py
"""
import warnings

import numpy as np

from rsmimo import FrameBudgetWarning
from rsmimo.harness import ExperimentConfig, build_setup
from rsmimo.se_eval import coefficient_errors, monte_carlo_coefficients

warnings.simplefilter("ignore", FrameBudgetWarning)

for mode in ("shared_single_pilot", "orthogonal"):
    cfg = ExperimentConfig(M=32, K=4, pilot_mode=mode)
    s = build_setup(cfg, 0)
    mc = monte_carlo_coefficients(s.correlations, s.stats, s.weights, 100_000,
                                  np.random.default_rng(1), cfg.system.sigma2_dl, cfg.system.prelog)
    errs = coefficient_errors(s.coefficients, mc)
    print(mode, {k: f"{v:.2%}" for k, v in errs.items()})
    print("  a_c closed form:", np.array2string(s.coefficients.a_c, precision=4))
    print("  a_c sampled    :", np.array2string(mc.a_c, precision=4))
