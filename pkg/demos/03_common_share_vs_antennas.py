"""How much of the sum SE rides on the common stream as the array grows.

UEs crowd a 45 degree sector of the circle, channels are spatially
correlated, all UEs share one pilot and power follows the one-dimensional
grid search. More antennas harden the channel, which makes the common
stream easier to decode.

    python demos/03_common_share_vs_antennas.py [n_setups]
"""
import sys
import warnings

from rsmimo import FrameBudgetWarning
from rsmimo.harness import ExperimentConfig, sweep

warnings.simplefilter("ignore", FrameBudgetWarning)
n = int(sys.argv[1]) if len(sys.argv) > 1 else 10

cfg = ExperimentConfig(K=8, topology="circular", sector_width_deg=45.0,
                       schemes=("rs_maxsum_grid", "nors_maxsum"), n_setups=n)
for label, res in sweep(cfg, "M", [20, 40, 60, 80, 100]).items():
    g = next(v for k, v in res.aggregates["groups"].items() if v["scheme"] == "rs_maxsum_grid")
    gain = next(iter(res.aggregates["gains"].values()))["gain_sum_se"]
    print(f"{label:>6}: sum SE {g['mean_sum_se']:.3f}, common share {g['mean_common_se_share']:.1%}, "
          f"gain over NoRS {gain:.1%}")
