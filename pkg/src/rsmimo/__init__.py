"""Downlink rate splitting vs conventional precoding in single-cell TDD massive MIMO
with intra-cell pilot contamination."""

__version__ = "0.1.0"

from .params import ConfigurationError, FrameBudgetWarning, SystemParameters  # noqa: E402
from .geometry import correlations_for_setup, generate_topology, large_scale_fading  # noqa: E402
from .chanstat import PilotAssignment, estimation_statistics, sample_channels  # noqa: E402
from .precoding import common_expectations, common_weights, private_expectations  # noqa: E402
from .se_eval import (PowerAllocation, SECoefficients, closed_form_coefficients,  # noqa: E402
                      evaluate, monte_carlo_coefficients)
from .powalloc import SCHEMES, run_scheme  # noqa: E402
from .harness import ExperimentConfig, load_config, run_campaign  # noqa: E402
