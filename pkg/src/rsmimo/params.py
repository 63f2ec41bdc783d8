"""Physical parameters and unit conversion.

All arithmetic downstream of this module is in linear milliwatts. Power
values given in dBm are converted exactly once, here.
"""

from dataclasses import dataclass

import warnings

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid model or experiment parameters."""


class FrameBudgetWarning(UserWarning):
    """Pilot plus data length exceeds the coherence block."""


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_mw(x_dbm):
    return db_to_linear(x_dbm)


@dataclass(frozen=True)
class SystemParameters:
    """Link budget and frame structure (defaults follow the reference setup).

    Attributes
    ----------
    gamma_db : float
        Channel gain at 1 km, dB.
    eta : float
        Path-loss exponent.
    shadow_var_db2 : float
        Shadow fading variance in dB^2.
    tau, tau_p, tau_d : int
        Coherence block length, pilot length and downlink data length.
    rho_ul_dbm, rho_dl_dbm : float
        Uplink (per UE) and total downlink transmit power.
    sigma2_ul_dbm, sigma2_dl_dbm : float
        Uplink and downlink noise powers.
    """

    gamma_db: float = -148.1
    eta: float = 3.76
    shadow_var_db2: float = 16.0
    tau: int = 200
    tau_p: int = 20
    tau_d: int = 190
    rho_ul_dbm: float = 10.0
    rho_dl_dbm: float = 20.0
    sigma2_ul_dbm: float = -94.0
    sigma2_dl_dbm: float = -94.0

    def __post_init__(self):
        if self.tau_p < 1 or self.tau_d < 1:
            raise ConfigurationError("tau_p and tau_d must be positive")
        if self.tau_p > self.tau or self.tau_d > self.tau:
            raise ConfigurationError("tau_p and tau_d cannot exceed tau")
        if self.tau_p + self.tau_d > self.tau:
            # the reference frame (200, 20, 190) overshoots by 10 samples; keep its prelog
            warnings.warn(
                f"tau_p + tau_d = {self.tau_p + self.tau_d} exceeds tau = {self.tau}",
                FrameBudgetWarning, stacklevel=3)
        if self.shadow_var_db2 < 0:
            raise ConfigurationError("shadowing variance must be nonnegative")

    @property
    def rho_ul(self) -> float:
        return float(dbm_to_mw(self.rho_ul_dbm))

    @property
    def rho_dl(self) -> float:
        return float(dbm_to_mw(self.rho_dl_dbm))

    @property
    def sigma2_ul(self) -> float:
        return float(dbm_to_mw(self.sigma2_ul_dbm))

    @property
    def sigma2_dl(self) -> float:
        return float(dbm_to_mw(self.sigma2_dl_dbm))

    @property
    def prelog(self) -> float:
        """Fraction of the coherence block used for downlink data."""
        return self.tau_d / self.tau
