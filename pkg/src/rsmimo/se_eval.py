"""SINR coefficients and hardening-bound spectral efficiencies for RS and NoRS."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chanstat import EstimationStatistics, channel_factors, sample_channels
from .precoding import (CommonExpectations, CommonWeights, PrivateExpectations, common_expectations,
                        common_precoder, common_weights, mr_private_precoders, private_expectations)

HARD_TOL = 1e-6


@dataclass(frozen=True)
class SECoefficients:
    """Scalars feeding every SINR.

    ``gamma_c[k] = rho_c a_c[k] / (B_c[k] @ rho + rho_c I_c[k] + noise)`` and
    ``gamma_p[k] = rho[k] a_p[k] / (B_p[k] @ rho + rho_c I_c[k] + noise)``.
    Powers and ``noise`` share one unit (mW by default).
    """

    a_c: np.ndarray
    a_p: np.ndarray
    B_c: np.ndarray
    B_p: np.ndarray
    I_c: np.ndarray
    noise: float
    prelog: float

    def __post_init__(self):
        if not 0 < self.prelog <= 1:
            raise ValueError(f"prelog must lie in (0, 1], got {self.prelog}")
        if not self.noise > 0:
            raise ValueError("noise power must be positive")

    @property
    def K(self) -> int:
        return len(self.a_p)

    def normalized(self, budget: float) -> "SECoefficients":
        """Same SINRs with powers measured as fractions of ``budget`` and unit noise."""
        s = budget / self.noise
        return SECoefficients(self.a_c * s, self.a_p * s, self.B_c * s, self.B_p * s,
                              self.I_c * s, 1.0, self.prelog)

    def without_common(self) -> "SECoefficients":
        z = np.zeros_like(self.a_c)
        return SECoefficients(z, self.a_p, self.B_c, self.B_p, z.copy(), self.noise, self.prelog)


def _clean(name, x, scale):
    x = np.array(x, dtype=float)
    lo = x.min() if x.size else 0.0
    if lo < -HARD_TOL * scale:
        raise ArithmeticError(f"coefficient {name} has entry {lo:.3e}; upstream moments are wrong")
    # anything above the hard floor is numerical dust
    return np.maximum(x, 0.0)


def build_coefficients(private: PrivateExpectations, common: Optional[CommonExpectations],
                       noise: float, prelog: float) -> SECoefficients:
    """Assemble ``a_c, a_p, B_c, B_p, I_c``; ``common=None`` gives a NoRS set (``a_c = I_c = 0``)."""
    K = len(private.a_p)
    second = np.asarray(private.second, dtype=float)
    scale = max(float(np.abs(second).max()), np.finfo(float).tiny)
    B_c = second.copy()
    B_p = second.copy()
    B_p[np.diag_indices(K)] -= private.a_p
    if common is None:
        a_c = np.zeros(K)
        I_c = np.zeros(K)
    else:
        a_c = common.a_c
        I_c = common.second - common.a_c
    return SECoefficients(_clean("a_c", a_c, scale), _clean("a_p", private.a_p, scale),
                          _clean("B_c", B_c, scale), _clean("B_p", B_p, scale),
                          _clean("I_c", I_c, scale), float(noise), float(prelog))


def closed_form_coefficients(stats: EstimationStatistics, noise: float, prelog: float,
                             weights: Optional[CommonWeights] = None, path: str = "auto"):
    """Closed-form coefficients for MR private precoders and the weighted-MR common precoder.

    Returns ``(coefficients, weights, common_expectations)``.
    """
    if weights is None:
        weights = common_weights(stats.U)
    priv = private_expectations(stats)
    com = common_expectations(stats, weights, path=path)
    return build_coefficients(priv, com, noise, prelog), weights, com


@dataclass
class PowerAllocation:
    """Stream powers (same unit as ``budget``) and common-SE shares ``c_shares`` in bit/s/Hz.

    ``c_shares=None`` means the default equal split of the common SE.
    """

    rho_c: float
    rho: np.ndarray
    budget: float
    c_shares: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.rho_c = float(self.rho_c)
        if self.rho_c < 0 or np.any(self.rho < 0):
            raise ValueError("powers must be nonnegative")
        if self.rho_c + self.rho.sum() > self.budget * (1 + 1e-8):
            raise ValueError(
                f"total power {self.rho_c + self.rho.sum():.6g} exceeds budget {self.budget:.6g}")
        if self.c_shares is not None:
            self.c_shares = np.asarray(self.c_shares, dtype=float)
            if np.any(self.c_shares < 0):
                raise ValueError("common shares must be nonnegative")

    @property
    def common_fraction(self) -> float:
        return self.rho_c / self.budget


@dataclass(frozen=True)
class RateResult:
    se_c: float
    se_p: np.ndarray
    c_shares: np.ndarray
    se_total: np.ndarray
    sum_se: float
    gamma_c: np.ndarray
    gamma_p: np.ndarray

    @property
    def min_se(self) -> float:
        return float(self.se_total.min())


def sinrs(coeffs: SECoefficients, rho_c, rho):
    """``(gamma_c, gamma_p)`` per UE for the given powers."""
    rho = np.asarray(rho, dtype=float)
    common_int = rho_c * coeffs.I_c
    gamma_c = rho_c * coeffs.a_c / (coeffs.B_c @ rho + common_int + coeffs.noise)
    gamma_p = rho * coeffs.a_p / (coeffs.B_p @ rho + common_int + coeffs.noise)
    return gamma_c, gamma_p


def evaluate(coeffs: SECoefficients, allocation: PowerAllocation) -> RateResult:
    """Hardening-bound SEs in bit/s/Hz; the common rate uses the worst UE's common SINR."""
    gamma_c, gamma_p = sinrs(coeffs, allocation.rho_c, allocation.rho)
    se_c = coeffs.prelog * np.log2(1.0 + gamma_c.min())
    se_p = coeffs.prelog * np.log2(1.0 + gamma_p)
    if allocation.c_shares is None:
        shares = np.full(coeffs.K, se_c / coeffs.K)
    else:
        shares = allocation.c_shares
        if shares.sum() > se_c * (1 + 1e-8) + 1e-12:
            raise ValueError(f"common shares sum to {shares.sum():.6g} > common SE {se_c:.6g}")
    total = se_p + shares
    return RateResult(float(se_c), se_p, shares, total, float(total.sum()), gamma_c, gamma_p)


def monte_carlo_coefficients(correlations, stats: EstimationStatistics, weights: CommonWeights,
                             n_samples: int, rng=None, noise: float = 1.0, prelog: float = 1.0,
                             chunk: int = 20000) -> SECoefficients:
    """Sample-average estimates of every expectation behind the SINRs.

    Precoders use the same (statistical) normalizations as the closed forms,
    so this is an independent check of the moment formulas only.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(rng)
    K = stats.K
    F = channel_factors(correlations)
    s_priv = np.zeros((K, K), dtype=complex)
    s2_priv = np.zeros((K, K))
    s_com = np.zeros(K, dtype=complex)
    s2_com = np.zeros(K)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        smp = sample_channels(correlations, stats, rng, n, F)
        w = mr_private_precoders(smp.g_hat, stats)
        wc = common_precoder(weights, smp.g_hat)
        x = np.einsum("nkm,nim->nki", smp.g.conj(), w)
        xc = np.einsum("nkm,nm->nk", smp.g.conj(), wc)
        s_priv += x.sum(0)
        s2_priv += (np.abs(x) ** 2).sum(0)
        s_com += xc.sum(0)
        s2_com += (np.abs(xc) ** 2).sum(0)
        done += n
    mean_p = s_priv / done
    second = s2_priv / done
    a_p = np.abs(np.diag(mean_p)) ** 2
    mean_c = s_com / done
    com = CommonExpectations(mean_c, np.abs(mean_c) ** 2, s2_com / done,
                             s2_com / done - np.abs(mean_c) ** 2, "monte_carlo")
    priv = PrivateExpectations(a_p, second)
    return build_coefficients(priv, com, noise, prelog)


def coefficient_errors(reference: SECoefficients, estimate: SECoefficients,
                       floor: float = 1e-3) -> dict:
    """Largest relative deviation of ``estimate`` from ``reference`` per coefficient.

    Entries smaller than ``floor`` times the largest entry of the same
    coefficient are compared against that floor instead of themselves, so
    near-zero cross terms do not blow up the ratio.
    """
    out = {}
    for name in ("a_c", "a_p", "B_c", "B_p", "I_c"):
        ref = np.asarray(getattr(reference, name), dtype=float)
        est = np.asarray(getattr(estimate, name), dtype=float)
        top = np.abs(ref).max() if ref.size else 0.0
        if top == 0:
            out[name] = float(np.abs(est).max()) if est.size else 0.0
            continue
        den = np.maximum(np.abs(ref), floor * top)
        out[name] = float((np.abs(est - ref) / den).max())
    return out
