"""MMSE channel estimation statistics and sampled channel realizations.

Two pilot layouts are supported: every UE transmitting the same pilot
(``shared_single_pilot``) and mutually orthogonal pilots (``orthogonal``).
Pilot sequences are never materialized: with unit-norm pilots the despread
observation is the sum of the channels plus scaled noise.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .geometry import SpatialCorrelation, correlation_factor
from .params import ConfigurationError

PILOT_MODES = ("shared_single_pilot", "orthogonal")


@dataclass(frozen=True)
class PilotAssignment:
    mode: str
    tau_p: int
    rho_ul: float
    sigma2_ul: float
    K: int = 1

    def __post_init__(self):
        if self.mode not in PILOT_MODES:
            raise ConfigurationError(f"unknown pilot mode {self.mode!r}")
        if self.tau_p < 1:
            raise ConfigurationError("tau_p must be at least 1")
        if self.mode == "orthogonal" and self.tau_p < self.K:
            raise ConfigurationError(
                f"orthogonal pilots need tau_p >= K ({self.tau_p} < {self.K})")
        if not self.rho_ul > 0:
            raise ConfigurationError("uplink power must be positive")
        if self.sigma2_ul < 0:
            raise ConfigurationError("uplink noise power must be nonnegative")

    @property
    def noise_ratio(self) -> float:
        """sigma_ul^2 / rho_ul (zero in the noiseless limit ``rho_ul = inf``)."""
        return 0.0 if np.isinf(self.rho_ul) else self.sigma2_ul / self.rho_ul


@dataclass(frozen=True)
class EstimationStatistics:
    """Second-order statistics of the MMSE estimates.

    ``QinvR[k]`` holds ``Q^{-1} R_k`` (shared) or ``Q_k^{-1} R_k``
    (orthogonal); every other quantity follows from it.
    """

    mode: str
    R: np.ndarray
    Q: np.ndarray
    QinvR: np.ndarray
    Phi: np.ndarray
    U: np.ndarray
    noise_ratio: float

    @property
    def K(self) -> int:
        return self.R.shape[0]

    @property
    def M(self) -> int:
        return self.R.shape[1]

    @property
    def error_cov(self) -> np.ndarray:
        return self.R - self.Phi

    @property
    def trace_phi(self) -> np.ndarray:
        return np.real(np.trace(self.Phi, axis1=1, axis2=2))

    def estimate_cross_cov(self, i: int, j: int) -> np.ndarray:
        """E{ghat_i ghat_j^H}."""
        if self.mode == "orthogonal":
            return self.Phi[i] if i == j else np.zeros_like(self.Phi[i])
        return self.R[i] @ self.QinvR[j]

    def estimate_channel_cov(self, i: int, k: int) -> np.ndarray:
        """E{ghat_i g_k^H}."""
        if self.mode == "orthogonal":
            return self.Phi[k] if i == k else np.zeros_like(self.Phi[k])
        return self.R[i] @ self.QinvR[k]

    def channel_inner_means(self) -> np.ndarray:
        """Matrix ``u`` with ``u[i, k] = E{g_k^H ghat_i}`` (complex)."""
        if self.mode == "orthogonal":
            return np.diag(self.trace_phi).astype(complex)
        return np.einsum("iab,kba->ik", self.R, self.QinvR)


def _hermitize(A):
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def estimation_statistics(correlations, pilot: PilotAssignment,
                          imag_tol: float = 1e-8) -> EstimationStatistics:
    """MMSE estimation statistics for all UEs.

    Shared pilot: ``Q = sum_i R_i + (sigma^2/rho) I``, ``Phi_k = R_k Q^{-1} R_k``
    and ``U[i, k] = tr(R_i Q^{-1} R_k)``. Orthogonal pilots use a per-UE
    ``Q_k = R_k + (sigma^2/rho) I`` and a diagonal ``U``.

    Raises ``numpy.linalg.LinAlgError`` when Q is singular.
    """
    R = correlations.R if isinstance(correlations, SpatialCorrelation) else np.asarray(correlations)
    if R.ndim == 2:
        R = R[None]
    K, M, _ = R.shape
    nr = pilot.noise_ratio
    eye = np.eye(M)
    if pilot.mode == "shared_single_pilot":
        Q = R.sum(axis=0) + nr * eye
        try:
            fac = cho_factor(Q)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"Q is singular: {exc}") from exc
        QinvR = np.stack([cho_solve(fac, R[k]) for k in range(K)])
        Phi = _hermitize(np.einsum("kab,kbc->kac", R, QinvR))
        Uc = np.einsum("iab,kba->ik", R, QinvR)
    else:
        Q = R + nr * eye
        QinvR = np.empty_like(R)
        for k in range(K):
            try:
                QinvR[k] = cho_solve(cho_factor(Q[k]), R[k])
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"Q_{k} is singular: {exc}") from exc
        Phi = _hermitize(np.einsum("kab,kbc->kac", R, QinvR))
        Uc = np.diag(np.real(np.trace(Phi, axis1=1, axis2=2))).astype(complex)

    scale = np.abs(Uc).max()
    if scale > 0 and np.abs(Uc.imag).max() > imag_tol * scale:
        raise ValueError(
            f"estimate Gram matrix has imaginary part {np.abs(Uc.imag).max() / scale:.2e} "
            "relative to its magnitude")
    U = np.real(Uc)
    U = 0.5 * (U + U.T)
    return EstimationStatistics(pilot.mode, R, Q, QinvR, Phi, U, nr)


@dataclass
class ChannelSample:
    """Channel realizations and their MMSE estimates, shape ``(n, K, M)``."""

    g: np.ndarray
    g_hat: np.ndarray

    @property
    def g_tilde(self) -> np.ndarray:
        return self.g - self.g_hat


def crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def channel_factors(correlations) -> np.ndarray:
    R = correlations.R if isinstance(correlations, SpatialCorrelation) else np.asarray(correlations)
    return np.stack([correlation_factor(Rk) for Rk in R])


def _refined_solve(A, B, solve, steps=3):
    """Solve ``A X = B`` in extended precision from a double factorization.

    Iterative refinement converges to long-double accuracy whenever
    ``cond(A) * eps_double < 1``.
    """
    A = A.astype(np.clongdouble)
    B = np.asarray(B, dtype=np.clongdouble)
    X = solve(B.astype(complex)).astype(np.clongdouble)
    for _ in range(steps):
        X += solve((B - A @ X).astype(complex))
    return X


def sample_channels(correlations, stats: EstimationStatistics, rng=None, n_samples: int = 1,
                    factors=None, precision: str = "double") -> ChannelSample:
    """Draw ``g_k ~ CN(0, R_k)`` and form the MMSE estimates.

    ``factors`` can carry precomputed square-root factors of the R_k to
    avoid repeated eigendecompositions. ``precision="extended"`` forms the
    observation and estimates in long double, which lets the estimate
    dependence identity be checked well below double-precision roundoff.
    """
    if precision not in ("double", "extended"):
        raise ValueError(f"unknown precision {precision!r}")
    rng = np.random.default_rng(rng)
    K, M = stats.K, stats.M
    F = channel_factors(correlations) if factors is None else factors
    z = crandn(rng, (n_samples, K, M))
    s = np.sqrt(stats.noise_ratio)
    shared = stats.mode == "shared_single_pilot"
    noise = crandn(rng, (n_samples, M) if shared else (n_samples, K, M))
    if precision == "extended":
        return _sample_extended(correlations, stats, F, z, s * noise.astype(np.clongdouble))
    g = np.einsum("kab,nkb->nka", F, z)
    # R_k Q^{-1} = (Q^{-1} R_k)^H for Hermitian R_k and Q
    est = np.conj(np.swapaxes(stats.QinvR, 1, 2))
    if shared:
        y = g.sum(axis=1) + s * noise
        g_hat = np.einsum("kab,nb->nka", est, y)
    else:
        y = g + s * noise
        g_hat = np.einsum("kab,nkb->nka", est, y)
    return ChannelSample(g, g_hat)


def _sample_extended(correlations, stats, F, z, noise):
    R = correlations.R if isinstance(correlations, SpatialCorrelation) else np.asarray(correlations)
    Rl = R.astype(np.clongdouble)
    g = np.einsum("kab,nkb->nka", F.astype(np.clongdouble), z.astype(np.clongdouble))
    eye = np.eye(stats.M) * stats.noise_ratio
    if stats.mode == "shared_single_pilot":
        Q = R.sum(axis=0) + eye
        fac = cho_factor(Q)
        x = _refined_solve(Q, (g.sum(axis=1) + noise).T, lambda b: cho_solve(fac, b)).T
        g_hat = np.einsum("kab,nb->nka", Rl, x)
    else:
        g_hat = np.empty_like(g)
        for k in range(stats.K):
            Qk = R[k] + eye
            fac = cho_factor(Qk)
            x = _refined_solve(Qk, (g[:, k] + noise[:, k]).T, lambda b: cho_solve(fac, b)).T
            g_hat[:, k] = x @ Rl[k].T
    return ChannelSample(g, g_hat)


class DependenceCheck(NamedTuple):
    residual: float
    skipped_pairs: List[Tuple[int, int]]


def verify_estimate_dependence(sample: ChannelSample, correlations, stats: EstimationStatistics,
                               max_condition: float = 1e10) -> DependenceCheck:
    """Largest relative deviation from ``ghat_k = R_k R_i^{-1} ghat_i``.

    Only meaningful with a shared pilot. Pairs whose ``R_i`` has condition
    number above ``max_condition`` are skipped and listed. In double
    precision the residual floors near ``eps * cond(R_i)``; samples drawn
    with ``precision="extended"`` are checked in long double instead.
    """
    if stats.mode != "shared_single_pilot":
        raise ValueError("estimate dependence only holds when all UEs share one pilot")
    R = correlations.R if isinstance(correlations, SpatialCorrelation) else np.asarray(correlations)
    K = R.shape[0]
    extended = sample.g_hat.dtype == np.clongdouble
    worst = 0.0
    skipped = []
    for i in range(K):
        if np.linalg.cond(R[i]) >= max_condition:
            skipped.extend((k, i) for k in range(K) if k != i)
            continue
        lu = lu_factor(R[i])
        if extended:
            x = _refined_solve(R[i], sample.g_hat[:, i].T, lambda b: lu_solve(lu, b)).T
        else:
            # an LU solve keeps the roundoff near eps * cond(R_i); an explicit inverse does not
            x = lu_solve(lu, sample.g_hat[:, i].T).T
        for k in range(K):
            pred = x @ (R[k].T.astype(x.dtype))
            err = np.linalg.norm(sample.g_hat[:, k] - pred, axis=1)
            ref = np.linalg.norm(sample.g_hat[:, k], axis=1)
            worst = max(worst, float(np.max(err / np.where(ref > 0, ref, 1.0))))
    return DependenceCheck(worst, skipped)
