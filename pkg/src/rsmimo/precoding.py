"""MR private precoders, the weighted-MR common precoder and their closed-form moments."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chanstat import EstimationStatistics
from .convex_core import AffineBlock, QuadraticBlock, SmoothConvexProgram, SolverReport, solve


class DegenerateUEError(ValueError):
    pass


def mr_private_precoder(g_hat_k, phi_k, ue: Optional[int] = None):
    """``w_k = ghat_k / sqrt(tr(Phi_k))``; ``phi_k`` may be the matrix or its trace."""
    phi_k = np.asarray(phi_k)
    tr = float(np.real(np.trace(phi_k))) if phi_k.ndim == 2 else float(phi_k)
    if not tr > 0:
        who = "" if ue is None else f" for UE {ue}"
        raise DegenerateUEError(f"estimate covariance has zero trace{who}")
    return np.asarray(g_hat_k) / np.sqrt(tr)


def mr_private_precoders(g_hat, stats: EstimationStatistics):
    """All private precoders for estimates shaped ``(n, K, M)``."""
    trs = stats.trace_phi
    bad = np.flatnonzero(~(trs > 0))
    if bad.size:
        raise DegenerateUEError(f"estimate covariance has zero trace for UE {int(bad[0])}")
    return g_hat / np.sqrt(trs)[:, None]


@dataclass(frozen=True)
class PrivateExpectations:
    """``a_p[k] = |E{g_k^H w_k}|^2`` and ``second[k, i] = E{|g_k^H w_i|^2}``."""

    a_p: np.ndarray
    second: np.ndarray


def private_expectations(stats: EstimationStatistics) -> PrivateExpectations:
    """Closed-form MR moments.

    ``E{|g_k^H w_i|^2} = (tr(R_k Phi_i) + |E{g_k^H ghat_i}|^2) / tr(Phi_i)``,
    where the cross mean is ``tr(R_i Q^{-1} R_k)`` with a shared pilot and
    ``tr(Phi_k)`` (zero off the diagonal) with orthogonal pilots.
    """
    trs = stats.trace_phi
    u = stats.channel_inner_means()
    # t[k, i] = tr(R_k Phi_i)
    t = np.real(np.einsum("kab,iba->ki", stats.R, stats.Phi))
    second = (t + np.abs(u.T) ** 2) / trs[None, :]
    return PrivateExpectations(trs.copy(), second)


@dataclass(frozen=True)
class CommonWeights:
    """Weights ``a`` of the common precoder, normalized so ``a^T U a = 1``."""

    a: np.ndarray
    t_star: float
    normalization: float
    report: Optional[SolverReport] = None


def common_weights(U, tolerance=1e-10) -> CommonWeights:
    """Max-min weights: maximize ``t`` s.t. ``a^T U[:, k] >= t`` and ``a^T U a <= 1``.

    The program is solved in the range space of ``U`` (the objective and
    constraints see ``a`` only through ``U a``), which makes the optimizer
    unique when ``U`` is rank deficient.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError("U must be square")
    K = U.shape[0]
    scale = np.abs(U).max()
    if not scale > 0:
        raise ValueError("common weight program is infeasible for U = 0")
    Us = 0.5 * (U + U.T) / scale
    lam, V = np.linalg.eigh(Us)
    keep = lam > 1e-12 * lam.max()
    lam, V = lam[keep], V[:, keep]
    r = lam.size
    # variables z = (b, t); a = V b, U a = V diag(lam) b, a^T U a = b^T diag(lam) b
    W = V * lam
    A_aff = np.hstack([-W, np.ones((K, 1))])
    P = np.zeros((r + 1, r + 1))
    P[:r, :r] = np.diag(lam)
    quad_A = np.zeros((1, r + 1))
    prog = SmoothConvexProgram(
        r + 1, np.r_[np.zeros(r), 1.0],
        [AffineBlock(A_aff, np.zeros(K)), QuadraticBlock(P[None], quad_A, [-1.0])])
    # start from the normalized minimum-norm solution of U a = 1
    b0 = (V.T @ np.ones(K)) / lam
    nb = b0 @ (lam * b0)
    b0 = 0.5 * b0 / np.sqrt(nb) if nb > 0 else np.zeros(r)
    z0 = np.r_[b0, (W @ b0).min() - 1.0]
    z, rep = solve(prog, z0, tolerance=tolerance)
    a = V @ z[:r]
    norm = float(a @ Us @ a)
    a = a / np.sqrt(norm)
    a = a / np.sqrt(scale)
    return CommonWeights(a, float((a @ U).min()), float(a @ U @ a), rep)


def common_precoder(weights, g_hat, U=None):
    """``w_c = sum_i a_i ghat_i / sqrt(a^T U a)`` for estimates shaped ``(..., K, M)``."""
    a = weights.a if isinstance(weights, CommonWeights) else np.asarray(weights, dtype=float)
    if U is None:
        if not isinstance(weights, CommonWeights):
            raise ValueError("U is required when raw weights are given")
        norm = weights.normalization
    else:
        norm = float(a @ np.asarray(U) @ a)
    return np.einsum("i,...im->...m", a, g_hat) / np.sqrt(norm)


@dataclass(frozen=True)
class CommonExpectations:
    """Closed-form moments of the common precoder.

    ``mean[k] = E{g_k^H w_c}``, ``a_c = |mean|^2``, ``second[k] = E{|g_k^H w_c|^2}``
    and ``I_c = second - a_c`` (beamforming-gain uncertainty). ``path``
    records which fourth-moment formula produced ``second``.
    """

    mean: np.ndarray
    a_c: np.ndarray
    second: np.ndarray
    I_c: np.ndarray
    path: str


def _fourth_moment_terms(stats: EstimationStatistics, a):
    """sum_ij a_i a_j E{g_k^H ghat_i ghat_j^H g_k} for every k, without inverting any R_i."""
    u = stats.channel_inner_means()
    if stats.mode == "orthogonal":
        cov = np.einsum("i,iab->ab", a ** 2, stats.Phi)
    else:
        Ra = np.einsum("i,iab->ab", a, stats.R)
        cov = Ra @ np.einsum("i,iab->ab", a, stats.QinvR)
    quad = np.real(np.einsum("kab,ba->k", stats.R, cov))
    return quad + np.abs(a @ u) ** 2


def _dependence_terms(stats: EstimationStatistics, a):
    """Same sums via ``ghat_j = R_j R_i^{-1} ghat_i`` (shared pilot, invertible R_i).

    ``E{g_k^H ghat_i ghat_j^H g_k} = tr(Phi_k Phi_i T) + U(i,k) tr(T R_k Q^{-1} R_i)
    + tr(T (R_k - Phi_k) Phi_i)`` with ``T = R_i^{-1} R_j``.
    """
    R, Phi, K = stats.R, stats.Phi, stats.K
    u = stats.channel_inner_means()
    T = np.empty((K, K) + R.shape[1:], dtype=complex)
    for i in range(K):
        Rinv = np.linalg.inv(R[i])
        T[i] = np.einsum("ab,jbc->jac", Rinv, R)
    PP = np.einsum("kab,ibc->kiac", Phi, Phi)                 # Phi_k Phi_i
    RQR = np.einsum("kab,ibc->kiac", R, stats.QinvR)          # R_k Q^{-1} R_i
    EP = np.einsum("kab,ibc->kiac", R - Phi, Phi)             # (R_k - Phi_k) Phi_i
    t1 = np.einsum("kiab,ijba->kij", PP, T)
    t2 = np.einsum("ijab,kiba->kij", T, RQR)
    t3 = np.einsum("ijab,kiba->kij", T, EP)
    E = t1 + u.T[:, :, None] * t2 + t3
    return np.real(np.einsum("i,j,kij->k", a, a, E))


def common_expectations(stats: EstimationStatistics, weights, path: str = "auto",
                        max_condition: float = 1e10) -> CommonExpectations:
    """Closed-form ``E{g_k^H w_c}`` and ``E{|g_k^H w_c|^2}`` for the weighted-MR common precoder.

    ``path`` is ``"dependence"`` (uses R_i^{-1}; shared pilot only),
    ``"fourth_moment"`` (inversion free) or ``"auto"``, which takes the
    dependence route whenever every R_i is well conditioned.
    """
    a = weights.a if isinstance(weights, CommonWeights) else np.asarray(weights, dtype=float)
    norm = float(a @ stats.U @ a)
    u = stats.channel_inner_means()
    mean = (a @ u) / np.sqrt(norm)
    if path == "auto":
        ok = stats.mode == "shared_single_pilot" and all(
            np.linalg.cond(Rk) < max_condition for Rk in stats.R)
        path = "dependence" if ok else "fourth_moment"
    if path == "dependence":
        if stats.mode != "shared_single_pilot":
            raise ValueError("the dependence route needs a shared pilot")
        num = _dependence_terms(stats, a)
    elif path == "fourth_moment":
        num = _fourth_moment_terms(stats, a)
    else:
        raise ValueError(f"unknown path {path!r}")
    second = num / norm
    a_c = np.abs(mean) ** 2
    I_c = second - a_c
    if np.any(I_c < -1e-10 * np.maximum(second, np.finfo(float).tiny)):
        raise ArithmeticError("negative beamforming-gain uncertainty for the common stream")
    return CommonExpectations(mean, a_c, second, np.maximum(I_c, 0.0), path)
