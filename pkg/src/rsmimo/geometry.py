"""Network topologies, large-scale fading and spatial correlation."""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import toeplitz

from .params import ConfigurationError, FrameBudgetWarning, SystemParameters, db_to_linear

TOPOLOGIES = ("rectangular", "circular")
CORRELATION_MODELS = ("gaussian_scattering", "uncorrelated")

MIN_DISTANCE_M = 10.0


@dataclass(frozen=True)
class NetworkGeometry:
    """UE placement relative to a base station at the origin.

    ``positions`` are in meters, ``distances`` in km, ``angles`` in radians
    and always inside ``[center_angle - sector_width/2, center_angle + sector_width/2]``.
    """

    topology_kind: str
    sector_width: float
    center_angle: float
    positions: np.ndarray
    distances: np.ndarray
    angles: np.ndarray

    @property
    def K(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class LargeScaleFading:
    beta_db: np.ndarray
    shadowing_db: np.ndarray
    gamma_db: float
    eta: float
    shadow_var_db2: float

    @property
    def beta_linear(self) -> np.ndarray:
        return db_to_linear(self.beta_db)


@dataclass(frozen=True)
class SpatialCorrelation:
    """Stacked per-UE correlation matrices, ``R`` has shape ``(K, M, M)``."""

    R: np.ndarray
    model: str
    cluster_count: int
    angular_std: float
    nominal_angles: Optional[np.ndarray]

    @property
    def K(self) -> int:
        return self.R.shape[0]

    @property
    def M(self) -> int:
        return self.R.shape[1]

    @property
    def betas(self) -> np.ndarray:
        return np.real(np.trace(self.R, axis1=1, axis2=2)) / self.M


def _wrap(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def generate_topology(
    kind: str,
    K: int,
    sector_width: float = 2 * np.pi,
    rng=None,
    *,
    radius_m: float = 125.0,
    side_m: float = 250.0,
    center_angle: float = 0.0,
    min_distance_m: float = MIN_DISTANCE_M,
) -> NetworkGeometry:
    """Drop ``K`` UEs around a base station located at the origin.

    ``circular`` places every UE on a circle of radius ``radius_m``;
    ``rectangular`` draws UEs uniformly in a ``side_m`` x ``side_m`` square
    centred on the base station, rejecting points closer than
    ``min_distance_m``. In both cases UEs are confined to the angular sector
    of width ``sector_width`` around ``center_angle``.
    """
    if kind not in TOPOLOGIES:
        raise ConfigurationError(f"unknown topology {kind!r}")
    if int(K) != K or K < 1:
        raise ConfigurationError(f"K must be a positive integer, got {K}")
    if not (0 < sector_width <= 2 * np.pi + 1e-12):
        raise ConfigurationError(f"sector width must lie in (0, 2*pi], got {sector_width}")
    rng = np.random.default_rng(rng)
    K = int(K)
    half = min(sector_width, 2 * np.pi) / 2

    if kind == "circular":
        if radius_m < min_distance_m:
            raise ConfigurationError("circle radius below the minimum distance")
        offsets = rng.uniform(-half, half, K)
        angles = center_angle + offsets
        positions = radius_m * np.column_stack([np.cos(angles), np.sin(angles)])
        distances = np.full(K, radius_m / 1000.0)
        return NetworkGeometry(kind, float(sector_width), float(center_angle),
                               positions, distances, angles)

    points = []
    offsets = []
    while len(points) < K:
        batch = rng.uniform(-side_m / 2, side_m / 2, size=(4 * K, 2))
        d = np.hypot(batch[:, 0], batch[:, 1])
        off = _wrap(np.arctan2(batch[:, 1], batch[:, 0]) - center_angle)
        ok = (d >= min_distance_m) & (np.abs(off) <= half)
        points.extend(batch[ok])
        offsets.extend(off[ok])
    positions = np.array(points[:K])
    angles = center_angle + np.array(offsets[:K])
    distances = np.hypot(positions[:, 0], positions[:, 1]) / 1000.0
    return NetworkGeometry(kind, float(sector_width), float(center_angle),
                           positions, distances, angles)


def path_loss(d_km, shadowing_db=0.0, gamma_db=-148.1, eta=3.76):
    """Channel gain in dB at distance ``d_km`` (log-distance model plus shadowing)."""
    d_km = np.asarray(d_km, dtype=float)
    if np.any(d_km <= 0):
        raise ValueError("distance must be strictly positive")
    return gamma_db - 10.0 * eta * np.log10(d_km) + np.asarray(shadowing_db, dtype=float)


def large_scale_fading(geometry: NetworkGeometry, params: Optional[SystemParameters] = None,
                       rng=None) -> LargeScaleFading:
    """Draw i.i.d. log-normal shadowing per UE and evaluate the path loss.

    ``params=None`` uses the default link budget.
    """
    if params is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FrameBudgetWarning)
            params = SystemParameters()
    rng = np.random.default_rng(rng)
    shadow = rng.normal(0.0, np.sqrt(params.shadow_var_db2), geometry.K)
    beta_db = path_loss(geometry.distances, shadow, params.gamma_db, params.eta)
    return LargeScaleFading(beta_db, shadow, params.gamma_db, params.eta, params.shadow_var_db2)


def correlation_matrix(beta, phi, M, model="gaussian_scattering", n_clusters=10,
                       angular_std=np.deg2rad(15.0), angle_spread=np.deg2rad(40.0), rng=None):
    """Correlation matrix of one UE seen by a half-wavelength ULA.

    With ``gaussian_scattering`` the channel consists of ``n_clusters``
    clusters whose nominal angles are uniform in ``phi +/- angle_spread``;
    each cluster has a Gaussian angular spread of ``angular_std`` (radians).

    Returns
    -------
    R : (M, M) complex ndarray
    nominal_angles : ndarray or None
    """
    if M < 1:
        raise ConfigurationError("M must be at least 1")
    if beta < 0:
        raise ConfigurationError("beta must be nonnegative")
    if model == "uncorrelated":
        return beta * np.eye(M, dtype=complex), None
    if model != "gaussian_scattering":
        raise ConfigurationError(f"unknown correlation model {model!r}")
    if angular_std < 0 or n_clusters < 1:
        raise ConfigurationError("need angular_std >= 0 and at least one cluster")
    rng = np.random.default_rng(rng)
    nominal = phi + rng.uniform(-angle_spread, angle_spread, n_clusters)
    lag = np.arange(M)[:, None]
    # first column of the Hermitian Toeplitz matrix, averaged over clusters
    col = np.exp(1j * np.pi * lag * np.sin(nominal)) * np.exp(
        -0.5 * angular_std ** 2 * (np.pi * lag * np.cos(nominal)) ** 2)
    col = col.sum(axis=1) / n_clusters
    col[0] = 1.0
    R = beta * toeplitz(col, np.conj(col))
    return R, nominal


def correlations_for_setup(large_scale: LargeScaleFading, geometry: NetworkGeometry, M: int,
                           model="gaussian_scattering", n_clusters=10,
                           angular_std=np.deg2rad(15.0), rng=None,
                           angle_spread=np.deg2rad(40.0)) -> SpatialCorrelation:
    rng = np.random.default_rng(rng)
    betas = large_scale.beta_linear
    K = geometry.K
    R = np.empty((K, M, M), dtype=complex)
    nominal = np.empty((K, n_clusters)) if model == "gaussian_scattering" else None
    for k in range(K):
        R[k], nom = correlation_matrix(betas[k], geometry.angles[k], M, model,
                                       n_clusters, angular_std, angle_spread, rng=rng)
        if nominal is not None:
            nominal[k] = nom
    return SpatialCorrelation(R, model, n_clusters, float(angular_std), nominal)


def correlation_factor(R, floor=1e-10):
    """Square-root factor ``F`` with ``F @ F.conj().T == R`` for a PSD matrix.

    Eigenvalues slightly below zero (down to ``-floor * tr(R) / M``) are
    clipped; anything more negative is a modelling error.
    """
    R = np.asarray(R)
    M = R.shape[-1]
    w, V = np.linalg.eigh(R)
    scale = np.real(np.trace(R)) / M
    if w.min() < -floor * max(scale, np.finfo(float).tiny):
        raise np.linalg.LinAlgError(
            f"matrix is not PSD: min eigenvalue {w.min():.3e}, scale {scale:.3e}")
    return V * np.sqrt(np.clip(w, 0.0, None))
