"""Small dense convex solver: log-barrier interior point with Newton centering.

Problems are stated as

    maximize    c^T x
    subject to  f_j(x) <= 0   for every row j of every constraint block
                lower <= x <= upper

where each block evaluates a vector of convex functions together with their
Jacobian and a weighted sum of Hessians. Blocks are vectorized so one Newton
step costs a handful of dense numpy operations.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

CONVEXITY_TAGS = ("affine", "convex_quadratic", "exponential_2pow", "posynomial_log")
LN2 = np.log(2.0)


class ModelingError(ValueError):
    pass


class ConstraintBlock:
    tag = "affine"
    m = 0

    def values(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def weighted_hessian(self, x, w):
        """sum_j w_j * Hessian of f_j at x."""
        raise NotImplementedError


class AffineBlock(ConstraintBlock):
    """Rows ``A x - b <= 0``."""

    tag = "affine"

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.m = self.A.shape[0]
        if self.b.shape != (self.m,):
            raise ModelingError("affine block: A and b disagree in row count")

    def values(self, x):
        return self.A @ x - self.b

    def jacobian(self, x):
        return self.A

    def weighted_hessian(self, x, w):
        return np.zeros((x.size, x.size))


class QuadraticBlock(ConstraintBlock):
    """Rows ``x^T P_j x + A_j x + b_j <= 0`` with every ``P_j`` PSD."""

    tag = "convex_quadratic"

    def __init__(self, P, A, b, check_psd=True):
        self.P = np.asarray(P, dtype=float)
        if self.P.ndim == 2:
            self.P = self.P[None]
        self.P = 0.5 * (self.P + np.swapaxes(self.P, 1, 2))
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.m = self.P.shape[0]
        if check_psd:
            lo = min(np.linalg.eigvalsh(Pj).min() for Pj in self.P)
            scale = max(1.0, np.abs(self.P).max())
            if lo < -1e-12 * scale:
                raise ModelingError("quadratic block is not convex (P has a negative eigenvalue)")

    def values(self, x):
        return (self.P @ x) @ x + self.A @ x + self.b

    def jacobian(self, x):
        return 2.0 * (self.P @ x) + self.A

    def weighted_hessian(self, x, w):
        return 2.0 * np.tensordot(w, self.P, axes=1)


class Exp2Block(ConstraintBlock):
    """Rows ``2^(kappa_j * x[a_j]) - x[r_j] <= 0``."""

    tag = "exponential_2pow"

    def __init__(self, a_idx, r_idx, kappa):
        self.a_idx = np.asarray(a_idx, dtype=int)
        self.r_idx = np.asarray(r_idx, dtype=int)
        self.kappa = np.broadcast_to(np.asarray(kappa, dtype=float), self.a_idx.shape).copy()
        self.m = self.a_idx.size
        if self.r_idx.shape != self.a_idx.shape:
            raise ModelingError("exponential block: index arrays differ in length")
        if np.any(self.kappa <= 0):
            raise ModelingError("exponential block needs positive exponents")
        self._rows = np.arange(self.m)

    def _exp(self, x):
        return np.exp(LN2 * self.kappa * x[self.a_idx])

    def values(self, x):
        return self._exp(x) - x[self.r_idx]

    def jacobian(self, x):
        J = np.zeros((self.m, x.size))
        J[self._rows, self.a_idx] += LN2 * self.kappa * self._exp(x)
        J[self._rows, self.r_idx] -= 1.0
        return J

    def weighted_hessian(self, x, w):
        H = np.zeros((x.size, x.size))
        np.add.at(H, (self.a_idx, self.a_idx), w * (LN2 * self.kappa) ** 2 * self._exp(x))
        return H


class LogSumExpBlock(ConstraintBlock):
    """Rows ``log(sum_l exp(F_j[l] @ x + g_j[l])) <= 0``.

    This is a posynomial constraint ``sum_l exp(g_jl) prod_i y_i^F_jli <= 1``
    written in the log-variables ``x = log(y)``.
    """

    tag = "posynomial_log"

    def __init__(self, F_list: Sequence[np.ndarray], g_list: Sequence[np.ndarray]):
        if len(F_list) != len(g_list):
            raise ModelingError("log-sum-exp block: mismatched term lists")
        self.F = [np.atleast_2d(np.asarray(F, dtype=float)) for F in F_list]
        self.g = [np.atleast_1d(np.asarray(g, dtype=float)) for g in g_list]
        self.m = len(self.F)
        # stack all terms to vectorize evaluation
        self._Fall = np.vstack(self.F)
        self._gall = np.concatenate(self.g)
        self._owner = np.concatenate([np.full(len(g), j) for j, g in enumerate(self.g)])

    def _softmax(self, x):
        z = self._Fall @ x + self._gall
        zmax = np.full(self.m, -np.inf)
        np.maximum.at(zmax, self._owner, z)
        e = np.exp(z - zmax[self._owner])
        s = np.zeros(self.m)
        np.add.at(s, self._owner, e)
        return zmax + np.log(s), e / s[self._owner]

    def values(self, x):
        return self._softmax(x)[0]

    def jacobian(self, x):
        _, p = self._softmax(x)
        J = np.zeros((self.m, x.size))
        np.add.at(J, self._owner, p[:, None] * self._Fall)
        return J

    def weighted_hessian(self, x, w):
        _, p = self._softmax(x)
        J = self.jacobian(x)
        wp = w[self._owner] * p
        return (self._Fall.T * wp) @ self._Fall - (J.T * w) @ J


@dataclass
class SmoothConvexProgram:
    """maximize ``objective @ x`` subject to the constraint blocks and bounds."""

    n: int
    objective: np.ndarray
    blocks: List[ConstraintBlock] = field(default_factory=list)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    names: Optional[List[str]] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.shape != (self.n,):
            raise ModelingError("objective length differs from variable count")
        for blk in self.blocks:
            if blk.tag not in CONVEXITY_TAGS:
                raise ModelingError(f"unknown convexity tag {blk.tag!r}")

    def all_blocks(self) -> List[ConstraintBlock]:
        blocks = list(self.blocks)
        eye = np.eye(self.n)
        if self.lower is not None:
            lo = np.asarray(self.lower, dtype=float)
            idx = np.flatnonzero(np.isfinite(lo))
            if idx.size:
                blocks.append(AffineBlock(-eye[idx], -lo[idx]))
        if self.upper is not None:
            hi = np.asarray(self.upper, dtype=float)
            idx = np.flatnonzero(np.isfinite(hi))
            if idx.size:
                blocks.append(AffineBlock(eye[idx], hi[idx]))
        return blocks

    def constraint_values(self, x) -> np.ndarray:
        return np.concatenate([b.values(x) for b in self.all_blocks()]) if self.all_blocks() else np.zeros(0)

    def check_gradients(self, x, h=1e-6, rtol=1e-5) -> float:
        """Largest relative mismatch between analytic and central-difference Jacobians."""
        worst = 0.0
        x = np.asarray(x, dtype=float)
        for blk in self.all_blocks():
            J = blk.jacobian(x)
            Jfd = np.empty_like(J)
            for i in range(self.n):
                e = np.zeros(self.n)
                e[i] = h * max(1.0, abs(x[i]))
                Jfd[:, i] = (blk.values(x + e) - blk.values(x - e)) / (2 * e[i])
            scale = np.maximum(np.abs(J), 1.0)
            worst = max(worst, float(np.max(np.abs(J - Jfd) / scale)) if J.size else 0.0)
        return worst


@dataclass
class SolverReport:
    status: str
    iterations: int
    kkt_residual: float
    objective: float
    barrier_t: float = 0.0
    duals: Optional[np.ndarray] = None


class _Stack:
    """All constraint rows of a program evaluated together."""

    def __init__(self, blocks):
        self.blocks = blocks
        self.m = sum(b.m for b in blocks)

    def values(self, x):
        return np.concatenate([b.values(x) for b in self.blocks])

    def jacobian(self, x):
        return np.vstack([b.jacobian(x) for b in self.blocks])

    def weighted_hessian(self, x, w):
        H = np.zeros((x.size, x.size))
        start = 0
        for b in self.blocks:
            if b.tag != "affine":
                H += b.weighted_hessian(x, w[start:start + b.m])
            start += b.m
        return H


def _newton_direction(H, g):
    try:
        return -cho_solve(cho_factor(H, lower=True, check_finite=False), g, check_finite=False)
    except np.linalg.LinAlgError:
        ridge = 1e-12 * max(1.0, np.abs(np.diag(H)).max())
        return -np.linalg.lstsq(H + ridge * np.eye(H.shape[0]), g, rcond=None)[0]


def _centering(c, stack, x, t, newton_tol, max_steps, counter):
    """Minimize ``-t c^T x - sum log(-f(x))`` by damped Newton from strictly feasible x."""
    f = stack.values(x)
    for _ in range(max_steps):
        inv = -1.0 / f
        J = stack.jacobian(x)
        grad = -t * c + J.T @ inv
        H = (J.T * inv ** 2) @ J + stack.weighted_hessian(x, inv)
        dx = _newton_direction(H, grad)
        dec = -grad @ dx
        counter[0] += 1
        if dec / 2.0 <= newton_tol:
            return x, f, True
        phi0 = -t * (c @ x) - np.sum(np.log(-f))
        s = 1.0
        while True:
            xn = x + s * dx
            fn = stack.values(xn)
            if np.all(fn < 0):
                phin = -t * (c @ xn) - np.sum(np.log(-fn))
                # float slack: at large t, phi carries roundoff of order eps*|phi|
                if phin <= phi0 - 0.25 * s * dec + 8 * np.finfo(float).eps * abs(phi0):
                    break
            s *= 0.5
            if s < 1e-14:
                return x, f, False
        x, f = xn, fn
    return x, f, False


def _fit_t(c, stack, x):
    """Barrier parameter for which x is closest to the central path."""
    f = stack.values(x)
    g = stack.jacobian(x).T @ (-1.0 / f)
    cc = c @ c
    return (c @ g) / cc if cc > 0 else 0.0


def _kkt(c, stack, x, t):
    """Scaled KKT residual at an approximate central point.

    The multipliers are the central-path duals corrected by one Newton step,
    ``lam = (d + d^2 * (J dx)) / t`` with ``d = -1/f``, which removes the
    first-order error of an inexactly centred point.
    """
    f = stack.values(x)
    d = -1.0 / f
    J = stack.jacobian(x)
    grad = -t * c + J.T @ d
    H = (J.T * d ** 2) @ J + stack.weighted_hessian(x, d)
    dx = _newton_direction(H, grad)
    lam = (d + d ** 2 * (J @ dx)) / t
    terms = np.abs(J.T * lam)
    scale = max(1.0, np.abs(c).max(), terms.max() if terms.size else 0.0)
    stationarity = np.abs(c - J.T @ lam).max() / scale
    complementarity = np.abs(lam * f).max() / scale if f.size else 0.0
    dual = max(0.0, -lam.min()) / scale if f.size else 0.0
    primal = max(0.0, f.max()) if f.size else 0.0
    return max(stationarity, complementarity, dual, primal), lam


def phase_one(program: SmoothConvexProgram, x0=None, radius=1e6, max_iter=500):
    """Find a strictly feasible point, or return None when none exists.

    Minimizes the common slack ``s`` in ``f_j(x) <= s`` inside a large ball
    around ``x0`` and stops as soon as ``s`` turns negative.
    """
    n = program.n
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    base = _Stack(program.all_blocks())
    f0 = base.values(x0)
    if np.all(f0 < 0):
        return x0

    class Shifted(ConstraintBlock):
        tag = "convex_quadratic"

        def __init__(self):
            self.m = base.m + 1

        def values(self, z):
            x, s = z[:n], z[n]
            return np.concatenate([base.values(x) - s, [np.sum((x - x0) ** 2) - radius ** 2]])

        def jacobian(self, z):
            x = z[:n]
            J = np.zeros((self.m, n + 1))
            J[:base.m, :n] = base.jacobian(x)
            J[:base.m, n] = -1.0
            J[base.m, :n] = 2 * (x - x0)
            return J

        def weighted_hessian(self, z, w):
            H = np.zeros((n + 1, n + 1))
            H[:n, :n] = base.weighted_hessian(z[:n], w[:base.m]) + 2 * w[base.m] * np.eye(n)
            return H

    stack = _Stack([Shifted()])
    c = np.zeros(n + 1)
    c[n] = -1.0
    z = np.concatenate([x0, [max(f0.max(), 0.0) + 1.0]])
    t = 1.0
    counter = [0]
    for _ in range(60):
        z, _, _ = _centering(c, stack, z, t, 1e-9, max_iter, counter)
        if z[n] < 0 and np.all(base.values(z[:n]) < 0):
            return z[:n]
        if stack.m / t < 1e-12:
            break
        t *= 10.0
    return None


def solve(program: SmoothConvexProgram, x0=None, tolerance=1e-9, max_iter=500,
          mu=20.0, t0=1.0, newton_tol=1e-7):
    """Solve ``program`` to a duality gap below ``tolerance``.

    Returns ``(x, SolverReport)``. ``x0`` must be strictly feasible; if it
    is missing or infeasible a phase-I search supplies one. If ``x0`` is
    already nearly central for some barrier parameter, that parameter is
    reused, so re-solving from a returned solution costs one or two Newton
    steps.
    """
    stack = _Stack(program.all_blocks())
    c = program.objective
    x = None if x0 is None else np.asarray(x0, dtype=float).copy()
    if x is None or not np.all(stack.values(x) < 0):
        x = phase_one(program, x)
        if x is None:
            return (np.full(program.n, np.nan),
                    SolverReport("infeasible", 0, np.inf, np.nan))
    m = max(stack.m, 1)
    t_final = m / tolerance

    t = t0
    tf = _fit_t(c, stack, x)
    if tf > t0:
        f = stack.values(x)
        inv = -1.0 / f
        J = stack.jacobian(x)
        grad = -tf * c + J.T @ inv
        H = (J.T * inv ** 2) @ J + stack.weighted_hessian(x, inv)
        if -grad @ _newton_direction(H, grad) / 2.0 <= 1.0:
            t = min(tf, t_final)

    counter = [0]
    status = "optimal"
    while True:
        x, f, ok = _centering(c, stack, x, t, newton_tol, max_iter, counter)
        if counter[0] >= max_iter:
            status = "max_iter"
            break
        if m / t <= tolerance * (1 + 1e-12):
            break
        t = min(t * mu, t_final)
    kkt, lam = _kkt(c, stack, x, t)
    if status == "optimal" and kkt > 1e-6:
        status = "max_iter"
    return x, SolverReport(status, counter[0], float(kkt), float(c @ x), float(t), lam)


@dataclass
class Posynomial:
    """``sum_l coefficients[l] * prod_i y_i ** exponents[l, i]``."""

    coefficients: np.ndarray
    exponents: np.ndarray

    def __post_init__(self):
        self.coefficients = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        self.exponents = np.atleast_2d(np.asarray(self.exponents, dtype=float))
        if self.exponents.shape[0] != self.coefficients.size:
            raise ModelingError("posynomial: one exponent row per coefficient required")
        if np.any(~(self.coefficients > 0)):
            raise ModelingError("posynomial coefficients must be strictly positive")

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return float(np.sum(self.coefficients * np.prod(y ** self.exponents, axis=1)))


@dataclass
class GeometricProgram:
    """maximize ``prod_i y_i ** objective_exponents[i]`` s.t. each posynomial ``<= 1``, ``y > 0``."""

    n: int
    objective_exponents: np.ndarray
    constraints: List[Posynomial]


def gp_log_transform(gp: GeometricProgram) -> SmoothConvexProgram:
    """Convex form in ``x = log(y)``: linear objective, one log-sum-exp row per posynomial.

    Single-term (monomial) constraints become affine rows.
    """
    mono_A, mono_b, F_list, g_list = [], [], [], []
    for p in gp.constraints:
        if p.exponents.shape[1] != gp.n:
            raise ModelingError("posynomial exponent width differs from variable count")
        if p.coefficients.size == 1:
            mono_A.append(p.exponents[0])
            mono_b.append(-np.log(p.coefficients[0]))
        else:
            F_list.append(p.exponents)
            g_list.append(np.log(p.coefficients))
    blocks: List[ConstraintBlock] = []
    if mono_A:
        blocks.append(AffineBlock(np.array(mono_A), np.array(mono_b)))
    if F_list:
        blocks.append(LogSumExpBlock(F_list, g_list))
    return SmoothConvexProgram(gp.n, np.asarray(gp.objective_exponents, dtype=float), blocks)


def solve_gp(gp: GeometricProgram, y0=None, **kwargs):
    """Solve a GP; returns ``(y, SolverReport)`` with ``y`` in the original variables."""
    prog = gp_log_transform(gp)
    x0 = None if y0 is None else np.log(np.asarray(y0, dtype=float))
    x, rep = solve(prog, x0, **kwargs)
    return np.exp(x), rep
