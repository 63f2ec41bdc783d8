"""Power allocation for RS and NoRS: grid search, GP, SCA and bisection.

Every optimizer works internally in normalized units (powers as fractions of
the budget, coefficients multiplied by budget / noise, unit noise) and
returns a :class:`PowerAllocation` in the caller's units.
"""

import time
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .convex_core import (AffineBlock, Exp2Block, GeometricProgram, Posynomial, QuadraticBlock,
                          SmoothConvexProgram, solve, solve_gp)
from .se_eval import PowerAllocation, SECoefficients, evaluate, sinrs

SCA_EPS = 1e-4
SCA_MAX_ITER = 100
MAXMIN_COMMON_FRACTIONS = (0.0, 0.1, 0.3, 0.5)


class OptimizationError(RuntimeError):
    """A subproblem that should be solvable was not; carries the iterate history."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


def waterfill_shares(se_p, se_c):
    """Split ``se_c`` to maximize ``min_k se_p[k] + C_k``.

    Returns ``C`` with ``C_k = max(0, L - se_p[k])`` and ``sum(C) = se_c``.
    """
    se_p = np.asarray(se_p, dtype=float)
    if se_c <= 0:
        return np.zeros_like(se_p)
    s = np.sort(se_p)
    K = s.size
    csum = np.cumsum(s)
    for j in range(1, K + 1):
        # raise the j weakest UEs to a common level
        level = (se_c + csum[j - 1]) / j
        if j == K or level <= s[j]:
            break
    return np.maximum(0.0, level - se_p)


def _allocation(rho_c, rho, budget, shares=None, fill=True, **info):
    """Scale normalized powers to the budget (optionally filling it) and wrap them."""
    rho = np.maximum(np.asarray(rho, dtype=float), 0.0)
    rho_c = max(float(rho_c), 0.0)
    tot = rho_c + rho.sum()
    if tot > 0 and (fill or tot > 1.0):
        rho_c, rho = rho_c / tot, rho / tot
    return PowerAllocation(rho_c * budget, rho * budget, budget, shares, info)


# ---------------------------------------------------------------- grid search

def grid_fractions(delta):
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    n = int(np.ceil(1.0 / delta - 1e-9))
    return np.append(np.arange(n) * delta, 1.0)


def maxsum_grid(coeffs: SECoefficients, rho_dl: float, delta: float = 0.05) -> PowerAllocation:
    """Sum-SE over ``rho_c = (1 - zeta) rho_dl``, ``rho_k = zeta rho_dl / K`` on a zeta grid.

    Ties go to the smallest zeta. Common shares follow the default equal split.
    """
    c = coeffs.normalized(rho_dl)
    K = c.K
    zetas = grid_fractions(delta)
    values = np.empty(zetas.size)
    for j, z in enumerate(zetas):
        values[j] = evaluate(c, PowerAllocation(1.0 - z, np.full(K, z / K), 1.0)).sum_se
    best = int(np.argmax(values))  # first maximizer = smallest zeta
    z = zetas[best]
    return _allocation(1.0 - z, np.full(K, z / K), rho_dl, fill=False, scheme="maxsum_grid",
                       zeta=float(z), evaluations=int(zetas.size), share_rule="equal")


def nors_maxsum(coeffs: SECoefficients, rho_dl: float) -> PowerAllocation:
    """Uniform private powers, no common stream (the zeta = 1 grid point)."""
    K = coeffs.K
    return _allocation(0.0, np.full(K, 1.0 / K), rho_dl, scheme="nors_maxsum", zeta=1.0,
                       share_rule="none")


# ---------------------------------------------------------------- geometric programs

def _gp_terms(k, B_row, I_k, a_k, o_idx, num_idx, n, rho_idx, rhoc_idx):
    """Posynomial ``o (sum_i rho_i B_row[i] + rho_c I_k + 1) / (num a_k) <= 1``; zero terms dropped."""
    coef, exps = [], []

    def term(cf, plus):
        e = np.zeros(n)
        e[o_idx] += 1
        e[num_idx] -= 1
        for j in plus:
            e[j] += 1
        coef.append(cf / a_k)
        exps.append(e)

    for i, b in enumerate(B_row):
        if b > 0:
            term(b, [rho_idx[i]])
    if rhoc_idx is not None and I_k > 0:
        term(I_k, [rhoc_idx])
    term(1.0, [])
    return Posynomial(np.array(coef), np.array(exps))


def _solve_sinr_gp(c: SECoefficients, common: bool, tolerance=1e-10):
    K = c.K
    if np.any(c.a_p <= 0):
        raise ValueError("GP needs every a_p > 0")
    if common and np.any(c.a_c <= 0):
        raise ValueError("GP needs every a_c > 0; use the NoRS variant when the common gain vanishes")
    off = 1 if common else 0
    n = off + K + off + K
    rhoc_idx = 0 if common else None
    rho_idx = list(range(off, off + K))
    oc_idx = off + K if common else None
    op_idx = list(range(2 * off + K, 2 * off + 2 * K))
    cons = []
    for k in range(K):
        cons.append(_gp_terms(k, c.B_p[k], c.I_c[k] if common else 0.0, c.a_p[k], op_idx[k],
                              rho_idx[k], n, rho_idx, rhoc_idx))
    if common:
        for k in range(K):
            cons.append(_gp_terms(k, c.B_c[k], c.I_c[k], c.a_c[k], oc_idx, rhoc_idx, n,
                                  rho_idx, rhoc_idx))
    budget = np.zeros((off + K, n))
    for j in range(off + K):
        budget[j, j] = 1.0
    cons.append(Posynomial(np.ones(off + K), budget))
    obj = np.zeros(n)
    obj[op_idx] = 1.0
    if common:
        obj[oc_idx] = 1.0
    # start: equal split over K + 2 streams, SINR variables at half the achieved value
    p0 = 1.0 / (K + 2)
    rc0 = p0 if common else 0.0
    gc, gp = sinrs(c, rc0, np.full(K, p0))
    y0 = np.empty(n)
    y0[rho_idx] = p0
    y0[op_idx] = 0.5 * gp
    if common:
        y0[rhoc_idx] = p0
        y0[oc_idx] = 0.5 * gc.min()
    y, rep = solve_gp(GeometricProgram(n, obj, cons), y0, tolerance=tolerance)
    if rep.status == "infeasible":
        raise OptimizationError("GP reported infeasible")
    return (y[rhoc_idx] if common else 0.0), y[rho_idx], rep


def maxsinr_gp(coeffs: SECoefficients, rho_dl: float) -> PowerAllocation:
    """Maximize ``gamma_c * prod_k gamma_p,k`` exactly as a geometric program."""
    c = coeffs.normalized(rho_dl)
    t0 = time.perf_counter()
    rc, rp, rep = _solve_sinr_gp(c, True)
    return _allocation(rc, rp, rho_dl, scheme="maxsinr_gp", solver_status=rep.status,
                       iterations=rep.iterations, solve_s=time.perf_counter() - t0,
                       share_rule="equal")


def nors_gp(coeffs: SECoefficients, rho_dl: float) -> PowerAllocation:
    """Maximize ``prod_k gamma_p,k`` with the common stream off."""
    c = coeffs.without_common().normalized(rho_dl)
    rc, rp, rep = _solve_sinr_gp(c, False)
    return _allocation(0.0, rp, rho_dl, scheme="nors_gp", solver_status=rep.status,
                       iterations=rep.iterations, share_rule="none")


# ---------------------------------------------------------------- successive convex approximation

class _SCAModel:
    """Variable layout and subproblem builder for the SCA formulations.

    ``kind`` is ``"maxmin"`` (min total SE with common shares),
    ``"maxsum"`` (sum of SEs) or ``"maxsinr"`` (sum of log2 SINRs). The
    nonconvex ratios ``nu^2 a / chi`` are replaced by their first-order
    expansion ``a (2 nu0 nu / chi0 - nu0^2 chi / chi0^2)`` around the previous
    iterate, which is a global under-estimator, so every iterate stays
    feasible for the next subproblem.
    """

    def __init__(self, c: SECoefficients, kind: str, common: bool):
        self.c, self.kind, self.common = c, kind, common
        K = self.K = c.K
        self.kappa = 1.0 if kind == "maxsinr" else 1.0 / c.prelog
        self.offset = 0.0 if kind == "maxsinr" else 1.0
        idx = 0
        self.sl = {}

        def add(name, size):
            nonlocal idx
            self.sl[name] = np.arange(idx, idx + size)
            idx += size

        if common:
            add("nu_c", 1)
        add("nu", K)
        if kind == "maxmin" and common:
            add("C", K)
        add("alpha_p", K)
        if common:
            add("alpha_c", K if kind == "maxmin" else 1)
        add("r_p", K)
        if common:
            add("r_c", K)
        add("chi_p", K)
        if common:
            add("chi_c", K)
        if kind == "maxmin":
            add("t", 1)
        self.n = idx
        self._static = self._static_blocks()

    def _static_blocks(self):
        c, K, n, sl = self.c, self.K, self.n, self.sl
        blocks = []
        A, b = [], []
        if self.kind == "maxmin":
            for k in range(K):
                row = np.zeros(n)
                row[sl["t"]] = 1.0
                row[sl["alpha_p"][k]] = -1.0
                if self.common:
                    row[sl["C"][k]] = -1.0
                A.append(row)
                b.append(0.0)
            if self.common:
                for k in range(K):
                    row = np.zeros(n)
                    row[sl["C"]] = 1.0
                    row[sl["alpha_c"][k]] = -1.0
                    A.append(row)
                    b.append(0.0)
                for k in range(K):
                    row = np.zeros(n)
                    row[sl["C"][k]] = -1.0
                    A.append(row)
                    b.append(0.0)
        elif self.kind == "maxsum" and self.common:
            row = np.zeros(n)
            row[sl["alpha_c"][0]] = -1.0
            A.append(row)
            b.append(0.0)
        if A:
            blocks.append(AffineBlock(np.array(A), np.array(b)))
        a_idx = list(sl["alpha_p"])
        r_idx = list(sl["r_p"])
        if self.common:
            ac = sl["alpha_c"]
            a_idx += [ac[k] if ac.size == K else ac[0] for k in range(K)]
            r_idx += list(sl["r_c"])
        blocks.append(Exp2Block(a_idx, r_idx, self.kappa))
        # interference-plus-noise epigraphs and the power budget
        P = np.zeros((2 * K + 1 if self.common else K + 1, n, n))
        Aq = np.zeros((P.shape[0], n))
        bq = np.zeros(P.shape[0])
        nu = sl["nu"]
        groups = [("chi_p", c.B_p)] + ([("chi_c", c.B_c)] if self.common else [])
        row = 0
        for name, B in groups:
            for k in range(K):
                P[row, nu, nu] = B[k]
                if self.common:
                    P[row, sl["nu_c"][0], sl["nu_c"][0]] = c.I_c[k]
                Aq[row, sl[name][k]] = -1.0
                bq[row] = c.noise
                row += 1
        P[row, nu, nu] = 1.0
        if self.common:
            P[row, sl["nu_c"][0], sl["nu_c"][0]] = 1.0
        bq[row] = -1.0
        blocks.append(QuadraticBlock(P, Aq, bq, check_psd=False))
        return blocks

    def objective(self):
        obj = np.zeros(self.n)
        if self.kind == "maxmin":
            obj[self.sl["t"]] = 1.0
        else:
            obj[self.sl["alpha_p"]] = 1.0
            if self.common:
                obj[self.sl["alpha_c"]] = 1.0
        return obj

    def program(self, x0):
        """Subproblem linearized at ``x0``."""
        c, K, n, sl = self.c, self.K, self.n, self.sl
        rows, rhs = [], []
        pairs = [("nu", "chi_p", "r_p", c.a_p, False)]
        if self.common:
            pairs.append(("nu_c", "chi_c", "r_c", c.a_c, True))
        for nu_name, chi_name, r_name, a, shared in pairs:
            for k in range(K):
                j_nu = sl[nu_name][0] if shared else sl[nu_name][k]
                j_chi = sl[chi_name][k]
                v0, h0 = x0[j_nu], x0[j_chi]
                row = np.zeros(n)
                # r - offset - a (2 v0 v / h0 - v0^2 h / h0^2) <= 0
                row[sl[r_name][k]] = 1.0
                row[j_nu] = -a[k] * 2.0 * v0 / h0
                row[j_chi] = a[k] * v0 ** 2 / h0 ** 2
                rows.append(row)
                rhs.append(self.offset)
        blocks = [AffineBlock(np.array(rows), np.array(rhs))] + self._static
        return SmoothConvexProgram(n, self.objective(), blocks)

    def start(self, rho_c, rho, shrink=1e-6):
        """Strictly feasible point built from normalized powers."""
        c, K, sl = self.c, self.K, self.sl
        x = np.zeros(self.n)
        scale = 1.0 - shrink
        nu = np.sqrt(np.asarray(rho, dtype=float) * scale)
        nu_c = np.sqrt(rho_c * scale) if self.common else 0.0
        x[sl["nu"]] = nu
        if self.common:
            x[sl["nu_c"]] = nu_c
        ic = nu_c ** 2 * c.I_c
        chi_p = (c.B_p @ nu ** 2 + ic + c.noise) * (1 + shrink) + shrink
        x[sl["chi_p"]] = chi_p
        r_p = self.offset + 0.5 * c.a_p * nu ** 2 / chi_p
        x[sl["r_p"]] = r_p
        L_p = np.log2(r_p) / self.kappa
        x[sl["alpha_p"]] = L_p - 1.0
        if self.common:
            chi_c = (c.B_c @ nu ** 2 + ic + c.noise) * (1 + shrink) + shrink
            x[sl["chi_c"]] = chi_c
            r_c = self.offset + 0.5 * c.a_c * nu_c ** 2 / chi_c
            x[sl["r_c"]] = r_c
            L_c = np.log2(r_c) / self.kappa
            if self.kind == "maxmin":
                total = 0.25 * L_c.min()
                x[sl["C"]] = total / K
                x[sl["alpha_c"]] = 0.5 * (L_c + total)
            elif self.kind == "maxsum":
                x[sl["alpha_c"]] = 0.5 * L_c.min()
            else:
                x[sl["alpha_c"]] = L_c.min() - 1.0
        if self.kind == "maxmin":
            tp = x[sl["alpha_p"]] + (x[sl["C"]] if self.common else 0.0)
            x[sl["t"]] = tp.min() - 1.0
        return x

    def powers(self, x):
        rho = x[self.sl["nu"]] ** 2
        rho_c = x[self.sl["nu_c"]][0] ** 2 if self.common else 0.0
        return rho_c, rho


def _run_sca(model: _SCAModel, rho_c0, rho0, eps=SCA_EPS, max_iter=SCA_MAX_ITER,
             tolerance=1e-10):
    """Iterate the convex subproblems until the objective moves by less than ``eps``.

    A subproblem whose solution scores below the previous iterate (possible
    only through solver inexactness) is rejected and the loop stops there;
    ``raw`` keeps every solver objective, ``history`` the accepted ones.
    """
    x = model.start(rho_c0, rho0)
    obj = model.objective()
    history, raw, statuses = [], [], []
    prev = -np.inf
    for it in range(max_iter):
        prog = model.program(x)
        xn, rep = solve(prog, x, tolerance=tolerance)
        statuses.append(rep.status)
        if rep.status == "infeasible" or not np.all(np.isfinite(xn)):
            raise OptimizationError(f"SCA subproblem {it} infeasible", history)
        val = float(obj @ xn)
        raw.append(val)
        if val < prev:
            break
        x = xn
        history.append(val)
        if abs(val - prev) < eps:
            break
        prev = val
    return x, {"history": history, "raw_history": raw, "iterations": len(raw),
               "solver_statuses": statuses}


def _maxmin_from(c: SECoefficients, common_fraction: float, eps, max_iter):
    K = c.K
    common = common_fraction > 0 and np.all(c.a_c > 0)
    model = _SCAModel(c if common else c.without_common(), "maxmin", common)
    rc0 = common_fraction if common else 0.0
    x, info = _run_sca(model, rc0, np.full(K, (1.0 - rc0) / K), eps, max_iter)
    rho_c, rho = model.powers(x)
    tot = rho_c + rho.sum()
    rho_c, rho = rho_c / tot, rho / tot
    res = evaluate(c, PowerAllocation(rho_c, rho, 1.0))
    shares = waterfill_shares(res.se_p, res.se_c) if common else np.zeros(K)
    info.update(common_fraction_init=common_fraction, used_common=bool(common))
    return rho_c, rho, shares, float((res.se_p + shares).min()), info


def maxmin_sca(coeffs: SECoefficients, rho_dl: float, eps: float = SCA_EPS,
               common_fractions: Sequence[float] = MAXMIN_COMMON_FRACTIONS,
               max_iter: int = SCA_MAX_ITER) -> PowerAllocation:
    """Max-min total SE (private SE plus common share) by SCA with multi-start.

    Each start puts ``f * rho_dl`` on the common stream and splits the rest
    evenly. A start with ``f = 0`` cannot activate the common stream (the
    linearization of its SINR vanishes), so it runs the NoRS formulation.
    The best start by achieved min-SE wins; shares are water-filled.
    """
    c = coeffs.normalized(rho_dl)
    t0 = time.perf_counter()
    best, runs = None, []
    for f in common_fractions:
        if not 0 <= f <= 1:
            raise ValueError("common fractions must lie in [0, 1]")
        out = _maxmin_from(c, f, eps, max_iter)
        runs.append({"common_fraction_init": f, "min_se": out[3], "history": out[4]["history"],
                     "raw_history": out[4]["raw_history"]})
        if best is None or out[3] > best[3] + 1e-12:
            best = out
    rho_c, rho, shares, val, info = best
    return _allocation(rho_c, rho, rho_dl, shares, fill=False, scheme="maxmin_sca",
                       min_se=val, starts=runs, iterations=sum(len(r["raw_history"]) for r in runs),
                       history=info["history"], raw_history=info["raw_history"],
                       solve_s=time.perf_counter() - t0, share_rule="waterfill")


def nors_sca(coeffs: SECoefficients, rho_dl: float, eps: float = SCA_EPS,
             max_iter: int = SCA_MAX_ITER) -> PowerAllocation:
    """Max-min private SE by SCA with the common stream off, started from equal powers."""
    c = coeffs.without_common().normalized(rho_dl)
    rho_c, rho, _, val, info = _maxmin_from(c, 0.0, eps, max_iter)
    return _allocation(0.0, rho, rho_dl, fill=False, scheme="nors_sca", min_se=val,
                       iterations=info["iterations"], history=info["history"],
                       raw_history=info["raw_history"], share_rule="none")


def _sum_sca(coeffs, rho_dl, kind, eps, max_iter, rho_c0=0.1):
    c = coeffs.normalized(rho_dl)
    K = c.K
    if np.any(c.a_c <= 0):
        raise ValueError("SCA with a common stream needs every a_c > 0")
    t0 = time.perf_counter()
    model = _SCAModel(c, kind, True)
    x, info = _run_sca(model, rho_c0, np.full(K, (1 - rho_c0) / K), eps, max_iter)
    rho_c, rho = model.powers(x)
    return _allocation(rho_c, rho, rho_dl, scheme=f"{kind}_sca", solve_s=time.perf_counter() - t0,
                       share_rule="equal", **info)


def maxsumse_sca(coeffs: SECoefficients, rho_dl: float, eps: float = SCA_EPS,
                 max_iter: int = SCA_MAX_ITER) -> PowerAllocation:
    """Sum-SE by SCA from ``rho_c = 0.1 rho_dl``, ``rho_k = 0.9 rho_dl / K``."""
    return _sum_sca(coeffs, rho_dl, "maxsum", eps, max_iter)


def maxsinr_sca(coeffs: SECoefficients, rho_dl: float, eps: float = SCA_EPS,
                max_iter: int = SCA_MAX_ITER) -> PowerAllocation:
    """Product of SINRs (as a sum of log2 SINRs) by SCA from the same start as :func:`maxsumse_sca`.

    The common SINR is not forced to exceed 1.
    """
    return _sum_sca(coeffs, rho_dl, "maxsinr", eps, max_iter)


# ---------------------------------------------------------------- bisection

def _min_power(c: SECoefficients, gamma):
    """Smallest total power achieving private SINR ``gamma`` for every UE, or None."""
    K = c.K
    A = gamma * c.B_p - np.diag(c.a_p)
    res = linprog(np.ones(K), A_ub=A, b_ub=-gamma * np.full(K, c.noise),
                  bounds=[(0, None)] * K, method="highs")
    if res.status != 0:
        return None
    return res.x


def nors_maxmin_bisection(coeffs: SECoefficients, rho_dl: float,
                          tolerance: float = 1e-8) -> PowerAllocation:
    """Globally optimal NoRS max-min SINR by bisection over LP feasibility problems.

    The bracket's upper end ``max_k a_p,k rho_dl / noise`` is the interference-free
    single-UE SINR. ``tolerance`` is relative to the final SINR.
    """
    c = coeffs.without_common().normalized(rho_dl)
    K = c.K
    lo, hi = 0.0, float(c.a_p.max())
    best = np.full(K, 1.0 / K)
    n = 0
    while hi - lo > tolerance * max(lo, 1e-12):
        mid = 0.5 * (lo + hi)
        p = _min_power(c, mid)
        n += 1
        if p is not None and p.sum() <= 1.0:
            lo, best = mid, p
        else:
            hi = mid
        if n > 200:
            break
    return _allocation(0.0, best, rho_dl, scheme="nors_bisection", gamma=lo, lp_solves=n,
                       share_rule="none")


SchemeFn = Callable[[SECoefficients, float], PowerAllocation]

SCHEMES: Dict[str, SchemeFn] = {
    "rs_maxsum_grid": maxsum_grid,
    "rs_maxsinr_gp": maxsinr_gp,
    "rs_maxmin_sca": maxmin_sca,
    "rs_maxsumse_sca": maxsumse_sca,
    "rs_maxsinr_sca": maxsinr_sca,
    "nors_maxsum": nors_maxsum,
    "nors_gp": nors_gp,
    "nors_sca": nors_sca,
    "nors_bisection": nors_maxmin_bisection,
}

BASELINE = {"rs_maxmin_sca": "nors_sca", "rs_maxsum_grid": "nors_maxsum",
            "rs_maxsinr_gp": "nors_gp", "rs_maxsumse_sca": "nors_maxsum",
            "rs_maxsinr_sca": "nors_gp"}


def run_scheme(name: str, coeffs: SECoefficients, rho_dl: float, **kwargs) -> PowerAllocation:
    try:
        fn = SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}") from None
    return fn(coeffs, rho_dl, **kwargs)
