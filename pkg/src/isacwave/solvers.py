"""Dense interior-point solvers for the two convex subproblems.

The alternating design loop needs two solves per round:

* the relaxed subcarrier-assignment problem (continuous u in [0,1]^N with a
  linearized binarity penalty), and
* the power/epigraph problem (power vector p plus the sidelobe bound eta,
  with one second-order cone per sidelobe lag).

Problem sizes are at most a few hundred variables and constraints, so both
are solved with a dense primal-dual interior-point method (Mehrotra-style
predictor-corrector on the perturbed KKT system). No external solver is
used; the returned report carries a KKT residual so callers can check
optimality.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .signal import ChannelRealization, WaveformConfig, psl

__all__ = [
    "AssignmentSubproblem",
    "PowerSubproblem",
    "SolverReport",
    "InfeasibleProblemError",
    "solve_assignment",
    "solve_power",
    "waterfill",
    "psl_uniform",
    "cdr_max",
]

LN2 = float(np.log(2.0))

# feasibility slack granted when a constraint set has an empty relative
# interior (tight packings); still inside the documented 1e-6 tolerance
INTERIOR_RELAX = 1e-7


class InfeasibleProblemError(Exception):
    """Raised when a subproblem's constraint set is (numerically) empty."""


@dataclass
class SolverReport:
    """Solution plus optimality certificate of one convex solve.

    ``kkt_residual`` is the worst KKT condition violation, with stationarity
    measured relative to the objective gradient scale and the
    complementarity gap relative to the objective value (dimensionless, so
    extreme penalty weights remain solvable). ``status`` is one of
    ``"optimal"``, ``"max_iter"``, ``"infeasible"``. For ``solve_power`` the
    solution vector is ``[p_0 .. p_{N-1}, eta]``.
    """

    solution: np.ndarray | None
    objective: float
    kkt_residual: float
    iterations: int
    status: str


@dataclass(frozen=True)
class AssignmentSubproblem:
    """Inputs of the relaxed assignment solve.

    gains:    a_n = |h_n|^2 p_n / sigma^2 for the current powers.
    lam:      binarity penalty weight (>= 0).
    u_anchor: expansion point of the linearized penalty, entries in [0, 1].
    powers:   current power vector, used in the communication power cap.
    """

    gains: np.ndarray
    lam: float
    u_anchor: np.ndarray
    powers: np.ndarray
    config: WaveformConfig

    def __post_init__(self):
        a = np.asarray(self.gains, dtype=float)
        anchor = np.asarray(self.u_anchor, dtype=float)
        p = np.asarray(self.powers, dtype=float)
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("gains must be finite and nonnegative")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ValueError("lam must be a finite nonnegative weight")
        if np.any(anchor < -1e-12) or np.any(anchor > 1 + 1e-12):
            raise ValueError("u_anchor must lie in [0, 1]")
        object.__setattr__(self, "gains", a)
        object.__setattr__(self, "u_anchor", np.clip(anchor, 0.0, 1.0))
        object.__setattr__(self, "powers", p)


@dataclass(frozen=True)
class PowerSubproblem:
    """Inputs of the power/eta solve for a fixed binary selection."""

    selection: np.ndarray
    channel: ChannelRealization
    config: WaveformConfig

    def __post_init__(self):
        sel = np.asarray(self.selection, dtype=float)
        if not np.all((sel == 0.0) | (sel == 1.0)):
            raise ValueError("selection must be binary")
        if int(sel.sum()) != self.config.n_comm:
            raise ValueError("selection count differs from n_comm")
        object.__setattr__(self, "selection", sel)


# ---------------------------------------------------------------------------
# primal-dual interior-point core
# ---------------------------------------------------------------------------


class _LinearBlock:
    """Rows G z <= h."""

    def __init__(self, G: np.ndarray, h: np.ndarray):
        self.G = np.asarray(G, dtype=float)
        self.h = np.asarray(h, dtype=float)
        self.m = self.h.size

    def value(self, z):
        return self.G @ z - self.h

    def jac(self, z):
        return self.G

    def hess_lincomb(self, z, lam):
        return None

    def max_step(self, z, dz):
        s = self.h - self.G @ z
        ds = self.G @ dz
        hit = ds > 0
        if not np.any(hit):
            return np.inf
        return float(np.min(s[hit] / ds[hit]))


class _SidelobeConeBlock:
    """Constraints |sum_n p_n e^{j pi n k / K}| <= eta over a lag set.

    Variables are z = [p, eta] with eta last. Each lag is the smooth convex
    row ``sqrt((C_k p)^2 + (S_k p)^2 + delta^2) - eta <= 0``; the tiny delta
    keeps the norm differentiable at the origin and tightens the cone by a
    negligible delta^2 / (2 eta).
    """

    def __init__(self, C: np.ndarray, S: np.ndarray, delta: float):
        self.C = C
        self.S = S
        self.delta2 = delta * delta
        self.m = C.shape[0]

    def _parts(self, z):
        p = z[:-1]
        a = self.C @ p
        b = self.S @ p
        r = np.sqrt(a * a + b * b + self.delta2)
        return a, b, r

    def value(self, z):
        _, _, r = self._parts(z)
        return r - z[-1]

    def jac(self, z):
        a, b, r = self._parts(z)
        J = np.empty((self.m, z.size))
        J[:, :-1] = (a / r)[:, None] * self.C + (b / r)[:, None] * self.S
        J[:, -1] = -1.0
        return J

    def hess_lincomb(self, z, lam):
        a, b, r = self._parts(z)
        w = lam / r
        V = (a / r)[:, None] * self.C + (b / r)[:, None] * self.S
        Cw = np.sqrt(w)[:, None] * self.C
        Sw = np.sqrt(w)[:, None] * self.S
        Vw = np.sqrt(w)[:, None] * V
        H = np.zeros((z.size, z.size))
        H[:-1, :-1] = Cw.T @ Cw + Sw.T @ Sw - Vw.T @ Vw
        return H

    def max_step(self, z, dz):
        """Largest step keeping eta^2 - a^2 - b^2 > delta^2 on every lag.

        The margin is quadratic along the ray, so the boundary crossing is
        the smallest positive root per cone.
        """
        a, b, _ = self._parts(z)
        eta = z[-1]
        da = self.C @ dz[:-1]
        db = self.S @ dz[:-1]
        deta = dz[-1]
        q0 = eta * eta - a * a - b * b - self.delta2
        q1 = 2.0 * (eta * deta - a * da - b * db)
        q2 = deta * deta - da * da - db * db
        alpha = np.inf
        if deta < 0:
            alpha = eta / -deta
        disc = q1 * q1 - 4.0 * q2 * q0
        sq = np.sqrt(np.maximum(disc, 0.0))
        scale = np.abs(q1) + np.abs(q0) + 1e-30
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = np.abs(q2) > 1e-14 * scale
            r_lo = np.where(quad, (-q1 - sq) / (2.0 * q2), -q0 / q1)
            r_hi = np.where(quad, (-q1 + sq) / (2.0 * q2), -q0 / q1)
            real = np.where(quad, disc >= 0.0, q1 < 0.0)
        for roots in (r_lo, r_hi):
            pos = real & np.isfinite(roots) & (roots > 0)
            if np.any(pos):
                alpha = min(alpha, float(np.min(roots[pos])))
        return alpha


def _solve_kkt_factor(M, A):
    """Factor the reduced KKT matrix [[M, A^T], [A, 0]] with equilibration."""
    n = M.shape[0]
    p = A.shape[0]
    kkt = np.zeros((n + p, n + p))
    kkt[:n, :n] = M
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    d = np.sqrt(np.maximum(np.max(np.abs(kkt), axis=1), 1e-30))
    scaled = kkt / d[:, None] / d[None, :]
    lu, piv = lu_factor(scaled, check_finite=False)
    return (lu, piv, d, scaled, n)


def _solve_kkt_apply(factor, rhs):
    lu, piv, d, scaled, n = factor
    rhs_s = rhs / d
    y = lu_solve((lu, piv), rhs_s, check_finite=False)
    for _ in range(2):
        resid = rhs_s - scaled @ y
        y += lu_solve((lu, piv), resid, check_finite=False)
    sol = y / d
    return sol[:n], sol[n:]


def _pd_solve(obj, blocks, A, b, z0, tol, max_iter=100, callback=None):
    """Primal-dual interior point for min f(z) s.t. c(z) <= 0, A z = b.

    ``obj(z, need_hess)`` returns (value, grad, hess). ``blocks`` supply the
    inequality rows; the start must be strictly feasible. Returns
    (z, objective, kkt_residual, iterations, status).
    """
    z = np.asarray(z0, dtype=float).copy()
    m = sum(blk.m for blk in blocks)

    def cons_value(z):
        return np.concatenate([blk.value(z) for blk in blocks])

    def cons_jac(z):
        return np.vstack([blk.jac(z) for blk in blocks])

    def cons_hess(z, lam):
        H = None
        offset = 0
        for blk in blocks:
            part = blk.hess_lincomb(z, lam[offset : offset + blk.m])
            offset += blk.m
            if part is not None:
                H = part if H is None else H + part
        return H

    c = cons_value(z)
    if np.any(c >= 0.0):
        raise ValueError("interior-point start is not strictly feasible")
    s = -c
    # start duals at the objective's gradient scale so that badly scaled
    # problems (huge penalty weights) do not need dozens of catch-up steps
    _, g0, _ = obj(z, False)
    dual_scale = max(1.0, float(np.max(np.abs(g0))) / max(np.sqrt(m), 1.0))
    lam = dual_scale / s
    nu = np.zeros(A.shape[0])

    b_scale = 1.0 + (float(np.max(np.abs(b))) if b.size else 0.0)
    kkt_res = np.inf
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        f, g, H = obj(z, True)
        J = cons_jac(z)
        r_dual = g + J.T @ lam + A.T @ nu
        r_pri = A @ z - b
        gap = float(s @ lam)
        # residuals are scale-relative so badly scaled objectives still solve
        g_scale = 1.0 + float(np.max(np.abs(g)))
        f_scale = 1.0 + abs(float(f))
        kkt_res = max(
            float(np.max(np.abs(r_dual))) / g_scale,
            gap / f_scale,
            (float(np.max(np.abs(r_pri))) if r_pri.size else 0.0) / b_scale,
        )
        if callback is not None and callback(z, c):
            status = "callback"
            break
        if kkt_res <= tol:
            status = "optimal"
            break

        Hc = cons_hess(z, lam)
        W = H if Hc is None else H + Hc
        dls = lam / s
        M = W + (J * dls[:, None]).T @ J
        try:
            factor = _solve_kkt_factor(M, A)
        except (np.linalg.LinAlgError, ValueError):
            M = M + np.eye(z.size) * (1e-12 * (1.0 + np.trace(M) / z.size))
            factor = _solve_kkt_factor(M, A)

        mu = gap / m

        # predictor (affine scaling direction)
        rhs = np.concatenate([-r_dual + J.T @ lam, -r_pri])
        dz_a, _ = _solve_kkt_apply(factor, rhs)
        dlam_a = -lam + dls * (J @ dz_a)
        ds_a = -(J @ dz_a)
        alpha_a = 1.0
        neg = dlam_a < 0
        if np.any(neg):
            alpha_a = min(alpha_a, float(np.min(-lam[neg] / dlam_a[neg])))
        for blk in blocks:
            alpha_a = min(alpha_a, blk.max_step(z, dz_a))
        mu_a = float((s + alpha_a * ds_a) @ (lam + alpha_a * dlam_a)) / m
        sigma = min(max((max(mu_a, 0.0) / mu) ** 3, 1e-4), 0.9)

        # corrector with Mehrotra second-order term
        rc = sigma * mu - lam * s - dlam_a * ds_a
        rhs = np.concatenate([-r_dual - J.T @ (rc / s), -r_pri])
        dz, dnu = _solve_kkt_apply(factor, rhs)
        dlam = rc / s + dls * (J @ dz)

        frac = 0.995 if mu > 1e-10 else 0.99995
        alpha = 1.0
        neg = dlam < 0
        if np.any(neg):
            alpha = min(alpha, frac * float(np.min(-lam[neg] / dlam[neg])))
        for blk in blocks:
            alpha = min(alpha, frac * blk.max_step(z, dz))

        # safety net for floating-point drift at the exact boundary step
        ok = False
        for _ in range(40):
            c_try = cons_value(z + alpha * dz)
            if np.all(c_try < 0.0):
                ok = True
                break
            alpha *= 0.9
        if not ok or alpha < 1e-14:
            break
        z = z + alpha * dz
        lam = np.maximum(lam + alpha * dlam, 1e-300)
        nu = nu + alpha * dnu
        c = c_try
        s = -c

    f, _, _ = obj(z, False)
    return z, float(f), float(kkt_res), it, status


def _phase1_strict_point(G, h, A, b, z0, feas_tol=1e-6):
    """Find a strictly feasible point of {G z <= h, A z = b} or report failure.

    Minimizes the worst (row-normalized) violation with the same
    interior-point core. Returns (point, margin); margin < 0 means strictly
    feasible. Raises InfeasibleProblemError when the set is empty beyond
    ``feas_tol``.
    """
    scale = np.maximum(np.linalg.norm(G, axis=1), 1e-12)
    Gs = G / scale[:, None]
    hs = h / scale

    m, n = Gs.shape
    s0 = float(np.max(Gs @ z0 - hs)) + 1.0
    G1 = np.zeros((m + 1, n + 1))
    G1[:m, :n] = Gs
    G1[:m, n] = -1.0
    G1[m, n] = 1.0
    h1 = np.concatenate([hs, [s0 + 1.0]])
    A1 = np.zeros((A.shape[0], n + 1))
    A1[:, :n] = A

    grad = np.zeros(n + 1)
    grad[n] = 1.0
    zero_hess = np.zeros((n + 1, n + 1))

    def obj(z, need_hess=True):
        return float(z[n]), grad, (zero_hess if need_hess else None)

    def early_exit(z, c):
        return float(np.max(Gs @ z[:n] - hs)) < -1e-7

    z1 = np.concatenate([z0, [s0]])
    z_best, _, _, _, _ = _pd_solve(
        obj, [_LinearBlock(G1, h1)], A1, b, z1, tol=1e-10, callback=early_exit
    )
    point = z_best[:n]
    margin = float(np.max(Gs @ point - hs))
    if margin > feas_tol:
        raise InfeasibleProblemError(
            f"constraint set empty (best relative violation {margin:.3e})"
        )
    return point, margin


# ---------------------------------------------------------------------------
# assignment subproblem
# ---------------------------------------------------------------------------


def _assignment_constraints(config: WaveformConfig, powers: np.ndarray):
    n = config.n_subcarriers
    rows = [-np.eye(n), np.eye(n)]
    rhs = [np.zeros(n), np.ones(n)]
    gap = config.min_gap
    if gap > 0 and n > gap:
        width = gap + 1
        n_win = n - gap
        W = np.zeros((n_win, n))
        for i in range(n_win):
            W[i, i : i + width] = 1.0
        rows.append(W)
        rhs.append(np.ones(n_win))
    rows.append(powers[None, :])
    rhs.append(np.array([config.p_comm_max]))
    return np.vstack(rows), np.concatenate(rhs)


def solve_assignment(sub: AssignmentSubproblem, tol: float = 1e-8) -> SolverReport:
    """Solve the relaxed assignment problem, returning u in [0,1]^N.

    Minimizes ``-sum log2(1 + a_n u_n) + lam * (u^T (1 - 2 anchor) +
    anchor^T anchor)`` subject to the selection-count equality, the
    communication power cap, the sliding-window gap constraints and the box.
    """
    config = sub.config
    n = config.n_subcarriers
    nr = config.n_comm
    a = sub.gains
    lam = float(sub.lam)
    lin = lam * (1.0 - 2.0 * sub.u_anchor)
    const = lam * float(sub.u_anchor @ sub.u_anchor)

    def objective(u):
        return float(-np.sum(np.log1p(a * u)) / LN2 + lin @ u + const)

    if nr == n:
        # C5 pins every entry; config validity forces min_gap == 0
        u = np.ones(n)
        return SolverReport(u, objective(u), 0.0, 0, "optimal")

    G, h = _assignment_constraints(config, sub.powers)
    A = np.ones((1, n))
    b = np.array([float(nr)])

    z0 = np.full(n, nr / n)
    if np.any(G @ z0 - h >= -1e-9):
        try:
            z0, margin = _phase1_strict_point(G, h, A, b, z0)
        except InfeasibleProblemError:
            return SolverReport(None, np.nan, np.inf, 0, "infeasible")
        if margin >= -1e-9:
            # feasible but without usable interior: grant a tiny slack
            h = h + INTERIOR_RELAX
            if np.any(G @ z0 - h >= 0.0):
                return SolverReport(None, np.nan, np.inf, 0, "infeasible")

    def obj(z, need_hess=True):
        w = 1.0 + a * z
        val = float(-np.sum(np.log(np.maximum(w, 1e-12))) / LN2 + lin @ z + const)
        grad = -(a / w) / LN2 + lin
        hess = np.diag((a / w) ** 2 / LN2) if need_hess else None
        return val, grad, hess

    z, f, kkt, steps, status = _pd_solve(obj, [_LinearBlock(G, h)], A, b, z0, tol)
    return SolverReport(np.clip(z, 0.0, 1.0), f, kkt, steps, status)


# ---------------------------------------------------------------------------
# power subproblem
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _lag_matrices(n: int, half_len: int, mainlobe: int, conjugate: bool):
    lags = np.arange(mainlobe + 1, half_len, dtype=float)
    if conjugate:
        lags = np.concatenate([lags, -lags])
    grid = np.pi * np.outer(lags, np.arange(n)) / half_len
    return np.cos(grid), np.sin(grid)


def waterfill(gains: np.ndarray, budget: float) -> np.ndarray:
    """Exact water-filling of a power budget over parallel channels.

    Maximizes ``sum log(1 + g_i p_i)`` with ``sum p_i = budget, p >= 0``.
    Channels with zero gain receive zero power.
    """
    g = np.asarray(gains, dtype=float)
    p = np.zeros_like(g)
    active = np.flatnonzero(g > 0)
    if active.size == 0 or budget <= 0:
        return p
    inv = 1.0 / g[active]
    order = np.argsort(inv)
    inv_sorted = inv[order]
    k = active.size
    while k > 0:
        level = (budget + inv_sorted[:k].sum()) / k
        if level > inv_sorted[k - 1]:
            break
        k -= 1
    alloc = np.maximum(level - inv_sorted[:k], 0.0)
    p[active[order[:k]]] = alloc
    return p


def psl_uniform(config: WaveformConfig) -> float:
    """Reference sidelobe level of the uniform (unoptimized) allocation."""
    n = config.n_subcarriers
    uniform = np.full(n, config.p_total / n)
    return psl(uniform, config).linear


def cdr_max(channel: ChannelRealization, config: WaveformConfig) -> float:
    """Rate of water-filling the comm budget over the best Nr subcarriers.

    Ignores the gap constraint, so it upper-bounds any feasible rate and is
    used to normalize the rate term of the weighted objective.
    """
    gains = channel.gains
    order = np.lexsort((np.arange(gains.size), -gains))
    top = order[: config.n_comm]
    alloc = waterfill(gains[top], config.p_comm_max)
    return float(np.sum(np.log1p(gains[top] * alloc)) / LN2)


def solve_power(
    sub: PowerSubproblem,
    tol: float = 1e-8,
    include_conjugate_lags: bool = False,
) -> SolverReport:
    """Solve the power/eta epigraph problem for a fixed selection.

    Minimizes ``rho * eta / Rmax - (1 - rho) * CDR(p) / Cmax`` over the total
    power simplex with the communication cap and one second-order cone per
    sidelobe lag (conjugate lags are redundant and excluded by default). The
    solution vector is ``[p, eta]``.
    """
    config = sub.config
    n = config.n_subcarriers
    rho = config.rho
    sel_idx = np.flatnonzero(sub.selection > 0.5)
    gains_sel = sub.channel.gains[sel_idx]

    rmax = psl_uniform(config)
    cmax = cdr_max(sub.channel, config)
    eta_weight = rho / rmax
    rate_weight = 0.0 if rho == 1.0 or cmax <= 0.0 else (1.0 - rho) / (cmax * LN2)

    C, S = _lag_matrices(
        n, config.half_len, config.mainlobe_boundary, include_conjugate_lags
    )

    p_total = config.p_total
    p_cap = config.p_comm_max
    if sel_idx.size == n and p_cap < p_total - 1e-9:
        # every subcarrier is selected, so the comm cap contradicts C1
        return SolverReport(None, np.nan, np.inf, 0, "infeasible")
    cap_active = p_cap < p_total - 1e-15 and sel_idx.size < n
    eta_hi = 1.25 * p_total

    rows = [np.hstack([-np.eye(n), np.zeros((n, 1))])]  # p >= 0
    rhs = [np.zeros(n)]
    eta_row = np.zeros((1, n + 1))
    eta_row[0, -1] = -1.0
    rows.append(eta_row)  # eta >= 0
    rhs.append(np.zeros(1))
    eta_up = np.zeros((1, n + 1))
    eta_up[0, -1] = 1.0
    rows.append(eta_up)  # eta <= 1.25 * p_total (never active at optimum)
    rhs.append(np.array([eta_hi]))
    if cap_active:
        cap = np.zeros((1, n + 1))
        cap[0, :n] = sub.selection
        rows.append(cap)
        rhs.append(np.array([p_cap]))
    G = np.vstack(rows)
    h = np.concatenate(rhs)

    A = np.zeros((1, n + 1))
    A[0, :n] = 1.0
    b = np.array([p_total])

    # strictly feasible start: keep the selected share safely under the cap
    p0 = np.full(n, p_total / n)
    if cap_active and sel_idx.size * p_total / n >= p_cap:
        p0 = np.full(n, (p_total - 0.5 * p_cap) / (n - sel_idx.size))
        p0[sel_idx] = 0.5 * p_cap / sel_idx.size
    r0 = float(np.max(np.hypot(C @ p0, S @ p0))) if C.shape[0] else 0.0
    eta0 = r0 + 0.1 * (eta_hi - r0)
    z0 = np.concatenate([p0, [eta0]])

    def obj(z, need_hess=True):
        p_sel = z[sel_idx]
        w = 1.0 + gains_sel * p_sel
        val = float(
            eta_weight * z[-1] - rate_weight * np.sum(np.log(np.maximum(w, 1e-12)))
        )
        grad = np.zeros(n + 1)
        grad[-1] = eta_weight
        grad[sel_idx] = -rate_weight * gains_sel / w
        hess = None
        if need_hess:
            hess = np.zeros((n + 1, n + 1))
            hess[sel_idx, sel_idx] = rate_weight * (gains_sel / w) ** 2
        return val, grad, hess

    blocks = [_LinearBlock(G, h)]
    if C.shape[0]:
        blocks.append(_SidelobeConeBlock(C, S, delta=1e-9 * p_total))

    z, f, kkt, steps, status = _pd_solve(obj, blocks, A, b, z0, tol)
    return SolverReport(z, f, kkt, steps, status)
