"""Alternating design loop: subcarrier assignment and power allocation.

Each outer round first refines the relaxed selection with an adaptively
penalized sequence of convex solves until the relaxation is (near) binary,
rounds it to a feasible binary selection, then re-optimizes the power split
for that selection. The loop stops when the relative changes of both the
data-rate objective and the sidelobe objective fall below their tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal import ChannelRealization, SubcarrierPlan, WaveformConfig, cdr, psl, window_sums
from .solvers import (
    AssignmentSubproblem,
    InfeasibleProblemError,
    PowerSubproblem,
    cdr_max,
    psl_uniform,
    solve_assignment,
    solve_power,
)

__all__ = [
    "AcmParams",
    "AcmTrace",
    "SapaResult",
    "initial_selection",
    "adapt_lambda",
    "compute_alpha",
    "binarize",
    "run_acm",
    "hsapa_baseline",
    "weighted_objective",
]

INIT_CASES = ("case1", "case2", "case3", "custom")

# growth cap on the binarity penalty; beyond this the penalty already
# dominates every rate gradient and further doubling only hurts conditioning
LAMBDA_CAP = 1e9


@dataclass(frozen=True)
class AcmParams:
    """Tuning knobs of the alternating loop.

    ``eps_u`` defaults to ``1e-3 * n_comm`` when left as None. ``adapt``
    disables the penalty growth rule when False (fixed-lambda policy).
    """

    lambda0: float = 1e-4
    xi1: float = 0.9
    xi2: float = 2.0
    eps_u: float | None = None
    eps_c: float = 1e-4
    eps_a: float = 1e-4
    t_max: int = 1000
    m_max: int = 100
    init_selection: str = "case1"
    custom_init: np.ndarray | None = None
    adapt: bool = True
    solver_tol: float = 1e-8

    def __post_init__(self):
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        if not 0 < self.xi1 < 1 < self.xi2:
            raise ValueError("need 0 < xi1 < 1 < xi2")
        for name in ("eps_c", "eps_a", "solver_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_u is not None and self.eps_u <= 0:
            raise ValueError("eps_u must be positive")
        if self.t_max < 1 or self.m_max < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.init_selection not in INIT_CASES:
            raise ValueError(f"init_selection must be one of {INIT_CASES}")

    def resolved_eps_u(self, config: WaveformConfig) -> float:
        return self.eps_u if self.eps_u is not None else 1e-3 * config.n_comm


@dataclass
class AcmTrace:
    """Per-iteration history of one run.

    Outer lists are indexed by outer round; ``alphas``/``lambdas`` hold one
    inner-iteration list per outer round. ``obj_a`` is the linear (watts)
    sidelobe peak.
    """

    obj_c: list = field(default_factory=list)
    obj_a: list = field(default_factory=list)
    dr_c: list = field(default_factory=list)
    dr_a: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    inner_converged: list = field(default_factory=list)

    @property
    def n_outer(self) -> int:
        return len(self.obj_c)


@dataclass
class SapaResult:
    """Final plan with its metrics and the convergence trace."""

    plan: SubcarrierPlan
    psl_db: float
    cdr: float
    trace: AcmTrace
    converged: bool


def initial_selection(
    case: str,
    config: WaveformConfig,
    custom: np.ndarray | None = None,
) -> np.ndarray:
    """Build one of the three canonical starting selections.

    Case 1 spreads the picks at stride N/Nr, case 2 packs them at the
    minimum allowed stride L+1, case 3 is case 1 shifted right by 2. A case
    whose pattern violates the gap or range constraints raises instead of
    being repaired.
    """
    n, nr, gap = config.n_subcarriers, config.n_comm, config.min_gap
    if case == "custom":
        if custom is None:
            raise ValueError("custom initial selection requires a vector")
        sel = np.asarray(custom, dtype=float)
        if sel.shape != (n,) or not np.all((sel == 0) | (sel == 1)):
            raise ValueError("custom selection must be binary of length N")
    else:
        if case == "case1":
            idx = (np.arange(nr) * n) // nr
        elif case == "case2":
            idx = np.arange(nr) * (gap + 1)
        elif case == "case3":
            idx = (np.arange(nr) * n) // nr + 2
        else:
            raise ValueError(f"unknown initial selection case: {case}")
        if idx[-1] >= n:
            raise ValueError(f"{case} pattern exceeds the index range for N={n}")
        sel = np.zeros(n)
        sel[idx] = 1.0
    if int(sel.sum()) != nr:
        raise ValueError("initial selection does not pick n_comm subcarriers")
    if np.any(window_sums(sel, gap) > 1.0):
        raise ValueError(f"{case} pattern violates the minimum-gap constraint")
    return sel


def adapt_lambda(
    lambda_prev: float,
    alpha_m1: float,
    alpha_m2: float | None,
    xi1: float,
    xi2: float,
) -> float:
    """Penalty update: hold on sufficient decrease of alpha, else grow by xi2."""
    if alpha_m2 is None:
        return lambda_prev
    if alpha_m1 <= xi1 * alpha_m2:
        return lambda_prev
    return xi2 * lambda_prev


def compute_alpha(u_m: np.ndarray, u_m1: np.ndarray) -> float:
    """Binarity/progress measure of the penalized inner iteration."""
    u_m = np.asarray(u_m, dtype=float)
    u_m1 = np.asarray(u_m1, dtype=float)
    return float(u_m @ (1.0 - 2.0 * u_m1) + u_m1 @ u_m1)


def _spacing_ok(index: int, picked: list, gap: int) -> bool:
    return all(abs(index - j) > gap for j in picked)


def _best_spaced_selection(values: np.ndarray, nr: int, gap: int) -> list | None:
    """Exact max-total-value selection of nr indices with pairwise gap > gap.

    Dynamic program over (position, picks); used as fallback when the plain
    greedy jams before reaching nr picks.
    """
    n = values.size
    neg = -np.inf
    best = np.full((n + 1, nr + 1), neg)
    best[:, 0] = 0.0
    take = np.zeros((n + 1, nr + 1), dtype=bool)
    for i in range(1, n + 1):
        for r in range(1, nr + 1):
            skip = best[i - 1, r]
            prev = i - 1 - gap
            prior = best[prev, r - 1] if prev >= 1 else (0.0 if r == 1 else neg)
            grab = prior + values[i - 1]
            if grab > skip:
                best[i, r] = grab
                take[i, r] = True
            else:
                best[i, r] = skip
    if not np.isfinite(best[n, nr]):
        return None
    picks = []
    i, r = n, nr
    while r > 0:
        if take[i, r]:
            picks.append(i - 1)
            i = i - 1 - gap
            r -= 1
        else:
            i -= 1
    return sorted(picks)


def binarize(
    relaxed_u: np.ndarray,
    powers: np.ndarray,
    config: WaveformConfig,
) -> np.ndarray:
    """Round a relaxed selection to a feasible binary one.

    Greedily picks the largest relaxed entries while skipping indices within
    distance L of an earlier pick (ties go to the lower index). If the plain
    greedy jams before reaching Nr picks, an exact spacing-constrained
    dynamic program takes over. A communication-power overshoot is repaired
    by swapping the lowest-value picks to cheaper feasible slots.
    """
    u = np.asarray(relaxed_u, dtype=float)
    p = np.asarray(powers, dtype=float)
    n, nr, gap = config.n_subcarriers, config.n_comm, config.min_gap
    if u.shape != (n,):
        raise ValueError("relaxed selection has wrong length")

    order = np.lexsort((np.arange(n), -u))
    picked: list = []
    for idx in order:
        if len(picked) == nr:
            break
        if _spacing_ok(int(idx), picked, gap):
            picked.append(int(idx))
    if len(picked) < nr:
        dp = _best_spaced_selection(u, nr, gap)
        if dp is None:
            raise InfeasibleProblemError(
                f"no {nr}-subcarrier selection with gap {gap} exists for N={n}"
            )
        picked = dp

    cap = config.p_comm_max
    tol = 1e-9
    if float(p[picked].sum()) > cap + tol:
        # swap cheap-value picks to lower-power slots until under the cap
        for _ in range(n):
            if float(p[picked].sum()) <= cap + tol:
                break
            by_value = sorted(picked, key=lambda j: (u[j], -p[j]))
            swapped = False
            for victim in by_value:
                rest = [j for j in picked if j != victim]
                candidates = [
                    i
                    for i in range(n)
                    if i not in picked
                    and _spacing_ok(i, rest, gap)
                    and p[i] < p[victim] - tol
                ]
                if candidates:
                    best = max(candidates, key=lambda i: (u[i], -p[i], -i))
                    picked = rest + [best]
                    swapped = True
                    break
            if not swapped:
                raise InfeasibleProblemError(
                    "cannot satisfy the communication power cap by swapping"
                )
    sel = np.zeros(n)
    sel[picked] = 1.0
    return sel


def _inner_assignment_loop(
    config: WaveformConfig,
    channel: ChannelRealization,
    powers: np.ndarray,
    anchor: np.ndarray,
    params: AcmParams,
    trace: AcmTrace,
    outer_t: int,
):
    """Penalized convex iterations until the relaxation is near binary."""
    gains = channel.gains * powers
    eps_u = params.resolved_eps_u(config)
    lam = params.lambda0
    alphas: list = []
    lambdas: list = []
    u_rel = anchor
    converged = False
    for m in range(1, params.m_max + 1):
        if params.adapt and len(alphas) >= 2:
            lam = min(
                adapt_lambda(lam, alphas[-1], alphas[-2], params.xi1, params.xi2),
                LAMBDA_CAP,
            )
        sub = AssignmentSubproblem(gains, lam, anchor, powers, config)
        report = solve_assignment(sub, tol=params.solver_tol)
        if report.status == "infeasible":
            raise InfeasibleProblemError(
                f"assignment subproblem infeasible (outer {outer_t}, inner {m})"
            )
        u_rel = report.solution
        alpha = compute_alpha(u_rel, anchor)
        alphas.append(alpha)
        lambdas.append(lam)
        anchor = u_rel
        if alpha <= eps_u:
            converged = True
            break
        if (
            lam >= LAMBDA_CAP
            and len(alphas) >= 3
            and abs(alphas[-1] - alphas[-3]) <= 1e-9 * max(1.0, alphas[-1])
        ):
            # stationary fractional point that no penalty growth can move
            # (symmetric window ties); rounding resolves it deterministically
            break
    trace.alphas.append(alphas)
    trace.lambdas.append(lambdas)
    trace.inner_converged.append(converged)
    return u_rel


def _relative_change(new: float, old: float) -> float:
    if old == 0.0:
        return 0.0 if new == 0.0 else np.inf
    return abs((new - old) / old)


def run_acm(
    config: WaveformConfig,
    channel: ChannelRealization,
    params: AcmParams | None = None,
) -> SapaResult:
    """Run the full alternating loop and return the final feasible plan."""
    params = params or AcmParams()
    n = config.n_subcarriers
    selection = initial_selection(
        params.init_selection, config, custom=params.custom_init
    )
    powers = np.full(n, config.p_total / n)
    trace = AcmTrace()

    plan = SubcarrierPlan(selection, powers)
    obj_c_prev = cdr(plan, channel)
    obj_a_prev = psl(powers, config).linear

    rmax = psl_uniform(config)
    cmax = cdr_max(channel, config)
    seen: dict = {}
    converged = False
    cycled = False
    for outer in range(params.t_max):
        u_rel = _inner_assignment_loop(
            config, channel, powers, selection, params, trace, outer
        )
        selection = binarize(u_rel, powers, config)

        key = selection.astype(np.uint8).tobytes()
        if key in seen:
            cycled = True
            powers = seen[key]
        else:
            report = solve_power(
                PowerSubproblem(selection, channel, config), tol=params.solver_tol
            )
            if report.status == "infeasible":
                raise InfeasibleProblemError(
                    f"power subproblem infeasible (outer {outer})"
                )
            powers = np.maximum(report.solution[:-1], 0.0)
            seen[key] = powers

        plan = SubcarrierPlan(selection, powers)
        obj_c = cdr(plan, channel)
        obj_a = psl(powers, config).linear
        dr_c = _relative_change(obj_c, obj_c_prev)
        dr_a = _relative_change(obj_a, obj_a_prev)
        trace.obj_c.append(obj_c)
        trace.obj_a.append(obj_a)
        trace.dr_c.append(dr_c)
        trace.dr_a.append(dr_a)
        obj_c_prev, obj_a_prev = obj_c, obj_a

        if dr_c <= params.eps_c and dr_a <= params.eps_a:
            converged = True
            break
        if cycled:
            # revisiting a selection makes the trajectory periodic; keep the
            # best plan seen instead of replaying the cycle until t_max
            break

    if cycled and not converged:
        best = None
        for key, pw in seen.items():
            sel = np.frombuffer(key, dtype=np.uint8).astype(float)
            cand = SubcarrierPlan(sel, pw)
            rate = cdr(cand, channel) / cmax if cmax > 0 else 0.0
            value = config.rho * psl(pw, config).linear / rmax - (1.0 - config.rho) * rate
            if best is None or value < best[0]:
                best = (value, cand)
        plan = best[1]

    return SapaResult(
        plan=plan,
        psl_db=psl(plan.power, config).db,
        cdr=cdr(plan, channel),
        trace=trace,
        converged=converged,
    )


def hsapa_baseline(
    config: WaveformConfig,
    channel: ChannelRealization,
    solver_tol: float = 1e-8,
) -> SapaResult:
    """High-response baseline: pick the Nr strongest subcarriers.

    The minimum-gap constraint is deliberately not enforced here; the power
    split is optimized exactly as for the proposed selection.
    """
    mags = np.abs(channel.response)
    order = np.lexsort((np.arange(mags.size), -mags))
    selection = np.zeros(config.n_subcarriers)
    selection[order[: config.n_comm]] = 1.0

    report = solve_power(PowerSubproblem(selection, channel, config), tol=solver_tol)
    if report.status == "infeasible":
        raise InfeasibleProblemError("power subproblem infeasible for baseline")
    powers = np.maximum(report.solution[:-1], 0.0)
    plan = SubcarrierPlan(selection, powers)

    trace = AcmTrace()
    trace.obj_c.append(cdr(plan, channel))
    trace.obj_a.append(psl(powers, config).linear)
    trace.dr_c.append(0.0)
    trace.dr_a.append(0.0)
    trace.alphas.append([])
    trace.lambdas.append([])
    trace.inner_converged.append(True)
    return SapaResult(
        plan=plan,
        psl_db=psl(powers, config).db,
        cdr=cdr(plan, channel),
        trace=trace,
        converged=True,
    )


def weighted_objective(
    config: WaveformConfig,
    channel: ChannelRealization,
    plan: SubcarrierPlan,
) -> float:
    """Scalarized trade-off value of a plan (lower is better)."""
    rmax = psl_uniform(config)
    cmax = cdr_max(channel, config)
    rate_term = cdr(plan, channel) / cmax if cmax > 0 else 0.0
    return config.rho * psl(plan.power, config).linear / rmax - (1.0 - config.rho) * rate_term
