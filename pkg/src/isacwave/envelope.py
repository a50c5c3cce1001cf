"""Envelope flattening via alternating least squares on the reserved phases.

The communication subcarriers carry fixed symbols; the remaining subcarriers
are free unit-phase degrees of freedom. Each iteration fits the closest
constant-envelope signal (amplitude beta, phases Phi) to the current
waveform, then re-projects the reserved spectrum onto the fixed-magnitude
set. Every sub-step is the exact minimizer of its block, so the squared
residual never increases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import (
    DEFAULT_OVERSAMPLING,
    SubcarrierPlan,
    TimeWaveform,
    forward_dft,
    inverse_dft,
    synthesize,
)

__all__ = [
    "CveProblem",
    "CveIterState",
    "build_cve_problem",
    "ls_iterate",
    "optimize_phases",
    "random_phase_baseline",
]


@dataclass(frozen=True)
class CveProblem:
    """Fixed data of one envelope-flattening problem.

    comm_symbols is the frequency-domain communication part (zero on
    reserved subcarriers); known_part is its time-domain image at the
    iteration sampling rate (no oversampling).
    """

    plan: SubcarrierPlan
    comm_symbols: np.ndarray
    known_part: np.ndarray
    oversampling: int = DEFAULT_OVERSAMPLING

    @property
    def reserved_mask(self) -> np.ndarray:
        return self.plan.selection < 0.5

    @property
    def reserved_magnitudes(self) -> np.ndarray:
        return np.where(self.reserved_mask, np.sqrt(self.plan.power), 0.0)


@dataclass(frozen=True)
class CveIterState:
    """State after one alternating update.

    ``w`` is the reserved spectrum (|w| pinned to the reserved magnitudes),
    ``beta``/``phi`` the constant-envelope fit computed from the previous
    spectrum, and ``objective`` the squared residual of that fit.
    """

    w: np.ndarray
    beta: float
    phi: np.ndarray
    objective: float


def build_cve_problem(
    plan: SubcarrierPlan,
    comm_phases: np.ndarray,
    oversampling: int = DEFAULT_OVERSAMPLING,
) -> CveProblem:
    """Assemble the fixed communication part of the flattening problem."""
    phases = np.asarray(comm_phases, dtype=float)
    if phases.shape != plan.selection.shape:
        raise ValueError("comm_phases must have length N")
    selected = plan.selection > 0.5
    symbols = np.where(selected, np.sqrt(plan.power) * np.exp(1j * phases), 0.0)
    return CveProblem(
        plan=plan,
        comm_symbols=symbols,
        known_part=inverse_dft(symbols),
        oversampling=oversampling,
    )


def _unit_phase(values: np.ndarray) -> np.ndarray:
    """values / |values| with unit phase substituted for zero entries."""
    mag = np.abs(values)
    out = np.ones_like(values)
    nz = mag > 0.0
    out[nz] = values[nz] / mag[nz]
    return out


def initial_state(problem: CveProblem) -> CveIterState:
    """Zero-phase reserved spectrum as the deterministic starting point."""
    w = problem.reserved_magnitudes.astype(complex)
    n = w.size
    return CveIterState(w=w, beta=0.0, phi=np.zeros(n), objective=np.inf)


def ls_iterate(state: CveIterState, problem: CveProblem) -> CveIterState:
    """One alternating least-squares cycle.

    Fits (beta, phi) to the waveform of the incoming spectrum, records the
    fit residual, then re-projects the reserved spectrum onto the
    fixed-magnitude set for that fit.
    """
    n = state.w.size
    s = inverse_dft(state.w) + problem.known_part
    env = np.abs(s)
    beta = float(env.sum()) / n
    phi = np.angle(s)
    objective = float(np.sum((env - beta) ** 2))

    target = beta * np.exp(1j * phi) - problem.known_part
    w_next = problem.reserved_magnitudes * _unit_phase(forward_dft(target))
    return CveIterState(w=w_next, beta=beta, phi=phi, objective=objective)


def optimize_phases(
    problem: CveProblem,
    max_iter: int = 200,
    tol: float = 1e-8,
):
    """Flatten the envelope; returns (reserved_phases, final_state, trace).

    The phase vector has length N with entries meaningful (and applied) only
    on reserved subcarriers. The trace holds the fit residual of every
    iteration and is nonincreasing.
    """
    mask = problem.reserved_mask
    if not np.any(mask):
        v = problem.known_part
        env = np.abs(v)
        beta = float(env.mean())
        objective = float(np.sum((env - beta) ** 2))
        state = CveIterState(
            w=np.zeros_like(v), beta=beta, phi=np.angle(v), objective=objective
        )
        return np.zeros(v.size), state, [objective]

    state = initial_state(problem)
    trace: list = []
    prev = None
    for _ in range(max_iter):
        state = ls_iterate(state, problem)
        trace.append(state.objective)
        if prev is not None and abs(state.objective - prev) <= tol * max(1.0, prev):
            break
        prev = state.objective

    phases = np.where(mask, np.angle(state.w), 0.0)
    return phases, state, trace


def random_phase_baseline(
    plan: SubcarrierPlan,
    comm_phases: np.ndarray,
    seed,
    oversampling: int = DEFAULT_OVERSAMPLING,
) -> TimeWaveform:
    """Waveform with uniformly random reserved phases (the RPM baseline)."""
    rng = np.random.default_rng(seed)
    n = plan.selection.size
    reserved = rng.uniform(0.0, 2.0 * np.pi, n)
    return synthesize(plan, comm_phases, reserved, oversampling)
