"""OFDM waveform synthesis and the four design metrics (PSL, CDR, CVE, PAPR).

Conventions used throughout the package:

* DFT matrix ``F[k, p] = exp(-2j*pi*k*p/N)`` (unnormalized); the time-domain
  waveform is ``s = F^H x`` with no ``1/N`` factor, so a constant spectrum of
  amplitude ``a`` gives ``s[0] = N*a``.
* The autocorrelation lattice uses ``R[k] = sum_n p[n] * exp(1j*pi*n*k/K)``
  for ``k = -K+1 .. K-1``; by default ``K = N``.
* PSL in dB is ``20*log10(PSL_linear / R[0])`` with ``R[0] = sum(p)``.
* Envelope metrics (CVE, PAPR) are evaluated at oversampling ``q = 4`` unless
  the caller synthesizes at a different rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "WaveformConfig",
    "SubcarrierPlan",
    "ChannelRealization",
    "FrequencySymbols",
    "TimeWaveform",
    "PslValue",
    "inverse_dft",
    "forward_dft",
    "frequency_symbols",
    "synthesize",
    "autocorrelation",
    "psl",
    "cdr",
    "cve",
    "papr",
    "window_sums",
]

DEFAULT_OVERSAMPLING = 4


@dataclass(frozen=True)
class WaveformConfig:
    """All scalar design parameters of one waveform problem.

    Attributes:
        n_subcarriers: number of OFDM subcarriers N.
        n_comm: number of subcarriers reserved for communication (Nr).
        min_gap: minimum index gap parameter L; two communication subcarriers
            must be at least L+1 apart (every window of L+1 consecutive
            selection entries sums to at most 1).
        p_total: total transmit power in watts.
        p_comm_max: cap on the summed power of communication subcarriers (Pc).
        rho: trade-off weight in [0, 1] between sidelobe level and data rate.
        noise_power_comm: communication noise power sigma_c^2 in watts.
        autocorr_half_len: one-sided autocorrelation length K (2K-1 lags);
            defaults to N.
        mainlobe_boundary: lags |k| <= this value are excluded from the
            sidelobe region.
    """

    n_subcarriers: int
    n_comm: int
    min_gap: int
    p_total: float
    p_comm_max: float
    rho: float
    noise_power_comm: float
    autocorr_half_len: int | None = None
    mainlobe_boundary: int = 1

    def __post_init__(self):
        n, nr, gap = self.n_subcarriers, self.n_comm, self.min_gap
        if n < 1:
            raise ValueError("n_subcarriers must be positive")
        if not 1 <= nr <= n:
            raise ValueError(f"n_comm must satisfy 1 <= Nr <= N, got {nr}")
        if gap < 0:
            raise ValueError("min_gap must be nonnegative")
        if (nr - 1) * (gap + 1) + 1 > n:
            raise ValueError(
                f"{nr} subcarriers with gap {gap} do not fit in {n} slots"
            )
        if not 0.0 < self.p_comm_max <= self.p_total:
            raise ValueError("need 0 < p_comm_max <= p_total")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.noise_power_comm <= 0.0:
            raise ValueError("noise_power_comm must be positive")
        if self.autocorr_half_len is not None and self.autocorr_half_len < 1:
            raise ValueError("autocorr_half_len must be positive")
        k = self.half_len
        if not 0 <= self.mainlobe_boundary < k - 1:
            raise ValueError("mainlobe_boundary must satisfy 0 <= Y < K-1")

    @property
    def half_len(self) -> int:
        """Resolved one-sided autocorrelation length K (defaults to N)."""
        return self.autocorr_half_len or self.n_subcarriers

    @property
    def sidelobe_lags(self) -> np.ndarray:
        """Positive lags of the sidelobe region (negatives are conjugates)."""
        return np.arange(self.mainlobe_boundary + 1, self.half_len)


@dataclass(frozen=True)
class SubcarrierPlan:
    """Joint selection/power decision: binary selection u and power vector p."""

    selection: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        sel = np.asarray(self.selection, dtype=float)
        pwr = np.asarray(self.power, dtype=float)
        if sel.shape != pwr.shape or sel.ndim != 1:
            raise ValueError("selection and power must be 1-D of equal length")
        object.__setattr__(self, "selection", sel)
        object.__setattr__(self, "power", pwr)

    @property
    def selected_indices(self) -> np.ndarray:
        return np.flatnonzero(self.selection > 0.5)

    def validate(self, config: WaveformConfig, tol: float = 1e-6) -> None:
        """Raise if the plan violates the problem constraints beyond tol."""
        sel, pwr = self.selection, self.power
        if sel.size != config.n_subcarriers:
            raise ValueError("plan length does not match config")
        if np.any(pwr < -tol):
            raise ValueError("negative power entry")
        if abs(pwr.sum() - config.p_total) > tol:
            raise ValueError("total power mismatch")
        if not np.all((sel == 0.0) | (sel == 1.0)):
            raise ValueError("selection is not binary")
        if int(sel.sum()) != config.n_comm:
            raise ValueError("selection count differs from n_comm")
        if float(sel @ pwr) > config.p_comm_max + tol:
            raise ValueError("communication power cap exceeded")
        if config.min_gap > 0 and np.any(window_sums(sel, config.min_gap) > 1):
            raise ValueError("minimum-gap constraint violated")


@dataclass(frozen=True)
class ChannelRealization:
    """Per-subcarrier complex frequency response plus noise power."""

    response: np.ndarray
    noise_power: float

    def __post_init__(self):
        h = np.asarray(self.response, dtype=complex)
        if h.ndim != 1 or not np.all(np.isfinite(h)):
            raise ValueError("response must be a finite 1-D complex vector")
        if self.noise_power <= 0.0:
            raise ValueError("noise_power must be positive")
        object.__setattr__(self, "response", h)

    @property
    def gains(self) -> np.ndarray:
        """|h_n|^2 / sigma^2, the SNR per unit transmit power."""
        return np.abs(self.response) ** 2 / self.noise_power


@dataclass(frozen=True)
class FrequencySymbols:
    """Frequency-domain symbols x with the phase split that produced them."""

    values: np.ndarray
    comm_phases: np.ndarray
    reserved_phases: np.ndarray


@dataclass(frozen=True)
class TimeWaveform:
    """Complex baseband samples at ``N * oversampling`` points."""

    samples: np.ndarray
    oversampling: int = 1

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a nonempty 1-D vector")
        if self.oversampling < 1:
            raise ValueError("oversampling must be >= 1")
        object.__setattr__(self, "samples", s)

    @property
    def envelope(self) -> np.ndarray:
        return np.abs(self.samples)


class PslValue(NamedTuple):
    linear: float
    db: float


def inverse_dft(values: np.ndarray, oversampling: int = 1) -> np.ndarray:
    """Unnormalized inverse DFT ``s[m] = sum_n x[n] exp(2j*pi*n*m/(N*q))``."""
    x = np.asarray(values, dtype=complex)
    n = x.size
    total = n * int(oversampling)
    padded = np.zeros(total, dtype=complex)
    padded[:n] = x
    return np.fft.ifft(padded) * total


def forward_dft(samples: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT, the inverse of :func:`inverse_dft` up to N."""
    s = np.asarray(samples, dtype=complex)
    return np.fft.fft(s)


def frequency_symbols(
    plan: SubcarrierPlan,
    comm_phases: np.ndarray,
    reserved_phases: np.ndarray,
) -> FrequencySymbols:
    """Assemble x = U c + (I-U) r from the plan and the two phase vectors."""
    n = plan.selection.size
    phi_c = np.asarray(comm_phases, dtype=float)
    phi_r = np.asarray(reserved_phases, dtype=float)
    if phi_c.shape != (n,) or phi_r.shape != (n,):
        raise ValueError("phase vectors must have length N")
    if np.any(plan.power < 0):
        raise ValueError("negative power entry")
    amp = np.sqrt(plan.power)
    sel = plan.selection > 0.5
    phases = np.where(sel, phi_c, phi_r)
    values = amp * np.exp(1j * phases)
    return FrequencySymbols(values=values, comm_phases=phi_c, reserved_phases=phi_r)


def synthesize(
    plan: SubcarrierPlan,
    comm_phases: np.ndarray,
    reserved_phases: np.ndarray,
    oversampling: int = 1,
) -> TimeWaveform:
    """Synthesize the time-domain waveform of a plan at a given oversampling."""
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")
    x = frequency_symbols(plan, comm_phases, reserved_phases).values
    return TimeWaveform(inverse_dft(x, oversampling), oversampling)


def autocorrelation(power: np.ndarray, half_len: int) -> np.ndarray:
    """Autocorrelation samples ``R[k] = sum_n p[n] e^{j pi n k / K}``.

    Returns the 2K-1 lags ordered ``k = -K+1 .. K-1``. Computed with a
    length-2K transform; exponentials have period 2K in n, so longer power
    vectors fold into the 2K accumulator first.
    """
    if half_len < 1:
        raise ValueError("half_len must be >= 1")
    p = np.asarray(power, dtype=float)
    if np.any(p < 0):
        raise ValueError("power entries must be nonnegative")
    m = 2 * half_len
    folded = np.zeros(m, dtype=float)
    np.add.at(folded, np.arange(p.size) % m, p)
    r_pos = np.fft.ifft(folded) * m  # r_pos[k] = sum_n folded[n] e^{j pi n k/K}
    positive = r_pos[:half_len]
    negative = np.conj(positive[1:][::-1])
    return np.concatenate([negative, positive])


def psl(power: np.ndarray, config: WaveformConfig) -> PslValue:
    """Peak sidelobe level over the lag set {k : Y < |k| <= K-1}.

    Returns the linear value in watts and its dB value relative to R[0].
    """
    lags = config.sidelobe_lags
    if lags.size == 0:
        raise ValueError("sidelobe region is empty")
    k = config.half_len
    r = autocorrelation(power, k)
    positive = r[k - 1 :]  # lags 0 .. K-1; negative lags are conjugates
    peak = float(np.max(np.abs(positive[lags])))
    mainlobe = float(np.real(positive[0]))
    if mainlobe <= 0.0:
        raise ValueError("zero total power")
    return PslValue(linear=peak, db=20.0 * np.log10(peak / mainlobe))


def cdr(plan: SubcarrierPlan, channel: ChannelRealization) -> float:
    """Communication data rate sum_n log2(1 + u_n p_n |h_n|^2 / sigma^2)."""
    if channel.response.size != plan.selection.size:
        raise ValueError("channel and plan lengths differ")
    snr = plan.selection * plan.power * channel.gains
    return float(np.sum(np.log2(1.0 + snr)))


def cve(waveform: TimeWaveform) -> float:
    """Coefficient of variation of envelopes, var(|s|) / mean(|s|)^2."""
    env = waveform.envelope
    mean = float(env.mean())
    if mean <= 0.0:
        raise ValueError("all-zero waveform")
    return float(np.mean((env - mean) ** 2)) / mean**2


def papr(waveform: TimeWaveform) -> float:
    """Peak-to-average power ratio in dB."""
    pwr = waveform.envelope**2
    mean = float(pwr.mean())
    if mean <= 0.0:
        raise ValueError("all-zero waveform")
    return float(10.0 * np.log10(pwr.max() / mean))


def window_sums(selection: np.ndarray, min_gap: int) -> np.ndarray:
    """Sums of every window of min_gap+1 consecutive selection entries."""
    sel = np.asarray(selection, dtype=float)
    width = min_gap + 1
    if width > sel.size:
        return np.array([sel.sum()])
    csum = np.concatenate([[0.0], np.cumsum(sel)])
    return csum[width:] - csum[:-width]
