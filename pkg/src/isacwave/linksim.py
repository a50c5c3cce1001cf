"""Monte Carlo link simulation: channels, interference, 8-PSK, BER, CCDF.

All randomness flows through generators derived from (master seed, trial
index, purpose), so every trial is reproducible and schedule independent,
and the two designers under comparison see identical channel, bit, noise
and interference draws (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acm import AcmParams, SapaResult, hsapa_baseline, run_acm
from .signal import ChannelRealization, WaveformConfig

__all__ = [
    "ChannelModel",
    "InterferenceSpec",
    "SweepSpec",
    "BerResult",
    "gen_channel",
    "gen_interference",
    "interference_indices",
    "psk8_modulate",
    "psk8_demodulate",
    "run_ber_sweep",
    "ccdf",
    "derived_rng",
]

CHANNEL_KINDS = ("rayleigh", "standard_normal")
DESIGNERS = ("proposed", "hsapa")

# Gray-coded 8-PSK: GRAY_CODES[k] labels the point exp(2j pi k / 8)
GRAY_CODES = np.array([0b000, 0b001, 0b011, 0b010, 0b110, 0b111, 0b101, 0b100])
_CODE_TO_INDEX = np.zeros(8, dtype=int)
for _idx, _code in enumerate(GRAY_CODES):
    _CODE_TO_INDEX[_code] = _idx
CONSTELLATION = np.exp(2j * np.pi * np.arange(8) / 8)


@dataclass(frozen=True)
class ChannelModel:
    """Channel family plus the seed that makes draws reproducible."""

    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"kind must be one of {CHANNEL_KINDS}")


@dataclass(frozen=True)
class InterferenceSpec:
    """Multi-tone narrowband interference description.

    ``isr_db`` is total interference power over total received communication
    power; ``-inf`` disables interference. Tones sit on the ``n_tones``
    subcarriers with the strongest channel response.
    """

    isr_db: float
    n_tones: int
    placement: str = "best_response"
    seed: int = 0

    def __post_init__(self):
        if np.isnan(self.isr_db) or self.isr_db == np.inf:
            raise ValueError("isr_db must be finite or -inf")
        if self.placement != "best_response":
            raise ValueError("only best_response placement is supported")
        if self.n_tones < 0:
            raise ValueError("n_tones must be nonnegative")


@dataclass(frozen=True)
class SweepSpec:
    """One BER sweep axis: vary SNR at fixed ISR, or ISR at fixed SNR."""

    axis: str
    values: tuple
    fixed_value: float

    def __post_init__(self):
        if self.axis not in ("snr_db", "isr_db"):
            raise ValueError("axis must be 'snr_db' or 'isr_db'")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass
class BerResult:
    axis_db: float
    ber: float
    trials: int
    bit_count: int
    errors: int
    designer: str


def derived_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a (seed, trial, purpose) path."""
    return np.random.default_rng([int(master_seed), *[int(p) for p in path]])


def gen_channel(model: ChannelModel, n: int, noise_power: float = 1.0) -> ChannelRealization:
    """Draw one channel realization of length n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(model.seed)
    return _draw_channel(model.kind, rng, n, noise_power)


def _draw_channel(kind: str, rng: np.random.Generator, n: int, noise_power: float):
    if kind == "rayleigh":
        h = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    else:
        h = rng.standard_normal(n).astype(complex)
    return ChannelRealization(h, noise_power)


def interference_indices(channel: ChannelRealization, n_tones: int) -> np.ndarray:
    """The n_tones subcarriers with the largest |h| (ties to lower index)."""
    mags = np.abs(channel.response)
    order = np.lexsort((np.arange(mags.size), -mags))
    return np.sort(order[:n_tones])


def gen_interference(
    channel: ChannelRealization,
    spec: InterferenceSpec,
    signal_power_ref: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Frequency-domain interference vector of total power ISR * reference."""
    n = channel.response.size
    if spec.n_tones > n:
        raise ValueError("more tones than subcarriers")
    out = np.zeros(n, dtype=complex)
    if spec.isr_db == -np.inf or spec.n_tones == 0:
        return out
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    idx = interference_indices(channel, spec.n_tones)
    total = signal_power_ref * 10.0 ** (spec.isr_db / 10.0)
    amp = np.sqrt(total / spec.n_tones)
    out[idx] = amp * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, spec.n_tones))
    return out


def psk8_modulate(bits: np.ndarray) -> np.ndarray:
    """Map a bit vector (length divisible by 3) to Gray 8-PSK phases."""
    b = np.asarray(bits, dtype=int).ravel()
    if b.size % 3:
        raise ValueError("bit count must be divisible by 3")
    codes = b.reshape(-1, 3) @ np.array([4, 2, 1])
    indices = _CODE_TO_INDEX[codes]
    return 2.0 * np.pi * indices / 8.0


def psk8_demodulate(received: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Coherent nearest-point 8-PSK demodulation to bits.

    ``reference`` is the known per-symbol complex gain (h * sqrt(p)); ties at
    a decision boundary go to the lower constellation index.
    """
    y = np.asarray(received, dtype=complex).ravel()
    ref = np.asarray(reference, dtype=complex).ravel()
    if y.shape != ref.shape:
        raise ValueError("received and reference lengths differ")
    eq = np.where(ref != 0, y / np.where(ref == 0, 1, ref), 0.0)
    dist = np.abs(eq[:, None] - CONSTELLATION[None, :])
    near = dist <= dist.min(axis=1, keepdims=True) + 1e-12
    indices = np.argmax(near, axis=1)  # first True = lowest index
    codes = GRAY_CODES[indices]
    bits = ((codes[:, None] >> np.array([2, 1, 0])) & 1).astype(int)
    return bits.ravel()


def _design(designer: str, config, channel, acm_params) -> SapaResult:
    if designer == "proposed":
        return run_acm(config, channel, acm_params)
    if designer == "hsapa":
        return hsapa_baseline(config, channel)
    raise ValueError(f"designer must be one of {DESIGNERS}")


def run_ber_sweep(
    config: WaveformConfig,
    channel_model: ChannelModel,
    designer: str,
    sweep: SweepSpec,
    trials: int,
    seed: int,
    symbols_per_trial: int = 8,
    acm_params: AcmParams | None = None,
    n_tones: int | None = None,
) -> list:
    """Estimate BER along a sweep axis for one designer.

    Per trial: draw a channel, run the designer, send random Gray 8-PSK
    symbols over the selected subcarriers, add tone interference placed on
    the strongest channel responses plus white noise, demodulate coherently
    and count bit errors. All draws depend only on (seed, trial), so a rerun
    with the other designer sees the same randomness.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = config.n_subcarriers
    nr = config.n_comm
    tones = nr if n_tones is None else n_tones
    n_sym = symbols_per_trial

    errors = np.zeros(len(sweep.values), dtype=np.int64)
    bits_total = np.zeros(len(sweep.values), dtype=np.int64)

    for trial in range(trials):
        channel = _draw_channel(
            channel_model.kind,
            derived_rng(seed, channel_model.seed, trial, 0),
            n,
            config.noise_power_comm,
        )
        try:
            design = _design(designer, config, channel, acm_params)
        except Exception as exc:
            raise RuntimeError(f"designer {designer} failed on trial {trial}") from exc
        sel = design.plan.selected_indices
        p_sel = design.plan.power[sel]
        h_sel = channel.response[sel]
        ref = h_sel * np.sqrt(p_sel)
        signal_power = float(np.sum(p_sel * np.abs(h_sel) ** 2))
        mean_rx_power = signal_power / nr

        bits = derived_rng(seed, trial, 1).integers(0, 2, size=3 * nr * n_sym)
        phases = psk8_modulate(bits).reshape(n_sym, nr)
        tx = np.sqrt(p_sel)[None, :] * np.exp(1j * phases)

        tone_phases = derived_rng(seed, trial, 2).uniform(0.0, 2.0 * np.pi, tones)
        tone_idx = interference_indices(channel, tones)
        noise_rng = derived_rng(seed, trial, 3)
        noise = noise_rng.standard_normal((n_sym, nr)) + 1j * noise_rng.standard_normal(
            (n_sym, nr)
        )

        for j, value in enumerate(sweep.values):
            snr_db = value if sweep.axis == "snr_db" else sweep.fixed_value
            isr_db = value if sweep.axis == "isr_db" else sweep.fixed_value
            sigma2 = mean_rx_power / 10.0 ** (snr_db / 10.0)

            intf = np.zeros(n, dtype=complex)
            if isr_db != -np.inf and tones > 0:
                total = signal_power * 10.0 ** (isr_db / 10.0)
                intf[tone_idx] = np.sqrt(total / tones) * np.exp(1j * tone_phases)

            rx = (
                h_sel[None, :] * tx
                + intf[sel][None, :]
                + np.sqrt(sigma2 / 2.0) * noise
            )
            hat = psk8_demodulate(rx.ravel(), np.tile(ref, n_sym))
            errors[j] += int(np.sum(hat != bits))
            bits_total[j] += bits.size

    return [
        BerResult(
            axis_db=float(v),
            ber=float(errors[j] / bits_total[j]),
            trials=trials,
            bit_count=int(bits_total[j]),
            errors=int(errors[j]),
            designer=designer,
        )
        for j, v in enumerate(sweep.values)
    ]


def ccdf(samples: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of samples strictly greater than each threshold."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    t = np.asarray(thresholds, dtype=float)
    return (x[None, :] > t[:, None]).mean(axis=1)
