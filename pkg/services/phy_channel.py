"""Radio-link chain: pathloss and shadowing, SINR, BER/PER, airtime and radio energy."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple

from scipy import special

from .sim_core import make_stream

logger = logging.getLogger(__name__)

THERMAL_NOISE_DBM_HZ = -174.0

PREAMBLE_BITS = 90
PHY_HEADER_BITS = 31
MAC_HEADER_BYTES = 7
FCS_BYTES = 2
OVERHEAD_BITS = PREAMBLE_BITS + PHY_HEADER_BITS + 8 * (MAC_HEADER_BYTES + FCS_BYTES)


class Modulation(str, Enum):
    DBPSK = "DBPSK"
    DQPSK = "DQPSK"


class LinkKind(str, Enum):
    ON_BODY = "OnBody"
    BODY_TO_BODY = "BodyToBody"


DATA_RATES_KBPS: Dict[Tuple[int, Modulation], float] = {
    (900, Modulation.DBPSK): 101.2,
    (900, Modulation.DQPSK): 404.8,
    (2450, Modulation.DBPSK): 121.4,
    (2450, Modulation.DQPSK): 971.4,
}


@dataclass(frozen=True)
class PhyConfig:
    """Band, modulation and transmit power shared by every radio of a run."""

    frequency_mhz: int = 2450
    modulation: Modulation = Modulation.DQPSK
    tx_power_dbm: float = 0.0
    channel_id: int = 0

    def __post_init__(self) -> None:
        if (self.frequency_mhz, Modulation(self.modulation)) not in DATA_RATES_KBPS:
            raise ValueError(f"Unsupported frequency {self.frequency_mhz} MHz; expected 900 or 2450.")

    @property
    def data_rate_kbps(self) -> float:
        return DATA_RATES_KBPS[(self.frequency_mhz, Modulation(self.modulation))]

    @property
    def data_rate_bps(self) -> float:
        return self.data_rate_kbps * 1000.0


@dataclass(frozen=True)
class ChannelParams:
    """Log-distance pathloss with log-normal shadowing for one link kind.

    ``pl0`` is the loss in dB at reference distance ``d0`` metres; the noise floor
    follows from ``bandwidth`` and ``noise_figure``.
    """

    link_kind: LinkKind
    pl0: float
    d0: float
    exponent: float
    shadow_sigma: float
    shadow_coherence_time: float = 1.0
    noise_figure: float = 10.0
    bandwidth: float = 1.0e6

    def __post_init__(self) -> None:
        if self.exponent <= 0:
            raise ValueError("Pathloss exponent must be positive.")
        if self.shadow_sigma < 0:
            raise ValueError("Shadowing sigma must be non-negative.")
        if self.d0 <= 0 or self.bandwidth <= 0 or self.shadow_coherence_time <= 0:
            raise ValueError("Reference distance, bandwidth and coherence time must be positive.")

    @property
    def noise_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(self.bandwidth) + self.noise_figure


def default_channel_params(link_kind: LinkKind, frequency_mhz: int) -> ChannelParams:
    """Calibration defaults; the on-body set is shared by both bands.

    Body-to-body shadowing decorrelates over metres of group motion, so it keeps
    its value for several seconds. The 900 MHz set gives about the same
    multi-hop reach at the formation spacing as the 2450 MHz set.
    """
    if link_kind is LinkKind.ON_BODY:
        return ChannelParams(LinkKind.ON_BODY, pl0=35.2, d0=0.1, exponent=3.35, shadow_sigma=4.9)
    if frequency_mhz == 900:
        return ChannelParams(
            LinkKind.BODY_TO_BODY, pl0=46.0, d0=1.0, exponent=3.4, shadow_sigma=5.0, shadow_coherence_time=5.0
        )
    return ChannelParams(
        LinkKind.BODY_TO_BODY, pl0=48.4, d0=1.0, exponent=3.11, shadow_sigma=6.1, shadow_coherence_time=5.0
    )


@dataclass
class LinkBudget:
    """One reception: power and noise in dBm, summed interference in mW, SINR in dB."""

    prx: float
    noise: float
    interference: float
    sinr: float


def dbm_to_mw(value_dbm: float) -> float:
    return 10.0 ** (value_dbm / 10.0)


def mw_to_dbm(value_mw: float) -> float:
    return 10.0 * math.log10(value_mw)


def log_distance_pathloss(params: ChannelParams, distance: float) -> float:
    return params.pl0 + 10.0 * params.exponent * math.log10(distance / params.d0)


class ShadowingProcess:
    """Zero-mean unit-variance process per directed link, constant over each coherence interval.

    Each link owns a generator and draws one normal per elapsed interval, so the
    value for interval ``k`` does not depend on which other links were queried.
    """

    def __init__(self, seed: int, coherence_time: float = 1.0) -> None:
        self.seed = seed
        self.coherence_time = coherence_time
        self._links: Dict[Tuple[int, int], list] = {}

    def _fresh(self, link: Tuple[int, int]) -> list:
        return [make_stream(self.seed, "shadowing", link[0], link[1]), -1, 0.0]

    def standard_value(self, link: Tuple[int, int], t: float, coherence_time: Optional[float] = None) -> float:
        """Value for ``link`` at ``t``; ``coherence_time`` overrides the process default."""
        interval = int(math.floor(t / (coherence_time or self.coherence_time)))
        state = self._links.get(link)
        if state is None or interval < state[1]:
            state = self._fresh(link)
            self._links[link] = state
        if interval > state[1]:
            draws = state[0].standard_normal(interval - state[1])
            state[1] = interval
            state[2] = float(draws[-1])
        return state[2]


class ChannelModel:
    """Pathloss for every directed link, with optional log-normal shadowing."""

    def __init__(self, shadowing: Optional[ShadowingProcess] = None) -> None:
        self.shadowing = shadowing
        self.clamped_distances = 0

    def pathloss_db(
        self,
        params: ChannelParams,
        distance: float,
        t: float = 0.0,
        link: Optional[Tuple[int, int]] = None,
    ) -> float:
        if distance <= 0.0:
            self.clamped_distances += 1
            logger.debug("Zero distance on link %s clamped to %.3f m", link, params.d0 / 10.0)
            distance = params.d0 / 10.0
        loss = log_distance_pathloss(params, distance)
        if self.shadowing is not None and link is not None and params.shadow_sigma > 0.0:
            loss += params.shadow_sigma * self.shadowing.standard_value(link, t, params.shadow_coherence_time)
        return loss


def received_power_dbm(tx_power: float, pathloss: float) -> float:
    return tx_power - pathloss


def sinr_db(prx: float, interferers: Iterable[float], noise_dbm: float) -> float:
    """SINR in dB; ``interferers`` are received powers in dBm."""
    return link_budget(prx, interferers, noise_dbm).sinr


def link_budget(prx: float, interferers: Iterable[float], noise_dbm: float) -> LinkBudget:
    interference_mw = sum(dbm_to_mw(value) for value in interferers)
    sinr = mw_to_dbm(dbm_to_mw(prx) / (dbm_to_mw(noise_dbm) + interference_mw))
    return LinkBudget(prx=prx, noise=noise_dbm, interference=interference_mw, sinr=sinr)


def bit_snr(sinr: float, bandwidth: float, data_rate_bps: float) -> float:
    """Per-bit SNR (linear) from a SINR in dB."""
    return dbm_to_mw(sinr) * bandwidth / data_rate_bps


def marcum_q1(a: float, b: float) -> float:
    """First-order Marcum Q function via the non-central chi-square CDF ufunc."""
    if b <= 0.0:
        return 1.0
    if a == 0.0:
        return math.exp(-b * b / 2.0)
    return min(1.0, max(0.0, 1.0 - float(special.chndtr(b * b, 2.0, a * a))))


def ber(modulation: Modulation, snr_linear: float) -> float:
    """Bit error probability for per-bit SNR ``snr_linear``."""
    if snr_linear < 0:
        raise ValueError(f"Per-bit SNR must be non-negative, got {snr_linear}")
    modulation = Modulation(modulation)
    if modulation is Modulation.DBPSK:
        return 0.5 * math.exp(-snr_linear)
    if snr_linear == 0.0:
        return 0.5
    a = math.sqrt(2.0 * snr_linear * (1.0 - 1.0 / math.sqrt(2.0)))
    b = math.sqrt(2.0 * snr_linear * (1.0 + 1.0 / math.sqrt(2.0)))
    # i0e(x) = I0(x) * exp(-x) keeps the Bessel term finite for large arguments
    bessel_term = 0.5 * float(special.i0e(a * b)) * math.exp(a * b - (a * a + b * b) / 2.0)
    return max(0.0, marcum_q1(a, b) - bessel_term)


def per(bit_error_rate: float, bits: int) -> float:
    if not 0.0 <= bit_error_rate <= 1.0:
        raise ValueError(f"BER must lie in [0, 1], got {bit_error_rate}")
    if bits < 0:
        raise ValueError("bits must be non-negative")
    if bits == 0 or bit_error_rate == 0.0:
        return 0.0
    if bit_error_rate == 1.0:
        return 1.0
    return -math.expm1(bits * math.log1p(-bit_error_rate))


def frame_bits(payload: int) -> int:
    if payload < 0:
        raise ValueError("payload must be non-negative")
    return OVERHEAD_BITS + 8 * payload


def airtime(payload: int, cfg: PhyConfig) -> float:
    return frame_bits(payload) / cfg.data_rate_bps


@dataclass
class EnergyModel:
    """Radio energy of one interface; ``E = T x 3 V x I``."""

    voltage: float = 3.0
    i_tx: float = 17.4
    i_rx: float = 18.8
    i_idle: float = 0.426
    tx_joules: float = 0.0
    rx_joules: float = 0.0
    idle_joules: float = 0.0
    tx_time: float = 0.0
    rx_time: float = 0.0

    def charge_tx(self, duration: float) -> float:
        energy = packet_energy(duration, self.i_tx, self)
        self.tx_joules += energy
        self.tx_time += duration
        return energy

    def charge_rx(self, duration: float) -> float:
        energy = packet_energy(duration, self.i_rx, self)
        self.rx_joules += energy
        self.rx_time += duration
        return energy

    def idle_energy(self, now: float) -> float:
        return packet_energy(max(0.0, now - self.tx_time - self.rx_time), self.i_idle, self)

    def settle(self, now: float) -> None:
        self.idle_joules = max(self.idle_joules, self.idle_energy(now))

    def consumed(self, now: float) -> float:
        return self.tx_joules + self.rx_joules + max(self.idle_joules, self.idle_energy(now))


def packet_energy(duration: float, current: float, model: EnergyModel) -> float:
    """Joules spent over ``duration`` seconds at ``current`` mA."""
    if duration < 0 or current < 0:
        raise ValueError("duration and current must be non-negative")
    return duration * model.voltage * current / 1000.0

