"""Radio topology and link arithmetic: path loss, SINR, throughput, latency, loss.

Everything here is flow-level per tick. The array kernels at the bottom are
the single source of truth; the per-UE functions are thin wrappers so that
scalar use and the vectorized engine can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import IntegrityError, InvalidParameterError

if TYPE_CHECKING:
    from .mobility import WaypointWalk

# 20*log10(4*pi/c) for distance in metres and frequency in Hz
FSPL_CONST_DB = -147.55


@dataclass(frozen=True)
class RadioConstants:
    """Channel, queueing, and loss-model constants shared by every link."""

    noise_dbm: float = -90.0
    absorption_db_per_m: float = 0.5  # molecular absorption, applied at THz carriers
    thz_cutoff_hz: float = 100e9      # carriers at or above this get the absorption term
    d_min_m: float = 1.0              # distance clamp floor, avoids log(0)
    sinr_cap_db: float = 60.0         # keeps Shannon arithmetic finite
    latency_k_q: float = 1.0
    latency_u_cap: float = 0.95
    latency_eps_u: float = 0.05
    loss_k_over: float = 0.4
    loss_k_rf: float = 0.1
    loss_sinr_floor_db: float = 3.0
    loss_s_w_db: float = 2.0

    def absorption_for(self, frequency_hz: float) -> float:
        return self.absorption_db_per_m if frequency_hz >= self.thz_cutoff_hz else 0.0


DEFAULT_RADIO = RadioConstants()


class StationKind(Enum):
    MACRO = "macro"
    AP = "ap"


@dataclass
class BaseStation:
    id: int
    kind: StationKind
    position: tuple[float, float]    # metres
    carrier_frequency: float         # Hz
    bandwidth: float                 # Hz
    tx_power: float                  # dBm, must be a member of power_levels
    power_levels: tuple[float, ...]  # allowed dBm values, ascending
    base_latency: float              # ms, processing + propagation floor
    capacity_ue: int                 # soft load target

    def __post_init__(self):
        if not (math.isfinite(self.carrier_frequency) and self.carrier_frequency > 0):
            raise InvalidParameterError(f"station {self.id}: carrier_frequency must be > 0")
        if self.bandwidth <= 0:
            raise InvalidParameterError(f"station {self.id}: bandwidth must be > 0")
        if self.base_latency < 0:
            raise InvalidParameterError(f"station {self.id}: base_latency must be >= 0")
        if self.capacity_ue < 1:
            raise InvalidParameterError(f"station {self.id}: capacity_ue must be >= 1")
        if not self.power_levels:
            raise InvalidParameterError(f"station {self.id}: power_levels must be non-empty")
        if list(self.power_levels) != sorted(self.power_levels):
            raise InvalidParameterError(f"station {self.id}: power_levels must be ascending")
        if self.tx_power not in self.power_levels:
            raise InvalidParameterError(
                f"station {self.id}: tx_power {self.tx_power} not in power_levels"
            )


@dataclass
class UserEquipment:
    id: int
    position: tuple[float, float]             # metres
    velocity: tuple[float, float] = (0.0, 0.0)  # m/s
    serving_bs: int = 0                       # BaseStation id
    demand: float = 1e9                       # bit/s offered load
    walk: "WaypointWalk | None" = None        # random-waypoint progress, set by mobility

    def __post_init__(self):
        if self.demand <= 0:
            raise InvalidParameterError(f"ue {self.id}: demand must be > 0")


@dataclass
class LinkMetrics:
    path_loss: float    # dB, to the serving station
    sinr: float         # dB
    throughput: float   # bit/s delivered: min(share, demand) * (1 - loss)
    latency: float      # ms
    packet_loss: float  # fraction in [0, 1]


@dataclass
class NetworkState:
    tick: int
    stations: list[BaseStation]
    ues: list[UserEquipment]
    links: dict[int, LinkMetrics] = field(default_factory=dict)
    loads: dict[int, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Array kernels. Inputs broadcast; all dB/dBm quantities are float64.
# ---------------------------------------------------------------------------

def pathloss_db(distance_m, frequency_hz, absorption_db_per_m=0.0, d_min_m=1.0):
    """Free-space loss plus a linear absorption term, distance clamped at d_min."""
    d = np.maximum(np.asarray(distance_m, dtype=float), d_min_m)
    return (
        20.0 * np.log10(d)
        + 20.0 * np.log10(np.asarray(frequency_hz, dtype=float))
        + FSPL_CONST_DB
        + absorption_db_per_m * d
    )


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def sinr_db_kernel(rx_dbm, serving_idx, carrier_hz, noise_dbm, cap_db):
    """SINR per UE from an (N, B) received-power matrix.

    Interference counts only stations on the serving carrier; different
    carriers contribute zero. A zero interference-plus-noise denominator
    returns the cap.
    """
    rx_dbm = np.asarray(rx_dbm, dtype=float)
    serving_idx = np.asarray(serving_idx, dtype=np.intp)
    rows = np.arange(rx_dbm.shape[0])
    rx_mw = dbm_to_mw(rx_dbm)
    co_channel = carrier_hz[None, :] == carrier_hz[serving_idx][:, None]
    co_channel[rows, serving_idx] = False
    interference_mw = (rx_mw * co_channel).sum(axis=1)
    denom_mw = interference_mw + float(dbm_to_mw(noise_dbm))
    with np.errstate(divide="ignore"):
        denom_dbm = 10.0 * np.log10(denom_mw)
    sinr = rx_dbm[rows, serving_idx] - denom_dbm  # +inf when denom is zero
    return np.minimum(sinr, cap_db)


def shannon_share_bps(sinr_db, bandwidth_hz, load):
    """Equal-share Shannon rate: (B / load) * log2(1 + linear SINR)."""
    linear = 10.0 ** (np.asarray(sinr_db, dtype=float) / 10.0)
    return np.asarray(bandwidth_hz, dtype=float) / load * np.log2(1.0 + linear)


def queue_latency_ms(base_ms, utilization, radio: RadioConstants):
    """Bounded M/M/1-style congestion curve, nondecreasing in utilization."""
    u = np.asarray(utilization, dtype=float)
    headroom = np.maximum(radio.latency_eps_u, 1.0 - np.minimum(u, radio.latency_u_cap))
    return base_ms * (1.0 + radio.latency_k_q * u / headroom)


def loss_fraction(utilization, sinr_db, radio: RadioConstants):
    """Overload loss plus an RF cliff around the SINR decode floor, clamped to [0, 1]."""
    u = np.asarray(utilization, dtype=float)
    over = np.maximum(0.0, u - 1.0) * radio.loss_k_over
    x = (radio.loss_sinr_floor_db - np.asarray(sinr_db, dtype=float)) / radio.loss_s_w_db
    with np.errstate(over="ignore"):
        rf = radio.loss_k_rf / (1.0 + np.exp(-x))
    return np.clip(over + rf, 0.0, 1.0)


def delivered_bps(share_bps, demand_bps, loss):
    return np.minimum(share_bps, demand_bps) * (1.0 - loss)


@dataclass
class StationArrays:
    """Column view of a station list, used by the kernels and the engine."""

    pos: np.ndarray          # (B, 2) metres
    carrier: np.ndarray      # (B,) Hz
    bandwidth: np.ndarray    # (B,) Hz
    base_latency: np.ndarray  # (B,) ms
    capacity: np.ndarray     # (B,) UE count
    tx_dbm: np.ndarray       # (B,) live transmit power

    @classmethod
    def from_stations(cls, stations: list[BaseStation]) -> "StationArrays":
        return cls(
            pos=np.array([s.position for s in stations], dtype=float).reshape(-1, 2),
            carrier=np.array([s.carrier_frequency for s in stations], dtype=float),
            bandwidth=np.array([s.bandwidth for s in stations], dtype=float),
            base_latency=np.array([s.base_latency for s in stations], dtype=float),
            capacity=np.array([s.capacity_ue for s in stations], dtype=float),
            tx_dbm=np.array([s.tx_power for s in stations], dtype=float),
        )


@dataclass
class LinkArrays:
    """Per-UE link metrics plus per-station loads for one network snapshot."""

    distance: np.ndarray      # (N, B) metres
    path_loss: np.ndarray     # (N,) dB, serving station
    sinr: np.ndarray          # (N,) dB
    share: np.ndarray         # (N,) bit/s Shannon share
    delivered: np.ndarray     # (N,) bit/s
    latency: np.ndarray       # (N,) ms
    loss: np.ndarray          # (N,) fraction
    loads: np.ndarray         # (B,) attached UE counts
    utilization: np.ndarray   # (B,) load / capacity


def compute_links(ue_pos, demand, serving_idx, st: StationArrays,
                  radio: RadioConstants) -> LinkArrays:
    """Recompute loads and every link metric for one snapshot. Pure."""
    ue_pos = np.asarray(ue_pos, dtype=float).reshape(-1, 2)
    serving_idx = np.asarray(serving_idx, dtype=np.intp)
    n_bs = st.pos.shape[0]
    diff = ue_pos[:, None, :] - st.pos[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    absorb = np.where(st.carrier >= radio.thz_cutoff_hz, radio.absorption_db_per_m, 0.0)
    pl = pathloss_db(dist, st.carrier[None, :], absorb[None, :], radio.d_min_m)
    rx_dbm = st.tx_dbm[None, :] - pl
    sinr = sinr_db_kernel(rx_dbm, serving_idx, st.carrier, radio.noise_dbm, radio.sinr_cap_db)

    loads = np.bincount(serving_idx, minlength=n_bs).astype(float)
    utilization = loads / st.capacity
    rows = np.arange(ue_pos.shape[0])
    load_per_ue = loads[serving_idx]
    share = shannon_share_bps(sinr, st.bandwidth[serving_idx], load_per_ue)
    latency = queue_latency_ms(st.base_latency[serving_idx], utilization[serving_idx], radio)
    loss = loss_fraction(utilization[serving_idx], sinr, radio)
    return LinkArrays(
        distance=dist,
        path_loss=pl[rows, serving_idx],
        sinr=sinr,
        share=share,
        delivered=delivered_bps(share, np.asarray(demand, dtype=float), loss),
        latency=latency,
        loss=loss,
        loads=loads,
        utilization=utilization,
    )


# ---------------------------------------------------------------------------
# Per-UE operations (wrappers over the kernels).
# ---------------------------------------------------------------------------

def path_loss(distance: float, frequency: float, absorption: float = 0.0,
              d_min: float = 1.0) -> float:
    """Path loss in dB; raises InvalidParameterError on a bad frequency or absorption."""
    if not (math.isfinite(frequency) and frequency > 0):
        raise InvalidParameterError(f"frequency must be finite and > 0, got {frequency}")
    if not (math.isfinite(absorption) and absorption >= 0):
        raise InvalidParameterError(f"absorption must be finite and >= 0, got {absorption}")
    return float(pathloss_db(distance, frequency, absorption, d_min))


def sinr(ue: UserEquipment, serving: BaseStation, interferers: list[BaseStation],
         noise_dbm: float, radio: RadioConstants = DEFAULT_RADIO) -> float:
    """SINR in dB for one UE against its serving station and a list of interferers."""
    if any(s.id == serving.id for s in interferers):
        raise InvalidParameterError("serving station listed among interferers")
    stations = [serving] + list(interferers)
    st = StationArrays.from_stations(stations)
    d = np.sqrt(((np.asarray(ue.position, dtype=float) - st.pos) ** 2).sum(axis=1))
    absorb = np.where(st.carrier >= radio.thz_cutoff_hz, radio.absorption_db_per_m, 0.0)
    rx = st.tx_dbm - pathloss_db(d, st.carrier, absorb, radio.d_min_m)
    out = sinr_db_kernel(rx[None, :], np.array([0]), st.carrier, noise_dbm, radio.sinr_cap_db)
    return float(out[0])


def ue_throughput(sinr_db: float, bandwidth: float, load: int) -> float:
    """Shannon share in bit/s; the demand cap is applied only in the delivered KPI."""
    return float(shannon_share_bps(sinr_db, bandwidth, load))


def ue_latency(bs: BaseStation, utilization: float,
               radio: RadioConstants = DEFAULT_RADIO) -> float:
    """Per-UE latency in ms at the given cell utilization."""
    return float(queue_latency_ms(bs.base_latency, utilization, radio))


def packet_loss(utilization: float, sinr_db: float,
                radio: RadioConstants = DEFAULT_RADIO) -> float:
    """Packet loss fraction in [0, 1] from overload and RF quality."""
    return float(loss_fraction(utilization, sinr_db, radio))


def refresh_metrics(state: NetworkState, noise_dbm: float | None = None,
                    radio: RadioConstants = DEFAULT_RADIO) -> NetworkState:
    """Recompute loads and LinkMetrics for every UE; pure, idempotent.

    Raises IntegrityError when a UE's serving_bs does not name a station.
    """
    if noise_dbm is not None:
        radio = replace(radio, noise_dbm=noise_dbm)
    index_of = {s.id: i for i, s in enumerate(state.stations)}
    try:
        serving_idx = np.array([index_of[ue.serving_bs] for ue in state.ues], dtype=np.intp)
    except KeyError as exc:
        raise IntegrityError(f"serving_bs {exc.args[0]} does not exist") from None
    ue_pos = np.array([ue.position for ue in state.ues], dtype=float).reshape(-1, 2)
    demand = np.array([ue.demand for ue in state.ues], dtype=float)

    la = compute_links(ue_pos, demand, serving_idx, StationArrays.from_stations(state.stations), radio)
    links = {
        ue.id: LinkMetrics(
            path_loss=float(la.path_loss[i]),
            sinr=float(la.sinr[i]),
            throughput=float(la.delivered[i]),
            latency=float(la.latency[i]),
            packet_loss=float(la.loss[i]),
        )
        for i, ue in enumerate(state.ues)
    }
    loads = {s.id: int(la.loads[i]) for i, s in enumerate(state.stations)}
    return NetworkState(tick=state.tick, stations=state.stations, ues=state.ues,
                        links=links, loads=loads)
