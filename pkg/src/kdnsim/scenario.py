"""Scenario files: the declarative description of one simulated world.

Scenarios are TOML with sectioned keys; every key is optional and an empty
file yields the documented defaults. Unknown keys are rejected so typos
cannot silently change an experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import InvalidParameterError, ScenarioError
from .mobility import MobilityConfig
from .network import BaseStation, RadioConstants, StationKind
from .qlearning import HyperParams, RewardConfig, StateBins


class Policy(Enum):
    RL = "rl"
    IDLE = "idle"


@dataclass(frozen=True)
class TrafficConfig:
    demand_gbps: float = 1.0                              # constant offered load per UE
    demand_range_gbps: tuple[float, float] | None = None  # optional uniform draw instead

    def __post_init__(self):
        if self.demand_gbps <= 0:
            raise InvalidParameterError("demand_gbps must be > 0")
        if self.demand_range_gbps is not None:
            lo, hi = self.demand_range_gbps
            if not 0 < lo <= hi:
                raise InvalidParameterError("demand_range_gbps must satisfy 0 < lo <= hi")


# Per-kind radio defaults; power starts at the lower-middle level so the Idle
# baseline's fixed power and the learner's starting point coincide.
_STATION_DEFAULTS = {
    StationKind.MACRO: dict(carrier_hz=3.5e9, bandwidth_hz=100e6,
                            power_levels=(30.0, 36.0, 40.0, 43.0),
                            base_latency_ms=2.0, capacity_ue=100),
    StationKind.AP: dict(carrier_hz=300e9, bandwidth_hz=10e9,
                         power_levels=(10.0, 15.0, 20.0, 23.0),
                         base_latency_ms=3.0, capacity_ue=25),
}


def middle_power(levels: tuple[float, ...]) -> float:
    """The fixed operating point: middle level, lower middle for even lengths."""
    return levels[(len(levels) - 1) // 2]


def make_station(station_id: int, kind: StationKind, position: tuple[float, float],
                 **overrides) -> BaseStation:
    cfg = dict(_STATION_DEFAULTS[kind])
    cfg.update(overrides)
    levels = tuple(float(v) for v in cfg["power_levels"])
    return BaseStation(
        id=station_id,
        kind=kind,
        position=position,
        carrier_frequency=cfg["carrier_hz"],
        bandwidth=cfg["bandwidth_hz"],
        tx_power=middle_power(levels),
        power_levels=levels,
        base_latency=cfg["base_latency_ms"],
        capacity_ue=cfg["capacity_ue"],
    )


def default_stations(area: tuple[float, float]) -> list[BaseStation]:
    """2 macro stations + 6 THz access points spread over the area."""
    w, h = area
    spots = [
        (StationKind.MACRO, (w / 4, h / 2)),
        (StationKind.MACRO, (3 * w / 4, h / 2)),
        (StationKind.AP, (w / 6, h / 4)),
        (StationKind.AP, (w / 2, h / 4)),
        (StationKind.AP, (5 * w / 6, h / 4)),
        (StationKind.AP, (w / 6, 3 * h / 4)),
        (StationKind.AP, (w / 2, 3 * h / 4)),
        (StationKind.AP, (5 * w / 6, 3 * h / 4)),
    ]
    return [make_station(i, kind, pos) for i, (kind, pos) in enumerate(spots)]


@dataclass
class Scenario:
    seed: int = 0
    ue_count: int = 50
    policy: Policy = Policy.RL
    stations: list[BaseStation] = field(default_factory=lambda: default_stations((500.0, 500.0)))
    radio: RadioConstants = field(default_factory=RadioConstants)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    hp: HyperParams = field(default_factory=HyperParams)
    bins: StateBins = field(default_factory=StateBins)

    @property
    def area(self) -> tuple[float, float]:
        return self.mobility.area

    def with_overrides(self, **changes) -> "Scenario":
        return replace(self, **changes)


def scenario_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(f"{key} ") or stripped.startswith(f"{key}="):
            return i
        if stripped.startswith(f"[{key}]") or stripped.startswith(f"[[{key}]]"):
            return i
    return None


class _Section:
    """One TOML table plus enough context for good diagnostics."""

    def __init__(self, name: str, data: dict, text: str):
        self.name = name
        self.data = data
        self.text = text

    def _where(self, key: str) -> str:
        return f"{self.name}.{key}" if self.name else key

    def check_keys(self, allowed) -> None:
        for key in self.data:
            if key not in allowed:
                line = _line_of(self.text, key)
                loc = f" (line {line})" if line else ""
                raise ScenarioError(f"unknown key '{self._where(key)}'{loc}")

    def raw(self, key: str, default=None):
        return self.data.get(key, default)

    def num(self, key: str, default: float, minimum=None, maximum=None,
            exclusive_minimum=None) -> float:
        value = self.data.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{self._where(key)} must be a number")
        value = float(value)
        if minimum is not None and value < minimum:
            raise ScenarioError(f"{self._where(key)} must be >= {minimum} (got {value})")
        if exclusive_minimum is not None and value <= exclusive_minimum:
            raise ScenarioError(f"{self._where(key)} must be > {exclusive_minimum} (got {value})")
        if maximum is not None and value > maximum:
            raise ScenarioError(f"{self._where(key)} must be <= {maximum} (got {value})")
        return value

    def int_(self, key: str, default: int, minimum=None) -> int:
        value = self.data.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"{self._where(key)} must be an integer")
        if minimum is not None and value < minimum:
            raise ScenarioError(f"{self._where(key)} must be >= {minimum} (got {value})")
        return value

    def str_(self, key: str, default: str, choices=None) -> str:
        value = self.data.get(key, default)
        if not isinstance(value, str):
            raise ScenarioError(f"{self._where(key)} must be a string")
        if choices is not None and value not in choices:
            raise ScenarioError(
                f"{self._where(key)} must be one of {sorted(choices)} (got '{value}')"
            )
        return value

    def numbers(self, key: str, default, length=None) -> tuple[float, ...]:
        value = self.data.get(key, default)
        if not isinstance(value, (list, tuple)) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            raise ScenarioError(f"{self._where(key)} must be a list of numbers")
        if length is not None and len(value) != length:
            raise ScenarioError(f"{self._where(key)} must have {length} entries")
        return tuple(float(v) for v in value)


def _parse_station(i: int, data: dict, text: str) -> BaseStation:
    sec = _Section(f"stations[{i}]", data, text)
    sec.check_keys({"kind", "position", "carrier_ghz", "bandwidth_mhz",
                    "power_levels_dbm", "base_latency_ms", "capacity_ue"})
    kind = StationKind(sec.str_("kind", "macro", choices={"macro", "ap"}))
    defaults = _STATION_DEFAULTS[kind]
    position = sec.numbers("position", (0.0, 0.0), length=2)
    overrides = dict(
        carrier_hz=sec.num("carrier_ghz", defaults["carrier_hz"] / 1e9,
                           exclusive_minimum=0.0) * 1e9,
        bandwidth_hz=sec.num("bandwidth_mhz", defaults["bandwidth_hz"] / 1e6,
                             exclusive_minimum=0.0) * 1e6,
        power_levels=sec.numbers("power_levels_dbm", defaults["power_levels"]),
        base_latency_ms=sec.num("base_latency_ms", defaults["base_latency_ms"], minimum=0.0),
        capacity_ue=sec.int_("capacity_ue", defaults["capacity_ue"], minimum=1),
    )
    try:
        return make_station(i, kind, (position[0], position[1]), **overrides)
    except InvalidParameterError as exc:
        raise ScenarioError(f"stations[{i}]: {exc}") from None


def parse_scenario_text(text: str) -> Scenario:
    """Parse scenario TOML; defaults fill omitted keys, unknown keys fail."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"scenario is not valid TOML: {exc}") from None

    top = _Section("", data, text)
    top.check_keys({"seed", "ue_count", "policy", "area", "stations", "radio",
                    "traffic", "mobility", "reward", "learning", "bins"})
    for name in ("area", "radio", "traffic", "mobility", "reward", "learning", "bins"):
        if name in data and not isinstance(data[name], dict):
            raise ScenarioError(f"[{name}] must be a table")

    seed = top.int_("seed", 0, minimum=0)
    ue_count = top.int_("ue_count", 50, minimum=1)
    policy = Policy(top.str_("policy", "rl", choices={"rl", "idle"}))

    area_sec = _Section("area", data.get("area", {}), text)
    area_sec.check_keys({"width", "height"})
    area = (area_sec.num("width", 500.0, exclusive_minimum=0.0),
            area_sec.num("height", 500.0, exclusive_minimum=0.0))

    stations_data = data.get("stations", [])
    if not isinstance(stations_data, list):
        raise ScenarioError("[[stations]] must be an array of tables")
    if stations_data:
        stations = [_parse_station(i, s, text) for i, s in enumerate(stations_data)]
    else:
        stations = default_stations(area)

    radio_sec = _Section("radio", data.get("radio", {}), text)
    radio_sec.check_keys({"noise_dbm", "absorption_db_per_m", "thz_cutoff_ghz",
                          "d_min_m", "sinr_cap_db", "latency_k_q", "latency_u_cap",
                          "latency_eps_u", "loss_k_over", "loss_k_rf",
                          "loss_sinr_floor_db", "loss_s_w_db"})
    radio = RadioConstants(
        noise_dbm=radio_sec.num("noise_dbm", -90.0),
        absorption_db_per_m=radio_sec.num("absorption_db_per_m", 0.5, minimum=0.0),
        thz_cutoff_hz=radio_sec.num("thz_cutoff_ghz", 100.0, exclusive_minimum=0.0) * 1e9,
        d_min_m=radio_sec.num("d_min_m", 1.0, exclusive_minimum=0.0),
        sinr_cap_db=radio_sec.num("sinr_cap_db", 60.0),
        latency_k_q=radio_sec.num("latency_k_q", 1.0, minimum=0.0),
        latency_u_cap=radio_sec.num("latency_u_cap", 0.95, exclusive_minimum=0.0, maximum=1.0),
        latency_eps_u=radio_sec.num("latency_eps_u", 0.05, exclusive_minimum=0.0),
        loss_k_over=radio_sec.num("loss_k_over", 0.4, minimum=0.0),
        loss_k_rf=radio_sec.num("loss_k_rf", 0.1, minimum=0.0),
        loss_sinr_floor_db=radio_sec.num("loss_sinr_floor_db", 3.0),
        loss_s_w_db=radio_sec.num("loss_s_w_db", 2.0, exclusive_minimum=0.0),
    )

    traffic_sec = _Section("traffic", data.get("traffic", {}), text)
    traffic_sec.check_keys({"demand_gbps", "demand_range_gbps"})
    demand_range = traffic_sec.raw("demand_range_gbps")
    try:
        traffic = TrafficConfig(
            demand_gbps=traffic_sec.num("demand_gbps", 1.0, exclusive_minimum=0.0),
            demand_range_gbps=(None if demand_range is None
                               else traffic_sec.numbers("demand_range_gbps", None, length=2)),
        )
    except InvalidParameterError as exc:
        raise ScenarioError(f"traffic: {exc}") from None

    mob_sec = _Section("mobility", data.get("mobility", {}), text)
    mob_sec.check_keys({"speed_range_mps", "pause_range_s", "tick_duration_s"})
    try:
        mobility = MobilityConfig(
            area=area,
            speed_range=mob_sec.numbers("speed_range_mps", (0.0, 20.0), length=2),
            pause_range=mob_sec.numbers("pause_range_s", (0.0, 2.0), length=2),
            tick_duration=mob_sec.num("tick_duration_s", 0.1, exclusive_minimum=0.0),
        )
    except InvalidParameterError as exc:
        raise ScenarioError(f"mobility: {exc}") from None

    reward_sec = _Section("reward", data.get("reward", {}), text)
    reward_sec.check_keys({"latency_sla_ms", "loss_sla", "throughput_sla_gbps",
                           "imbalance_weight"})
    try:
        reward = RewardConfig(
            latency_sla=reward_sec.num("latency_sla_ms", 10.0, exclusive_minimum=0.0),
            loss_sla=reward_sec.num("loss_sla", 0.01, exclusive_minimum=0.0),
            throughput_sla=reward_sec.num("throughput_sla_gbps", 0.5,
                                          exclusive_minimum=0.0) * 1e9,
            imbalance_weight=reward_sec.num("imbalance_weight", 1.0, minimum=0.0),
        )
    except InvalidParameterError as exc:
        raise ScenarioError(f"reward: {exc}") from None

    hp_sec = _Section("learning", data.get("learning", {}), text)
    hp_sec.check_keys({"alpha", "gamma", "epsilon0", "epsilon_min", "epsilon_decay",
                       "episodes", "ticks_per_episode"})
    try:
        hp = HyperParams(
            alpha=hp_sec.num("alpha", 0.3),
            gamma=hp_sec.num("gamma", 0.9),
            epsilon0=hp_sec.num("epsilon0", 1.0),
            epsilon_min=hp_sec.num("epsilon_min", 0.05),
            epsilon_decay=hp_sec.num("epsilon_decay", 0.7),
            episodes=hp_sec.int_("episodes", 12, minimum=0),
            ticks_per_episode=hp_sec.int_("ticks_per_episode", 2000, minimum=0),
        )
    except InvalidParameterError as exc:
        raise ScenarioError(f"learning: {exc}") from None

    bins_sec = _Section("bins", data.get("bins", {}), text)
    bins_sec.check_keys({"packet_loss", "latency_ms", "throughput_gbps",
                         "speed_mps", "distance_m", "load_ratio"})
    try:
        bins = StateBins(
            packet_loss=bins_sec.numbers("packet_loss", (0.01, 0.05)),
            latency_ms=bins_sec.numbers("latency_ms", (10.0, 50.0)),
            throughput_bps=tuple(v * 1e9 for v in bins_sec.numbers("throughput_gbps", (0.1, 1.0))),
            speed_mps=bins_sec.numbers("speed_mps", (5.0,)),
            distance_m=bins_sec.numbers("distance_m", (50.0, 150.0)),
            load_ratio=bins_sec.numbers("load_ratio", (0.5, 0.9)),
        )
    except InvalidParameterError as exc:
        raise ScenarioError(f"bins: {exc}") from None

    return Scenario(seed=seed, ue_count=ue_count, policy=policy, stations=stations,
                    radio=radio, traffic=traffic, mobility=mobility, reward=reward,
                    hp=hp, bins=bins)


def parse_scenario(path) -> Scenario:
    """Load a scenario file; an empty file is the all-defaults scenario."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario '{path}': {exc}") from None
    return parse_scenario_text(text)
