"""The knowledge plane: state binning, epsilon-greedy selection, value updates.

One shared dense table serves every UE. States are mixed-radix combinations
of six binned telemetry features; the six actions are NoOp, three handover
ranks, and one power step in each direction.
"""

from __future__ import annotations

import json
import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, asdict
from enum import IntEnum

import numpy as np

from .errors import (
    IncompatibleTableError,
    InvalidParameterError,
    InvalidTelemetryError,
    TableFormatError,
)

# Feature order used for state indexing; the first feature is the most
# significant mixed-radix digit.
FEATURE_ORDER = (
    "packet_loss",
    "latency_ms",
    "throughput_bps",
    "speed_mps",
    "distance_m",
    "load_ratio",
)


class Action(IntEnum):
    """The agent's action set; wire and table ordinals equal the enum values."""

    NOOP = 0
    HANDOVER_1 = 1   # hand over to the nearest alternative station
    HANDOVER_2 = 2
    HANDOVER_3 = 3
    POWER_UP = 4     # one step up the serving station's power ladder
    POWER_DOWN = 5

    @property
    def handover_rank(self) -> int:
        """1..3 for handover actions, 0 otherwise."""
        return self.value if 1 <= self.value <= 3 else 0


N_ACTIONS = len(Action)


@dataclass(frozen=True)
class TelemetrySample:
    """Per-UE observation vector fed to the knowledge plane."""

    ue_id: int
    packet_loss: float          # fraction
    latency: float              # ms
    throughput: float           # bit/s, delivered
    speed: float                # m/s, from location change rate
    distance_to_serving: float  # m
    serving_load_ratio: float   # serving cell load / capacity

    def features(self) -> tuple[float, ...]:
        return (self.packet_loss, self.latency, self.throughput,
                self.speed, self.distance_to_serving, self.serving_load_ratio)


@dataclass(frozen=True)
class StateBins:
    """Ascending bin boundaries per feature; values >= the last boundary land
    in the top bin, so every finite sample maps to a valid state."""

    packet_loss: tuple[float, ...] = (0.01, 0.05)
    latency_ms: tuple[float, ...] = (10.0, 50.0)
    throughput_bps: tuple[float, ...] = (0.1e9, 1.0e9)
    speed_mps: tuple[float, ...] = (5.0,)
    distance_m: tuple[float, ...] = (50.0, 150.0)
    load_ratio: tuple[float, ...] = (0.5, 0.9)

    def __post_init__(self):
        for name in FEATURE_ORDER:
            bounds = getattr(self, name)
            if not bounds:
                raise InvalidParameterError(f"bins.{name} must be non-empty")
            if any(b >= a for b, a in zip(bounds, bounds[1:])):
                raise InvalidParameterError(f"bins.{name} must be strictly increasing")

    def boundaries(self) -> tuple[tuple[float, ...], ...]:
        return tuple(getattr(self, name) for name in FEATURE_ORDER)

    def radices(self) -> tuple[int, ...]:
        return tuple(len(b) + 1 for b in self.boundaries())

    def state_count(self) -> int:
        return math.prod(self.radices())


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 0.3            # learning rate
    gamma: float = 0.9            # discount factor
    epsilon0: float = 1.0         # initial exploration
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.7    # multiplicative, applied once per episode
    episodes: int = 12
    ticks_per_episode: int = 2000

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidParameterError("alpha must be in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise InvalidParameterError("gamma must be in [0, 1)")
        if not 0 <= self.epsilon0 <= 1:
            raise InvalidParameterError("epsilon0 must be in [0, 1]")
        if not 0 <= self.epsilon_min <= self.epsilon0:
            raise InvalidParameterError("epsilon_min must be in [0, epsilon0]")
        if not 0 < self.epsilon_decay <= 1:
            raise InvalidParameterError("epsilon_decay must be in (0, 1]")
        if self.episodes < 0 or self.ticks_per_episode < 0:
            raise InvalidParameterError("episodes and ticks_per_episode must be >= 0")


@dataclass(frozen=True)
class RewardConfig:
    latency_sla: float = 10.0          # ms
    loss_sla: float = 0.01             # fraction
    throughput_sla: float = 0.5e9      # bit/s
    imbalance_weight: float = 1.0      # weight of the Jain fairness penalty

    def __post_init__(self):
        if self.latency_sla <= 0 or self.loss_sla <= 0 or self.throughput_sla <= 0:
            raise InvalidParameterError("SLA thresholds must be > 0")
        if self.imbalance_weight < 0:
            raise InvalidParameterError("imbalance_weight must be >= 0")


class QTable:
    """Dense S x A action-value table with visit counts."""

    def __init__(self, states: int, actions: int = N_ACTIONS):
        if states < 1 or actions < 1:
            raise InvalidParameterError("table dimensions must be >= 1")
        self.values = np.zeros((states, actions), dtype=np.float64)
        self.visit_counts = np.zeros((states, actions), dtype=np.int64)

    @property
    def states(self) -> int:
        return self.values.shape[0]

    @property
    def actions(self) -> int:
        return self.values.shape[1]


def discretize_state(t: TelemetrySample, bins: StateBins) -> int:
    """Map a telemetry sample to its mixed-radix state index.

    Total over finite samples; NaN raises InvalidTelemetryError.
    """
    index = 0
    for value, bounds in zip(t.features(), bins.boundaries()):
        if math.isnan(value):
            raise InvalidTelemetryError(f"NaN in telemetry for ue {t.ue_id}")
        index = index * (len(bounds) + 1) + bisect_right(bounds, value)
    return index


def select_action(q: QTable, s: int, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy pick; ties break toward the lowest action ordinal.

    One uniform draw gates exploration even at epsilon 0, so the stream
    advances identically regardless of epsilon.
    """
    if rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    return Action(int(np.argmax(q.values[s])))


def q_update(q: QTable, s: int, a: Action, r: float, s_next: int,
             hp: HyperParams) -> QTable:
    """One-step Q-learning update; touches exactly the (s, a) cell."""
    target = r + hp.gamma * float(np.max(q.values[s_next]))
    q.values[s, a] += hp.alpha * (target - q.values[s, a])
    q.visit_counts[s, a] += 1
    return q


def jain_fairness(x) -> float:
    """Jain's index (sum x)^2 / (n * sum x^2); 1.0 for an all-idle network."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return 1.0
    total = x.sum()
    square_sum = (x * x).sum()
    if square_sum == 0.0:
        return 1.0
    return float(total * total / (x.size * square_sum))


def compute_reward(t: TelemetrySample, load_ratios, rc: RewardConfig) -> float:
    """+1/-1 per SLA term, minus the weighted load-imbalance penalty."""
    def sat(ok: bool) -> float:
        return 1.0 if ok else -1.0

    r = (sat(t.latency <= rc.latency_sla)
         + sat(t.packet_loss <= rc.loss_sla)
         + sat(t.throughput >= rc.throughput_sla))
    return r - rc.imbalance_weight * (1.0 - jain_fairness(load_ratios))


def decay_epsilon(epsilon: float, hp: HyperParams) -> float:
    """Per-episode multiplicative decay with a floor at epsilon_min."""
    return max(hp.epsilon_min, epsilon * hp.epsilon_decay)


# ---------------------------------------------------------------------------
# Persistence. Layout (documented in the README):
#   8 bytes  magic "KDNQTBL1"
#   4 bytes  big-endian header length H
#   H bytes  canonical JSON header (version, states, actions, feature_order,
#            bins, action_set, hyperparams)
#   S*A*8    row-major little-endian float64 values
#   S*A*8    row-major little-endian int64 visit counts
# ---------------------------------------------------------------------------

QTABLE_MAGIC = b"KDNQTBL1"
_LEN = struct.Struct(">I")


def _table_header(q: QTable, bins: StateBins, hp: HyperParams) -> dict:
    return {
        "version": 1,
        "states": q.states,
        "actions": q.actions,
        "feature_order": list(FEATURE_ORDER),
        "bins": {name: list(getattr(bins, name)) for name in FEATURE_ORDER},
        "action_set": [a.name.lower() for a in Action],
        "hyperparams": asdict(hp),
    }


def save_qtable(q: QTable, path, bins: StateBins, hp: HyperParams) -> None:
    """Write the table with a self-describing header; round-trips bit-exactly."""
    header = json.dumps(_table_header(q, bins, hp), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(QTABLE_MAGIC)
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(q.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(q.visit_counts, dtype="<i8").tobytes())


def load_qtable(path, bins: StateBins | None = None) -> tuple[QTable, dict]:
    """Read a table back; no partial table is ever returned.

    Raises TableFormatError for unreadable or truncated files and
    IncompatibleTableError when `bins` is given and does not match the header.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(QTABLE_MAGIC) + _LEN.size or not blob.startswith(QTABLE_MAGIC):
        raise TableFormatError("not a q-table file (bad magic)")
    offset = len(QTABLE_MAGIC)
    (header_len,) = _LEN.unpack_from(blob, offset)
    offset += _LEN.size
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TableFormatError(f"bad q-table header: {exc}") from None
    offset += header_len

    states, actions = header.get("states"), header.get("actions")
    if not (isinstance(states, int) and isinstance(actions, int)
            and states >= 1 and actions >= 1):
        raise TableFormatError("q-table header missing valid dimensions")
    cells = states * actions
    expected = offset + cells * 8 * 2
    if len(blob) != expected:
        raise TableFormatError(
            f"q-table payload is {len(blob)} bytes, expected {expected} (truncated?)"
        )

    if bins is not None:
        want_bins = {name: list(getattr(bins, name)) for name in FEATURE_ORDER}
        if states != bins.state_count():
            raise IncompatibleTableError(
                f"table has {states} states, scenario bins need {bins.state_count()}"
            )
        if header.get("bins") != want_bins or header.get("feature_order") != list(FEATURE_ORDER):
            raise IncompatibleTableError("table bin boundaries do not match the scenario")
        if actions != N_ACTIONS:
            raise IncompatibleTableError(f"table has {actions} actions, expected {N_ACTIONS}")

    q = QTable(states, actions)
    q.values[:] = np.frombuffer(blob, dtype="<f8", count=cells, offset=offset).reshape(states, actions)
    q.visit_counts[:] = np.frombuffer(blob, dtype="<i8", count=cells,
                                      offset=offset + cells * 8).reshape(states, actions)
    return q, header
