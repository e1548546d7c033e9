"""The simulation loop: actions, ticks, episodes, baselines, and KPI sweeps.

One run is one logical thread and is fully determined by (scenario, seed).
Random streams are derived from the master seed per purpose (init, mobility,
agent), per phase (train/eval), per episode, and per UE, so the Idle baseline
and the learner see identical worlds when paired on a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace
from typing import Callable

import numpy as np

from .errors import IntegrityError, InvalidParameterError
from .mobility import WalkField, observed_speed
from .network import (
    DEFAULT_RADIO,
    FSPL_CONST_DB,
    NetworkState,
    StationArrays,
    queue_latency_ms,
    refresh_metrics,
)
from .qlearning import (
    Action,
    HyperParams,
    N_ACTIONS,
    QTable,
    TelemetrySample,
    decay_epsilon,
    discretize_state,
    jain_fairness,
    q_update,
    select_action,
)
from .scenario import Policy, Scenario, middle_power

# Entropy layout for derived streams: (seed, stream, phase, episode[, ue]).
STREAM_INIT = 0
STREAM_MOBILITY = 1
STREAM_AGENT = 2
PHASE_TRAIN = 0
PHASE_EVAL = 1


def derived_rng(seed: int, stream: int, episode: int, ue: int | None = None,
                evaluation: bool = False) -> np.random.Generator:
    """Deterministic sub-stream of the master seed."""
    phase = PHASE_EVAL if evaluation else PHASE_TRAIN
    entropy = (seed, stream, phase, episode) + (() if ue is None else (ue,))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def agent_stream(seed: int, episode: int, evaluation: bool = False) -> np.random.Generator:
    """The agent's decision stream; external bridge clients must mirror this."""
    return derived_rng(seed, STREAM_AGENT, episode, evaluation=evaluation)


@dataclass
class TickRecord:
    """Optional per-tick debug record emitted through the event hook."""

    tick: int
    ue_id: int
    state_index: int | None
    action: Action
    reward: float
    throughput_bps: float
    latency_ms: float
    packet_loss: float


@dataclass(eq=False)
class EpisodeResult:
    """Per-tick KPI series and their episode aggregates."""

    throughput_bps: np.ndarray   # per-tick aggregate delivered rate
    latency_ms: np.ndarray       # per-tick mean over UEs
    packet_loss: np.ndarray      # per-tick mean fraction
    rewards: np.ndarray
    mean_throughput_bps: float
    mean_latency_ms: float
    mean_packet_loss: float
    cumulative_reward: float
    handover_count: int
    power_change_count: int

    @classmethod
    def from_series(cls, throughput, latency, loss, rewards, handovers, power_changes):
        def mean(a):
            return float(np.mean(a)) if a.size else math.nan

        return cls(
            throughput_bps=throughput,
            latency_ms=latency,
            packet_loss=loss,
            rewards=rewards,
            mean_throughput_bps=mean(throughput),
            mean_latency_ms=mean(latency),
            mean_packet_loss=mean(loss),
            cumulative_reward=float(rewards.sum()),
            handover_count=handovers,
            power_change_count=power_changes,
        )


@dataclass
class CurvePoint:
    episode: int
    epsilon: float
    cumulative_reward: float


@dataclass
class SweepRow:
    """Mean and stddev of each KPI over seeds for one (ue_count, policy) cell."""

    ue_count: int
    policy: str
    n_seeds: int
    throughput_bps_mean: float
    throughput_bps_std: float
    latency_ms_mean: float
    latency_ms_std: float
    packet_loss_mean: float
    packet_loss_std: float


class _LinkState:
    """Incremental link metrics for the tick loop.

    Mirrors network.compute_links but caches what each event cannot change:
    geometry (distances, path loss, received power) is refreshed per tick,
    serving-dependent terms (loads, latency, co-channel masks) only on
    handover, and a power step refreshes one received-power column. Values
    match the reference kernel to float rounding; tests pin the agreement.
    """

    def __init__(self, st: StationArrays, radio, demand: np.ndarray):
        self.st = st
        self.radio = radio
        self.demand = demand
        n_ue = demand.shape[0]
        self._rows = np.arange(n_ue)
        absorb = np.where(st.carrier >= radio.thz_cutoff_hz,
                          radio.absorption_db_per_m, 0.0)
        # per-station constant part of the path-loss formula
        self._pl_const = 20.0 * np.log10(st.carrier) + FSPL_CONST_DB
        self._absorb = absorb
        self.distance = None    # (N, B)
        self._rx_dbm = None     # (N, B)
        self._rx_mw = None      # (N, B)
        self._serving = None
        self.loads = None
        self.utilization = None
        self.latency = None
        self._co = None
        self._bw_share = None   # bandwidth / load per UE
        self._over_loss = None  # overload part of the loss
        self._noise_mw = float(10.0 ** (radio.noise_dbm / 10.0))

    def on_positions(self, pos: np.ndarray) -> None:
        diff = pos[:, None, :] - self.st.pos[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        self.distance = d
        d = np.maximum(d, self.radio.d_min_m)
        pl = 20.0 * np.log10(d) + (self._pl_const[None, :] + self._absorb[None, :] * d)
        self._rx_dbm = self.st.tx_dbm[None, :] - pl
        self._rx_mw = 10.0 ** (self._rx_dbm / 10.0)

    def on_serving(self, serving: np.ndarray) -> None:
        st, radio = self.st, self.radio
        self._serving = serving
        self._co = st.carrier[None, :] == st.carrier[serving][:, None]
        self._co[self._rows, serving] = False
        self.loads = np.bincount(serving, minlength=st.pos.shape[0]).astype(float)
        self.utilization = self.loads / st.capacity
        self.fairness = jain_fairness(self.utilization)
        util_ue = self.utilization[serving]
        self.latency = queue_latency_ms(st.base_latency[serving], util_ue, radio)
        self._bw_share = st.bandwidth[serving] / self.loads[serving]
        self._over_loss = np.maximum(0.0, util_ue - 1.0) * radio.loss_k_over

    def on_power(self, station: int) -> None:
        col = self.st.tx_dbm[station] - (
            20.0 * np.log10(np.maximum(self.distance[:, station], self.radio.d_min_m))
            + (self._pl_const[station]
               + self._absorb[station] * np.maximum(self.distance[:, station],
                                                    self.radio.d_min_m))
        )
        self._rx_dbm[:, station] = col
        self._rx_mw[:, station] = 10.0 ** (col / 10.0)

    def finish(self) -> None:
        """Recompute the SINR-dependent tail into sinr/share/loss/delivered."""
        radio = self.radio
        interference_mw = (self._rx_mw * self._co).sum(axis=1)
        denom = interference_mw + self._noise_mw
        with np.errstate(divide="ignore"):
            denom_dbm = 10.0 * np.log10(denom)
        self.sinr = np.minimum(self._rx_dbm[self._rows, self._serving] - denom_dbm,
                               radio.sinr_cap_db)
        linear = 10.0 ** (self.sinr / 10.0)
        self.share = self._bw_share * np.log2(1.0 + linear)
        x = (radio.loss_sinr_floor_db - self.sinr) / radio.loss_s_w_db
        with np.errstate(over="ignore"):
            rf = radio.loss_k_rf / (1.0 + np.exp(-x))
        self.loss = np.clip(self._over_loss + rf, 0.0, 1.0)
        self.delivered = np.minimum(self.share, self.demand) * (1.0 - self.loss)


class EpisodeRunner:
    """Array-backed world state for one episode, stepped one decision per tick.

    Tick order: mobility, link refresh, one round-robin UE observed and acted
    on, refresh if the action changed anything, reward, KPI aggregation.
    Station power starts at the middle level of each ladder so the Idle
    baseline and the learner share the same initial state.
    """

    def __init__(self, scenario: Scenario, episode_index: int = 0,
                 evaluation: bool = False):
        if scenario.ue_count < 1:
            raise InvalidParameterError("ue_count must be >= 1")
        if not scenario.stations:
            raise InvalidParameterError("scenario needs at least one station")
        self.scenario = scenario
        self.radio = scenario.radio
        self.n_ue = scenario.ue_count
        self.ticks_total = scenario.hp.ticks_per_episode
        self.tick = 0

        self.st = StationArrays.from_stations(scenario.stations)
        self.levels = [tuple(s.power_levels) for s in scenario.stations]
        self.level_idx = np.array([(len(lv) - 1) // 2 for lv in self.levels], dtype=np.intp)
        self.st.tx_dbm = np.array([middle_power(lv) for lv in self.levels], dtype=float)

        init_rng = derived_rng(scenario.seed, STREAM_INIT, episode_index,
                               evaluation=evaluation)
        w, h = scenario.area
        self.pos = init_rng.random((self.n_ue, 2)) * np.array([w, h])
        self.prev_pos = self.pos.copy()
        if scenario.traffic.demand_range_gbps is not None:
            lo, hi = scenario.traffic.demand_range_gbps
            self.demand = (lo + init_rng.random(self.n_ue) * (hi - lo)) * 1e9
        else:
            self.demand = np.full(self.n_ue, scenario.traffic.demand_gbps * 1e9)

        diff = self.pos[:, None, :] - self.st.pos[None, :, :]
        self.serving = np.argmin(np.sqrt((diff * diff).sum(axis=2)), axis=1)

        mobility_rngs = [
            derived_rng(scenario.seed, STREAM_MOBILITY, episode_index, ue=i,
                        evaluation=evaluation)
            for i in range(self.n_ue)
        ]
        self.walks = WalkField(scenario.mobility, mobility_rngs)

        n = self.ticks_total
        self._thr = np.empty(n)
        self._lat = np.empty(n)
        self._loss = np.empty(n)
        self._rew = np.empty(n)
        self.handover_count = 0
        self.power_change_count = 0
        self.acting_ue = 0
        self._links = _LinkState(self.st, self.radio, self.demand)
        self._links.on_serving(self.serving)

    @property
    def done(self) -> bool:
        return self.tick >= self.ticks_total

    def begin_tick(self) -> TelemetrySample:
        """Advance mobility, refresh links, return the acting UE's observation."""
        np.copyto(self.prev_pos, self.pos)
        self.walks.step(self.pos)
        la = self._links
        la.on_positions(self.pos)
        la.finish()
        self.acting_ue = self.tick % self.n_ue
        return self._sample(self.acting_ue)

    def finish_tick(self, action: Action) -> tuple[float, TelemetrySample]:
        """Apply the action, recompute what changed, record KPIs."""
        u = self.acting_ue
        la = self._links
        if self._apply(u, action):
            la.finish()
        post = self._sample(u)
        # same arithmetic as qlearning.compute_reward, with the Jain term
        # cached on la (it only moves when loads move)
        rc = self.scenario.reward
        sats = ((1.0 if post.latency <= rc.latency_sla else -1.0)
                + (1.0 if post.packet_loss <= rc.loss_sla else -1.0)
                + (1.0 if post.throughput >= rc.throughput_sla else -1.0))
        reward = sats - rc.imbalance_weight * (1.0 - la.fairness)
        t = self.tick
        self._thr[t] = la.delivered.sum()
        self._lat[t] = la.latency.mean()
        self._loss[t] = la.loss.mean()
        self._rew[t] = reward
        self.tick += 1
        return reward, post

    def _sample(self, u: int) -> TelemetrySample:
        la = self._links
        b = self.serving[u]
        return TelemetrySample(
            ue_id=int(u),
            packet_loss=float(la.loss[u]),
            latency=float(la.latency[u]),
            throughput=float(la.delivered[u]),
            speed=observed_speed(self.prev_pos[u], self.pos[u],
                                 self.scenario.mobility.tick_duration),
            distance_to_serving=float(la.distance[u, b]),
            serving_load_ratio=float(la.utilization[b]),
        )

    def _apply(self, u: int, action: Action) -> bool:
        """Mutate serving/power state; True when link metrics must refresh."""
        if action == Action.NOOP:
            return False
        rank = action.handover_rank
        if rank:
            row = self._links.distance[u]
            order = np.argsort(row, kind="stable")
            alternatives = order[order != self.serving[u]]
            if len(alternatives) < rank:
                return False
            self.serving[u] = alternatives[rank - 1]
            self.handover_count += 1
            self._links.on_serving(self.serving)
            return True
        b = self.serving[u]
        step = 1 if action == Action.POWER_UP else -1
        new_idx = min(max(self.level_idx[b] + step, 0), len(self.levels[b]) - 1)
        if new_idx == self.level_idx[b]:
            return False
        self.level_idx[b] = new_idx
        self.st.tx_dbm[b] = self.levels[b][new_idx]
        self.power_change_count += 1
        self._links.on_power(b)
        return True

    def result(self) -> EpisodeResult:
        n = self.tick
        return EpisodeResult.from_series(
            self._thr[:n].copy(), self._lat[:n].copy(), self._loss[:n].copy(),
            self._rew[:n].copy(), self.handover_count, self.power_change_count,
        )


def baseline_policy(state: NetworkState | None = None, ue_id: int | None = None) -> Action:
    """The Idle baseline: never reassociate, never touch power."""
    return Action.NOOP


def apply_action(state: NetworkState, ue_id: int, action: Action,
                 noise_dbm: float | None = None, radio=None) -> NetworkState:
    """Apply one agent action to a NetworkState and refresh its metrics.

    Handover(r) targets the r-th nearest station excluding the current one
    (no change when fewer than r alternatives exist); power steps saturate at
    the ends of the serving station's ladder.
    """
    radio = radio or DEFAULT_RADIO
    ue_index = next((i for i, ue in enumerate(state.ues) if ue.id == ue_id), None)
    if ue_index is None:
        raise IntegrityError(f"unknown ue id {ue_id}")
    ue = state.ues[ue_index]
    index_of = {s.id: i for i, s in enumerate(state.stations)}
    if ue.serving_bs not in index_of:
        raise IntegrityError(f"serving_bs {ue.serving_bs} does not exist")
    serving_idx = index_of[ue.serving_bs]

    stations = list(state.stations)
    ues = list(state.ues)
    rank = action.handover_rank
    if rank:
        pos = np.asarray(ue.position, dtype=float)
        bs_pos = np.array([s.position for s in stations], dtype=float)
        dist = np.sqrt(((pos - bs_pos) ** 2).sum(axis=1))
        order = np.argsort(dist, kind="stable")
        alternatives = order[order != serving_idx]
        if len(alternatives) >= rank:
            target = stations[int(alternatives[rank - 1])]
            ues[ue_index] = dc_replace(ue, serving_bs=target.id)
    elif action in (Action.POWER_UP, Action.POWER_DOWN):
        bs = stations[serving_idx]
        idx = bs.power_levels.index(bs.tx_power)
        step = 1 if action == Action.POWER_UP else -1
        new_idx = min(max(idx + step, 0), len(bs.power_levels) - 1)
        if new_idx != idx:
            stations[serving_idx] = dc_replace(bs, tx_power=bs.power_levels[new_idx])

    new_state = NetworkState(tick=state.tick, stations=stations, ues=ues)
    return refresh_metrics(new_state, noise_dbm, radio)


RecordHook = Callable[[TickRecord], None]


def run_episode(scenario: Scenario, q: QTable, epsilon: float,
                rng: np.random.Generator, *, episode_index: int = 0,
                evaluation: bool = False, learn: bool = True,
                on_record: RecordHook | None = None) -> tuple[EpisodeResult, QTable]:
    """One learning episode: observe, act epsilon-greedily, update the table.

    With learn=False the table is left untouched (greedy evaluation mode).
    """
    runner = EpisodeRunner(scenario, episode_index, evaluation)
    bins = scenario.bins
    hp = scenario.hp
    while not runner.done:
        sample = runner.begin_tick()
        s = discretize_state(sample, bins)
        action = select_action(q, s, epsilon, rng)
        reward, post = runner.finish_tick(action)
        if learn:
            q_update(q, s, action, reward, discretize_state(post, bins), hp)
        if on_record is not None:
            t = runner.tick - 1
            on_record(TickRecord(t, runner.acting_ue, s, action, reward,
                                 runner._thr[t], runner._lat[t], runner._loss[t]))
    return runner.result(), q


def run_idle_episode(scenario: Scenario, *, episode_index: int = 0,
                     evaluation: bool = False,
                     on_record: RecordHook | None = None) -> EpisodeResult:
    """Baseline episode: nearest-station association, fixed power, NoOp forever."""
    runner = EpisodeRunner(scenario, episode_index, evaluation)
    while not runner.done:
        runner.begin_tick()
        action = baseline_policy(None, runner.acting_ue)
        reward, _ = runner.finish_tick(action)
        if on_record is not None:
            t = runner.tick - 1
            on_record(TickRecord(t, runner.acting_ue, None, action, reward,
                                 runner._thr[t], runner._lat[t], runner._loss[t]))
    return runner.result()


EpisodeHook = Callable[[CurvePoint], None]


def train(scenario: Scenario, hp: HyperParams | None = None, *,
          on_episode: EpisodeHook | None = None) -> tuple[QTable, list[CurvePoint]]:
    """Run the full episode loop with per-episode epsilon decay."""
    if hp is not None:
        scenario = scenario.with_overrides(hp=hp)
    hp = scenario.hp
    q = QTable(scenario.bins.state_count(), N_ACTIONS)
    curve: list[CurvePoint] = []
    epsilon = hp.epsilon0
    for episode in range(hp.episodes):
        result, q = run_episode(scenario, q, epsilon,
                                agent_stream(scenario.seed, episode),
                                episode_index=episode)
        point = CurvePoint(episode, epsilon, result.cumulative_reward)
        curve.append(point)
        if on_episode is not None:
            on_episode(point)
        epsilon = decay_epsilon(epsilon, hp)
    return q, curve


def evaluate(scenario: Scenario, q: QTable | None = None, *,
             episode_index: int = 0) -> EpisodeResult:
    """One greedy (epsilon = 0) evaluation episode on the eval stream phase.

    The eval phase is independent of HyperParams, so Idle results cannot
    shift when training settings change.
    """
    if scenario.policy is Policy.IDLE:
        return run_idle_episode(scenario, episode_index=episode_index, evaluation=True)
    if q is None:
        raise InvalidParameterError("evaluating the RL policy needs a trained table")
    result, _ = run_episode(scenario, q, 0.0,
                            agent_stream(scenario.seed, episode_index, evaluation=True),
                            episode_index=episode_index, evaluation=True, learn=False)
    return result


RunHook = Callable[[int, str, int], None]


def sweep_users(scenario_template: Scenario, ue_counts: list[int],
                seeds: list[int], *, on_run: RunHook | None = None) -> list[SweepRow]:
    """Train and evaluate both policies per (ue_count, seed); paired seeds.

    Emits one row per (ue_count, policy) with mean and stddev over seeds.
    """
    if not ue_counts or not seeds:
        raise InvalidParameterError("ue_counts and seeds must be non-empty")
    rows: list[SweepRow] = []
    for n in ue_counts:
        kpis = {Policy.RL: [], Policy.IDLE: []}
        for seed in seeds:
            rl_scenario = scenario_template.with_overrides(
                ue_count=n, seed=seed, policy=Policy.RL)
            if on_run is not None:
                on_run(n, "rl", seed)
            q, _ = train(rl_scenario)
            res = evaluate(rl_scenario, q)
            kpis[Policy.RL].append((res.mean_throughput_bps, res.mean_latency_ms,
                                    res.mean_packet_loss))
            if on_run is not None:
                on_run(n, "idle", seed)
            idle_scenario = scenario_template.with_overrides(
                ue_count=n, seed=seed, policy=Policy.IDLE)
            res = evaluate(idle_scenario)
            kpis[Policy.IDLE].append((res.mean_throughput_bps, res.mean_latency_ms,
                                      res.mean_packet_loss))
        for policy in (Policy.RL, Policy.IDLE):
            data = np.array(kpis[policy])
            rows.append(SweepRow(
                ue_count=n,
                policy=policy.value,
                n_seeds=len(seeds),
                throughput_bps_mean=float(data[:, 0].mean()),
                throughput_bps_std=float(data[:, 0].std()),
                latency_ms_mean=float(data[:, 1].mean()),
                latency_ms_std=float(data[:, 1].std()),
                packet_loss_mean=float(data[:, 2].mean()),
                packet_loss_std=float(data[:, 2].std()),
            ))
    return rows
