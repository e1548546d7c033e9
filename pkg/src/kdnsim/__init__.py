"""kdnsim: a deterministic small-cell network simulator whose knowledge plane
runs tabular epsilon-greedy Q-learning for UE association and power control."""

__version__ = "0.1.0"

from .engine import (  # noqa: F401
    EpisodeResult,
    EpisodeRunner,
    SweepRow,
    agent_stream,
    apply_action,
    baseline_policy,
    evaluate,
    run_episode,
    run_idle_episode,
    sweep_users,
    train,
)
from .errors import KdnsimError  # noqa: F401
from .mobility import MobilityConfig, observed_speed, step_mobility  # noqa: F401
from .network import (  # noqa: F401
    BaseStation,
    LinkMetrics,
    NetworkState,
    RadioConstants,
    StationKind,
    UserEquipment,
    packet_loss,
    path_loss,
    refresh_metrics,
    sinr,
    ue_latency,
    ue_throughput,
)
from .qlearning import (  # noqa: F401
    Action,
    HyperParams,
    QTable,
    RewardConfig,
    StateBins,
    TelemetrySample,
    compute_reward,
    decay_epsilon,
    discretize_state,
    jain_fairness,
    load_qtable,
    q_update,
    save_qtable,
    select_action,
)
from .scenario import Policy, Scenario, parse_scenario, parse_scenario_text  # noqa: F401
