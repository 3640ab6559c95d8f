"""Simulation engine and evaluation harness for active voltage control on
radial distribution networks."""

from .network import (
    Branch,
    Bus,
    CaseError,
    LoadUnit,
    NetworkCase,
    ParseError,
    PvUnit,
    Region,
    ValidationError,
    branch_admittance,
    dump_case,
    load_case,
    parse_case,
    region_of,
    validate_radial,
)
from .powerflow import (
    GridState,
    InjectionSet,
    diagnostic_dump,
    mismatch,
    solve_power_flow,
    total_loss,
    two_bus_power_loss,
    two_bus_voltage_drop,
    zero_deviation_reactive,
)
from .profiles import (
    Profile,
    ProfileStore,
    ingest_csv,
    load_bundle,
    noisy_read,
    perturb_power_factor,
    remove_outliers,
    scale_penetration,
)
from .reward import BarrierSpec, RewardSpec, barrier_value, reactive_loss, reward
from .env import (
    EnvConfig,
    Observation,
    StepResult,
    VoltageControlEnv,
    action_to_reactive,
)
from .controllers import (
    DroopParams,
    OpfSolution,
    droop_q,
    droop_rollout,
    no_control,
    opf_solve,
)
from .metrics import (
    EpisodeRecord,
    MetricsReport,
    metric_cr,
    metric_extended,
    metric_pl,
    metric_ql,
    metric_vr,
    read_record,
    write_record,
)
from .harness import RunSpec, build_environment, rollout_episode, run_eval

__version__ = "0.1.0"
