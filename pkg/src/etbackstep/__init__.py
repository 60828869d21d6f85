"""Decentralized adaptive backstepping with event-triggered feedback."""

from .ccs import adapt_rate, backstep, control_u, transform_z, virtual_alpha
from .errors import ContractError, NumericError, SpecificationError
from .etcs import Event, HeldSignals, TriggerThresholds, adapt_rate_triggered, control_v, etm_step
from .gains import GainTable, Lemma2Bounds, compute_gain_table, gain_table_for, lemma1_constant, lemma2_bounds
from .scenario import (
    PlantSpec,
    ScenarioConfig,
    builtin_sec5_scenario,
    estimate_assumption_constants,
    get_scenario,
    load_config,
    plant_derivative,
)
from .sim import SimResult, inter_event_stats, run

__version__ = "0.1.0"
