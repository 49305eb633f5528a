"""Experiment harness: session configs, trial execution, metrics, tables."""

from .config import (DEFAULT_STAGE_LIMIT, DEFAULT_TOTAL_LIMIT, MODES,
                     OPERATORS, SessionConfig, config_from_dict, config_hash,
                     config_to_dict, load_config, session_config, with_seed)
from .trial import (DEVICE_VISCOUS, TrialError, TrialRecord, channel_schedules,
                    delivery_schedule, record_columns, run_trial)

__all__ = [
    "DEFAULT_STAGE_LIMIT",
    "DEFAULT_TOTAL_LIMIT",
    "DEVICE_VISCOUS",
    "MODES",
    "OPERATORS",
    "SessionConfig",
    "TrialError",
    "TrialRecord",
    "channel_schedules",
    "config_from_dict",
    "config_hash",
    "config_to_dict",
    "delivery_schedule",
    "load_config",
    "record_columns",
    "run_trial",
    "session_config",
    "with_seed",
]
