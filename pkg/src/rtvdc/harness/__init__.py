from .network import Delivery, NetConfig, NetStats, SimNetwork
from .scenario import (
    RunResult,
    Scenario,
    ScenarioError,
    TraceLog,
    UserAction,
    UserSpec,
    VehicleSpec,
    load_scenario,
    run_scenario,
    scenario_from_dict,
)
