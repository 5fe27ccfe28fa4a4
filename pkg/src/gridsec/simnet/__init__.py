"""Scenario engine: ground truth, attacks, protocol orchestration and baselines."""
from .batch import BatchResult, run_batch
from .baselines import CentralizedSchedule, centralized_kalman_step, robust_kalman_step
from .engine import AlarmEvent, RunRecord, apply_attack, run, step_truth
from .rng import STREAM_ORDER, make_streams
from .scenario import AttackSpec, Baselines, MisbehaviorSpec, Scenario

__all__ = [
    "AlarmEvent", "AttackSpec", "Baselines", "BatchResult", "CentralizedSchedule", "MisbehaviorSpec",
    "RunRecord", "STREAM_ORDER", "Scenario", "apply_attack", "centralized_kalman_step",
    "make_streams", "robust_kalman_step", "run", "run_batch", "step_truth",
]
