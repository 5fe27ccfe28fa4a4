"""Distributed trust management over published state estimates.

Every node re-derives every other node's gain and covariance schedule
offline, so it knows how a well-behaved node's published estimate should
move from one step to the next. Deviations are scored with a chi-squared
statistic, fed to a CUSUM-like test per (evaluator, target) pair, and the
network declares a node misbehaving by strict majority vote.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .detection import DetectorState, cusum_step, evidence, recover_state
from .errors import MissingBlock, MissingSchedule, SingularPsi

NEVER = math.inf


def evolution_covariance(entry) -> np.ndarray:
    """Covariance of ``xhat_{t|t} - A xhat_{t-1|t-1}`` under regular operation."""
    if entry is None:
        raise MissingSchedule("no schedule entry for this timestep")
    G, S = entry.G, entry.S
    Psi = G @ S @ G.T
    return 0.5 * (Psi + Psi.T)


def pi_statistic(xhat_t, xhat_prev, A_local, Psi) -> float:
    A = np.asarray(A_local, dtype=np.float64)
    pred = (np.diag(A) if A.ndim == 2 else A) * np.asarray(xhat_prev, dtype=np.float64)
    d = np.asarray(xhat_t, dtype=np.float64) - pred
    n = d.size
    for ridge in (0.0, 1e-12):
        try:
            Lc = linalg.cholesky(Psi + ridge * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
        z = linalg.solve_triangular(Lc, d, lower=True)
        return float(z @ z)
    raise SingularPsi("evolution covariance is not positive definite")


@dataclass(frozen=True)
class TrustEvaluator:
    evaluator_id: int
    target_id: int
    detector: DetectorState

    def __post_init__(self):
        if self.evaluator_id == self.target_id:
            raise ValueError("a node does not evaluate itself")

    @property
    def vote(self) -> int:
        return int(self.detector.alarmed)

    @property
    def eta_hat(self) -> int:
        return self.detector.tau_hat


def evaluate_step(ev: TrustEvaluator, pi: float, N_local: int, t: int):
    """Advance one evaluator's test; returns the updated evaluator and its vote."""
    if ev.detector.alarmed:
        return ev, 1
    s = evidence(pi, N_local, ev.detector.alpha)
    det = cusum_step(ev.detector, s, t)
    ev = replace(ev, detector=det)
    return ev, ev.vote


@dataclass
class VoteBoard:
    """Votes about one target; a vote never returns to 0 once cast as 1."""

    target_id: int
    n_nodes: int
    votes: dict = field(default_factory=dict)
    declared_at: int | None = None

    def cast(self, evaluator_id: int, vote: int):
        if evaluator_id == self.target_id:
            raise ValueError("a node does not vote on itself")
        if vote not in (0, 1):
            raise ValueError("votes are binary")
        self.votes[evaluator_id] = max(self.votes.get(evaluator_id, 0), vote)

    def reset(self):
        self.votes.clear()
        self.declared_at = None


def majority(n_yes: int, L: int) -> bool:
    return n_yes > (L - 1) / 2


def tally(board: VoteBoard, t: int, L: int | None = None, exclude=()):
    """Declare the target misbehaving at the first ``t`` with a strict majority of votes."""
    L = board.n_nodes if L is None else L
    if board.declared_at is not None:
        return board.declared_at
    n_yes = sum(v for j, v in board.votes.items() if j not in exclude)
    if majority(n_yes, L):
        board.declared_at = t
    return board.declared_at


def network_stopping_time(meas_alarms, trust_declarations):
    """Earliest alarm over all detectors; ``inf`` when nothing alarmed."""
    times = [a for a in list(meas_alarms) + list(trust_declarations) if a is not None]
    return min(times, default=NEVER)


def recovery_point(change_point: int, t: int, oldest_available: int):
    """Timestep to recover from and whether the pruned-ledger fallback was needed."""
    if change_point >= oldest_available:
        return change_point, False
    return oldest_available, True


def recover_after_misbehavior(ledger, node_id: int, A_local, t: int, eta_hat: int):
    """Recover ``node_id``'s estimate from the ledger, falling back to the oldest block."""
    try:
        stored = ledger.get_estimate(eta_hat, node_id)
        return recover_state(stored, A_local, t, eta_hat), eta_hat, False
    except MissingBlock:
        oldest = ledger.oldest_timestep
        stored = ledger.get_estimate(oldest, node_id)
        return recover_state(stored, A_local, t, oldest), oldest, True
