"""Per-node Kalman filtering with processed-measurement exchange.

Every node runs a Kalman filter on its local state. Neighbors that share
state variables send "processed" measurements: their shared sensor rows
with the estimated contribution of the recipient-foreign states removed.
The filter covariances do not depend on measurements, so the whole
covariance recursion for all nodes is available offline as a
:class:`CovarianceSchedule`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, MissingDelta, NotANeighbor, SingularInnovation
from .model import GlobalSystemModel, LocalNodeModel

COND_LIMIT = 1e14


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    tag: Literal["prior", "posterior"] = "posterior"

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def check(self, tol=1e-10):
        if self.cov.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"mean {self.mean.shape} vs cov {self.cov.shape}")
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > tol:
            raise ValueError("covariance not symmetric")
        if self.dim and np.linalg.eigvalsh(self.cov).min() < -tol:
            raise ValueError("covariance not positive semi-definite")
        return self


@dataclass(frozen=True, eq=False)
class ProcessedMeasurement:
    from_node: int
    to_node: int
    timestep: int
    values: np.ndarray

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class StackedMeasurement:
    node: int
    timestep: int
    values: np.ndarray
    H_stacked: np.ndarray
    R: np.ndarray


def _sym(P):
    return 0.5 * (P + P.T)


def predict_cov(P, A, sigma_v2):
    return _sym(A @ P @ A.T + sigma_v2 * np.eye(A.shape[0]))


def innovation_factor(S):
    """Cholesky factor of the innovation matrix, rejecting ill-conditioned input."""
    if S.shape[0] == 0:
        return None
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > COND_LIMIT:
        raise SingularInnovation("innovation covariance is numerically singular")
    try:
        return linalg.cho_factor(S, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc


def gain_and_update(P, H, R):
    """Return ``(G, P_post, S)`` for prior covariance ``P``."""
    S = _sym(H @ P @ H.T + R)
    fac = innovation_factor(S)
    if fac is None:
        return np.zeros((P.shape[0], 0)), P.copy(), S
    HP = H @ P
    G = linalg.cho_solve(fac, HP, check_finite=False).T
    P_post = _sym(P - G @ HP)
    return G, P_post, S


def predict(posterior: GaussianBelief, node: LocalNodeModel, sigma_v2: float) -> GaussianBelief:
    if posterior.dim != node.N_local:
        raise DimensionMismatch(f"belief dim {posterior.dim} != N_local {node.N_local}")
    A = node.A_local
    return GaussianBelief(A @ posterior.mean, predict_cov(posterior.cov, A, sigma_v2), "prior")


def measurement_update(prior: GaussianBelief, meas: StackedMeasurement):
    """Kalman measurement update; returns ``(posterior, gain)``."""
    H = meas.H_stacked
    if H.shape[1] != prior.dim or H.shape[0] != meas.values.shape[0]:
        raise DimensionMismatch(f"H {H.shape}, prior {prior.dim}, y {meas.values.shape}")
    G, P_post, _ = gain_and_update(prior.cov, H, meas.R)
    mean = prior.mean + G @ (meas.values - H @ prior.mean)
    return GaussianBelief(mean, P_post, "posterior"), G


def process_for_neighbor(
    sender: LocalNodeModel,
    recipient_id: int,
    local_meas: np.ndarray,
    prior: GaussianBelief,
    timestep: int = 0,
) -> ProcessedMeasurement:
    """Shared rows of the sender's measurements minus the foreign-state prediction."""
    link = sender.links_out.get(recipient_id)
    if link is None:
        raise NotANeighbor(f"node {recipient_id} is not a neighbor of node {sender.node_id}")
    shared = np.asarray(local_meas)[link.sender_rows]
    values = shared - link.H_foreign @ prior.mean[link.foreign_state_indices]
    return ProcessedMeasurement(sender.node_id, recipient_id, timestep, values)


def delta_covariance(sender_prior_cov, H_foreign, sigma_w2, K_shared):
    """Noise covariance of one processed measurement block."""
    P = np.asarray(sender_prior_cov)
    if H_foreign.shape != (K_shared, P.shape[0]) or P.shape[0] != P.shape[1]:
        raise DimensionMismatch(f"H_foreign {H_foreign.shape}, P {P.shape}, K {K_shared}")
    return _sym(H_foreign @ P @ H_foreign.T + sigma_w2 * np.eye(K_shared))


def foreign_prior_block(link, sender_prior_cov):
    idx = link.foreign_state_indices
    return sender_prior_cov[np.ix_(idx, idx)]


def strict_cross_blocks(node: LocalNodeModel, locals_by_id, priors_by_id):
    """Cross blocks from the covariance entries of foreign states shared by both senders.

    Neither sender tracks the joint error of the other's estimate, so each
    shared entry is approximated by the mean of the two senders' own
    covariance entries. Entries involving states held by only one of the
    two senders stay zero.
    """
    blocks = {}
    nb = node.neighbors
    for a, i in enumerate(nb):
        for j in nb[a + 1:]:
            li, lj = node.links_in[i], node.links_in[j]
            common = np.intersect1d(li.foreign_global, lj.foreign_global)
            C = np.zeros((li.foreign_global.size, lj.foreign_global.size))
            if common.size:
                pi = np.searchsorted(li.foreign_global, common)
                pj = np.searchsorted(lj.foreign_global, common)
                si = np.searchsorted(locals_by_id[i].state_indices, common)
                sj = np.searchsorted(locals_by_id[j].state_indices, common)
                Pi = priors_by_id[i][np.ix_(si, si)]
                Pj = priors_by_id[j][np.ix_(sj, sj)]
                C[np.ix_(pi, pj)] = 0.5 * (Pi + Pj)
            blocks[(i, j)] = li.H_foreign @ C @ lj.H_foreign.T
    return blocks


def assemble_R(node: LocalNodeModel, deltas, sigma_w2, cross_blocks=None):
    """Block noise covariance of the stacked local + processed measurement vector."""
    for j in node.neighbors:
        if j not in deltas:
            raise MissingDelta(f"node {node.node_id} has no delta for neighbor {j}")
    sizes = node.stacked_sizes
    offs = np.concatenate([[0], np.cumsum(sizes)])
    R = np.zeros((offs[-1], offs[-1]))
    R[: sizes[0], : sizes[0]] = sigma_w2 * np.eye(sizes[0])
    for b, j in enumerate(node.neighbors, start=1):
        D = deltas[j]
        if D.shape != (sizes[b], sizes[b]):
            raise DimensionMismatch(f"delta for neighbor {j} has shape {D.shape}")
        R[offs[b]:offs[b + 1], offs[b]:offs[b + 1]] = D
    if cross_blocks:
        pos = {j: b for b, j in enumerate(node.neighbors, start=1)}
        for (i, j), C in cross_blocks.items():
            bi, bj = pos[i], pos[j]
            R[offs[bi]:offs[bi + 1], offs[bj]:offs[bj + 1]] = C
            R[offs[bj]:offs[bj + 1], offs[bi]:offs[bi + 1]] = C.T
    return _sym(R)


def stack_measurement(node: LocalNodeModel, timestep, y_local, processed, R) -> StackedMeasurement:
    parts = [np.asarray(y_local, dtype=np.float64)]
    for j in node.neighbors:
        pm = processed[j]
        if pm.dimension != node.links_in[j].n_rows:
            raise DimensionMismatch(f"processed measurement from {j} has {pm.dimension} rows")
        parts.append(pm.values)
    return StackedMeasurement(node.node_id, timestep, np.concatenate(parts), node.H_stacked, R)


@dataclass(frozen=True, eq=False)
class ScheduleEntry:
    P_prior: np.ndarray
    P_post: np.ndarray
    G: np.ndarray
    R: np.ndarray
    S: np.ndarray
    H_stacked: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)


class CovarianceSchedule:
    """Offline covariance recursion for every node, extended lazily in ``t``.

    Step ``t`` depends only on the posterior covariances of step ``t-1``.
    The recursion settles to a fixed point up to last-bit jitter; once the
    largest posterior change relative to the largest entry drops to
    ``freeze_tol`` the step is frozen and reused for every later ``t``
    (``converged_at``). ``freeze_tol=None`` freezes only on an exact repeat.
    """

    def __init__(
        self,
        model: GlobalSystemModel,
        locals_: list[LocalNodeModel],
        initial_covs=None,
        cross_policy: str = "zero",
        freeze_tol: float | None = 1e-13,
    ):
        if cross_policy not in ("zero", "strict"):
            raise ValueError(f"unknown cross_policy {cross_policy!r}")
        self.model = model
        self.locals = list(locals_)
        self.by_id = {n.node_id: n for n in self.locals}
        self.cross_policy = cross_policy
        self.freeze_tol = freeze_tol
        if initial_covs is None:
            initial_covs = {n.node_id: model.sigma_v2 * np.eye(n.N_local) for n in self.locals}
        self.initial = {k: np.array(v, dtype=np.float64) for k, v in initial_covs.items()}
        self._H = {n.node_id: n.H_stacked for n in self.locals}
        self._steps: list[dict[int, ScheduleEntry]] = []
        self.converged_at: int | None = None

    @property
    def computed(self) -> int:
        return len(self._steps)

    def posterior_cov(self, node_id, t):
        if t == 0:
            return self.initial[node_id]
        return self.entry(node_id, t).P_post

    def _step(self, prev_post):
        m = self.model
        priors = {
            n.node_id: predict_cov(prev_post[n.node_id], n.A_local, m.sigma_v2) for n in self.locals
        }
        out = {}
        for n in self.locals:
            deltas = {}
            for j in n.neighbors:
                link = n.links_in[j]
                deltas[j] = delta_covariance(
                    foreign_prior_block(link, priors[j]), link.H_foreign, m.sigma_w2, link.n_rows
                )
            cross = None
            if self.cross_policy == "strict":
                cross = strict_cross_blocks(n, self.by_id, priors)
            R = assemble_R(n, deltas, m.sigma_w2, cross)
            H = self._H[n.node_id]
            G, P_post, S = gain_and_update(priors[n.node_id], H, R)
            out[n.node_id] = ScheduleEntry(priors[n.node_id], P_post, G, R, S, H)
        return out

    def extend(self, T: int):
        if T < 1:
            raise ValueError("horizon must be >= 1")
        while self.converged_at is None and len(self._steps) < T:
            if self._steps:
                prev = {k: e.P_post for k, e in self._steps[-1].items()}
            else:
                prev = self.initial
            step = self._step(prev)
            if self._steps and self._settled(step, self._steps[-1]):
                self.converged_at = len(self._steps)
                break
            self._steps.append(step)
        return self

    def _settled(self, new, old):
        if self.freeze_tol is None:
            return all(
                np.array_equal(new[k].P_post, old[k].P_post) and np.array_equal(new[k].G, old[k].G)
                for k in new
            )
        for k in new:
            scale = np.max(np.abs(old[k].P_post))
            if np.max(np.abs(new[k].P_post - old[k].P_post)) > self.freeze_tol * scale:
                return False
        return True

    def entry(self, node_id: int, t: int) -> ScheduleEntry:
        if t < 1:
            raise ValueError("schedule entries start at t = 1")
        if t > len(self._steps):
            self.extend(t)
        k = min(t, len(self._steps))
        return self._steps[k - 1][node_id]

    def whitener(self, node_id: int, t: int, kind: str):
        """Inverse Cholesky factor ``W`` with ``W Sigma W^T = I`` for a cached covariance.

        ``kind`` is ``"local"`` (local residual covariance), ``"innovation"``
        (stacked innovation covariance) or ``"evolution"`` (published-estimate
        increment covariance).
        """
        e = self.entry(node_id, t)
        key = ("W", kind)
        if key not in e._cache:
            e._cache[key] = _inverse_cholesky(self.covariance(node_id, t, kind))
        return e._cache[key]

    def covariance(self, node_id: int, t: int, kind: str):
        e = self.entry(node_id, t)
        if kind in e._cache:
            return e._cache[kind]
        n = self.by_id[node_id]
        if kind == "local":
            C = local_residual_cov(n, e.P_prior, self.model.sigma_w2)
        elif kind == "innovation":
            C = e.S
        elif kind == "evolution":
            from .trust import evolution_covariance

            C = evolution_covariance(e)
        else:
            raise ValueError(kind)
        e._cache[kind] = C
        return C


def local_residual_cov(node: LocalNodeModel, P_prior, sigma_w2):
    H = node.H_local
    return _sym(H @ P_prior @ H.T + sigma_w2 * np.eye(node.K_local))


def _inverse_cholesky(C, ridge=0.0):
    C = C + ridge * np.eye(C.shape[0]) if ridge else C
    Lc = np.linalg.cholesky(C)
    return linalg.solve_triangular(Lc, np.eye(C.shape[0]), lower=True)


def compute_covariance_schedule(model, locals_, T: int, **kw) -> CovarianceSchedule:
    return CovarianceSchedule(model, locals_, **kw).extend(T)


class DistributedFilter:
    """All nodes' filters for one trajectory, driven step by step.

    Gains and covariances are read from a :class:`CovarianceSchedule`, so
    every node (and every evaluator re-deriving them) uses identical
    numbers. Up to the schedule's freeze point these equal what
    ``predict``/``measurement_update`` produce online, bit for bit.
    """

    def __init__(self, model, locals_, initial_means, schedule: CovarianceSchedule | None = None):
        self.model = model
        self.locals = list(locals_)
        self.by_id = {n.node_id: n for n in self.locals}
        self.schedule = schedule if schedule is not None else CovarianceSchedule(model, self.locals)
        self.t = 0
        self.posterior = {
            n.node_id: GaussianBelief(
                np.array(initial_means[n.node_id], dtype=np.float64),
                self.schedule.posterior_cov(n.node_id, 0),
            )
            for n in self.locals
        }
        self.prior: dict[int, GaussianBelief] = {}

    def predict_all(self):
        """Advance to the next timestep and return every node's prior."""
        self.t += 1
        self.prior = {}
        for n in self.locals:
            e = self.schedule.entry(n.node_id, self.t)
            mean = n.a_diag * self.posterior[n.node_id].mean
            self.prior[n.node_id] = GaussianBelief(mean, e.P_prior, "prior")
        return self.prior

    def exchange(self, y_by_node):
        """Processed measurements keyed by ``(recipient, sender)``."""
        out = {}
        for n in self.locals:
            for r in n.links_out:
                out[(r, n.node_id)] = process_for_neighbor(
                    n, r, y_by_node[n.node_id], self.prior[n.node_id], self.t
                )
        return out

    def inbox(self, node_id, processed):
        return {j: processed[(node_id, j)] for j in self.by_id[node_id].neighbors}

    def update_node(self, node_id: int, y_local, inbox):
        node = self.by_id[node_id]
        e = self.schedule.entry(node_id, self.t)
        meas = stack_measurement(node, self.t, y_local, inbox, e.R)
        prior = self.prior[node_id]
        mean = prior.mean + e.G @ (meas.values - e.H_stacked @ prior.mean)
        post = GaussianBelief(mean, e.P_post, "posterior")
        self.posterior[node_id] = post
        return post

    def hold_prior(self, node_id: int):
        """Skip the measurement update: the posterior is the predicted mean."""
        e = self.schedule.entry(node_id, self.t)
        post = GaussianBelief(self.prior[node_id].mean.copy(), e.P_post, "posterior")
        self.posterior[node_id] = post
        return post

    def set_mean(self, node_id: int, mean):
        old = self.posterior[node_id]
        self.posterior[node_id] = GaussianBelief(np.array(mean, dtype=np.float64), old.cov, old.tag)
