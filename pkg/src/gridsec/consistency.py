"""Exact error statistics of the distributed filter.

Each node's filter assumes its prior error is uncorrelated with the
errors hidden in its neighbors' processed measurements. That is not true
on a meshed grid, so the schedule covariances are only nominal. With all
gains fixed by the schedule, the joint error of every node's estimate is
a linear recursion driven by the process and measurement noise, and its
covariance can be propagated exactly. This gives the true steady-state
MSE and the true covariance behind each detector statistic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import CovarianceSchedule, local_residual_cov
from .model import GlobalSystemModel, LocalNodeModel
from .simnet.baselines import CentralizedSchedule


@dataclass(frozen=True)
class NodeConsistency:
    node_id: int
    mse_true: float  # trace of the true posterior error covariance
    mse_nominal: float  # trace of the schedule posterior covariance
    mse_centralized: float  # centralized posterior trace on the node's states
    chi_weights: np.ndarray  # eigenvalues of Sigma_nominal^-1 Sigma_true (local residual)
    pi_weights: np.ndarray  # same for the published-estimate increment


@dataclass(frozen=True)
class ConsistencyReport:
    t: int
    nodes: tuple
    joint_post: np.ndarray
    joint_prior: np.ndarray

    @property
    def ratio_to_centralized(self) -> float:
        return sum(n.mse_true for n in self.nodes) / sum(n.mse_centralized for n in self.nodes)

    @property
    def ratio_to_nominal(self) -> float:
        return sum(n.mse_true for n in self.nodes) / sum(n.mse_nominal for n in self.nodes)


def _offsets(locals_):
    return np.concatenate([[0], np.cumsum([n.N_local for n in locals_])]).astype(int)


def innovation_map(model: GlobalSystemModel, locals_, node_index: int):
    """Matrices ``(J, W)`` with stacked innovation ``= J e_prior + W w`` for one node."""
    offs = _offsets(locals_)
    n = locals_[node_index]
    rows = sum(n.stacked_sizes)
    J = np.zeros((rows, offs[-1]))
    W = np.zeros((rows, model.n_sensors))
    mine = slice(offs[node_index], offs[node_index + 1])
    J[: n.K_local, mine] = n.H_local
    W[np.arange(n.K_local), n.sensor_indices] = 1.0
    r0 = n.K_local
    pos = {m.node_id: i for i, m in enumerate(locals_)}
    for j in n.neighbors:
        link = n.links_in[j]
        k = link.n_rows
        J[r0:r0 + k, mine] = link.H_shared
        J[r0:r0 + k, offs[pos[j]] + link.foreign_state_indices] += link.H_foreign
        W[r0 + np.arange(k), link.sensors] = 1.0
        r0 += k
    return J, W


def _weights(nominal, true):
    Lc = np.linalg.cholesky(nominal)
    Li = np.linalg.inv(Lc)
    M = Li @ true @ Li.T
    return np.linalg.eigvalsh(0.5 * (M + M.T))


def analyze(
    model: GlobalSystemModel,
    locals_: list[LocalNodeModel],
    schedule: CovarianceSchedule | None = None,
    T: int = 300,
) -> ConsistencyReport:
    """Propagate the joint error covariance of all node estimates for ``T`` steps."""
    schedule = schedule or CovarianceSchedule(model, locals_)
    offs = _offsets(locals_)
    D = offs[-1]
    n = model.state_dim
    sel = np.zeros((D, n))
    for i, node in enumerate(locals_):
        sel[offs[i] + np.arange(node.N_local), node.state_indices] = 1.0
    a = np.concatenate([node.a_diag for node in locals_])
    Q = model.sigma_v2 * sel @ sel.T
    maps = [innovation_map(model, locals_, i) for i in range(len(locals_))]
    C = Q.copy()  # shared initial perturbation gives the same correlation pattern
    Cp = C
    for t in range(1, T + 1):
        Cp = (a[:, None] * C * a[None, :]) + Q
        F = np.eye(D)
        Mw = np.zeros((D, model.n_sensors))
        for i, node in enumerate(locals_):
            G = schedule.entry(node.node_id, t).G
            J, W = maps[i]
            F[offs[i]:offs[i + 1]] -= G @ J
            Mw[offs[i]:offs[i + 1]] = -G @ W
        C = F @ Cp @ F.T + model.sigma_w2 * Mw @ Mw.T
        C = 0.5 * (C + C.T)

    cen = CentralizedSchedule(model).posterior_cov(T)
    nodes = []
    for i, node in enumerate(locals_):
        e = schedule.entry(node.node_id, T)
        sl = slice(offs[i], offs[i + 1])
        chi_nom = local_residual_cov(node, e.P_prior, model.sigma_w2)
        chi_true = local_residual_cov(node, Cp[sl, sl], model.sigma_w2)
        J, W = maps[i]
        S_true = J @ Cp @ J.T + model.sigma_w2 * W @ W.T
        psi_nom = e.G @ e.S @ e.G.T
        psi_true = e.G @ S_true @ e.G.T
        idx = node.state_indices
        nodes.append(
            NodeConsistency(
                node_id=node.node_id,
                mse_true=float(np.trace(C[sl, sl])),
                mse_nominal=float(np.trace(e.P_post)),
                mse_centralized=float(np.trace(cen[np.ix_(idx, idx)])),
                chi_weights=_weights(chi_nom, chi_true),
                pi_weights=_weights(0.5 * (psi_nom + psi_nom.T), psi_true),
            )
        )
    return ConsistencyReport(T, tuple(nodes), C, Cp)


def pvalue_ks_distance(weights, n_samples: int = 400_000, seed: int = 0) -> float:
    """Monte-Carlo sup-distance between the p-value law and Uniform[0,1].

    The statistic is ``sum(weights * z**2)`` but is scored as if it were
    chi-squared with ``len(weights)`` degrees of freedom.
    """
    from .detection import chi_squared_sf

    rng = np.random.default_rng(seed)
    w = np.asarray(weights, dtype=np.float64)
    q = (rng.standard_normal((n_samples, w.size)) ** 2) @ w
    p = np.sort(chi_squared_sf(q, w.size))
    grid = np.arange(1, n_samples + 1) / n_samples
    return float(max(np.max(grid - p), np.max(p - (grid - 1.0 / n_samples))))
