"""Centralized reference filters: plain Kalman and outlier-rejecting Kalman."""
from __future__ import annotations

import numpy as np

from ..detection import chi_squared_sf
from ..estimator import GaussianBelief, _inverse_cholesky, gain_and_update, predict_cov
from ..model import GlobalSystemModel

ROBUST_ALPHA = 0.01


class CentralizedSchedule:
    """Riccati recursion of the global filter, frozen once it settles (like the node schedules)."""

    def __init__(self, model: GlobalSystemModel, P0=None, freeze_tol: float = 1e-13):
        self.model = model
        n = model.state_dim
        self.P0 = model.sigma_v2 * np.eye(n) if P0 is None else np.array(P0, dtype=np.float64)
        self.R = model.sigma_w2 * np.eye(model.n_sensors)
        self.freeze_tol = freeze_tol
        self._steps = []
        self.converged_at = None

    def _step(self, P_post):
        m = self.model
        P_prior = predict_cov(P_post, m.A, m.sigma_v2)
        G, P_new, S = gain_and_update(P_prior, m.H, self.R)
        return {"P_prior": P_prior, "P_post": P_new, "G": G, "S": S}

    def entry(self, t: int) -> dict:
        if t < 1:
            raise ValueError("schedule entries start at t = 1")
        while self.converged_at is None and len(self._steps) < t:
            prev = self._steps[-1]["P_post"] if self._steps else self.P0
            step = self._step(prev)
            if self._steps:
                old = self._steps[-1]["P_post"]
                if np.max(np.abs(step["P_post"] - old)) <= self.freeze_tol * np.max(np.abs(old)):
                    self.converged_at = len(self._steps)
                    break
            self._steps.append(step)
        return self._steps[min(t, len(self._steps)) - 1]

    def whitener(self, t: int):
        e = self.entry(t)
        if "W" not in e:
            e["W"] = _inverse_cholesky(e["S"])
        return e["W"]

    def posterior_cov(self, t: int):
        return self.P0 if t == 0 else self.entry(t)["P_post"]


def centralized_kalman_step(belief: GaussianBelief, model: GlobalSystemModel, y) -> GaussianBelief:
    """One prediction + update of the global Kalman filter."""
    P_prior = predict_cov(belief.cov, model.A, model.sigma_v2)
    mean_prior = model.a_diag * belief.mean if _is_diag(model.A) else model.A @ belief.mean
    G, P_post, _ = gain_and_update(P_prior, model.H, model.sigma_w2 * np.eye(model.n_sensors))
    mean = mean_prior + G @ (np.asarray(y, dtype=np.float64) - model.H @ mean_prior)
    return GaussianBelief(mean, P_post, "posterior")


def robust_kalman_step(
    belief: GaussianBelief, model: GlobalSystemModel, y, outlier_alpha: float = ROBUST_ALPHA
):
    """Global Kalman step that swaps ``y`` for ``H xhat_prior`` when its p-value is below ``outlier_alpha``.

    Returns ``(posterior, rejected)``. The pseudo measurement zeroes the
    innovation and carries no information, so a rejected step keeps the
    prior covariance.
    """
    P_prior = predict_cov(belief.cov, model.A, model.sigma_v2)
    mean_prior = model.a_diag * belief.mean if _is_diag(model.A) else model.A @ belief.mean
    G, P_post, S = gain_and_update(P_prior, model.H, model.sigma_w2 * np.eye(model.n_sensors))
    r = np.asarray(y, dtype=np.float64) - model.H @ mean_prior
    chi = float(r @ np.linalg.solve(S, r))
    rejected = chi_squared_sf(chi, model.n_sensors) < outlier_alpha
    if rejected:
        return GaussianBelief(mean_prior, P_prior, "posterior"), True
    return GaussianBelief(mean_prior + G @ r, P_post, "posterior"), False


def _is_diag(A):
    return not np.any(A - np.diag(np.diag(A)))
