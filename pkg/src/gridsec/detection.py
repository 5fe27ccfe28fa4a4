"""Sequential anomaly detection: chi-squared evidence, CUSUM-like test, calibration."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import erfc

from .errors import AlreadyAlarmed, InvalidAlpha, OutOfDomain, SingularSigma

P_FLOOR = 1e-300
INV_E = math.exp(-1.0)
_EPS = 1e-16
_MAX_ITER = 1000


def chi_statistic(residual, Sigma) -> float:
    """Quadratic form ``r^T Sigma^{-1} r`` through a Cholesky factor."""
    r = np.asarray(residual, dtype=np.float64)
    S = np.asarray(Sigma, dtype=np.float64)
    if S.shape != (r.size, r.size):
        raise SingularSigma(f"Sigma shape {S.shape} does not match residual length {r.size}")
    if r.size == 0:
        return 0.0
    try:
        Lc = linalg.cholesky(S, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSigma(str(exc)) from exc
    z = linalg.solve_triangular(Lc, r, lower=True)
    return float(z @ z)


def _gamma_series(a, x):
    # lower regularized P(a, x) by its power series; good for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a, x):
    # upper regularized Q(a, x) by modified Lentz continued fraction; x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("shape must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_cf(a, x))


def regularized_gamma_q(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("shape must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return min(1.0, _gamma_cf(a, x))


def chi_squared_cdf(x: float, k: int) -> float:
    if x < 0:
        raise ValueError("chi-squared argument must be nonnegative")
    return regularized_gamma_p(0.5 * k, 0.5 * x)


def chi_squared_sf(x, k: int):
    """Right-tail probability ``1 - F_k(x)`` for integer ``k``, vectorized over ``x``.

    Uses the finite Poisson-sum form (even ``k``) or ``erfc`` plus a finite
    sum (odd ``k``); every term is positive so tiny tails keep full
    relative precision instead of cancelling to zero.
    """
    k = int(k)
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    half = 0.5 * x
    e = np.exp(-half)
    if k % 2 == 0:
        term = np.ones_like(half)
        total = term.copy()
        for i in range(1, k // 2):
            term = term * half / i
            total = total + term
        out = e * total
    else:
        root = np.sqrt(half)
        out = erfc(root)
        if k > 1:
            term = root / (0.5 * math.sqrt(math.pi))
            total = term.copy()
            for i in range(1, (k - 1) // 2):
                term = term * half / (i + 0.5)
                total = total + term
            out = out + e * total
    return out if out.ndim else float(out)


def evidence(chi, k: int, alpha: float, p_floor: float = P_FLOOR):
    """Log ratio ``log(alpha / p)``; positive exactly when the p-value is below ``alpha``."""
    p = np.maximum(chi_squared_sf(chi, k), p_floor)
    out = np.log(alpha / p)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class DetectorState:
    """One CUSUM-like test: statistic, change-point estimate and calibration."""

    alpha: float
    h: float
    g: float = 0.0
    tau_hat: int = 0
    alarmed_at: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < INV_E:
            raise InvalidAlpha(f"alpha must lie in (0, 1/e), got {self.alpha}")
        if not self.h >= 0.0:
            raise ValueError("threshold must be nonnegative")

    @property
    def alarmed(self) -> bool:
        return self.alarmed_at is not None


def cusum_step(state: DetectorState, ev: float, t: int) -> DetectorState:
    if state.alarmed:
        raise AlreadyAlarmed(f"detector already alarmed at t={state.alarmed_at}")
    g = max(0.0, state.g + ev)
    tau_hat = t if g == 0.0 else state.tau_hat
    alarmed_at = t if g >= state.h else None
    return replace(state, g=g, tau_hat=tau_hat, alarmed_at=alarmed_at)


def restart(state: DetectorState, t: int) -> DetectorState:
    return replace(state, g=0.0, tau_hat=t, alarmed_at=None)


def lambert_w0(z: float) -> float:
    """Principal branch of the Lambert W function for real ``z >= -1/e``."""
    z = float(z)
    branch = -INV_E
    if z < branch - 1e-12:
        raise OutOfDomain(f"W0 undefined for z < -1/e (z = {z})")
    if z <= branch:
        return -1.0
    if z == 0.0:
        return 0.0
    if z == math.inf:
        return math.inf
    # starting points: branch-point series, small-z series, asymptotic log form
    if z < -0.25:
        p = math.sqrt(2.0 * (math.e * z + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif z < 3.0:
        w = z * (1.0 - z + 1.5 * z * z) if abs(z) < 0.1 else math.log1p(z)
    else:
        lz = math.log(z)
        w = lz - math.log(lz)
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        # Halley step
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_new = w - step
        if w_new <= -1.0:
            w_new = 0.5 * (w - 1.0)  # stay on the principal branch
        if abs(w_new - w) <= 1e-15 * (1.0 + abs(w_new)):
            w = w_new
            break
        w = w_new
    return w


def threshold_for_false_alarm(alpha: float, L_target: float) -> float:
    """Smallest threshold whose false-alarm period is guaranteed to be at least ``L_target``."""
    if not 0.0 < alpha < INV_E:
        raise InvalidAlpha(f"alpha must lie in (0, 1/e), got {alpha}")
    if not L_target >= 1.0:
        raise ValueError("L_target must be >= 1")
    la = math.log(alpha)
    w = lambert_w0(alpha * la)
    return math.log(L_target) / (1.0 - w / la)


def recover_state(mean_at_tau, A_local, t: int, tau_hat: int) -> np.ndarray:
    """Propagate a stored estimate ``t - tau_hat`` steps through a diagonal transition."""
    if t < tau_hat:
        raise ValueError("recovery time precedes the change point")
    A = np.asarray(A_local, dtype=np.float64)
    a = np.diag(A) if A.ndim == 2 else A
    return (a ** (t - tau_hat)) * np.asarray(mean_at_tau, dtype=np.float64)
