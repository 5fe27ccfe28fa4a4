"""Independent reference computations used to freeze expected values."""
import math

import numpy as np


def lambert_w_bisect(z, tol=1e-15):
    """Principal-branch W by bisection on w*exp(w) - z over [-1, max(1, log(z+1)+1)]."""
    lo, hi = -1.0, max(1.0, math.log1p(max(z, 0.0)) + 1.0)
    f = lambda w: w * math.exp(w) - z
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def threshold_oracle(alpha, L):
    la = math.log(alpha)
    return math.log(L) / (1.0 - lambert_w_bisect(alpha * la) / la)


def chi2_cdf_quad(x, k):
    """Quadrature of the chi-squared density after s = u**2, which removes the k = 1 singularity."""
    from scipy import integrate, special

    c = -(k / 2) * math.log(2) - special.gammaln(k / 2)
    f = lambda u: 2.0 * math.exp(c + (k - 1) * math.log(u) - u * u / 2) if u > 0 else (2.0 * math.exp(c) if k == 1 else 0.0)
    val, _ = integrate.quad(f, 0.0, math.sqrt(x), epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def kalman_explicit(mean, P, A, Q, H, R, y):
    """One predict/update pair with explicit matrix inverses."""
    m = A @ mean
    Pp = A @ P @ A.T + Q
    S = H @ Pp @ H.T + R
    G = Pp @ H.T @ np.linalg.inv(S)
    return m + G @ (y - H @ m), Pp - G @ H @ Pp, Pp, G


def processed_direct(model, sender_sensors, recipient_states, sender_states, y_global, xhat_sender):
    """Shared sender rows minus the part explained by states the recipient lacks."""
    H = model.H
    rows = [k for k in sender_sensors if np.any(H[k, recipient_states] != 0)]
    foreign = [s for s in sender_states if s not in set(recipient_states)]
    out = []
    for k in rows:
        acc = y_global[k]
        for s in foreign:
            pos = list(sender_states).index(s)
            acc -= H[k, s] * xhat_sender[pos]
        out.append(acc)
    return np.array(out)
