"""Vectorized Monte-Carlo engine: many seeded trials of one scenario at once.

Numerically this follows :func:`gridsec.simnet.engine.run` trial by trial
(same random streams, schedule gains, detectors and recovery rule) but
skips signatures and mining, keeps the last ``M`` published estimates in
a ring buffer instead of a hash chain, and runs a single trust detector
per target, since all honest evaluators compute identical statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..detection import chi_squared_sf, evidence
from ..estimator import CovarianceSchedule
from ..model import build_local_models
from .baselines import CentralizedSchedule
from .engine import ESTIMATORS
from .rng import make_streams
from .scenario import Scenario

_CHUNK = 256


@dataclass
class BatchResult:
    seeds: np.ndarray
    T: int
    gamma_net: np.ndarray  # (B,) first alarm of any detector, inf if none
    meas_alarm_at: np.ndarray  # (B, L) first measurement alarm per node
    trust_alarm_at: np.ndarray  # (B, L) first honest-evaluator alarm per target
    declared_at: np.ndarray  # (B, L) first network declaration per target
    t_R: np.ndarray  # (B,) recovery point of the first alarm, -1 if none
    fallback: np.ndarray  # (B,) pruned-ledger fallback used
    t_end: np.ndarray  # (B,) last recorded step
    mse: dict = field(default_factory=dict)  # estimator -> (B, T+1)
    mse_nodes: np.ndarray | None = None  # (B, T+1, L)
    chi: np.ndarray | None = None  # (B, T+1, L)
    pi: np.ndarray | None = None  # (B, T+1, L)
    estimates: dict | None = None  # node -> (B, T+1, N)

    @property
    def B(self) -> int:
        return self.seeds.size


def _draw_chunks(gens, t0, steps, width, kind):
    if width == 0:
        return np.zeros((len(gens), steps, 0))
    if kind == "normal":
        return np.stack([g.standard_normal((steps, width)) for g in gens])
    return np.stack([g.random((steps, width)) for g in gens])


def run_batch(
    scenario: Scenario,
    seeds,
    stop_at_alarm: bool = False,
    record_mse: bool = True,
    record_stats: bool = False,
    record_estimates: bool = False,
) -> BatchResult:
    """Simulate one trial per seed. ``stop_at_alarm`` ends each trial at its first alarm."""
    sc = scenario
    m = sc.model
    locals_ = build_local_models(m)
    ids = [nd.node_id for nd in locals_]
    L, T, n, K = len(ids), sc.T, m.state_dim, m.n_sensors
    seeds = np.asarray(seeds, dtype=np.uint64)
    B = seeds.size
    a = m.a_diag
    h = sc.threshold
    alpha = sc.alpha
    sv, sw = math.sqrt(m.sigma_v2), math.sqrt(m.sigma_w2)
    Ht = m.H.T.copy()

    sched = CovarianceSchedule(m, locals_, cross_policy=sc.cross_policy)
    cen = CentralizedSchedule(m)
    streams = [make_streams(int(s)) for s in seeds]
    truth = [s.truth for s in streams]
    attack = [s.attack for s in streams]
    xhat0 = m.x0[None, :] + sv * np.stack([s.init.standard_normal(n) for s in streams])

    width = K * len(sc.attacks) + (K + n) * len(sc.misbehaviors)
    attack_rows = [
        np.concatenate([np.asarray(m.partition[i - 1], dtype=np.intp) for i in spec.targets])
        for spec in sc.attacks
    ]
    mis = list(sc.misbehaviors)
    mis_off = [K * len(sc.attacks) + s * (K + n) for s in range(len(mis))]
    hacked = {spec.node_id: (s, spec) for s, spec in enumerate(mis)}

    # per-node constants
    Hs = {nd.node_id: nd.H_stacked.T.copy() for nd in locals_}
    Hl = {nd.node_id: nd.H_local.T.copy() for nd in locals_}
    links = {nd.node_id: [nd.links_in[j] for j in nd.neighbors] for nd in locals_}
    aL = {nd.node_id: nd.a_diag for nd in locals_}
    idx = {nd.node_id: nd.state_indices for nd in locals_}

    xh = {i: xhat0[:, idx[i]].copy() for i in ids}
    xn = {i: xhat0[:, idx[i]].copy() for i in ids}
    xc = xhat0.copy()
    xr = xhat0.copy()
    Pr = np.broadcast_to(cen.P0, (B, n, n)).copy()
    HtH = m.H.T @ m.H / m.sigma_w2
    x = np.broadcast_to(m.x0, (B, n)).copy()

    M = sc.M
    ring = {i: np.zeros((M, B, xh[i].shape[1])) for i in ids}
    for i in ids:
        ring[i][0] = xh[i]
    frozen = {}

    g_m = np.zeros((B, L))
    tau_m = np.zeros((B, L), dtype=np.int64)
    alarmed_m = np.zeros((B, L), dtype=bool)
    g_t = np.zeros((B, L))
    tau_t = np.zeros((B, L), dtype=np.int64)
    alarmed_t = np.zeros((B, L), dtype=bool)
    vote_latch = np.zeros((B, L, L), dtype=bool)  # evaluator x target
    declared = np.zeros((B, L), dtype=bool)

    inf = math.inf
    gamma_net = np.full(B, inf)
    meas_alarm_at = np.full((B, L), inf)
    trust_alarm_at = np.full((B, L), inf)
    declared_at = np.full((B, L), inf)
    t_R = np.full(B, -1, dtype=np.int64)
    fallback = np.zeros(B, dtype=bool)
    t_end = np.full(B, T, dtype=np.int64)
    inv_until = np.full(B, -1, dtype=np.int64)
    active = np.ones(B, dtype=bool)

    nan = np.nan
    mse = {k: np.full((B, T + 1), nan) for k in ESTIMATORS} if record_mse else {}
    mse_nodes = np.full((B, T + 1, L), nan) if record_mse else None
    chi_rec = np.full((B, T + 1, L), nan) if record_stats else None
    pi_rec = np.full((B, T + 1, L), nan) if record_stats else None
    est_rec = {i: np.full((B, T + 1, xh[i].shape[1]), nan) for i in ids} if record_estimates else None

    def node_terms(xx, est_by):
        return np.stack([np.sum((xx[:, idx[i]] - est_by[i]) ** 2, axis=1) for i in ids], axis=1)

    def record(t, rows):
        if record_mse:
            terms = node_terms(x, xh)
            mse_nodes[rows, t] = terms[rows]
            mse["proposed"][rows, t] = terms[rows].sum(axis=1)
            mse["centralized"][rows, t] = node_terms(x, {i: xc[:, idx[i]] for i in ids})[rows].sum(axis=1)
            mse["robust"][rows, t] = node_terms(x, {i: xr[:, idx[i]] for i in ids})[rows].sum(axis=1)
            if sc.baselines.nominal:
                mse["nominal"][rows, t] = node_terms(x, xn)[rows].sum(axis=1)
        if record_estimates:
            for i in ids:
                est_rec[i][rows, t] = xh[i][rows]

    record(0, np.ones(B, dtype=bool))

    n_honest_eval = {
        l: [j for j in ids if j != l] for l in ids
    }
    noise = upool = None
    for t in range(1, T + 1):
        if not active.any():
            break
        c = (t - 1) % _CHUNK
        if c == 0:
            steps = min(_CHUNK, T - t + 1)
            noise = _draw_chunks(truth, t, steps, n + K, "normal")
            upool = _draw_chunks(attack, t, steps, width, "uniform")
        z = noise[:, c]
        u = upool[:, c]
        x = a * x + sv * z[:, :n]
        y = x @ Ht + sw * z[:, n:]
        for s, spec in enumerate(sc.attacks):
            if t >= spec.onset and spec.magnitude > 0:
                rows = attack_rows[s]
                y[:, rows] += spec.magnitude * u[:, s * K + rows]
        for s, spec in enumerate(mis):
            if spec.behavior == "silent-fdi" and t >= spec.onset and spec.magnitude > 0:
                rows = np.asarray(m.partition[spec.node_id - 1], dtype=np.intp)
                y[:, rows] += spec.magnitude * u[:, mis_off[s] + rows]
        y_by = {nd.node_id: y[:, nd.sensor_indices] for nd in locals_}
        investigating = t <= inv_until

        # baselines only feed the MSE tables
        if record_mse:
            ce = cen.entry(t)
            Gc = ce["G"].T
            xc = a * xc
            xc = xc + (y - xc @ Ht) @ Gc
            # robust filter: each trial has its own covariance, a rejection keeps the prior
            Pp = a[None, :, None] * Pr * a[None, None, :] + m.sigma_v2 * np.eye(n)
            # information form: two n x n inverses instead of a K x K solve
            Pu = np.linalg.inv(np.linalg.inv(Pp) + HtH)
            Pu = 0.5 * (Pu + Pu.transpose(0, 2, 1))
            xr = a * xr
            rr = y - xr @ Ht
            Hr = rr @ m.H
            PHr = (Pu @ Hr[:, :, None])[:, :, 0]
            chi_r = (np.sum(rr * rr, axis=1) - np.sum(Hr * PHr, axis=1) / m.sigma_w2) / m.sigma_w2
            reject = chi_squared_sf(chi_r, K) < sc.outlier_alpha
            xr = np.where(reject[:, None], xr, xr + PHr / m.sigma_w2)
            Pr = np.where(reject[:, None, None], Pp, Pu)
            if sc.baselines.nominal:
                pn = {i: aL[i] * xn[i] for i in ids}
                xn = _update_all(locals_, sched, t, pn, y_by, Hs, links)

        prior = {i: aL[i] * xh[i] for i in ids}
        post = _update_all(locals_, sched, t, prior, y_by, Hs, links)
        for i in ids:
            post[i] = np.where(investigating[:, None], prior[i], post[i])
        for i, (s, spec) in hacked.items():
            if t < spec.onset:
                continue
            live = ~investigating
            if spec.behavior == "constant-estimate":
                if i not in frozen:
                    frozen[i] = xh[i].copy()  # held at onset - 1
                post[i] = np.where(live[:, None], frozen[i], post[i])
            elif spec.behavior == "random-estimate":
                off = mis_off[s] + K
                noise_e = spec.magnitude * (2.0 * u[:, off + idx[i]] - 1.0)
                post[i] = np.where(live[:, None], post[i] + noise_e, post[i])
        prev_pub = {i: ring[i][(t - 1) % M] for i in ids}
        for i in ids:
            ring[i][t % M] = post[i]
        xh = post

        live = active & ~investigating
        new_alarm = np.zeros(B, dtype=bool)
        cp = np.full(B, np.iinfo(np.int64).max)

        # measurement detectors
        for col, nd in enumerate(locals_):
            i = nd.node_id
            silent = i in hacked and hacked[i][1].behavior == "silent-fdi" and t >= hacked[i][1].onset
            if silent:
                continue
            step = live & ~alarmed_m[:, col]
            r = y_by[i] - prior[i] @ Hl[i]
            zz = r @ sched.whitener(i, t, "local").T
            chi = np.sum(zz * zz, axis=1)
            if record_stats:
                chi_rec[step, t, col] = chi[step]
            s_ev = evidence(chi, nd.K_local, alpha)
            g_new = np.maximum(0.0, g_m[:, col] + s_ev)
            g_m[:, col] = np.where(step, g_new, g_m[:, col])
            tau_m[:, col] = np.where(step & (g_new == 0.0), t, tau_m[:, col])
            fire = step & (g_new >= h)
            alarmed_m[:, col] |= fire
            meas_alarm_at[fire, col] = np.minimum(meas_alarm_at[fire, col], t)
            new_alarm |= fire
            cp = np.where(fire, np.minimum(cp, tau_m[:, col]), cp)

        # trust: one shared detector per target, votes latched per evaluator
        for col, nd in enumerate(locals_):
            l = nd.node_id
            d = post[l] - aL[l] * prev_pub[l]
            zz = d @ sched.whitener(l, t, "evolution").T
            pi = np.sum(zz * zz, axis=1)
            if record_stats:
                pi_rec[live, t, col] = pi[live]
            step = live & ~alarmed_t[:, col]
            s_ev = evidence(pi, nd.N_local, alpha)
            g_new = np.maximum(0.0, g_t[:, col] + s_ev)
            g_t[:, col] = np.where(step, g_new, g_t[:, col])
            tau_t[:, col] = np.where(step & (g_new == 0.0), t, tau_t[:, col])
            fire = step & (g_new >= h)
            alarmed_t[:, col] |= fire
            trust_alarm_at[fire, col] = np.minimum(trust_alarm_at[fire, col], t)
            for j in n_honest_eval[l]:
                vote = alarmed_t[:, col]
                if j in hacked and t >= hacked[j][1].onset and sc.hacked_vote != "honest":
                    vote = np.full(B, sc.hacked_vote == "always1")
                vote_latch[:, j - 1, col] |= vote & live
            n_yes = vote_latch[:, :, col].sum(axis=1)
            newly = live & ~declared[:, col] & (n_yes > (L - 1) / 2)
            declared[:, col] |= newly
            declared_at[newly, col] = np.minimum(declared_at[newly, col], t)
            new_alarm |= newly
            cp_t = np.where(alarmed_t[:, col], tau_t[:, col], t)
            cp = np.where(newly, np.minimum(cp, cp_t), cp)

        first = new_alarm & ~np.isfinite(gamma_net)
        gamma_net[first] = t

        if sc.on_alarm != "observe" and new_alarm.any():
            oldest = max(0, t - M + 1)
            use_fb = new_alarm & (cp < oldest)
            tr = np.where(use_fb, oldest, cp)
            t_R = np.where(first, tr, t_R)
            fallback |= use_fb
            for i in ids:
                stored = np.stack([ring[i][int(k) % M, b] for b, k in enumerate(np.where(new_alarm, tr, t))])
                powers = aL[i][None, :] ** (t - np.where(new_alarm, tr, t))[:, None]
                xh[i] = np.where(new_alarm[:, None], powers * stored, xh[i])
            until = T if sc.investigation_delay is None else t + sc.investigation_delay
            inv_until = np.where(new_alarm, until, inv_until)
            if sc.on_alarm == "halt":
                t_end = np.where(new_alarm & active, min(T, until), t_end)
            else:
                g_m[new_alarm] = 0.0
                tau_m[new_alarm] = until
                alarmed_m[new_alarm] = False
                g_t[new_alarm] = 0.0
                tau_t[new_alarm] = until
                alarmed_t[new_alarm] = False
                vote_latch[new_alarm] = False
                declared[new_alarm] = False
        if stop_at_alarm:
            t_end = np.where(first, t, t_end)

        record(t, active.copy())
        active &= t < t_end
        if stop_at_alarm:
            active &= ~np.isfinite(gamma_net)

    return BatchResult(
        seeds=seeds, T=T, gamma_net=gamma_net, meas_alarm_at=meas_alarm_at,
        trust_alarm_at=trust_alarm_at, declared_at=declared_at, t_R=t_R, fallback=fallback,
        t_end=t_end, mse=mse, mse_nodes=mse_nodes, chi=chi_rec, pi=pi_rec, estimates=est_rec,
    )


def _update_all(locals_, sched, t, prior, y_by, Hs, links):
    out = {}
    for nd in locals_:
        i = nd.node_id
        parts = [y_by[i]]
        for link in links[i]:
            j = link.sender
            shared = y_by[j][:, link.sender_rows]
            parts.append(shared - prior[j][:, link.foreign_state_indices] @ link.H_foreign.T)
        zstack = np.concatenate(parts, axis=1)
        e = sched.entry(i, t)
        out[i] = prior[i] + (zstack - prior[i] @ Hs[i]) @ e.G.T
    return out
