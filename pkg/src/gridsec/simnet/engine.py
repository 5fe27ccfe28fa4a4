"""Single-trajectory orchestration with every protocol layer switched on.

Per timestep ``t``:

1. truth step, then attack and hacked-node false data on the sensors
2. every node predicts; neighbors exchange processed measurements
3. local Kalman updates (hacked nodes apply their behavior here)
4. signed packages are validated and the block is mined and appended to
   every node's ledger replica
5. measurement detectors (honest nodes only)
6. trust evaluators read the two newest blocks, update, vote and tally
7. on any alarm: recovery point ``t_R`` = the oldest change-point estimate
   among the alarmed detectors (or the oldest retained block), every node
   restarts from its ledger estimate at ``t_R`` propagated to ``t``, and
   the network predicts without measurements during the investigation

Baseline filters (centralized, outlier-rejecting, detector-free
distributed) run alongside on the same measurements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..detection import DetectorState, chi_statistic, cusum_step, evidence, restart
from ..errors import PackageRejected, PuzzleRejected
from ..estimator import CovarianceSchedule, DistributedFilter, GaussianBelief
from ..ledger import Ledger, generate_keys, genesis, propose_and_commit, sign_package
from ..model import GlobalSystemModel, build_local_models
from ..trust import TrustEvaluator, VoteBoard, evaluate_step, pi_statistic, tally
from .baselines import CentralizedSchedule, robust_kalman_step
from .rng import make_streams
from .scenario import Scenario

ESTIMATORS = ("proposed", "centralized", "robust", "nominal")


def step_truth(x_prev, model: GlobalSystemModel, rng: np.random.Generator):
    """Draw ``x_t = A x_{t-1} + v_t`` and ``y_t = H x_t + w_t``."""
    n, K = model.state_dim, model.n_sensors
    z = rng.standard_normal(n + K)
    a = model.a_diag
    x = a * x_prev + math.sqrt(model.sigma_v2) * z[:n]
    y = model.H @ x + math.sqrt(model.sigma_w2) * z[n:]
    return x, y


def attack_draws(scenario: Scenario, rng: np.random.Generator, n_steps=None):
    """Uniform[0,1) draws for one step (or ``n_steps``), laid out as documented in ``rng``."""
    K, n = scenario.model.n_sensors, scenario.model.state_dim
    width = K * len(scenario.attacks) + (K + n) * len(scenario.misbehaviors)
    if n_steps is None:
        return rng.random(width)
    return rng.random((n_steps, width))


def apply_attack(y, scenario: Scenario, t: int, u) -> np.ndarray:
    """Add the false data of every active attack and silent-fdi node to ``y``.

    ``u`` holds this step's attack-stream draws; untargeted sensors and
    steps before an onset are left untouched.
    """
    m = scenario.model
    K = m.n_sensors
    y = np.array(y, dtype=np.float64, copy=True)
    for s, spec in enumerate(scenario.attacks):
        if t >= spec.onset and spec.magnitude > 0:
            rows = np.concatenate([np.asarray(m.partition[i - 1], dtype=np.intp) for i in spec.targets])
            y[rows] += spec.magnitude * u[s * K + rows]
    base = K * len(scenario.attacks)
    for s, spec in enumerate(scenario.misbehaviors):
        if spec.behavior == "silent-fdi" and t >= spec.onset and spec.magnitude > 0:
            rows = np.asarray(m.partition[spec.node_id - 1], dtype=np.intp)
            off = base + s * (K + m.state_dim)
            y[rows] += spec.magnitude * u[off + rows]
    return y


def initial_estimate(model: GlobalSystemModel, rng: np.random.Generator) -> np.ndarray:
    return model.x0 + math.sqrt(model.sigma_v2) * rng.standard_normal(model.state_dim)


@dataclass
class AlarmEvent:
    t: int
    kind: str  # "measurement" or "trust"
    node: int  # alarmed node / declared target
    change_point: int
    evaluator: int | None = None


@dataclass
class RunRecord:
    scenario: Scenario
    T: int
    t_end: int
    x_true: np.ndarray
    estimates: dict
    chi: np.ndarray
    pi: np.ndarray
    g_meas: np.ndarray
    g_trust: np.ndarray
    votes: np.ndarray
    mse: dict
    mse_nodes: np.ndarray
    meas_alarm_at: dict
    trust_alarm_at: dict
    declared_at: dict
    events: list
    gamma_net: float
    t_R: int | None
    fallback: bool
    robust_rejections: int
    network_events: list = field(default_factory=list)
    ledgers: dict = field(default_factory=dict)
    registry: object = None

    @property
    def ledger(self) -> Ledger:
        return self.ledgers[min(self.ledgers)]

    @property
    def alarmed(self) -> bool:
        return math.isfinite(self.gamma_net)


def _mse_terms(x, est_by_node, locals_):
    return np.array([float(np.sum((x[n.state_indices] - est_by_node[n.node_id]) ** 2)) for n in locals_])


def run(scenario: Scenario, keep_ledgers: bool = True) -> RunRecord:
    sc = scenario
    m = sc.model
    locals_ = build_local_models(m)
    ids = [n.node_id for n in locals_]
    L, T, n, K = len(ids), sc.T, m.state_dim, m.n_sensors
    a = m.a_diag
    h = sc.threshold
    hacked = sc.hacked
    mis_index = {spec.node_id: s for s, spec in enumerate(sc.misbehaviors)}

    streams = make_streams(sc.seed)
    sched = CovarianceSchedule(m, locals_, cross_policy=sc.cross_policy)
    cen = CentralizedSchedule(m)
    xhat0 = initial_estimate(m, streams.init)
    init = {nd.node_id: xhat0[nd.state_indices] for nd in locals_}
    df = DistributedFilter(m, locals_, init, sched)
    nominal = DistributedFilter(m, locals_, init, sched) if sc.baselines.nominal else None
    xc = xhat0.copy()
    rb = GaussianBelief(xhat0.copy(), cen.P0.copy(), "posterior")

    private, registry = generate_keys(ids, sc.seed)
    ledgers = {i: Ledger(sc.M, sc.difficulty) for i in ids}
    g0 = genesis(init, sc.difficulty, 1 + streams.miners.choice(L, sc.n_miners, replace=False))
    for lg in ledgers.values():
        lg.append(g0)

    meas = {i: DetectorState(sc.alpha, h) for i in ids}
    evals = {(j, l): TrustEvaluator(j, l, DetectorState(sc.alpha, h)) for j in ids for l in ids if j != l}
    boards = {l: VoteBoard(l, L) for l in ids}

    nan = np.nan
    x_true = np.full((T + 1, n), nan)
    est = {nd.node_id: np.full((T + 1, nd.N_local), nan) for nd in locals_}
    chi_rec = np.full((T + 1, L), nan)
    pi_rec = np.full((T + 1, L), nan)
    g_meas = np.full((T + 1, L), nan)
    g_trust = np.full((T + 1, L, L), nan)
    votes = np.zeros((T + 1, L, L), dtype=np.int8)
    mse = {k: np.full(T + 1, nan) for k in ESTIMATORS}
    mse_nodes = np.full((T + 1, L), nan)

    x = m.x0.copy()
    x_true[0] = x
    for nd in locals_:
        est[nd.node_id][0] = init[nd.node_id]
    terms0 = _mse_terms(x, init, locals_)
    mse_nodes[0] = terms0
    for k in ESTIMATORS:
        mse[k][0] = terms0.sum()

    meas_alarm_at, trust_alarm_at, declared_at = {}, {}, {}
    events, network_events = [], []
    gamma_net, t_R, fallback = math.inf, None, False
    investigating_until = -1
    robust_rejections = 0
    frozen_mean = {}
    t_end = T

    for t in range(1, T + 1):
        x, y_clean = step_truth(x, m, streams.truth)
        u = attack_draws(sc, streams.attack)
        y = apply_attack(y_clean, sc, t, u)
        y_by = {nd.node_id: y[nd.sensor_indices] for nd in locals_}
        investigating = t <= investigating_until

        # baselines see the same (possibly corrupted) measurements
        ce = cen.entry(t)
        xc = a * xc
        xc = xc + ce["G"] @ (y - m.H @ xc)
        rb, rejected = robust_kalman_step(rb, m, y, sc.outlier_alpha)
        robust_rejections += rejected
        if nominal is not None:
            nominal.predict_all()
            pm = nominal.exchange(y_by)
            for i in ids:
                nominal.update_node(i, y_by[i], nominal.inbox(i, pm))

        df.predict_all()
        if investigating:
            for i in ids:
                df.hold_prior(i)
        else:
            pm = df.exchange(y_by)
            for i in ids:
                df.update_node(i, y_by[i], df.inbox(i, pm))
            for i, spec in hacked.items():
                if t < spec.onset:
                    continue
                if spec.behavior == "constant-estimate":
                    frozen_mean.setdefault(i, est[i][spec.onset - 1].copy())
                    df.set_mean(i, frozen_mean[i])
                elif spec.behavior == "random-estimate":
                    off = K * len(sc.attacks) + mis_index[i] * (K + n) + K
                    idx = df.by_id[i].state_indices
                    noise = spec.magnitude * (2.0 * u[off + idx] - 1.0)
                    df.set_mean(i, df.posterior[i].mean + noise)

        # signed packages -> validated, mined block on every replica
        pkgs = [sign_package(private[i], i, t, df.posterior[i].mean) for i in ids]
        miners = 1 + streams.miners.choice(L, sc.n_miners, replace=False)
        try:
            propose_and_commit(ledgers, pkgs, registry, miners)
        except (PackageRejected, PuzzleRejected) as exc:
            network_events.append((t, type(exc).__name__, str(exc)))
            t_end = t
            break

        new_alarms = []
        if not investigating:
            for nd in locals_:
                i = nd.node_id
                if i in hacked and hacked[i].behavior == "silent-fdi" and t >= hacked[i].onset:
                    continue
                det = meas[i]
                if det.alarmed:
                    continue
                r_loc = y_by[i] - nd.H_local @ df.prior[i].mean
                c = chi_statistic(r_loc, sched.covariance(i, t, "local"))
                chi_rec[t, i - 1] = c
                det = cusum_step(det, evidence(c, nd.K_local, sc.alpha), t)
                meas[i] = det
                g_meas[t, i - 1] = det.g
                if det.alarmed:
                    meas_alarm_at.setdefault(i, t)
                    new_alarms.append(AlarmEvent(t, "measurement", i, det.tau_hat))

            for nd in locals_:
                l = nd.node_id
                # every replica holds the same blocks; read from the first evaluator's copy
                reader = ledgers[next(j for j in ids if j != l)]
                xt = reader.get_estimate(t, l)
                xp = reader.get_estimate(t - 1, l)
                p = pi_statistic(xt, xp, nd.a_diag, sched.covariance(l, t, "evolution"))
                pi_rec[t, l - 1] = p
                board = boards[l]
                for j in ids:
                    if j == l:
                        continue
                    ev = evals[(j, l)]
                    if j in hacked and t >= hacked[j].onset and sc.hacked_vote != "honest":
                        vote = 1 if sc.hacked_vote == "always1" else 0
                    else:
                        was = ev.detector.alarmed
                        ev, vote = evaluate_step(ev, p, nd.N_local, t)
                        evals[(j, l)] = ev
                        if ev.detector.alarmed and not was:
                            trust_alarm_at.setdefault((j, l), t)
                    g_trust[t, j - 1, l - 1] = ev.detector.g
                    board.cast(j, vote)
                    votes[t, j - 1, l - 1] = board.votes.get(j, 0)
                before = board.declared_at
                tally(board, t)
                if before is None and board.declared_at is not None:
                    declared_at.setdefault(l, t)
                    cps = [
                        evals[(j, l)].eta_hat for j in ids
                        if j != l and evals[(j, l)].detector.alarmed
                    ]
                    new_alarms.append(AlarmEvent(t, "trust", l, min(cps) if cps else t))

        if new_alarms:
            events.extend(new_alarms)
            if not math.isfinite(gamma_net):
                gamma_net = t
            if sc.on_alarm != "observe":
                cp = min(ev.change_point for ev in new_alarms)
                oldest = ledgers[ids[0]].oldest_timestep
                used_fallback = cp < oldest
                t_rec = oldest if used_fallback else cp
                if t_R is None:
                    t_R = t_rec
                fallback = fallback or used_fallback
                for nd in locals_:
                    stored = ledgers[ids[0]].get_estimate(t_rec, nd.node_id)
                    df.set_mean(nd.node_id, nd.a_diag ** (t - t_rec) * stored)
                delay = sc.investigation_delay
                investigating_until = T if delay is None else t + delay
                if sc.on_alarm == "halt":
                    t_end = min(T, investigating_until)
                else:
                    meas = {i: restart(meas[i], investigating_until) for i in ids}
                    for key, ev in evals.items():
                        evals[key] = TrustEvaluator(ev.evaluator_id, ev.target_id, restart(ev.detector, investigating_until))
                    for b in boards.values():
                        b.reset()

        # record step t
        x_true[t] = x
        post = {i: df.posterior[i].mean for i in ids}
        for i in ids:
            est[i][t] = post[i]
        terms = _mse_terms(x, post, locals_)
        mse_nodes[t] = terms
        mse["proposed"][t] = terms.sum()
        mse["centralized"][t] = _mse_terms(x, {nd.node_id: xc[nd.state_indices] for nd in locals_}, locals_).sum()
        mse["robust"][t] = _mse_terms(x, {nd.node_id: rb.mean[nd.state_indices] for nd in locals_}, locals_).sum()
        if nominal is not None:
            mse["nominal"][t] = _mse_terms(x, {i: nominal.posterior[i].mean for i in ids}, locals_).sum()
        if t >= t_end:
            break

    return RunRecord(
        scenario=sc,
        T=T,
        t_end=t_end,
        x_true=x_true,
        estimates=est,
        chi=chi_rec,
        pi=pi_rec,
        g_meas=g_meas,
        g_trust=g_trust,
        votes=votes,
        mse=mse,
        mse_nodes=mse_nodes,
        meas_alarm_at=meas_alarm_at,
        trust_alarm_at=trust_alarm_at,
        declared_at=declared_at,
        events=events,
        gamma_net=gamma_net,
        t_R=t_R,
        fallback=fallback,
        robust_rejections=robust_rejections,
        network_events=network_events,
        ledgers=ledgers if keep_ledgers else {ids[0]: ledgers[ids[0]]},
        registry=registry,
    )
