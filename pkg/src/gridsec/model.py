"""Global grid model and per-subregion local models.

Sensor and state indices are 0-based array positions; node ids are 1-based
(node 1 owns ``partition[0]``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySubregion, InvalidModel, NonDiagonalTransition


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    arr = arr.ravel() if ndim == 1 else np.atleast_2d(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GlobalSystemModel:
    """Linear state-space grid model ``x_t = A x_{t-1} + v_t``, ``y_t = H x_t + w_t``."""

    n_buses: int
    A: np.ndarray
    H: np.ndarray
    sigma_v2: float
    sigma_w2: float
    partition: tuple[tuple[int, ...], ...]
    x0: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(self.A, 2))
        object.__setattr__(self, "H", _frozen(self.H, 2))
        object.__setattr__(self, "x0", _frozen(self.x0, 1))
        object.__setattr__(
            self, "partition", tuple(tuple(int(k) for k in part) for part in self.partition)
        )
        object.__setattr__(self, "sigma_v2", float(self.sigma_v2))
        object.__setattr__(self, "sigma_w2", float(self.sigma_w2))

    @property
    def n_sensors(self) -> int:
        return self.H.shape[0]

    @property
    def state_dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.partition)

    @property
    def a_diag(self) -> np.ndarray:
        return np.diag(self.A).copy()


@dataclass(frozen=True, eq=False)
class NeighborLink:
    """How sender ``j``'s measurements feed recipient ``l``.

    ``sender_rows`` index the sender's local measurement vector; the global
    sensor ids are in ``sensors``. ``H_shared`` acts on the recipient's local
    state, ``H_foreign`` on ``x^j minus x^l`` given as positions in the
    sender's local state (``foreign_state_indices``).
    """

    sender: int
    recipient: int
    sensors: np.ndarray
    sender_rows: np.ndarray
    H_shared: np.ndarray
    H_foreign: np.ndarray
    foreign_state_indices: np.ndarray
    foreign_global: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.sender_rows)


@dataclass(frozen=True, eq=False)
class LocalNodeModel:
    node_id: int
    sensor_indices: np.ndarray
    state_indices: np.ndarray
    A_local: np.ndarray
    H_local: np.ndarray
    neighbors: tuple[int, ...]
    links_in: dict = field(default_factory=dict)
    links_out: dict = field(default_factory=dict)

    @property
    def N_local(self) -> int:
        return len(self.state_indices)

    @property
    def K_local(self) -> int:
        return len(self.sensor_indices)

    @property
    def a_diag(self) -> np.ndarray:
        return np.diag(self.A_local).copy()

    @property
    def H_stacked(self) -> np.ndarray:
        """Local rows followed by each neighbor's shared rows, ascending neighbor id."""
        blocks = [self.H_local] + [self.links_in[j].H_shared for j in self.neighbors]
        return np.vstack(blocks)

    @property
    def stacked_sizes(self) -> list[int]:
        return [self.K_local] + [self.links_in[j].n_rows for j in self.neighbors]


def validate(model: GlobalSystemModel) -> list[str]:
    """Return every violated model invariant; an empty list means valid."""
    report = []
    A, H = model.A, model.H
    n = H.shape[1]
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        report.append(f"transition matrix not square: shape {A.shape}")
    elif A.shape[0] != n:
        report.append(f"transition dimension {A.shape[0]} != state_dim {n}")
    elif np.any(A - np.diag(np.diag(A)) != 0.0):
        report.append("non-diagonal transition")
    if np.any(np.all(H == 0.0, axis=1)):
        rows = np.flatnonzero(np.all(H == 0.0, axis=1)).tolist()
        report.append(f"zero measurement row(s) {rows}")
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(A)):
        report.append("non-finite entries in A or H")
    if not model.sigma_v2 > 0:
        report.append("sigma_v2 must be positive")
    if not model.sigma_w2 > 0:
        report.append("sigma_w2 must be positive")
    if model.x0.shape != (n,):
        report.append(f"x0 length {model.x0.size} != state_dim {n}")
    if len(model.partition) == 0:
        report.append("empty partition")
    seen: dict[int, int] = {}
    for node, part in enumerate(model.partition, start=1):
        if len(part) == 0:
            report.append(f"empty subregion {node}")
        for k in part:
            if not 0 <= k < H.shape[0]:
                report.append(f"sensor {k} of subregion {node} out of range")
            elif k in seen and seen[k] != node:
                report.append(f"partition overlap: sensor {k} in subregions {seen[k]} and {node}")
            elif k in seen:
                report.append(f"partition overlap: sensor {k} repeated in subregion {node}")
            else:
                seen[k] = node
    missing = sorted(set(range(H.shape[0])) - set(seen))
    if missing:
        report.append(f"partition does not cover sensors {missing}")
    return report


def build_local_models(model: GlobalSystemModel) -> list[LocalNodeModel]:
    """Derive every node's local state set, neighbor set and measurement decompositions."""
    A, H = model.A, model.H
    if A.shape[0] == A.shape[1] and np.any(A - np.diag(np.diag(A)) != 0.0):
        raise NonDiagonalTransition("state transition matrix must be diagonal")
    for node, part in enumerate(model.partition, start=1):
        if len(part) == 0:
            raise EmptySubregion(f"subregion {node} has no sensors")
    problems = validate(model)
    if problems:
        raise InvalidModel("; ".join(problems))

    support = [np.flatnonzero(H[k] != 0.0) for k in range(H.shape[0])]
    sensors = [np.array(sorted(part), dtype=np.intp) for part in model.partition]
    states = []
    for rows in sensors:
        states.append(np.unique(np.concatenate([support[k] for k in rows])).astype(np.intp))

    L = len(sensors)
    neighbors = []
    for l in range(L):
        nb = tuple(
            j + 1 for j in range(L) if j != l and np.intersect1d(states[l], states[j]).size > 0
        )
        neighbors.append(nb)

    # links[(l, j)]: sender j -> recipient l (1-based ids)
    links = {}
    for l in range(L):
        for jid in neighbors[l]:
            j = jid - 1
            rows = [
                r for r, k in enumerate(sensors[j])
                if np.intersect1d(support[k], states[l]).size > 0
            ]
            rows = np.array(rows, dtype=np.intp)
            glob_sensors = sensors[j][rows]
            foreign_global = np.setdiff1d(states[j], states[l]).astype(np.intp)
            foreign_local = np.searchsorted(states[j], foreign_global).astype(np.intp)
            Hrows = H[glob_sensors]
            links[(l + 1, jid)] = NeighborLink(
                sender=jid,
                recipient=l + 1,
                sensors=glob_sensors,
                sender_rows=rows,
                H_shared=Hrows[:, states[l]].copy(),
                H_foreign=Hrows[:, foreign_global].copy(),
                foreign_state_indices=foreign_local,
                foreign_global=foreign_global,
            )

    nodes = []
    for l in range(L):
        nid = l + 1
        idx = states[l]
        nodes.append(
            LocalNodeModel(
                node_id=nid,
                sensor_indices=sensors[l],
                state_indices=idx,
                A_local=A[np.ix_(idx, idx)].copy(),
                H_local=H[np.ix_(sensors[l], idx)].copy(),
                neighbors=neighbors[l],
                links_in={j: links[(nid, j)] for j in neighbors[l]},
                links_out={r: links[(r, nid)] for r in range(1, L + 1) if (r, nid) in links},
            )
        )
    return nodes


# IEEE 14-bus topology; bus 6 is the angle reference.
IEEE14_BRANCHES = (
    (1, 2), (1, 5), (2, 3), (2, 4), (2, 5), (3, 4), (4, 5), (4, 7), (4, 9), (5, 6),
    (6, 11), (6, 12), (6, 13), (7, 8), (7, 9), (9, 10), (9, 14), (10, 11), (12, 13), (13, 14),
)
IEEE14_REFERENCE_BUS = 6

# (kind, buses) per sensor in global order; "F" is a branch flow i->k, "I" a bus injection.
IEEE14_SENSORS = (
    # subregion 1: buses 1, 2, 5
    ("F", (1, 2)), ("F", (1, 5)), ("F", (2, 5)), ("F", (5, 4)), ("F", (5, 6)), ("I", (2,)),
    # subregion 2: buses 3, 4, 7, 8
    ("F", (2, 3)), ("F", (3, 4)), ("F", (4, 7)), ("F", (7, 8)), ("F", (4, 9)), ("I", (7,)),
    # subregion 3: buses 6, 11, 12, 13
    ("F", (6, 11)), ("F", (6, 12)), ("F", (6, 13)), ("F", (12, 13)), ("I", (11,)),
    # subregion 4: buses 9, 10, 14
    ("F", (9, 10)), ("F", (9, 14)), ("F", (10, 11)), ("F", (13, 14)), ("F", (7, 9)), ("I", (9,)),
)
IEEE14_PARTITION = (
    tuple(range(0, 6)), tuple(range(6, 12)), tuple(range(12, 17)), tuple(range(17, 23)),
)

# Operating-point angles (degrees) of the standard 14-bus case, used as a fixed x0.
IEEE14_ANGLES_DEG = (
    0.0, -4.98, -12.72, -10.33, -8.78, -14.22, -13.37,
    -13.36, -14.94, -15.10, -14.79, -15.07, -15.16, -16.04,
)


def dc_measurement_matrix(n_buses, branches, sensors, reference_bus):
    """Unit-susceptance DC flow/injection rows over the non-reference bus angles."""
    cols = [b for b in range(1, n_buses + 1) if b != reference_bus]
    col_of = {b: c for c, b in enumerate(cols)}
    full = np.zeros((len(sensors), n_buses))
    adj = {b: [] for b in range(1, n_buses + 1)}
    for i, k in branches:
        adj[i].append(k)
        adj[k].append(i)
    for r, (kind, buses) in enumerate(sensors):
        if kind == "F":
            i, k = buses
            if k not in adj[i]:
                raise InvalidModel(f"no branch {i}-{k}")
            full[r, i - 1] += 1.0
            full[r, k - 1] -= 1.0
        elif kind == "I":
            (i,) = buses
            for k in adj[i]:
                full[r, i - 1] += 1.0
                full[r, k - 1] -= 1.0
        else:
            raise InvalidModel(f"unknown sensor kind {kind!r}")
    H = full[:, [b - 1 for b in cols]]
    return H, cols


def ieee14_default() -> GlobalSystemModel:
    """Four-subregion IEEE 14-bus DC model with phase-angle-only state."""
    H, cols = dc_measurement_matrix(14, IEEE14_BRANCHES, IEEE14_SENSORS, IEEE14_REFERENCE_BUS)
    ang = np.deg2rad(np.array(IEEE14_ANGLES_DEG))
    ang = ang - ang[IEEE14_REFERENCE_BUS - 1]
    x0 = ang[[b - 1 for b in cols]]
    n = H.shape[1]
    return GlobalSystemModel(
        n_buses=14,
        A=np.eye(n),
        H=H,
        sigma_v2=1e-4,
        sigma_w2=1e-4,
        partition=IEEE14_PARTITION,
        x0=x0,
        name="ieee14",
    )
