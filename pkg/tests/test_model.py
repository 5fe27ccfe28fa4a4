import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridsec.errors import EmptySubregion, InvalidModel, NonDiagonalTransition
from gridsec.model import GlobalSystemModel, build_local_models, validate

from conftest import block_diagonal_model, sparse_models


def test_ieee14_dimensions(ieee14, ieee14_locals):
    assert ieee14.state_dim == 13
    assert ieee14.n_sensors == 23
    assert ieee14.n_nodes == 4
    assert ieee14.sigma_v2 == 1e-4 and ieee14.sigma_w2 == 1e-4
    np.testing.assert_array_equal(ieee14.A, np.eye(13))
    assert sum(n.K_local for n in ieee14_locals) == 23
    assert all(len(n.neighbors) > 0 for n in ieee14_locals)
    assert validate(ieee14) == []


def test_block_diagonal_has_no_neighbors():
    m = block_diagonal_model()
    locs = build_local_models(m)
    assert [n.neighbors for n in locs] == [(), ()]


def test_single_subregion_holds_every_state():
    m = block_diagonal_model()
    single = GlobalSystemModel(
        n_buses=0, A=m.A, H=m.H, sigma_v2=1e-4, sigma_w2=1e-4,
        partition=(tuple(range(m.n_sensors)),), x0=m.x0,
    )
    (node,) = build_local_models(single)
    assert node.neighbors == ()
    np.testing.assert_array_equal(node.state_indices, np.flatnonzero(np.any(m.H != 0, axis=0)))


def test_validate_reports(ieee14):
    part = list(ieee14.partition)
    part[1] = part[1] + (part[0][0],)
    bad = GlobalSystemModel(
        n_buses=14, A=ieee14.A, H=ieee14.H, sigma_v2=1e-4, sigma_w2=1e-4,
        partition=tuple(part), x0=ieee14.x0,
    )
    assert any("partition overlap" in r for r in validate(bad))
    A = ieee14.A.copy()
    A[0, 1] = 0.1
    nd = GlobalSystemModel(
        n_buses=14, A=A, H=ieee14.H, sigma_v2=1e-4, sigma_w2=1e-4,
        partition=ieee14.partition, x0=ieee14.x0,
    )
    assert any("non-diagonal transition" in r for r in validate(nd))
    with pytest.raises(NonDiagonalTransition):
        build_local_models(nd)


def test_empty_subregion_raises(ieee14):
    m = GlobalSystemModel(
        n_buses=14, A=ieee14.A, H=ieee14.H, sigma_v2=1e-4, sigma_w2=1e-4,
        partition=ieee14.partition + ((),), x0=ieee14.x0,
    )
    with pytest.raises(EmptySubregion):
        build_local_models(m)


def test_uncovered_sensor_is_invalid(ieee14):
    part = (ieee14.partition[0][1:],) + ieee14.partition[1:]
    m = GlobalSystemModel(
        n_buses=14, A=ieee14.A, H=ieee14.H, sigma_v2=1e-4, sigma_w2=1e-4, partition=part, x0=ieee14.x0,
    )
    with pytest.raises(InvalidModel):
        build_local_models(m)


@given(sparse_models())
def test_reconstruction(m):
    for node in build_local_models(m):
        back = np.zeros((node.K_local, m.state_dim))
        back[:, node.state_indices] = node.H_local
        np.testing.assert_array_equal(back, m.H[node.sensor_indices])


@given(sparse_models(), st.integers(0, 2**32 - 1))
def test_decomposition_identity(m, seed):
    x = np.random.default_rng(seed).normal(size=m.state_dim)
    locs = build_local_models(m)
    by_id = {n.node_id: n for n in locs}
    for node in locs:
        for j, link in node.links_in.items():
            sender = by_id[j]
            x_local = x[node.state_indices]
            x_foreign = x[sender.state_indices][link.foreign_state_indices]
            lhs = link.H_shared @ x_local + link.H_foreign @ x_foreign
            np.testing.assert_allclose(lhs, m.H[link.sensors] @ x, rtol=0, atol=1e-12)


@given(sparse_models())
def test_coverage(m):
    held = set()
    for node in build_local_models(m):
        held.update(node.state_indices.tolist())
    assert held == set(np.flatnonzero(np.any(m.H != 0, axis=0)).tolist())
