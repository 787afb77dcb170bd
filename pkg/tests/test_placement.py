import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellfdi.diagnosability import check_isolable, steady_state_gain
from cellfdi.placement import (
    Partition,
    PlacementError,
    PlacementInfeasible,
    SearchConfig,
    build_E,
    evaluate_partition,
    nearest_sensor_partition,
    optimize_placement,
    optimize_single_sensor,
)
from cellfdi.thermal import CellGeometry, ThermalParams, build_model
from oracles import brute_force_placement

EXHAUSTIVE = SearchConfig(exhaustive_limit=100)
LOCAL = SearchConfig(exhaustive_limit=0, restarts=16)


def small_model(nx, ny, seed=None):
    rng = np.random.default_rng(seed)
    geom = CellGeometry(0.06, 0.162, 0.006)
    if seed is None:
        k, ho = 5.99, 15.0
    else:
        k, ho = rng.uniform(1, 30), rng.uniform(1, 60)
    g = rng.uniform(1, 15, size=4) if seed is not None else (7.9746, 7.9746, 7.9746, 2.3339)
    p = ThermalParams(density_rho=2000.0, heat_capacity_Cp=1019.99, conductivity_k=k,
                      h_transfer_ho=ho, gamma_x0=g[0], gamma_M=-g[1], gamma_y0=g[2],
                      gamma_N=-g[3])
    return build_model(geom, p, nx, ny)


# build_E and Partition -------------------------------------------------------

def test_build_E_identity_two_zones():
    E = build_E(np.eye(4), Partition.from_zones([[1, 2], [3, 4]], [1, 3]))
    np.testing.assert_array_equal(E, [[1, 0], [1, 0], [0, 1], [0, 1]])


def test_build_E_full_split_is_permutation():
    p = Partition((3, 1, 2), (3, 1, 2))
    E = build_E(np.eye(3), p)
    np.testing.assert_array_equal(E, np.eye(3)[:, [1, 2, 0]])


def test_build_E_weighted_columns():
    w = np.array([0.5, 2.0, 3.0, 1.5])
    E = build_E(np.diag(w), Partition.from_zones([[1, 3], [2, 4]], [1, 2]))
    np.testing.assert_array_equal(E.sum(axis=0), [3.5, 3.5])
    np.testing.assert_array_equal(E[:, 0], [0.5, 0, 3.0, 0])


def test_build_E_size_mismatch():
    with pytest.raises(PlacementError):
        build_E(np.eye(5), Partition.from_zones([[1, 2], [3, 4]], [1, 3]))


@pytest.mark.parametrize("zones,match", [
    ([[1, 2], [2, 3]], "in zones 1 and 2"),
    ([[1], [3]], "not covered"),
    ([[1, 2], []], "empty"),
])
def test_partition_errors(zones, match):
    with pytest.raises(PlacementError, match=match):
        Partition.from_zones(zones, [1, 3])


def test_partition_rejects_duplicate_sensors():
    with pytest.raises(PlacementError, match="distinct"):
        Partition((1, 2), (1, 1))


def test_signature_is_label_free():
    a = Partition.from_zones([[1, 2], [3, 4]], [2, 4])
    b = Partition.from_zones([[3, 4], [1, 2]], [4, 2])
    assert a.signature() == b.signature() and a.digest() == b.digest()


# search -----------------------------------------------------------------

def test_two_nodes_two_zones():
    A = np.array([[-2.0, 1.0], [1.0, -2.0]])
    res = optimize_placement(A, np.eye(2), 2)
    assert sorted(res.partition.zones()) == [[1], [2]]
    assert sorted(res.sensor_nodes) == [1, 2]
    assert res.certificate.isolable


def test_six_node_local_search_matches_oracle():
    m = small_model(2, 3)
    res = optimize_placement(m.A, m.Mo, 2, LOCAL, m.grid)
    assert res.search_stats["method"] == "local"
    oracle = brute_force_placement(m.A, m.Mo, 2, m.grid)
    assert res.objective == pytest.approx(oracle, rel=1e-12)


@pytest.mark.parametrize("contiguous", [True, False])
def test_exhaustive_matches_oracle(contiguous):
    m = small_model(2, 3, seed=4)
    cfg = SearchConfig(exhaustive_limit=100, contiguous=contiguous)
    res = optimize_placement(m.A, m.Mo, 2, cfg, m.grid)
    oracle = brute_force_placement(m.A, m.Mo, 2, m.grid if contiguous else None)
    assert res.objective == pytest.approx(oracle, rel=1e-12)


def test_objective_recomputed_from_matrices():
    m = small_model(3, 3, seed=1)
    res = optimize_placement(m.A, m.Mo, 2, EXHAUSTIVE, m.grid)
    G = steady_state_gain(m.A, res.C, res.E)
    assert res.objective == pytest.approx(float(np.sum(np.diag(G) ** 2)), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_scaling_Mo_keeps_argmax(seed, c):
    m = small_model(2, 3, seed=seed)
    a = optimize_placement(m.A, m.Mo, 2, EXHAUSTIVE, m.grid)
    b = optimize_placement(m.A, c * m.Mo, 2, EXHAUSTIVE, m.grid)
    assert b.objective == pytest.approx(c * c * a.objective, rel=1e-9)
    assert a.partition.signature() == b.partition.signature()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_returned_placements_are_sound(seed, K):
    m = small_model(2, 4, seed=seed)
    res = optimize_placement(m.A, m.Mo, K, LOCAL, m.grid)
    assert np.all(res.C.sum(axis=1) == 1) and set(np.unique(res.C)) <= {0.0, 1.0}
    assert check_isolable(m.A, res.C, res.E) == (True, m.n_states + K)
    assert np.all(np.einsum("ij,ji->i", res.C, res.E) != 0)


def test_more_zones_never_exceed_single_sensor_gain():
    # (-A)^-1 is entrywise non-negative here, so a zone's diagonal gain is at
    # most the whole-cell gain at the same sensor
    for seed in range(5):
        m = small_model(2, 4, seed=seed)
        assert np.all(np.linalg.inv(-m.A) >= -1e-15)
        one = optimize_single_sensor(m.A, m.Mo).objective
        two = optimize_placement(m.A, m.Mo, 2, EXHAUSTIVE, m.grid)
        G = steady_state_gain(m.A, two.C, two.E)
        assert one >= np.max(np.diag(G) ** 2) * (1 - 1e-12)


def test_single_node_system():
    res = optimize_single_sensor(np.array([[-1.0]]), np.eye(1))
    assert res.sensor_nodes == [1]


def test_single_sensor_diagonal_closed_form():
    a = -np.array([3.0, 0.5, 2.0, 0.7, 1.1])
    res = optimize_single_sensor(np.diag(a), np.eye(5))
    assert res.sensor_nodes == [int(np.argmax(1 / np.abs(a))) + 1]
    assert res.objective == pytest.approx(1 / 0.5**2)


def test_duplicate_fault_columns_infeasible():
    A = np.array([[-2.0, 1.0], [1.0, -2.0]])
    Mo = np.array([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(PlacementInfeasible):
        optimize_placement(A, Mo, 2, EXHAUSTIVE)


@pytest.mark.parametrize("K", [0, 3])
def test_bad_K(K):
    with pytest.raises(PlacementError):
        optimize_placement(-np.eye(2), np.eye(2), K)


def test_zero_Mo():
    with pytest.raises(PlacementError):
        optimize_single_sensor(-np.eye(2), np.zeros((2, 2)))


def test_local_search_reproducible():
    m = small_model(3, 4, seed=2)
    a = optimize_placement(m.A, m.Mo, 2, SearchConfig(seed=5), m.grid)
    b = optimize_placement(m.A, m.Mo, 2, SearchConfig(seed=5), m.grid)
    assert a.partition == b.partition and a.objective == b.objective


def test_default_grid_report_and_candidates(model, tmp_path):
    res = optimize_placement(model.A, model.Mo, 2, SearchConfig(restarts=4), model.grid)
    assert res.certificate.isolable and res.partition.K == 2
    text = res.report(reference_nodes=[7, 19])
    assert "published: 7, 19" in text and "computed:" in text
    path = tmp_path / "cand.csv"
    res.write_candidates(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "partition_hash,objective" and len(lines) > 2


def test_published_placement_is_isolable(model):
    p = Partition.from_zones([range(1, 13), range(13, 25)], [7, 19])
    res = evaluate_partition(model.A, model.Mo, p)
    assert res.certificate.isolable and all(res.certificate.detectable_per_fault)


def test_nearest_sensor_partition(model):
    p = nearest_sensor_partition(model.grid, [7, 19])
    assert p.zones() == [list(range(1, 13)), list(range(13, 25))]
