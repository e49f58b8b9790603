import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oran_steer import netsim
from oran_steer.config import CellSpec, ConfigError, ScenarioConfig
from oran_steer.netsim import HandoverRejected, HandoverRequest

from conftest import small_config


def one_cell_config(n_ues=1, **radio):
    return ScenarioConfig().replace(
        topology={"cells": [{"cell_id": "A", "position": [50.0, 50.0], "tx_power": 30.0}],
                  "n_ues": n_ues, "bounds": [100.0, 100.0]},
        radio=radio)


def test_default_topology_cardinality():
    state = netsim.init_topology(ScenarioConfig())
    assert len(state.cells) == 6
    assert len(state.ue_ids) == 50
    assert len(state.edges) == 50


def test_single_cell_serves_everyone():
    state = netsim.init_topology(one_cell_config())
    assert state.ues[0].serving_cell == "A"


def test_initial_assignment_is_strongest_cell():
    state = netsim.init_topology(ScenarioConfig())
    assert np.array_equal(state.serving, np.argmax(netsim.mean_rsrp_matrix(state), axis=1))


def test_init_is_deterministic():
    a = netsim.init_topology(ScenarioConfig())
    b = netsim.init_topology(ScenarioConfig())
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.velocities, b.velocities)
    assert np.array_equal(a.serving, b.serving)


def test_invalid_topologies_rejected():
    with pytest.raises(ConfigError):
        ScenarioConfig().replace(topology={"cells": []})
    with pytest.raises(ConfigError):
        ScenarioConfig().replace(topology={"n_ues": 0})


def test_pure_translation_without_noise():
    state = netsim.init_topology(one_cell_config())
    state.positions[:] = [[0.0, 0.0]]
    state.velocities[:] = [[1.0, 0.0]]
    netsim.step_mobility(state, noise=False)
    assert np.allclose(state.positions, [[1.0, 0.0]])
    assert state.iteration == 1


def test_reflection_at_bound():
    pos, vel = netsim.reflect(np.array([[101.5, 50.0]]), np.array([[2.0, 0.0]]), (100.0, 100.0))
    assert np.allclose(pos, [[98.5, 50.0]])
    assert np.allclose(vel, [[-2.0, 0.0]])


def test_mobility_keeps_serving_edges():
    state = netsim.init_topology(ScenarioConfig())
    before = state.serving.copy()
    for _ in range(20):
        netsim.step_mobility(state)
    assert np.array_equal(state.serving, before)


def test_long_trajectory_is_reproducible():
    cfg = small_config()
    a, b = netsim.init_topology(cfg), netsim.init_topology(cfg)
    for _ in range(1000):
        netsim.step_mobility(a)
        netsim.step_mobility(b)
    assert np.array_equal(a.positions, b.positions)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 20.0))
def test_positions_stay_in_bounds(seed, sigma):
    cfg = small_config(seed=seed, mobility={"sigma_move": sigma, "max_speed": 30.0})
    state = netsim.init_topology(cfg)
    for _ in range(50):
        netsim.step_mobility(state)
        assert np.all(state.positions >= 0.0)
        assert np.all(state.positions <= np.array(state.bounds))


def _state_at(distance, shadowing=False):
    cfg = one_cell_config(shadowing=shadowing)
    state = netsim.init_topology(cfg)
    state.positions[:] = [[50.0 + distance, 50.0]]
    return state


def test_rsrp_at_reference_distance():
    state = _state_at(1.0)
    rsrp, _, _ = netsim.compute_radio(state, state.ues[0], state.cells[0])
    assert rsrp == pytest.approx(30.0 - 40.0)


def test_rsrp_at_hundred_reference_distances():
    # hand evaluation: 30 - (40 + 10 * 3.5 * log10(100)) = -80
    state = _state_at(0.0)
    state.positions[:] = [[0.0, 0.0]]
    state.cells[0].position = np.array([100.0, 0.0])
    rsrp, _, _ = netsim.compute_radio(state, state.ues[0], state.cells[0])
    assert rsrp == pytest.approx(-80.0, abs=1e-12)


def test_single_cell_snir_is_rsrp_over_noise():
    state = _state_at(30.0)
    rsrp, rsrq, snir = netsim.compute_radio(state, state.ues[0], state.cells[0])
    assert snir == pytest.approx(rsrp - (-97.0))
    assert rsrq <= 0.0


def test_distance_clamped_to_minimum():
    state = _state_at(0.0)
    rsrp, _, _ = netsim.compute_radio(state, state.ues[0], state.cells[0])
    assert np.isfinite(rsrp) and rsrp == pytest.approx(30.0 - 40.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 5000.0), st.floats(1.0, 5000.0))
def test_path_loss_monotone(d1, d2):
    radio = ScenarioConfig().radio
    if d1 < d2:
        assert netsim.path_loss_db(d1, radio) < netsim.path_loss_db(d2, radio)


def test_throughput_monotone_and_clamped():
    radio = ScenarioConfig().radio
    snir = np.linspace(-20, 80, 200)
    thp = netsim.throughput(snir, 1.0, radio)
    assert np.all(np.diff(thp) >= 0)
    assert thp.max() == radio.max_thp_bps
    assert thp.min() >= 0


def test_emit_reports_cardinality_and_conservation():
    state = netsim.init_topology(ScenarioConfig())
    batch = netsim.emit_reports(state)
    assert len(batch.ue_reports) == 50 and len(batch.cell_reports) == 6
    assert sum(r.num_ues for r in batch.cell_reports) == 50
    assert all(r.new_ues == 0 and r.left_ues == 0 for r in batch.cell_reports)


def test_ue_report_invariants():
    state = netsim.init_topology(ScenarioConfig())
    tx = {c.cell_id: c.tx_power for c in state.cells}
    for _ in range(5):
        batch = netsim.emit_reports(state)
        for u in batch.ue_reports:
            assert 0.0 <= u.prb_ratio_dl <= 1.0 and 0.0 <= u.prb_ratio_ul <= 1.0
            assert u.rsrp <= tx[u.serving_cell]
        netsim.step_mobility(state)


def test_cell_throughput_sums_served_ues():
    state = netsim.init_topology(ScenarioConfig())
    batch = netsim.emit_reports(state)
    for rep in batch.cell_reports:
        served = [u.pdcp_thp_dl for u in batch.ue_reports if u.serving_cell == rep.cell_id]
        assert rep.throughput == pytest.approx(sum(served))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.tuples(st.integers(0, 19), st.integers(0, 5)),
                                        max_size=40))
def test_count_deltas_match_new_minus_left(seed, moves):
    state = netsim.init_topology(small_config(seed=seed))
    prev = netsim.emit_reports(state)
    for step in range(4):
        for ue_idx, cell_idx in moves[step::4]:
            netsim.apply_handover(state, HandoverRequest(state.ue_ids[ue_idx],
                                                         state.cell_ids[cell_idx], step))
        netsim.step_mobility(state)
        batch = netsim.emit_reports(state)
        assert sum(r.num_ues for r in batch.cell_reports) == 20
        for p, r in zip(prev.cell_reports, batch.cell_reports):
            assert r.num_ues == p.num_ues + r.new_ues - r.left_ues
        prev = batch


def test_handover_replaces_edge():
    state = netsim.init_topology(ScenarioConfig())
    ue = state.ue_ids[0]
    netsim.apply_handover(state, HandoverRequest(ue, "BS5", 0))
    assert ("BS5", ue) in state.edges
    assert len(state.edges) == 50


def test_handover_to_current_cell_is_noop():
    state = netsim.init_topology(ScenarioConfig())
    ue = state.ue_ids[3]
    current = state.ues[3].serving_cell
    before = state.serving.copy()
    netsim.apply_handover(state, HandoverRequest(ue, current, 0))
    assert np.array_equal(before, state.serving)


def test_handover_unknown_ue_rejected(caplog):
    state = netsim.init_topology(ScenarioConfig())
    before = state.serving.copy()
    with caplog.at_level(logging.WARNING), pytest.raises(HandoverRejected):
        netsim.apply_handover(state, HandoverRequest(999, "BS1", 0))
    with pytest.raises(HandoverRejected):
        netsim.apply_handover(state, HandoverRequest(1, "BS9", 0))
    assert np.array_equal(before, state.serving)
    assert state.counts().sum() == 50
    assert "unknown UE" in caplog.text


def test_identical_seeds_give_identical_batches():
    def batches(cfg):
        state = netsim.init_topology(cfg)
        out = []
        for _ in range(10):
            out.append(netsim.emit_reports(state).to_dict())
            netsim.step_mobility(state)
        return out

    assert batches(small_config()) == batches(small_config())


def test_report_round_trip():
    state = netsim.init_topology(ScenarioConfig())
    batch = netsim.emit_reports(state)
    again = netsim.KpiReportBatch.from_dict(batch.to_dict())
    assert again == batch


def test_mobility_stream_independent_of_handovers():
    cfg = small_config()
    a, b = netsim.init_topology(cfg), netsim.init_topology(cfg)
    for t in range(30):
        netsim.emit_reports(a)
        netsim.emit_reports(b)
        netsim.apply_handover(b, HandoverRequest(b.ue_ids[t % 20], "BS2", t))
        netsim.step_mobility(a)
        netsim.step_mobility(b)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.shadowing, b.shadowing)


def test_cellspec_defaults():
    assert CellSpec("X", (0, 0)).tx_power == 30.0
