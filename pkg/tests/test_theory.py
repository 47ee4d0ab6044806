import numpy as np
import pytest

from poolbias.errors import InvalidArgument
from poolbias.graph import Graph, Pattern
from poolbias.model import Pooling, init_model
from poolbias.synth import SynthSpec, synth_grid_partition
from poolbias.theory import (
    AlignmentMonitor,
    AlignmentRecord,
    alignment_hook,
    full_color_nodes,
    anchor_alignment_check,
    blocking_d0_graphs,
    orthogonal_directions,
    measure_bounds,
    preservation_report,
    theory_reps,
    v_star,
    write_alignment_csv,
)
from poolbias.training import TrainConfig, train


def test_v_star_chain():
    v = v_star(Pattern.chain((4, 5, 6)), 7)
    assert v.tolist() == [0, 0, 0, 0, 1, 1, 1]
    with pytest.raises(InvalidArgument):
        v_star(Pattern.chain((4, 5, 6)), 6)


def test_bounds_of_isolated_nodes():
    g = Graph.from_edges(3, [0, 1, 2], [])
    b = measure_bounds([g], num_colors=3)
    assert (b.theta, b.theta_d) == (0.0, 1.0)


def test_bounds_on_grid(grid_ds):
    b = measure_bounds(grid_ds)
    assert b.theta_d >= b.theta
    assert b.theta_d <= 25


def test_anchor_aligned_on_every_d1_graph(grid_ds):
    res = anchor_alignment_check(grid_ds)
    assert res.passed and res.fraction == 1.0
    # the anchor's closed neighborhood holds the full chain
    assert min(res.values) >= 3


def test_no_dperp_node_sees_all_pattern_colors(grid_ds):
    p = grid_ds.pattern
    assert all(not full_color_nodes(g, p, grid_ds.palette_size) for g in grid_ds.dperp)
    assert all(g.anchor[0] in full_color_nodes(g, p, grid_ds.palette_size) for g in grid_ds.d1)


def test_every_orthogonal_direction_is_blocked(grid_ds):
    dirs = orthogonal_directions(grid_ds.pattern, grid_ds.palette_size)
    vs = v_star(grid_ds.pattern, grid_ds.palette_size)
    assert all(abs(u @ vs) < 1e-12 for u in dirs)
    found = blocking_d0_graphs(grid_ds, dirs)
    assert all(f is not None for f in found)
    for u, k in zip(dirs, found):
        reps = theory_reps(grid_ds.d0[k], grid_ds.palette_size)
        assert np.all(reps @ u <= 0)
    with pytest.raises(InvalidArgument):
        blocking_d0_graphs(grid_ds, [vs])


def test_record_at_initialization(small_ds):
    m = init_model(small_ds.palette_size, Pooling.ATTN, theory_mode=True)
    probe = small_ds.d1[0]
    rec = alignment_hook(m, v_star(small_ds.pattern, small_ds.palette_size), probe)
    assert rec.dot_w_vstar == 0 and rec.dot_a_vstar == 0 and rec.psi_s == 0
    assert rec.alpha_s == pytest.approx(1 / probe.num_nodes, abs=1e-15)
    assert rec.q is None


def test_hook_requires_anchor_and_theory_model(small_ds):
    vs = v_star(small_ds.pattern, small_ds.palette_size)
    m = init_model(small_ds.palette_size, Pooling.ATTN, theory_mode=True)
    with pytest.raises(InvalidArgument):
        alignment_hook(m, vs, small_ds.d0[0])
    with pytest.raises(InvalidArgument):
        alignment_hook(init_model(small_ds.palette_size, Pooling.ATTN), vs, small_ds.d1[0])


def test_first_full_batch_step_moves_w_towards_v_star(small_ds):
    m = init_model(small_ds.palette_size, Pooling.ATTN, theory_mode=True)
    mon = AlignmentMonitor.for_dataset(small_ds)
    train(m, small_ds.labeled(), TrainConfig(learning_rate=1e-3, epochs=1), [mon])
    assert mon.records[-1].dot_w_vstar > 0
    assert mon.records[-1].delta_w_vstar > 0


def test_converged_theory_run_aligns(small_ds):
    m = init_model(small_ds.palette_size, Pooling.ATTN, theory_mode=True)
    mon = AlignmentMonitor.for_dataset(small_ds)
    _, trace = train(m, small_ds.labeled(), TrainConfig(learning_rate=0.5, epochs=400), [mon])
    summary = preservation_report(mon.records)
    assert trace.final["train_acc"] >= 0.99
    assert summary.final_dot_a_positive and summary.final_dot_w_positive
    assert summary.delta_positive_fraction >= 0.95


def _rec(step, delta, acc=0.5):
    return AlignmentRecord(step, 1.0, 1.0, 2.0, 1.0, 2.0, 0.5, delta, 1.0, 1.5, acc)


def test_preservation_report_edge_cases():
    single = preservation_report([_rec(0, None)])
    assert single.undefined and single.delta_positive_fraction is None
    injected = preservation_report([_rec(0, None), _rec(1, 0.1), _rec(2, -0.1), _rec(3, 0.2)])
    assert injected.delta_positive_fraction == pytest.approx(2 / 3)
    assert injected.first_q_above_threshold == 0
    # updates taken after reaching full accuracy are not counted
    late = preservation_report([_rec(0, None), _rec(1, 0.1, acc=1.0), _rec(2, -0.1)])
    assert late.delta_positive_fraction == 1.0
    with pytest.raises(InvalidArgument):
        preservation_report([_rec(1, None), _rec(1, None)])


def test_alignment_csv(tmp_path):
    write_alignment_csv([_rec(0, None), _rec(1, 0.25)], tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "step,dot_w_vstar,dot_a_vstar,psi_s,psi_max,q,alpha_s,delta_w_vstar,lemma5_fraction"
    assert lines[1] == "0,1,1,2,1,2,0.5,,1"
    assert lines[2].split(",")[7] == "0.25"
