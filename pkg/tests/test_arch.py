"""Block graphs, growth procedures, network specs and materialization."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuroforge.arch import (Add, BlockGraph, Concat, Edge, NetworkSpec, OpKind, Series, baseline_spec,
                             branching, conv_cost, grow, materialize, parameter_count, parameter_ledger,
                             random_growth, random_model, splitting, structure_stats)
from neuroforge.errors import ArchitectureError, GrowthRejected
from neuroforge.tensor import Tensor, no_grad

C3, C5, NONE = OpKind.CONV3X3, OpKind.CONV5X5, OpKind.NONE


def grown_block(seed, steps, channels=16):
    rng = np.random.default_rng(seed)
    g = BlockGraph.single(channels)
    for _ in range(steps):
        g = random_growth(g, rng)
    return g


def nested_block():
    """A depth-4, width-3 block: a deep concat chain next to two parallel convs."""
    inner = Concat((Series((Edge(C3, 4), Concat((Edge(C3, 2), Edge(C3, 2))))), Edge(C3, 4)))
    mid = Concat((Series((Edge(C3, 8), inner)), Edge(C3, 8)))
    return BlockGraph(Add((Series((Edge(C3, 16), mid)), Edge(C3, 16), Edge(C5, 16))), 16)


class TestBlockGraph:
    def test_single(self):
        g = BlockGraph.single(16)
        assert (g.num_ops, g.height, g.width()) == (1, 1, 1.0)

    def test_nested_height_width(self):
        g = nested_block()
        g.validate()
        assert g.height == 4
        assert g.width() == pytest.approx(3.0)

    def test_none_op_height(self):
        g = BlockGraph(Add((Edge(C3, 8), Edge(NONE, 8))), 8)
        assert g.height == 1 and g.num_ops == 2

    def test_add_width_mismatch(self):
        with pytest.raises(ArchitectureError, match="unequal"):
            BlockGraph(Add((Edge(C3, 8), Edge(C3, 4))), 8).validate()

    def test_none_cannot_widen(self):
        with pytest.raises(ArchitectureError, match="widen"):
            BlockGraph(Series((Edge(C3, 4), Edge(NONE, 8))), 8).validate()

    def test_output_width_must_match(self):
        with pytest.raises(ArchitectureError):
            BlockGraph(Edge(C3, 8), 16).validate()

    def test_json_round_trip(self):
        g = nested_block()
        assert BlockGraph.from_json(json.loads(json.dumps(g.to_json()))) == g

    def test_unknown_node_type(self):
        with pytest.raises(ArchitectureError):
            BlockGraph.from_json({"channels": 4, "root": {"type": "loop", "children": []}})


class TestGrowth:
    def test_branching_example(self):
        g = branching(BlockGraph.single(16), 0, ops=(C5, NONE))
        assert g.root == Series((Edge(C3, 16), Concat((Edge(C5, 8), Edge(NONE, 8)))))
        assert (g.num_ops, g.height) == (3, 2)

    def test_branching_odd_filters(self):
        g = branching(BlockGraph.single(5), 0, ops=(C3, C3))
        assert [e.filters for e in g.edges()] == [5, 3, 2]

    def test_branching_one_filter_rejected(self):
        g = BlockGraph(Concat((Edge(C3, 1), Edge(C3, 1))), 2)
        with pytest.raises(GrowthRejected):
            branching(g, 0, ops=(C3, C3))

    def test_splitting_example(self):
        g = splitting(BlockGraph.single(16), 0, op=C5)
        assert g.root == Add((Edge(C3, 16), Edge(C5, 16)))
        assert (g.num_ops, g.height, g.width()) == (2, 1, 2.0)

    def test_splitting_merges_into_existing_add(self):
        g = splitting(splitting(BlockGraph.single(8), 0, op=C3), 1, op=C5)
        assert isinstance(g.root, Add) and len(g.root.children) == 3

    def test_edge_index_out_of_range(self):
        with pytest.raises(ArchitectureError):
            splitting(BlockGraph.single(8), 1, op=C3)

    @given(st.integers(0, 2**32 - 1), st.integers(0, 12), st.data())
    @settings(max_examples=60, deadline=None)
    def test_growth_invariants(self, seed, steps, data):
        g = grown_block(seed, steps)
        edge = data.draw(st.integers(0, g.num_ops - 1))
        op = data.draw(st.sampled_from(list(OpKind)))
        s = splitting(g, edge, op=op)
        s.validate()
        assert s.num_ops == g.num_ops + 1
        assert s.height >= g.height
        if g.edges()[edge].filters >= 2:
            b = branching(g, edge, ops=(op, C3))
            b.validate()
            assert b.num_ops == g.num_ops + 2
            assert b.height >= g.height

    @given(st.integers(0, 2**32 - 1), st.integers(0, 12))
    @settings(max_examples=40, deadline=None)
    def test_json_round_trip_after_growth(self, seed, steps):
        g = grown_block(seed, steps)
        assert BlockGraph.from_json(g.to_json()) == g

    def test_random_growth_deterministic(self):
        assert grown_block(5, 8) == grown_block(5, 8)


class TestNetworkSpec:
    def test_baseline_conv_cost(self):
        # stem, then per stack: three 3x3 blocks and a stride-2 reduction
        oracle = 3 * 16 * 9
        for s in range(3):
            w = 16 * 2 ** s
            oracle += 3 * w * w * 9 + w * 2 * w * 9
        assert oracle == 242352
        assert conv_cost(baseline_spec(16, 3)) == 242352

    def test_ledger_names_unique(self):
        spec = replace_block(baseline_spec(4, 1), 1, splitting(BlockGraph.single(8), 0, op=C5))
        names = [i.name for i in parameter_ledger(spec)]
        assert len(names) == len(set(names))

    def test_block_count_checked(self):
        with pytest.raises(ArchitectureError):
            NetworkSpec(16, 2, baseline_spec(16, 1).blocks)

    def test_block_width_checked(self):
        spec = replace_block(baseline_spec(4, 1), 0, BlockGraph.single(8))
        with pytest.raises(ArchitectureError):
            spec.validate()

    def test_json_round_trip(self):
        spec = random_model(3, np.random.default_rng(2), n_filters=8, n_blocks=2)
        again = NetworkSpec.loads(spec.dumps())
        assert again == spec and again.digest() == spec.digest()

    def test_bad_version(self):
        doc = baseline_spec(4, 1).to_json()
        doc["version"] = 99
        with pytest.raises(ArchitectureError):
            NetworkSpec.from_json(doc)

    def test_grow_changes_requested_blocks(self):
        spec = baseline_spec(8, 2)
        child = grow(spec, 2, 1, np.random.default_rng(0))
        changed = sum(a != b for a, b in zip(spec.blocks, child.blocks))
        assert changed == 2 and child.num_ops == spec.num_ops + sum(
            b.num_ops - a.num_ops for a, b in zip(spec.blocks, child.blocks))

    def test_structure_stats(self):
        blocks = list(baseline_spec(16, 1).blocks)
        blocks[0] = nested_block()
        stats = structure_stats(NetworkSpec(16, 1, tuple(blocks)))
        assert stats[0].height == 4 and stats[0].width == pytest.approx(3.0)
        assert stats[0].op_histogram == {"conv1x1": 0, "conv3x3": 8, "conv5x5": 1, "conv7x7": 0}
        assert stats[1].height == 1


def replace_block(spec, i, block):
    blocks = list(spec.blocks)
    blocks[i] = block
    return NetworkSpec(spec.n_filters, spec.n_blocks, tuple(blocks), spec.num_classes,
                       spec.input_shape, spec.neuron_layer)


class TestMaterialize:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_eta_matches_ledger(self, seed):
        spec = random_model(4, np.random.default_rng(seed), n_filters=4, n_blocks=1,
                            num_classes=3, input_shape=(3, 8, 8))
        net = materialize(spec)
        assert net.eta == parameter_count(spec)
        with no_grad():
            out = net(Tensor(np.zeros((2, 3, 8, 8), np.float32)))
        assert out.shape == (2, 3)

    def test_parameter_names_follow_ledger(self):
        spec = replace_block(baseline_spec(4, 1, input_shape=(3, 8, 8)), 0,
                             splitting(BlockGraph.single(4), 0, op=C5))
        net = materialize(spec)
        params = dict(net.named_parameters())
        for item in parameter_ledger(spec):
            assert params[item.name].size == item.count

    def test_same_seed_same_weights(self):
        spec = baseline_spec(4, 1, input_shape=(1, 8, 8))
        a, b = materialize(spec, seed=3), materialize(spec, seed=3)
        for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data)

    def test_invalid_spec_raises_before_allocation(self):
        bad = replace_block(baseline_spec(4, 1), 0, BlockGraph(Add((Edge(C3, 4), Edge(C3, 2))), 4))
        with pytest.raises(ArchitectureError):
            materialize(bad)
