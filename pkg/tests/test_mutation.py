import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eigen_nas.genome import (
    CHANNEL_CHOICES, Classifier, Concat, Conv, GlobalPool, Pool, TensorShape, count_params, encode_genome, infer_shapes,
    new_seed_genome, topological_order, validate,
)
from eigen_nas.mutation import (
    ALL_OPS, RETRY_BUDGET, Inapplicable, MutationOpKind as Op, apply_mutation_step, apply_named_mutation,
    duplicable_blocks, duplicate_block, mutate_child, partition_blocks, sample_step_count,
)

from conftest import genomes
from helpers import chain, graph

CIFAR = TensorShape(3, 32, 32)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestStepCount:
    def test_m1_always_one(self):
        r = rng()
        assert {sample_step_count(1, r) for _ in range(200)} == {1}

    def test_mean_for_m100(self):
        r = rng(11)
        draws = [sample_step_count(100, r) for _ in range(100_000)]
        assert min(draws) == 1 and max(draws) == 100
        assert 49.5 <= np.mean(draws) <= 51.5

    def test_reproducible(self):
        r1, r2 = rng(5), rng(5)
        assert [sample_step_count(10, r1) for _ in range(20)] == [sample_step_count(10, r2) for _ in range(20)]

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            sample_step_count(0, rng())


class TestNamedOps:
    def test_nine_kinds(self):
        assert len(Op) == 9 == len(ALL_OPS)

    def test_insert_pooling_into_seed(self):
        g = apply_named_mutation(new_seed_genome(CIFAR, 10), Op.INSERT_POOLING, rng())
        pools = g.ids_of(Pool)
        assert len(pools) == 1
        gp = g.ids_of(GlobalPool)[0]
        assert g.preds[gp] == (pools[0],)
        assert infer_shapes(g)[pools[0]].spatial == (16, 16)

    @pytest.mark.parametrize("op", [Op.REMOVE_CONVOLUTION, Op.REMOVE_POOLING, Op.REMOVE_CONCATENATION,
                                    Op.ALTER_STRIDE, Op.ALTER_FILTER_SIZE, Op.ALTER_NUMBER_OF_CHANNELS,
                                    Op.INSERT_CONCATENATION])
    def test_inapplicable_on_seed(self, op):
        with pytest.raises(Inapplicable):
            apply_named_mutation(new_seed_genome(CIFAR, 10), op, rng())

    def test_alter_channels(self):
        g = chain([Conv(32)])
        seen = set()
        for s in range(40):
            h = apply_named_mutation(g, Op.ALTER_NUMBER_OF_CHANNELS, rng(s))
            c = h.kinds[0].channels
            assert c in CHANNEL_CHOICES and c != 32
            assert validate(h) == []
            seen.add(c)
        assert seen == set(CHANNEL_CHOICES) - {32}

    def test_insert_convolution_defaults(self):
        g = apply_named_mutation(new_seed_genome(CIFAR, 10), Op.INSERT_CONVOLUTION, rng())
        (c,) = g.ids_of(Conv)
        assert g.kinds[c] == Conv(32, 3, 1)

    def test_insert_concat_merges_equal_sized_pair(self):
        g = chain([Conv(), Conv()], input_shape=(1, 8, 8))
        h = apply_named_mutation(g, Op.INSERT_CONCATENATION, rng())
        (c,) = h.ids_of(Concat)
        shapes = infer_shapes(h)
        a, b = h.preds[c]
        assert shapes[a].spatial == shapes[b].spatial
        assert validate(h) == []

    def test_remove_conv_splices(self):
        g = chain([Conv(), Pool(), Conv(16)])
        h = apply_named_mutation(g, Op.REMOVE_CONVOLUTION, rng(1))
        assert len(h.ids_of(Conv)) == 1
        assert validate(h) == []

    def test_remove_concat_prunes_dropped_branch(self):
        g = graph({0: Conv(), 1: Conv(16), 2: Concat(), 3: GlobalPool(), 4: Classifier(10)},
                  [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)])
        results = {encode_genome(apply_named_mutation(g, Op.REMOVE_CONCATENATION, rng(s))) for s in range(20)}
        assert len(results) == 2
        for text in results:
            assert '"concat"' not in text

    def test_new_ids_are_fresh(self):
        g = new_seed_genome(CIFAR, 10)
        h = apply_named_mutation(g, Op.INSERT_CONVOLUTION, rng())
        h = apply_named_mutation(h, Op.REMOVE_CONVOLUTION, rng())
        h = apply_named_mutation(h, Op.INSERT_CONVOLUTION, rng())
        assert h.ids_of(Conv) == [3]

    def test_site_reported(self):
        g, step = apply_mutation_step(chain([Conv()]), Op.ALTER_STRIDE, rng())
        assert step.site == (0, 2) and str(step) == "alter_stride@0,2"

    def test_every_op_reachable(self):
        g = mutate_child(new_seed_genome(CIFAR, 10), 30, rng(3))
        successes = {op: 0 for op in Op}
        r = rng(4)
        for _ in range(10_000):
            op = ALL_OPS[int(r.integers(9))]
            try:
                g = apply_named_mutation(g, op, r)
                successes[op] += 1
            except Inapplicable:
                pass
        assert all(successes.values()), successes


class TestMutateChild:
    def test_m1_single_edit(self):
        seed = new_seed_genome(CIFAR, 10)
        for s in range(30):
            trace = []
            child = mutate_child(seed, 1, rng(s), trace)
            assert len(trace) == 1
            assert child != seed

    def test_deterministic(self):
        seed = new_seed_genome(CIFAR, 10)
        assert encode_genome(mutate_child(seed, 100, rng(9))) == encode_genome(mutate_child(seed, 100, rng(9)))

    def test_thousand_children_valid(self):
        seed = new_seed_genome(CIFAR, 10)
        for s in range(1000):
            assert validate(mutate_child(seed, 10, rng(s))) == []

    @given(genomes(), st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_parent_untouched(self, parent, m, s):
        before = encode_genome(parent)
        mutate_child(parent, m, rng(s))
        assert encode_genome(parent) == before

    def test_budget_exhaustion_returns_accumulated(self, caplog, monkeypatch):
        from eigen_nas import mutation

        def never(genome, op, r):
            raise Inapplicable("blocked")

        monkeypatch.setattr(mutation, "apply_mutation_step", never)
        seed = new_seed_genome(CIFAR, 10)
        with caplog.at_level(logging.WARNING):
            child = mutation.mutate_child(seed, 5, rng())
        assert child is seed
        assert "retry budget" in caplog.text
        assert RETRY_BUDGET == 50


class TestBlocks:
    def test_seed_single_block(self):
        blocks = partition_blocks(new_seed_genome(CIFAR, 10))
        assert [b.node_ids for b in blocks] == [(0,)]
        assert blocks[0].spatial == (1, 1)
        assert duplicable_blocks(new_seed_genome(CIFAR, 10)) == []

    def test_pool_boundary_goes_with_output_size(self):
        g = chain([Conv(), Pool(), Conv()])
        blocks = partition_blocks(g)
        assert [b.node_ids for b in blocks] == [(0,), (1, 2), (3,)]
        assert [b.spatial for b in blocks] == [(32, 32), (16, 16), (1, 1)]

    @given(genomes())
    def test_is_partition(self, g):
        blocks = partition_blocks(g)
        flat = [i for b in blocks for i in b.node_ids]
        assert flat == [i for i in topological_order(g) if i != g.classifier]
        shapes = infer_shapes(g)
        for b in blocks:
            assert {shapes[i].spatial for i in b.node_ids} == {b.spatial}
        assert all(a.spatial != b.spatial for a, b in zip(blocks, blocks[1:]))


class TestDuplication:
    def test_simple_chain(self):
        g = chain([Conv(32)], input_shape=(1, 8, 8))
        h = duplicate_block(g, 0)
        convs = h.ids_of(Conv)
        assert len(convs) == 2
        order = topological_order(h)
        assert [type(h.kinds[i]).__name__ for i in order] == ["Conv", "Conv", "GlobalPool", "Classifier"]
        shapes = infer_shapes(h)
        assert all(shapes[i].spatial == (8, 8) for i in convs)
        assert count_params(h) > count_params(g)

    def test_conv_free_block(self):
        g = chain([Conv(), Pool()])
        with pytest.raises(Inapplicable):
            duplicate_block(g, 1)

    def test_strided_block_reaching_zero_is_inapplicable(self):
        # a second copy of a stride-2 block on 1x1 spatial keeps 1x1 under ceil semantics,
        # so degeneracy can only come from shape failures inside the copy, which are guarded
        g = chain([Conv(stride=2)], input_shape=(1, 1, 1))
        h = duplicate_block(g, 0)
        assert validate(h) == []

    def test_bad_index(self):
        with pytest.raises(IndexError):
            duplicate_block(chain([Conv()]), 5)

    def test_entry_reads_incoming_depth(self):
        g = chain([Conv(16), Pool(), Conv(48), Conv(96)])
        b = partition_blocks(g)[1]
        h = duplicate_block(g, 1)
        shapes = infer_shapes(h)
        copies = [i for i in h.node_ids if i >= g.next_id]
        assert len(copies) == len(b.node_ids)
        entry = copies[0]
        assert h.preds[entry] == (b.node_ids[-1],)
        assert shapes[h.preds[entry][0]].depth == 96

    @given(genomes(max_m=40), st.integers(0, 2**32 - 1))
    def test_closure_and_monotone_params(self, g, s):
        for index in duplicable_blocks(g):
            h = duplicate_block(g, index, rng(s))
            assert validate(h) == []
            assert count_params(h) > count_params(g)
            # mutation keeps working on duplicated genomes
            assert validate(mutate_child(h, 5, rng(s))) == []
