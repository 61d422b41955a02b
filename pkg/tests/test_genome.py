import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eigen_nas.evaluation.layers import maxpool_forward
from eigen_nas.genome import (
    Classifier, Concat, Conv, CyclicGraph, DegenerateShape, GlobalPool, InvalidGenome, ParseError, Pool,
    ShapeMismatch, TensorShape, count_params, decode_genome, encode_genome, genome_from_record,
    genome_to_record, infer_shapes, new_seed_genome, relabel, topological_order, validate,
)

from conftest import genomes
from helpers import chain, graph, isomorphic, oracle_param_count, pool_by_windows


def codes(genome):
    return {v.code for v in validate(genome)}


class TestSeed:
    def test_cifar_shape(self):
        g = new_seed_genome(TensorShape(3, 32, 32), 10)
        assert len(g.nodes) == 2
        assert isinstance(g.kinds[0], GlobalPool) and isinstance(g.kinds[1], Classifier)
        assert infer_shapes(g)[0] == (3, 1, 1)
        assert validate(g) == []

    def test_digits_shape(self):
        g = new_seed_genome(TensorShape(1, 8, 8), 10)
        assert infer_shapes(g)[0] == (1, 1, 1)

    def test_class_count_does_not_change_topology(self):
        a = new_seed_genome(TensorShape(3, 32, 32), 10)
        b = new_seed_genome(TensorShape(3, 32, 32), 100)
        assert a.edges == b.edges
        assert b.kinds[b.classifier].num_classes == 100

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            new_seed_genome(TensorShape(3, 32, 32), 1)

    def test_shape_fields_positive(self):
        with pytest.raises(ValueError):
            TensorShape.of(0, 4, 4)


class TestShapes:
    def test_strided_conv_halves(self):
        g = chain([Conv(stride=2)])
        assert infer_shapes(g)[0] == (32, 16, 16)

    def test_concat_adds_depth(self):
        g = graph(
            {0: Conv(48), 1: Conv(16), 2: Concat(), 3: GlobalPool(), 4: Classifier(10)},
            [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)], input_shape=(3, 8, 8))
        assert infer_shapes(g)[2] == (64, 8, 8)

    def test_pool_ceil_mode_on_5x5(self):
        g = chain([Pool()], input_shape=(1, 5, 5))
        assert infer_shapes(g)[0] == (1, 3, 3)
        # the trainer's pooling kernel must agree with an explicit window enumeration
        grid = np.random.default_rng(0).standard_normal((5, 5))
        out, _ = maxpool_forward(grid.reshape(1, 5, 5, 1))
        np.testing.assert_array_equal(out[0, :, :, 0], pool_by_windows(grid))

    @pytest.mark.parametrize("n", range(1, 12))
    def test_pool_size_matches_window_count(self, n):
        g = chain([Pool()], input_shape=(1, n, n + 1))
        expected = pool_by_windows(np.zeros((n, n + 1))).shape
        assert infer_shapes(g)[0].spatial == expected

    def test_concat_mismatch(self):
        g = graph(
            {0: Conv(), 1: Pool(), 2: Concat(), 3: GlobalPool(), 4: Classifier(10)},
            [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)])
        with pytest.raises(ShapeMismatch) as e:
            infer_shapes(g)
        assert e.value.node == 2
        assert [v.nodes for v in validate(g) if v.code == "ShapeMismatch"] == [(2,)]

    def test_degenerate(self):
        # spatial 1x1 cannot be pooled further without reaching zero under floor semantics,
        # but ceil keeps it at 1; a zero-sized input is the real degenerate case
        g = chain([Pool()] * 8, input_shape=(1, 1, 1))
        assert infer_shapes(g)[7].spatial == (1, 1)
        with pytest.raises(DegenerateShape):
            infer_shapes(chain([Conv()], input_shape=(1, 0, 4)))

    @given(genomes())
    def test_shapes_obey_kind_rules(self, g):
        shapes = infer_shapes(g)
        for i, kind in g.kinds.items():
            ins = [shapes[p] for p in g.preds[i]] or [g.input_shape]
            out = shapes[i]
            if isinstance(kind, Conv):
                assert out == (kind.channels, -(-ins[0].width // kind.stride), -(-ins[0].height // kind.stride))
            elif isinstance(kind, Pool):
                assert out == (ins[0].depth, -(-ins[0].width // 2), -(-ins[0].height // 2))
            elif isinstance(kind, Concat):
                assert ins[0].spatial == ins[1].spatial == out.spatial
                assert out.depth == ins[0].depth + ins[1].depth
            elif isinstance(kind, GlobalPool):
                assert out == (ins[0].depth, 1, 1)
            else:
                assert out == (g.num_classes, 1, 1)


class TestValidate:
    def test_cycle(self):
        g = graph({0: Conv(), 1: Conv(), 2: GlobalPool(), 3: Classifier(10)}, [(0, 1), (1, 0), (1, 2), (2, 3)])
        assert "CyclicGraph" in codes(g)

    def test_missing_classifier(self):
        g = graph({0: Conv(), 1: GlobalPool()}, [(0, 1)])
        assert "ClassifierCount" in codes(g)

    def test_classifier_must_follow_global_pool(self):
        g = graph({0: Conv(), 1: Classifier(10)}, [(0, 1)])
        assert "ClassifierInput" in codes(g)

    def test_two_inputs(self):
        g = graph({0: Conv(), 1: Conv(), 2: Concat(), 3: GlobalPool(), 4: Classifier(10)},
                  [(0, 2), (1, 2), (2, 3), (3, 4)])
        assert "InputCount" in codes(g)

    def test_concat_arity(self):
        g = chain([Conv(), Concat()])
        assert "InDegree" in codes(g)

    def test_dead_node(self):
        g = graph({0: Conv(), 1: Conv(), 2: GlobalPool(), 3: Classifier(10)}, [(0, 1), (0, 2), (2, 3)])
        assert "DeadNode" in codes(g)

    def test_illegal_channel_count(self):
        assert "InvalidKind" in codes(chain([Conv(channels=17)]))
        assert "InvalidKind" in codes(chain([Conv(kernel=5)]))

    def test_seed_is_valid(self):
        assert validate(new_seed_genome(TensorShape(1, 8, 8), 10)) == []


class TestTopologicalOrder:
    def test_seed(self):
        assert topological_order(new_seed_genome(TensorShape(3, 32, 32), 10)) == [0, 1]

    def test_diamond_breaks_ties_by_id(self):
        g = graph({0: Conv(), 1: Conv(), 2: Conv(), 3: Concat(), 4: GlobalPool(), 5: Classifier(10)},
                  [(0, 2), (0, 1), (1, 3), (2, 3), (3, 4), (4, 5)])
        assert topological_order(g) == [0, 1, 2, 3, 4, 5]

    def test_cycle_raises(self):
        g = graph({0: Conv(), 1: Conv(), 2: GlobalPool(), 3: Classifier(10)}, [(0, 1), (1, 0), (1, 2), (2, 3)])
        with pytest.raises(CyclicGraph):
            topological_order(g)

    @given(genomes())
    def test_is_permutation_respecting_edges(self, g):
        order = topological_order(g)
        assert sorted(order) == sorted(g.node_ids)
        pos = {n: i for i, n in enumerate(order)}
        assert all(pos[a] < pos[b] for a, b in g.edges)


class TestParams:
    def test_seed(self):
        assert count_params(new_seed_genome(TensorShape(3, 32, 32), 10)) == 40

    def test_one_conv(self):
        g = chain([Conv()])
        assert count_params(g) == 1290 == oracle_param_count(g)

    def test_pointwise_conv_contribution(self):
        base = chain([Conv(16, 1)], input_shape=(16, 4, 4))
        head = 16 * 10 + 10
        assert count_params(base) - head == 304

    @given(genomes())
    def test_matches_oracle(self, g):
        assert count_params(g) == oracle_param_count(g)

    @given(genomes(), st.randoms())
    def test_relabel_invariant(self, g, r):
        ids = g.node_ids
        new = list(range(100, 100 + len(ids)))
        r.shuffle(new)
        h = relabel(g, dict(zip(ids, new)))
        assert count_params(h) == count_params(g)
        assert isomorphic(g, h)


class TestRecords:
    def test_seed_round_trip(self):
        g = new_seed_genome(TensorShape(3, 32, 32), 10)
        assert isomorphic(decode_genome(encode_genome(g)), g)

    @given(genomes())
    def test_round_trip(self, g):
        back = decode_genome(encode_genome(g))
        assert back == g and isomorphic(back, g)
        assert back.next_id == g.next_id

    @given(genomes())
    def test_encoding_deterministic_and_sorted(self, g):
        text = encode_genome(g)
        assert text == encode_genome(decode_genome(text))
        ids = [n["id"] for n in json.loads(text)["nodes"]]
        assert ids == sorted(ids)

    def test_missing_classifier(self):
        rec = genome_to_record(new_seed_genome(TensorShape(3, 32, 32), 10))
        rec["nodes"] = [n for n in rec["nodes"] if n["kind"] != "classifier"]
        rec["edges"] = []
        with pytest.raises(InvalidGenome) as e:
            genome_from_record(rec)
        assert "ClassifierCount" in {v.code for v in e.value.violations}

    def test_truncated_text(self):
        text = encode_genome(chain([Conv(), Pool()]))
        with pytest.raises(ParseError):
            decode_genome(text[: len(text) // 2])

    @pytest.mark.parametrize("mutate", [
        lambda r: r.pop("nodes"),
        lambda r: r["nodes"][0].update(kind="dense"),
        lambda r: r["nodes"][0].update(params={"channels": "many"}),
        lambda r: r.update(edges=[[0]]),
        lambda r: r.update(input_shape=[3, 32]),
    ])
    def test_malformed_records(self, mutate):
        rec = genome_to_record(chain([Conv()]))
        mutate(rec)
        with pytest.raises(ParseError):
            genome_from_record(rec)

    def test_genome_is_not_mutated_by_record_building(self):
        g = chain([Conv(), Pool()])
        before = encode_genome(g)
        genome_to_record(g)["nodes"].clear()
        assert encode_genome(g) == before
