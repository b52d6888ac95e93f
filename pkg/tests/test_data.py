import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowpool.data import (
    Dataset, RandomSource, build_mapping, gen_blobs, gen_property_tabular, pathway_digits,
    sample_dq, sample_with_property, split_auxiliary,
)
from shadowpool.exceptions import InputError, ShapeError
from shadowpool.pool import enumerate_pathways, pathway_index


def test_random_source_streams_are_reproducible_and_distinct():
    rs = RandomSource(7)
    a = rs.stream("x").random(5)
    np.testing.assert_array_equal(a, RandomSource(7).stream("x").random(5))
    assert not np.array_equal(a, rs.stream("y").random(5))
    assert rs.child("k").seed == RandomSource(7).child("k").seed


def test_gen_blobs_is_deterministic_and_balanced():
    a, b = gen_blobs(3, 20, 4, 5, 0.3), gen_blobs(3, 20, 4, 5, 0.3)
    assert a.equals(b)
    assert np.bincount(a.labels).tolist() == [20] * 4
    assert a.dim == 5 and len(a) == 80


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.floats(0.0, 1.0))
def test_property_ratio_is_exact(n, ratio):
    d = gen_property_tabular(0, n, 3, ratio)
    assert int(d.property_flags.sum()) == int(round(ratio * n))


def test_property_flag_shifts_first_feature():
    d = gen_property_tabular(0, 4000, 4, 0.5)
    gap = d.features[d.property_flags == 1, 0].mean() - d.features[d.property_flags == 0, 0].mean()
    assert gap == pytest.approx(1.5, abs=0.15)


def test_sample_with_property_exact_ratio():
    d = gen_property_tabular(0, 1000, 3, 0.5)
    s = sample_with_property(d, 200, 0.3, 0)
    assert int(s.property_flags.sum()) == 60 and len(s) == 200
    with pytest.raises(InputError):
        sample_with_property(d, 900, 0.9, 0)


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.zeros((2, 2)), [0, 1], ids=[5, 5])
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 2)), [0, 1, 1])
    d = Dataset(np.arange(6.0).reshape(3, 2), [0, 1, 0], ids=[10, 20, 30])
    np.testing.assert_array_equal(d.select([30, 10]).ids, [30, 10])
    with pytest.raises(InputError):
        d.select([99])


def test_pathway_enumeration_is_lexicographic():
    paths = enumerate_pathways(3, 2)
    assert paths[:4] == [(0, 0), (0, 1), (0, 2), (1, 0)]
    for w, p in enumerate(paths):
        assert pathway_index(p, 3) == w
        assert tuple(pathway_digits(w, 3, 2)) == p


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_mapping_is_one_hot_partition(m, l, seed):
    n = m ** l * 3 + seed % 7
    ids = np.arange(100, 100 + n)
    mapping = build_mapping(ids, m, l, seed)
    dense = mapping.to_dense()
    assert (dense.sum(axis=1) == 1).all()
    sizes = mapping.subset_sizes()
    assert sizes.max() - sizes.min() <= 1
    for layer in range(l):
        shares = [mapping.expert_ids(layer, e, m, l).size for e in range(m)]
        assert max(shares) - min(shares) <= m ** (l - 1)


def test_mapping_rejects_too_few_examples():
    with pytest.raises(InputError):
        build_mapping(np.arange(5), 3, 2, 0)


def test_mapping_uniform_over_seeds():
    hits = np.zeros(9)
    for seed in range(900):
        hits[build_mapping(np.arange(18), 3, 2, seed).pathway_of(0)] += 1
    # each pathway expected 100 times; 5 sigma band
    assert np.all(np.abs(hits - 100) < 5 * np.sqrt(100 * (8 / 9)))


def test_sample_dq_size_and_subset(blobs):
    dq = sample_dq(blobs, 0.1, 0)
    assert len(dq) == 9
    assert np.isin(dq.ids, blobs.ids).all()


def test_split_policies(blobs):
    disjoint = split_auxiliary(blobs, 3, 20, 0, policy="disjoint")
    flat = np.concatenate(disjoint.subsets)
    assert np.unique(flat).size == 60
    with pytest.raises(InputError):
        split_auxiliary(blobs, 5, 20, 0, policy="disjoint")
    with pytest.raises(InputError):
        split_auxiliary(blobs, 2, 20, 0, policy="bogus")
