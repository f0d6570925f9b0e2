import itertools
import math

import numpy as np
import pytest

from ddt.errors import DimensionError
from ddt.gaussian_ot import FullGaussian, w2_full
from ddt.prototype import build_prototype, class_mean, component_distance


def test_two_classes_four_dims():
    proto = build_prototype(2, 4)
    np.testing.assert_array_equal(proto.means, [[1, 1, 0, 0], [0, 0, 1, 1]])
    assert proto.per_class == 2


def test_single_class_activates_everything():
    np.testing.assert_array_equal(build_prototype(1, 3).means, [[1, 1, 1]])


@pytest.mark.parametrize("n_classes,dim", [(3, 4), (4, 2), (0, 4), (2, 5)])
def test_rejects_bad_shapes(n_classes, dim):
    with pytest.raises(DimensionError):
        build_prototype(n_classes, dim)


def test_class_mean():
    proto = build_prototype(2, 4)
    np.testing.assert_array_equal(class_mean(proto, 1), [0, 0, 1, 1])
    np.testing.assert_array_equal(class_mean(proto, 0), [1, 1, 0, 0])
    with pytest.raises(IndexError):
        class_mean(proto, 2)
    with pytest.raises(IndexError):
        class_mean(proto, -1)


def test_means_are_read_only():
    proto = build_prototype(2, 4)
    with pytest.raises(ValueError):
        class_mean(proto, 0)[0] = 5.0


@pytest.mark.parametrize("n_classes,dim", [(c, c * p) for c in (1, 2, 3, 4, 8) for p in (1, 2, 3, 5, 8)])
def test_invariants_by_enumeration(n_classes, dim):
    proto = build_prototype(n_classes, dim)
    p = dim // n_classes
    assert set(np.unique(proto.means)) <= {0.0, 1.0}
    assert np.all(proto.means.sum(axis=1) == p)
    for c in range(n_classes):
        assert np.flatnonzero(proto.means[c]).tolist() == list(range(p * c, p * (c + 1)))
    for a, b in itertools.combinations(range(n_classes), 2):
        assert proto.means[a] @ proto.means[b] == 0
    np.testing.assert_array_equal(proto.means.sum(axis=0), np.ones(dim))


def test_build_is_pure():
    a, b = build_prototype(4, 8), build_prototype(4, 8)
    assert a == b
    np.testing.assert_array_equal(a.means, b.means)


@pytest.mark.parametrize("n_classes,dim,c1,c2,expected", [
    (2, 4, 0, 1, 2.0),
    (2, 4, 0, 0, 0.0),
    (4, 8, 1, 3, 2.0),
])
def test_component_distance_examples(n_classes, dim, c1, c2, expected):
    proto = build_prototype(n_classes, dim)
    assert component_distance(proto, c1, c2) == expected
    # oracle: the general W2 with both covariances the identity
    eye = np.ones(dim)
    oracle = w2_full(FullGaussian(class_mean(proto, c1), eye), FullGaussian(class_mean(proto, c2), eye))
    assert oracle == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("n_classes,dim", [(2, 4), (2, 16), (3, 9), (4, 8), (2, 256)])
def test_component_distance_all_pairs(n_classes, dim):
    proto = build_prototype(n_classes, dim)
    p = dim // n_classes
    for c1, c2 in itertools.product(range(n_classes), repeat=2):
        assert component_distance(proto, c1, c2) == (math.sqrt(2 * p) if c1 != c2 else 0.0)


def test_component_distance_bad_label():
    with pytest.raises(IndexError):
        component_distance(build_prototype(2, 4), 0, 2)
