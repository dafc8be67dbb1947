import numpy as np
import pytest

from fedgs.core import (
    ClassCounts,
    ClassDistribution,
    FederationTopology,
    divergence,
    estimate_global_distribution,
    normalize,
)
from fedgs.errors import (
    EmptySetError,
    InvalidConfigError,
    LengthMismatchError,
    ZeroTotalError,
)


def test_normalize_basic():
    got = normalize([2, 6, 2])
    assert np.allclose(got, [0.2, 0.6, 0.2])
    assert got.sum() == pytest.approx(1.0)


def test_normalize_fuzz_matches_manual_division():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.integers(0, 100, size=rng.integers(1, 30)).astype(float)
        if v.sum() == 0:
            v[0] = 1
        assert np.allclose(normalize(v), v / v.sum())


def test_normalize_errors():
    with pytest.raises(ZeroTotalError):
        normalize([0, 0, 0])
    with pytest.raises(LengthMismatchError):
        normalize([])
    with pytest.raises(LengthMismatchError):
        normalize([[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        normalize([1, -1, 2])
    with pytest.raises(ValueError):
        normalize([1, np.inf])


def test_class_counts():
    c = ClassCounts(np.array([3, 0, 5]))
    assert c.classes == 3
    assert c.total == 8
    assert np.allclose(c.distribution().probs, [3 / 8, 0, 5 / 8])
    d = c + ClassCounts(np.array([1, 1, 1]))
    assert d.counts.tolist() == [4, 1, 6]


def test_class_counts_validation():
    with pytest.raises(ValueError):
        ClassCounts(np.array([1, -2]))
    with pytest.raises(ValueError):
        ClassCounts(np.array([1.5, 2.0]))
    with pytest.raises(LengthMismatchError):
        ClassCounts(np.array([]))
    with pytest.raises(LengthMismatchError):
        ClassCounts(np.array([1, 2])) + ClassCounts(np.array([1, 2, 3]))
    # integral floats are accepted and coerced
    c = ClassCounts(np.array([1.0, 2.0]))
    assert c.counts.dtype == np.int64


def test_class_distribution_validation():
    ClassDistribution(np.array([0.25, 0.75]))
    with pytest.raises(ValueError):
        ClassDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        ClassDistribution(np.array([-0.1, 1.1]))
    assert np.allclose(ClassDistribution.from_counts([1, 3]).probs, [0.25, 0.75])


def test_estimate_global_distribution_weights_by_size():
    # one big skewed device dominates a small balanced one
    big = ClassCounts(np.array([90, 10]))
    small = ClassCounts(np.array([5, 5]))
    est = estimate_global_distribution([big, small])
    assert np.allclose(est.probs, [95 / 110, 15 / 110])


def test_estimate_global_distribution_accepts_arrays():
    est = estimate_global_distribution([np.array([1, 0]), np.array([0, 3])])
    assert np.allclose(est.probs, [0.25, 0.75])
    with pytest.raises(EmptySetError):
        estimate_global_distribution([])
    with pytest.raises(LengthMismatchError):
        estimate_global_distribution([np.array([1, 2]), np.array([1, 2, 3])])


def test_divergence_is_l2():
    p = np.array([0.5, 0.5])
    q = np.array([0.1, 0.9])
    assert divergence(p, q) == pytest.approx(np.sqrt(0.16 + 0.16))
    assert divergence(p, p) == 0.0
    assert divergence(ClassDistribution(p), ClassDistribution(q)) == pytest.approx(
        np.linalg.norm(p - q)
    )
    with pytest.raises(LengthMismatchError):
        divergence(p, np.array([1.0]))


def test_topology_properties():
    topo = FederationTopology(
        groups=3, group_sizes=[10, 12, 11], selected_per_group=5,
        presampled_per_group=2, optimized_per_group=3, classes=10,
        iterations_per_round=4, rounds=6,
    )
    assert topo.total_devices == 33
    assert topo.total_iterations == 24


@pytest.mark.parametrize(
    "kw",
    [
        dict(groups=0, group_sizes=[], selected_per_group=1, presampled_per_group=0, optimized_per_group=1, classes=2),
        dict(groups=2, group_sizes=[5], selected_per_group=1, presampled_per_group=0, optimized_per_group=1, classes=2),
        dict(groups=1, group_sizes=[5], selected_per_group=3, presampled_per_group=1, optimized_per_group=1, classes=2),
        dict(groups=1, group_sizes=[2], selected_per_group=3, presampled_per_group=0, optimized_per_group=3, classes=2),
        dict(groups=1, group_sizes=[5], selected_per_group=2, presampled_per_group=1, optimized_per_group=1, classes=1),
        dict(groups=1, group_sizes=[5], selected_per_group=2, presampled_per_group=1, optimized_per_group=1, classes=2, rounds=-1),
        dict(groups=1, group_sizes=[5], selected_per_group=2, presampled_per_group=1, optimized_per_group=1, classes=2, learning_rate=0.0),
    ],
)
def test_topology_rejects_bad_configs(kw):
    with pytest.raises(InvalidConfigError):
        FederationTopology(**kw)


def test_topology_zero_rounds_allowed():
    topo = FederationTopology(
        groups=1, group_sizes=[3], selected_per_group=2,
        presampled_per_group=1, optimized_per_group=1, classes=2, rounds=0,
    )
    assert topo.total_iterations == 0
