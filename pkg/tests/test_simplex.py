import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_orthogonal
from ucdsc.simplex import (
    DegenerateCentersError,
    DimensionError,
    SimplexCenters,
    build_simplex,
    nearest_center,
    nearest_centers,
    uncertainty_ratio,
    uncertainty_ratios,
)


def test_two_classes_one_dim():
    c = build_simplex(2, 1, 1.0)
    assert sorted(c.vertices.ravel().tolist()) == pytest.approx([-1.0, 1.0], abs=1e-15)
    # Householder construction puts class 0 at +1.
    assert c.vertices[0, 0] == pytest.approx(1.0)


def test_triangle():
    c = build_simplex(3, 2, 1.0)
    gram = c.vertices @ c.vertices.T
    off = gram[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, -0.5, rtol=1e-12)
    np.testing.assert_allclose(np.diag(gram), 1.0, rtol=1e-12)


def test_zero_padding_and_scale():
    c = build_simplex(4, 5, 100.0)
    np.testing.assert_allclose(np.linalg.norm(c.vertices, axis=1), 100.0, rtol=1e-12)
    gram = c.vertices @ c.vertices.T
    np.testing.assert_allclose(gram[~np.eye(4, dtype=bool)], -10000.0 / 3, rtol=1e-12)
    assert np.all(c.vertices[:, 3:] == 0.0)


def test_deterministic():
    a = build_simplex(7, 9, 3.5)
    b = build_simplex(7, 9, 3.5)
    assert a.vertices.tobytes() == b.vertices.tobytes()


@pytest.mark.parametrize(
    "args, exc",
    [((3, 1, 1.0), DimensionError), ((1, 3, 1.0), ValueError), ((3, 2, 0.0), ValueError), ((3, 2, -1.0), ValueError)],
)
def test_build_errors(args, exc):
    with pytest.raises(exc):
        build_simplex(*args)


def test_vertices_immutable():
    c = build_simplex(3, 2, 1.0)
    with pytest.raises(ValueError):
        c.vertices[0, 0] = 5.0


@pytest.mark.parametrize("c", [2, 3, 5, 17, 64])
@pytest.mark.parametrize("extra", [0, 1, 30])
def test_invariants_hold(c, extra):
    s = build_simplex(c, c - 1 + extra, 7.0)
    assert s.check_invariants(1e-9)


def test_json_roundtrip():
    s = build_simplex(5, 6, 100.0)
    back = SimplexCenters.from_json(s.to_json())
    assert back == s
    assert set(json.loads(s.to_json())) == {"num_classes", "feature_dim", "radius", "vertices"}


class TestNearestCenter:
    def test_at_vertex(self):
        s = build_simplex(4, 3, 2.0)
        assert nearest_center(s.vertices[2], s) == (2, 0.0)

    def test_origin_tie_goes_to_lowest(self):
        s = build_simplex(5, 4, 3.0)
        idx, sq = nearest_center(np.zeros(4), s)
        assert idx == 0
        assert sq == pytest.approx(9.0, rel=1e-12)

    def test_hand_case(self):
        s = build_simplex(2, 1, 1.0)
        idx, sq = nearest_center([0.25], s)
        assert idx == 0
        assert sq == pytest.approx(0.5625, abs=1e-15)

    def test_dimension_mismatch(self):
        s = build_simplex(3, 2, 1.0)
        with pytest.raises(DimensionError):
            nearest_center(np.zeros(3), s)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        s = build_simplex(6, 8, 10.0)
        f = rng.normal(size=(50, 8)) * 10
        idx, sq = nearest_centers(f, s)
        for i in range(50):
            assert (idx[i], sq[i]) == pytest.approx(nearest_center(f[i], s))


class TestUncertaintyRatio:
    def test_zero_at_centers(self):
        s = build_simplex(4, 6, 100.0)
        for j in range(4):
            assert uncertainty_ratio(s.vertices[j], s) == 0.0

    def test_one_at_centroid(self):
        s = build_simplex(4, 6, 100.0)
        assert uncertainty_ratio(np.zeros(6), s) == pytest.approx(1.0, abs=1e-12)

    def test_two_class_midpoint(self):
        s = build_simplex(2, 1, 1.0)
        assert uncertainty_ratio([0.5], s) == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_degenerate_centers(self):
        bad = SimplexCenters(2, 1, 1.0, np.array([[1.0], [1.0]]))
        with pytest.raises(DegenerateCentersError):
            uncertainty_ratio([1.0], bad)

    def test_range_on_many_random_vectors(self):
        rng = np.random.default_rng(0)
        s = build_simplex(8, 10, 100.0)
        f = rng.normal(size=(10_000, 10)) * rng.uniform(0.1, 300, size=(10_000, 1))
        u = uncertainty_ratios(f, s)
        assert np.all((u >= 0) & (u <= 1))


@settings(max_examples=60, deadline=None)
@given(
    c=st.integers(2, 10),
    extra=st.integers(0, 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_rigid_motion_invariance(c, extra, seed):
    rng = np.random.default_rng(seed)
    d = c - 1 + extra
    s = build_simplex(c, d, 50.0)
    q = random_orthogonal(d, rng)
    rotated = SimplexCenters(c, d, 50.0, s.vertices @ q.T)
    f = rng.normal(size=(20, d)) * 40
    idx, _ = nearest_centers(f, s)
    idx_r, _ = nearest_centers(f @ q.T, rotated)
    np.testing.assert_array_equal(idx, idx_r)
    np.testing.assert_allclose(uncertainty_ratios(f, s), uncertainty_ratios(f @ q.T, rotated), atol=1e-9)
