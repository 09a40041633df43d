import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.lattice import (EmptyDomainError, GeometryError, LatticeDomain, Shape, annulus,
                                ball_region, delta_region, discretize, distance_to_set,
                                squared_distances_to_set, unit_steps)

small_sets = st.lists(st.tuples(*[st.integers(-4, 4)] * 3), min_size=1, max_size=30, unique=True)


def brute_ball(radius):
    r = int(radius)
    return [p for p in itertools.product(range(-r, r + 1), repeat=3)
            if sum(c * c for c in p) <= radius ** 2]


def test_unit_steps_are_signed_axes():
    steps = unit_steps(3)
    assert steps.shape == (6, 3)
    assert (np.abs(steps).sum(axis=1) == 1).all()
    assert (steps[::2] == -steps[1::2]).all()


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_ball_blowup_matches_enumeration(N):
    dom = discretize(Shape.ball(1.0), N)
    assert len(dom) == len(brute_ball(N))


def test_box_blowup_counts():
    dom = discretize(Shape.box([-1, -1, -1], [1, 1, 1]), 3)
    assert len(dom) == 7 ** 3


def test_empty_blowup_raises():
    shape = Shape.ball(0.1, center=(0.5, 0.5, 0.5))
    with pytest.raises(EmptyDomainError):
        discretize(shape, 1)


def test_low_dimension_rejected():
    with pytest.raises(GeometryError):
        Shape.ball(1.0, d=2)


@given(small_sets)
@settings(max_examples=60, deadline=None)
def test_index_and_neighbours_are_consistent(pts):
    dom = LatticeDomain(np.array(pts))
    assert (dom.index_of(dom.points) == np.arange(len(dom))).all()
    steps = unit_steps(3)
    for k, e in enumerate(steps):
        assert (dom.neighbors[:, k] == dom.index_of(dom.points + e)).all()
    present = {tuple(p) for p in pts}
    brute_inner = {p for p in present
                   if any(tuple(np.add(p, e)) not in present for e in steps)}
    assert {tuple(p) for p in dom.inner_boundary.tolist()} == brute_inner
    assert dom.index_of(np.array([[10, 10, 10]]))[0] == -1


def test_components_counts_separated_pieces():
    dom = LatticeDomain(np.array([[0, 0, 0], [1, 0, 0], [5, 0, 0]]))
    assert dom.components() == 2
    assert not dom.is_connected()


@given(small_sets, small_sets)
@settings(max_examples=60, deadline=None)
def test_squared_distance_matches_brute_force(xs, K):
    got = squared_distances_to_set(np.array(xs), np.array(K))
    want = [min(sum((a - b) ** 2 for a, b in zip(x, k)) for k in K) for x in xs]
    assert got.tolist() == want


def test_distance_to_set_of_point():
    assert distance_to_set([3, 4, 0], np.array([[0, 0, 0]])) == 5.0


def test_ball_region_points_and_boundary():
    B = ball_region((0, 0, 0), 2.0)
    assert len(B.points()) == len(brute_ball(2))
    boundary = {tuple(p) for p in B.boundary().tolist()}
    assert (0, 0, 0) not in boundary and (2, 0, 0) in boundary


def test_ball_region_rejects_bad_input():
    with pytest.raises(GeometryError):
        ball_region((0, 0, 0), -1)
    with pytest.raises(GeometryError):
        ball_region((0.5, 0, 0), 1)


def test_annulus_keeps_inner_ring():
    A = {tuple(p) for p in annulus((0, 0, 0), 2, 4).tolist()}
    assert (0, 0, 0) not in A and (2, 0, 0) in A and (4, 0, 0) in A and (5, 0, 0) not in A
    with pytest.raises(GeometryError):
        annulus((0, 0, 0), 3, 2)


def test_delta_region_is_far_set():
    dom = discretize(Shape.ball(1.0), 10)
    B = ball_region((0, 0, 0), 2)
    gamma = 0.5
    D = delta_region(dom, B, gamma)
    dist = np.sqrt(squared_distances_to_set(dom.points, B.points()))
    assert (D.mask == (dist > 10 ** gamma + 1e-9)).all()
    nbr = dom.neighbors
    for i in np.flatnonzero(D.boundary_mask):
        assert any(j >= 0 and not D.mask[j] for j in nbr[i])
    with pytest.raises(GeometryError):
        delta_region(dom, B, 1.5)
