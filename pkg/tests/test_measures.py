import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entstab.measures import (
    DensitySpec, MeasureFormatError, format_measure, grid_quadrature, make_discrete, parse_measure,
    random_ball_measure, read_measure, second_moment, two_point_measure, uniform_ball, uniform_box,
    write_measure,
)


def test_single_atom_is_renormalized():
    m = make_discrete([(0.0,)], [2.0])
    assert m.size == 1 and m.dim == 1
    assert m.weights[0] == 1.0


def test_zero_weight_atoms_are_dropped():
    m = make_discrete([(0.0,), (1.0,)], [1.0, 0.0])
    assert m.size == 1
    np.testing.assert_array_equal(m.points, [[0.0]])


def test_symmetric_pair_matches_two_point_family():
    m = make_discrete([(1, 0), (-1, 0)], [0.5, 0.5])
    assert m.same_as(two_point_measure(1.0, 0.0))


@pytest.mark.parametrize("points, weights", [
    ([(0.0, 1.0), (1.0,)], [0.5, 0.5]),
    ([], []),
    ([(0.0,), (1.0,)], [0.5, -0.1]),
    ([(0.0,)], [0.0]),
    ([(0.0,), (1.0,)], [1.0]),
])
def test_make_discrete_rejects_bad_input(points, weights):
    with pytest.raises(ValueError):
        make_discrete(points, weights)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=12).filter(lambda w: sum(w) > 1e-6))
@settings(max_examples=60, deadline=None)
def test_weights_always_normalized_and_positive(weights):
    pts = np.arange(len(weights), dtype=float)[:, None]
    m = make_discrete(pts, weights)
    assert abs(m.weights.sum() - 1.0) <= 1e-12
    assert np.all(m.weights > 0)


def test_two_point_examples():
    np.testing.assert_allclose(two_point_measure(1, 0).points, [[1, 0], [-1, 0]], atol=1e-15)
    np.testing.assert_allclose(two_point_measure(1, math.pi / 2).points, [[0, 1], [0, -1]], atol=1e-15)
    np.testing.assert_allclose(two_point_measure(2, math.pi / 6).points,
                               [[math.sqrt(3), 1], [-math.sqrt(3), -1]], atol=1e-14)
    with pytest.raises(ValueError):
        two_point_measure(0.0, 0.3)


@given(st.floats(0.1, 5.0), st.floats(-6.0, 6.0))
@settings(max_examples=40, deadline=None)
def test_two_point_half_turn_symmetry(R, theta):
    a = two_point_measure(R, theta)
    b = two_point_measure(R, theta + math.pi)
    np.testing.assert_allclose(a.points[::-1], b.points, atol=1e-12)
    assert second_moment(a) == pytest.approx(R * R, rel=1e-12)


def test_second_moment_examples():
    assert second_moment(make_discrete([(0.0, 0.0)], [1.0])) == 0.0
    assert second_moment(make_discrete([(1, 0), (0, 2)], [0.5, 0.5])) == pytest.approx(2.5)


def test_box_midpoint_grid():
    m = grid_quadrature(uniform_box([(0.0, 1.0)], 1), 4)
    np.testing.assert_allclose(m.points[:, 0], [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(m.weights, 0.25)


def test_coarse_disk_is_valid():
    m = grid_quadrature(uniform_ball(1.0, 2), 2)
    assert m.size > 0
    assert abs(m.weights.sum() - 1.0) <= 1e-12


def test_disk_second_moment_converges():
    errs = [abs(second_moment(grid_quadrature(uniform_ball(1.0, 2), n)) - 0.5) for n in (32, 64, 128, 256)]
    assert errs[2] <= 0.02 * 0.5
    # error shrinks by roughly the refinement factor; allow one noisy step
    assert errs[-1] < errs[0]
    assert sum(b < a for a, b in zip(errs, errs[1:])) >= 2


def test_dropped_mass_reported():
    m, dropped = grid_quadrature(uniform_ball(1.0, 2), 128, return_dropped=True)
    assert dropped == pytest.approx(1 - math.pi / 4, abs=0.02)


def test_custom_grid_values():
    spec = DensitySpec("custom-grid-values", 1, bounds=[(0.0, 1.0)], values=lambda x: x[:, 0])
    m = grid_quadrature(spec, 100)
    assert float(m.weights @ m.points[:, 0]) == pytest.approx(2 / 3, abs=1e-4)


@pytest.mark.parametrize("kwargs", [
    dict(kind="uniform-ball", dim=2, radius=-1.0),
    dict(kind="uniform-box", dim=1, bounds=[(1.0, 0.0)]),
    dict(kind="sphere", dim=2, radius=1.0),
])
def test_bad_density_specs(kwargs):
    with pytest.raises(ValueError):
        DensitySpec(**kwargs)


def test_measure_file_round_trip(tmp_path, rng):
    m = random_ball_measure(rng, 6, 3)
    path = tmp_path / "m.txt"
    write_measure(m, path)
    back = read_measure(path)
    np.testing.assert_array_equal(back.points, m.points)
    np.testing.assert_allclose(back.weights, m.weights, rtol=1e-15)
    assert parse_measure(format_measure(m)).same_as(m)


@pytest.mark.parametrize("text, where", [
    ("2 2\n0.5 1 0\n0.5 x 0\n", ":3:"),
    ("2 2\n0.5 1 0\n0.5 1\n", ":3:"),
    ("two 2\n", ":1:"),
    ("1 2\n-0.5 1\n0.5 2\n", ":2:"),
])
def test_parse_errors_carry_line_numbers(text, where):
    with pytest.raises(MeasureFormatError, match=where):
        parse_measure(text, "f")


def test_parse_rejects_unnormalizable():
    with pytest.raises(MeasureFormatError, match="normaliz"):
        parse_measure("1 2\n0 1\n0 2\n")


def test_random_ball_measure_stays_in_ball(rng):
    for _ in range(20):
        m = random_ball_measure(rng, 8, 2, 1.5)
        assert m.radius() <= 1.5 + 1e-12
