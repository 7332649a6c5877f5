import json
import math

import numpy as np
import pytest

from miq import Constellation, InvalidOrderError, build_pam, build_qam
from miq.errors import DomainError


def test_qpsk_points():
    c = build_qam(4)
    expected = {complex(i, q) / math.sqrt(2) for i in (-1, 1) for q in (-1, 1)}
    assert len(c.points) == 4
    for p in c.points:
        assert min(abs(p - e) for e in expected) < 1e-15
    np.testing.assert_array_equal(c.priors, np.full(4, 0.25))


def test_16qam_levels():
    c = build_qam(16)
    # scale from sum |x|^2 / 16 = 1 on the 4x4 grid of odd integers
    lev = np.array([-3, -1, 1, 3]) / math.sqrt(10)
    np.testing.assert_allclose(np.unique(c.points.real), lev, atol=1e-15)
    np.testing.assert_allclose(np.unique(c.points.imag), lev, atol=1e-15)


def test_row_major_order():
    c = build_qam(16)
    # I is the outer index, Q runs fastest, both ascending
    re = c.points.real.reshape(4, 4)
    im = c.points.imag.reshape(4, 4)
    assert np.all(np.diff(re[:, 0]) > 0) and np.all(re == re[:, :1])
    assert np.all(np.diff(im[0]) > 0) and np.all(im == im[:1])


@pytest.mark.parametrize("order", [5, 8, 2, 1, 0, -4, 32, 12])
def test_qam_invalid_order(order):
    with pytest.raises(InvalidOrderError):
        build_qam(order)


def test_pam_points():
    np.testing.assert_array_equal(build_pam(2).points, [-1, 1])
    np.testing.assert_allclose(build_pam(4).points.real, np.array([-3, -1, 1, 3]) / math.sqrt(5), atol=1e-15)
    assert build_pam(8).is_real


@pytest.mark.parametrize("levels", [3, 1, 0, 6])
def test_pam_invalid(levels):
    with pytest.raises(InvalidOrderError):
        build_pam(levels)


@pytest.mark.parametrize("order", [4, 16, 64, 256, 1024])
def test_invariants_hold_after_construction(order):
    c = build_qam(order)
    # rebuilding through the validating constructor must succeed unchanged
    again = Constellation(c.order, c.points, c.priors)
    np.testing.assert_array_equal(again.points, c.points)
    assert abs(math.fsum(c.priors) - 1) <= 1e-12
    assert abs(float(np.sum(c.priors * np.abs(c.points) ** 2)) - 1) <= 1e-12
    assert len(set(c.points.tolist())) == order


@pytest.mark.parametrize("order", [4, 16, 64, 256])
def test_qam_is_pam_product(order):
    p = build_pam(int(math.isqrt(order))).points.real / math.sqrt(2)
    prod = np.array([complex(i, q) for i in p for q in p])
    np.testing.assert_allclose(build_qam(order).points, prod, atol=1e-12)


def test_product_factors():
    re, pi, im, pq = build_qam(16).product_factors()
    np.testing.assert_allclose(pi, 0.25)
    np.testing.assert_allclose(re, im)
    pts = [complex(0, 0), complex(1, 0), complex(0, 1)]
    pts = np.array(pts) / math.sqrt(2 / 3)
    assert Constellation(3, pts, np.full(3, 1 / 3)).product_factors() is None


def test_json_round_trip():
    c = build_qam(64)
    text = json.dumps(c.to_json())
    back = Constellation.from_json(json.loads(text))
    np.testing.assert_array_equal(back.points, c.points)
    np.testing.assert_array_equal(back.priors, c.priors)
    assert back.order == 64


@pytest.mark.parametrize(
    "points, priors",
    [
        ([1, -1], [0.6, 0.6]),  # priors do not sum to one
        ([1, -1], [1.2, -0.2]),  # negative prior
        ([2, -2], [0.5, 0.5]),  # energy 4
        ([1, 1], [0.5, 0.5]),  # duplicate points
        ([1, -1, 0], [0.5, 0.5]),  # length mismatch
    ],
)
def test_invalid_constellations(points, priors):
    with pytest.raises((DomainError, InvalidOrderError, ValueError)):
        Constellation(len(points), np.array(points, dtype=complex), np.array(priors))


def test_immutable():
    c = build_qam(4)
    with pytest.raises(ValueError):
        c.points[0] = 0
