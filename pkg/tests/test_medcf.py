import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miq import (
    CoefficientTable,
    DomainError,
    EdcfModel,
    MiCurve,
    NotFoundError,
    ParseError,
    SnrGrid,
    best_model,
    canonical_grid,
    eval_edcf,
    load_table,
    rmse,
)

QPSK_1 = EdcfModel(4, [1.0], [0.6507], 0.0034287)


def test_eval_at_zero():
    assert eval_edcf(QPSK_1, 0) == 0.0


def test_eval_at_one():
    assert eval_edcf(QPSK_1, 1.0) == pytest.approx(2 * (1 - math.exp(-0.6507)), abs=1e-15)
    assert eval_edcf(QPSK_1, 1.0) == pytest.approx(0.956639, abs=1e-6)


def test_eval_asymptote(table):
    for m in table:
        assert abs(eval_edcf(m, 1e6) - math.log2(m.order)) < 1e-9


def test_eval_vectorized_and_negative():
    v = eval_edcf(QPSK_1, np.array([0.0, 1.0, 2.0]))
    assert v.shape == (3,)
    with pytest.raises(DomainError):
        eval_edcf(QPSK_1, -0.1)
    with pytest.raises(DomainError):
        eval_edcf(QPSK_1, float("nan"))


def test_eval_strictly_increasing(table):
    for m in table:
        g = np.linspace(0, 30 / min(m.b), 2001)
        v = eval_edcf(m, g)
        # strict until the tail underflows against log2(M)
        live = math.log2(m.order) - v[:-1] > 1e-10
        assert np.all(np.diff(v)[live] > 0)
        assert np.all(np.diff(v) >= 0)


def test_builtin_rows(table):
    assert len(table) == 9
    m = table.lookup(4, 1)
    assert m.a == (1.0,) and m.b == (0.6507,) and m.reported_rmse == 0.0034287
    m = table.lookup(256, 4)
    got = dict(zip(m.b, m.a))
    expected = {0.183242: 0.228768, 0.038011: 0.229083, 0.994472: 0.118223, 0.006911: 0.423927}
    assert got == expected
    assert m.reported_rmse == 0.000592021
    # canonical form: descending decay rates
    assert list(m.b) == sorted(m.b, reverse=True)


def test_builtin_keys(table):
    keys = sorted(m.key for m in table)
    assert keys == [(4, 1), (4, 2), (16, 2), (16, 3), (64, 2), (64, 3), (64, 4), (256, 3), (256, 4)]


def test_lookup_missing(table):
    with pytest.raises(NotFoundError):
        table.lookup(8, 2)


def test_weight_sums(table):
    for m in table:
        assert abs(math.fsum(m.a) - 1) <= 2e-6
        assert all(a > 0 for a in m.a) and all(b > 0 for b in m.b)


def test_larger_n_never_worse(table):
    for order in table.orders():
        rows = table.for_order(order)
        rep = [m.reported_rmse for m in rows]
        assert rep == sorted(rep, reverse=True)


@pytest.mark.parametrize("order, n", [(256, 4), (64, 4), (16, 3), (4, 2)])
def test_best_model(table, order, n):
    assert best_model(table, order).n_terms == n


def test_best_model_missing(table):
    with pytest.raises(NotFoundError):
        best_model(table, 32)


def test_best_model_ties_prefer_fewer_terms():
    t = CoefficientTable([EdcfModel(4, [0.5, 0.5], [1.0, 0.5], 0.1), EdcfModel(4, [1.0], [0.6], 0.1)])
    assert best_model(t, 4).n_terms == 1


def test_rmse_identity():
    grid = SnrGrid.from_db(-10, 15, 0.5)
    ref = MiCurve(grid, eval_edcf(QPSK_1, grid.values), 4)
    assert rmse(QPSK_1, ref) == 0.0


@pytest.mark.parametrize("delta", [1e-4, 0.01, 0.3])
def test_rmse_constant_offset(delta):
    grid = SnrGrid.from_db(-10, 15, 0.5)
    ref = MiCurve(grid, eval_edcf(QPSK_1, grid.values) - delta, 4)
    assert rmse(QPSK_1, ref, normalized=False) == pytest.approx(delta, rel=1e-9)
    assert rmse(QPSK_1, ref) == pytest.approx(delta / 2, rel=1e-9)


def test_rmse_errors():
    with pytest.raises(DomainError):
        rmse(QPSK_1, MiCurve(SnrGrid([1.0]), [1.0], 16))


@given(st.permutations(list(range(12))))
@settings(max_examples=30, deadline=None)
def test_rmse_permutation_invariant(perm):
    g = np.linspace(0.1, 12, 12)
    mi = eval_edcf(QPSK_1, g) + np.sin(np.arange(12)) * 1e-3
    base = rmse(QPSK_1, MiCurve(SnrGrid(g), mi, 4))
    # same points in another order: rebuild with a monotone relabelling of the abscissae
    p = np.array(perm)
    shuffled = np.sqrt(np.mean(((eval_edcf(QPSK_1, g[p]) - mi[p]) / 2) ** 2))
    assert shuffled == pytest.approx(base, rel=1e-12)


def test_reported_rmse_4qam_n2(table, canonical_curves):
    got = rmse(table.lookup(4, 2), canonical_curves[4])
    assert 0.5 * 0.00036472 <= got <= 2 * 0.00036472


def test_canonical_grid():
    g = canonical_grid(16)
    assert g.db[0] == -10.0 and g.db[-1] == 22.0 and len(g) == 321
    assert canonical_grid(1024).db[-1] == 40.0
    with pytest.raises(DomainError):
        canonical_grid(8)


@pytest.mark.parametrize(
    "a, b",
    [([0.5, 0.4], [1, 2]), ([1.0], [0.0]), ([1.2, -0.2], [1, 2]), ([], []), ([1.0], [1.0, 2.0])],
)
def test_model_validation(a, b):
    with pytest.raises(DomainError):
        EdcfModel(4, a, b)


def test_json_round_trip(table, tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps(table.to_json()), encoding="utf-8")
    back = load_table(path)
    assert sorted(m.key for m in back) == sorted(m.key for m in table)
    for m in table:
        assert back.lookup(*m.key) == m


def test_single_object_file(tmp_path):
    path = tmp_path / "one.json"
    path.write_text(json.dumps(QPSK_1.to_json()), encoding="utf-8")
    assert load_table(path).lookup(4, 1) == QPSK_1


@pytest.mark.parametrize(
    "text, needle",
    [
        ("", "empty"),
        ("   \n", "empty"),
        ('[{"order": 4, "terms": [{"a": 1, "b": }]}]', ":1:"),
        ('[\n{"order": 4,\n "terms": [{"a": 1 "b": 2}]}]', ":3:"),
        ("[]", "non-empty"),
        ('[{"order": 4}]', "terms"),
        ('[{"order": 4, "terms": [{"a": 1, "b": 1}]}, {"order": 4, "terms": [{"a": 1, "b": 2}]}]', "duplicate"),
    ],
)
def test_parse_errors(text, needle):
    with pytest.raises(ParseError, match=needle):
        CoefficientTable.from_json_text(text, "f.json")
